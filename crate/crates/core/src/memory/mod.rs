//! Instrumented base-object memory.
//!
//! Algorithms are written as cloneable step machines over a [`StepCx`].
//! Each poll may perform at most one base access (a read, a write or one
//! whole atomic section); the next access attempt in the same poll returns
//! `Pending`, which hands control back to the scheduler. Local code that
//! runs between accesses, including tm-event emission, belongs to the step
//! of the access it follows.

use std::fmt;
use std::task::Poll;

use serde::{Deserialize, Serialize};

use crate::model::{History, Outcome, ProcessId, TObjectId, TmEvent, TmKind, TxId, Value};

mod explore;
mod native;
mod sim;

pub use explore::{enumerate_schedules, explore, ExploreConfig, ExploreStats, Leaf};
pub use native::run_native;
pub use sim::{run_deterministic, RunResult, RunStatus, Sim, SpinState, StepError};

/// Maximum number of base operations inside one atomic section.
pub const ATOMIC_BOUND: usize = 256;

/// A base object: its index in memory and the t-object that owns it, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BaseObjectId {
    pub index: u32,
    #[serde(default)]
    pub tag: Option<TObjectId>,
}

impl BaseObjectId {
    pub fn untagged(index: u32) -> Self {
        BaseObjectId { index, tag: None }
    }

    pub fn owned(index: u32, x: TObjectId) -> Self {
        BaseObjectId {
            index,
            tag: Some(x),
        }
    }
}

impl fmt::Display for BaseObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            Some(x) => write!(f, "b{}[{}]", self.index, x),
            None => write!(f, "b{}", self.index),
        }
    }
}

/// Content of a base object: a value and the transaction that wrote it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaseWord {
    pub value: Value,
    pub writer: TxId,
}

impl BaseWord {
    pub const ZERO: BaseWord = BaseWord {
        value: 0,
        writer: TxId::INIT,
    };

    pub fn new(value: Value, writer: TxId) -> Self {
        BaseWord { value, writer }
    }

    /// A control-register word, written on behalf of no transaction.
    pub fn ctl(value: Value) -> Self {
        BaseWord {
            value,
            writer: TxId::INIT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseKind {
    Read,
    Write,
    AtomicBegin,
    AtomicEnd,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaseEvent {
    pub seq: u64,
    pub process: ProcessId,
    pub tx: TxId,
    pub kind: BaseKind,
    /// Absent on atomic-section brackets.
    #[serde(default)]
    pub object: Option<BaseObjectId>,
    #[serde(default)]
    pub value: Option<BaseWord>,
    pub nontrivial: bool,
    #[serde(rename = "atomic-depth")]
    pub atomic_depth: u8,
}

impl BaseEvent {
    pub fn is_access(&self) -> bool {
        matches!(self.kind, BaseKind::Read | BaseKind::Write)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LockKind {
    Acquired,
    Released,
}

/// A multi-trylock hold boundary: emitted when acquire returns true and when
/// release is invoked.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LockEvent {
    pub seq: u64,
    pub process: ProcessId,
    pub tx: TxId,
    pub kind: LockKind,
    pub objects: Vec<TObjectId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "kebab-case")]
pub enum TraceEvent {
    Tm(TmEvent),
    Base(BaseEvent),
    Lock(LockEvent),
}

impl TraceEvent {
    pub fn seq(&self) -> u64 {
        match self {
            TraceEvent::Tm(e) => e.seq,
            TraceEvent::Base(e) => e.seq,
            TraceEvent::Lock(e) => e.seq,
        }
    }

    pub fn process(&self) -> ProcessId {
        match self {
            TraceEvent::Tm(e) => e.process,
            TraceEvent::Base(e) => e.process,
            TraceEvent::Lock(e) => e.process,
        }
    }
}

/// Base events, tm-events and lock events of one execution in global order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
}

impl ExecutionTrace {
    pub fn history(&self) -> History {
        History {
            events: self
                .events
                .iter()
                .filter_map(|e| match e {
                    TraceEvent::Tm(t) => Some(t.clone()),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn base_events(&self) -> impl Iterator<Item = &BaseEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Base(b) => Some(b),
            _ => None,
        })
    }

    pub fn lock_events(&self) -> impl Iterator<Item = &LockEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Lock(l) => Some(l),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<ExecutionTrace, crate::model::ParseError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line).map_err(|source| crate::model::ParseError {
                line: i + 1,
                source,
            })?;
            events.push(ev);
        }
        Ok(ExecutionTrace { events })
    }
}

/// A sequence of process ids consumed one per step by the scheduler.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    pub steps: Vec<ProcessId>,
}

impl Schedule {
    pub fn new(steps: Vec<ProcessId>) -> Self {
        Schedule { steps }
    }

    pub fn from_ids(ids: &[u32]) -> Self {
        Schedule {
            steps: ids.iter().map(|&p| ProcessId(p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Fault {
    #[error("base object {0} out of range")]
    OutOfRange(u32),
    #[error("base access by {0} outside any tm-operation")]
    OutsideOperation(ProcessId),
    #[error("atomic section exceeded {ATOMIC_BOUND} operations")]
    UnboundedAtomic,
    #[error("mcas needs equal-length arrays over distinct objects")]
    McasShape,
    #[error("{0} already has a live transaction")]
    NestedBegin(ProcessId),
    #[error("{0} is not live")]
    NotLive(TxId),
    #[error("{0} already holds a lock on {1}")]
    ReentrantAcquire(ProcessId, TObjectId),
    #[error("{0} releases {1} which it does not hold")]
    ReleaseUnheld(ProcessId, TObjectId),
    #[error("{0} cannot make progress running solo")]
    Blocked(ProcessId),
    #[error("program of {0} yielded without taking a step")]
    Stalled(ProcessId),
}

/// Operations available inside an atomic section. There is no way to open
/// another section from here, so sections never nest.
pub trait AtomicOps {
    fn read(&mut self, o: BaseObjectId) -> Result<BaseWord, Fault>;
    fn write(&mut self, o: BaseObjectId, w: BaseWord) -> Result<(), Fault>;
}

/// What a tm-event looks like before the backend stamps it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TmDraft {
    pub kind: TmKind,
    pub tx: TxId,
    pub object: Option<TObjectId>,
    pub value: Option<Value>,
    pub outcome: Option<Outcome>,
    pub writer: Option<TxId>,
}

/// A backend as seen by one process.
pub trait Port {
    fn process(&self) -> ProcessId;
    fn read(&mut self, o: BaseObjectId) -> Result<BaseWord, Fault>;
    fn write(&mut self, o: BaseObjectId, w: BaseWord) -> Result<(), Fault>;
    fn atomic(
        &mut self,
        may_write: bool,
        body: &mut dyn FnMut(&mut dyn AtomicOps),
    ) -> Result<(), Fault>;
    fn emit_tm(&mut self, ev: TmDraft);
    fn emit_lock(&mut self, kind: LockKind, objects: &[TObjectId]);
    /// Opens or closes a scope in which base accesses are allowed outside a
    /// tm-operation (a transaction's begin phase, standalone lock drivers).
    fn set_scope(&mut self, open: bool);
    /// Sets the transaction that subsequent base events are attributed to.
    fn set_tx(&mut self, tx: TxId);
    /// A busy-wait iteration failed.
    fn spin(&mut self);
}

/// One scheduling step: a port plus a single-access token.
pub struct StepCx<'a> {
    port: &'a mut dyn Port,
    used: bool,
}

impl<'a> StepCx<'a> {
    pub fn new(port: &'a mut dyn Port) -> Self {
        StepCx { port, used: false }
    }

    pub fn process(&self) -> ProcessId {
        self.port.process()
    }

    pub fn used(&self) -> bool {
        self.used
    }

    fn take(&mut self) -> bool {
        if self.used {
            false
        } else {
            self.used = true;
            true
        }
    }

    pub fn read(&mut self, o: BaseObjectId) -> Poll<Result<BaseWord, Fault>> {
        if !self.take() {
            return Poll::Pending;
        }
        Poll::Ready(self.port.read(o))
    }

    pub fn write(&mut self, o: BaseObjectId, w: BaseWord) -> Poll<Result<(), Fault>> {
        if !self.take() {
            return Poll::Pending;
        }
        Poll::Ready(self.port.write(o, w))
    }

    /// Runs `body` as one indivisible atomic section. `may_write` marks the
    /// section nontrivial.
    pub fn atomic<R>(
        &mut self,
        may_write: bool,
        body: impl FnOnce(&mut dyn AtomicOps) -> Result<R, Fault>,
    ) -> Poll<Result<R, Fault>> {
        if !self.take() {
            return Poll::Pending;
        }
        let mut body = Some(body);
        let mut out = None;
        let res = self.port.atomic(may_write, &mut |ops| {
            if let Some(f) = body.take() {
                out = Some(f(ops));
            }
        });
        Poll::Ready(match (res, out) {
            (Err(f), _) => Err(f),
            (Ok(()), Some(r)) => r,
            (Ok(()), None) => unreachable!("atomic body runs exactly once"),
        })
    }

    pub fn mcas(
        &mut self,
        v: &[BaseObjectId],
        ov: &[BaseWord],
        nv: &[BaseWord],
    ) -> Poll<Result<bool, Fault>> {
        self.atomic(true, |ops| mcas(ops, v, ov, nv))
    }

    pub fn emit(&mut self, ev: TmDraft) {
        self.port.emit_tm(ev);
    }

    pub fn lock_event(&mut self, kind: LockKind, objects: &[TObjectId]) {
        self.port.emit_lock(kind, objects);
    }

    pub fn set_scope(&mut self, open: bool) {
        self.port.set_scope(open);
    }

    pub fn set_tx(&mut self, tx: TxId) {
        self.port.set_tx(tx);
    }

    pub fn spin(&mut self) {
        self.port.spin();
    }
}

/// Multi-word compare-and-swap. Reads every `v[i]`; if all equal `ov[i]`,
/// writes every `nv[i]` and returns true, otherwise leaves memory unchanged.
pub fn mcas(
    ops: &mut dyn AtomicOps,
    v: &[BaseObjectId],
    ov: &[BaseWord],
    nv: &[BaseWord],
) -> Result<bool, Fault> {
    if v.len() != ov.len() || v.len() != nv.len() {
        return Err(Fault::McasShape);
    }
    let mut seen = std::collections::BTreeSet::new();
    if !v.iter().all(|o| seen.insert(o.index)) {
        return Err(Fault::McasShape);
    }
    let mut equal = true;
    for (o, expect) in v.iter().zip(ov) {
        if ops.read(*o)? != *expect {
            equal = false;
        }
    }
    if equal {
        for (o, w) in v.iter().zip(nv) {
            ops.write(*o, *w)?;
        }
    }
    Ok(equal)
}

/// A process body driven one step at a time. `Ready` means the process has
/// finished.
pub trait Program {
    fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>>;

    /// Hash of the whole local state, if the program can provide one. Lets
    /// the explorer fold repeated busy-wait iterations.
    fn state_hash(&self) -> Option<u64> {
        None
    }
}

impl<P: Program + ?Sized> Program for Box<P> {
    fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
        (**self).step(cx)
    }

    fn state_hash(&self) -> Option<u64> {
        (**self).state_hash()
    }
}

/// `state_hash` for programs that derive `Hash`.
pub fn hash_state<T: std::hash::Hash>(t: &T) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    t.hash(&mut h);
    std::hash::Hasher::finish(&h)
}

/// Drives a single step machine to completion with its own port, one poll
/// per step. Used by solo runs.
pub fn drive<R>(
    port: &mut dyn Port,
    mut poll: impl FnMut(&mut StepCx<'_>) -> Poll<Result<R, Fault>>,
    max_steps: usize,
) -> Result<R, Fault> {
    let p = port.process();
    for _ in 0..max_steps {
        let mut cx = StepCx::new(port);
        match poll(&mut cx) {
            Poll::Ready(r) => return r,
            Poll::Pending if !cx.used() => return Err(Fault::Stalled(p)),
            Poll::Pending => {}
        }
    }
    Err(Fault::Blocked(p))
}
