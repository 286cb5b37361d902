//! Deterministic, single-threaded backend.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::task::Poll;

use serde::{Deserialize, Serialize};

use super::{
    AtomicOps, BaseEvent, BaseKind, BaseObjectId, BaseWord, ExecutionTrace, Fault, LockEvent,
    LockKind, Port, Program, Schedule, StepCx, TmDraft, TraceEvent, ATOMIC_BOUND,
};
use crate::model::{OpKind, Outcome, ProcessId, TObjectId, TmEvent, TmKind, TxId};

/// Busy-wait watchdog state. A process that fails two consecutive guard
/// iterations with no write by anyone in between would fail every further
/// iteration too, so it is blocked until some other process writes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SpinState {
    #[default]
    Running,
    SpunOnce,
    Blocked,
}

#[derive(Clone, Debug, Default)]
struct ProcCore {
    tx: TxId,
    op_open: bool,
    scope: bool,
    spin: SpinState,
    digest: u64,
    done: bool,
    fault: Option<Fault>,
    // Busy-wait folding: events since the last spin, whether they were all
    // reads, and (digest, program state, events) at the last spin.
    iter: u64,
    iter_reads_only: bool,
    spun: bool,
    mark: Option<(u64, u64, u64)>,
}

fn mix<T: Hash>(d: &mut u64, item: T) {
    let mut h = DefaultHasher::new();
    d.hash(&mut h);
    item.hash(&mut h);
    *d = h.finish();
}

#[derive(Clone, Debug)]
struct SimCore {
    words: Vec<BaseWord>,
    trace: ExecutionTrace,
    seq: u64,
    procs: Vec<ProcCore>,
    check_scope: bool,
    // Summary of the history so far, enough to tell apart prefixes whose
    // futures look the same but whose recorded pasts differ.
    rt: BTreeSet<(TxId, TxId)>,
    du: BTreeSet<(TxId, TxId)>,
    started: BTreeSet<TxId>,
    completed: Vec<TxId>,
    reads: BTreeMap<TxId, BTreeSet<TObjectId>>,
    writes: BTreeMap<TxId, BTreeSet<TObjectId>>,
    holders: BTreeMap<TObjectId, ProcessId>,
    lock_violations: u32,
}

impl SimCore {
    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn check(&self, p: usize, o: BaseObjectId) -> Result<usize, Fault> {
        let idx = o.index as usize;
        if idx >= self.words.len() {
            return Err(Fault::OutOfRange(o.index));
        }
        let pc = &self.procs[p];
        if self.check_scope && !pc.op_open && !pc.scope {
            return Err(Fault::OutsideOperation(ProcessId(p as u32)));
        }
        Ok(idx)
    }

    fn record(
        &mut self,
        p: usize,
        kind: BaseKind,
        object: Option<BaseObjectId>,
        value: Option<BaseWord>,
        nontrivial: bool,
        depth: u8,
    ) {
        let seq = self.next_seq();
        let pc = &mut self.procs[p];
        mix(&mut pc.digest, (kind, object, value, nontrivial, depth));
        mix(&mut pc.iter, (kind, object, value, nontrivial, depth));
        pc.iter_reads_only &= kind == BaseKind::Read;
        let tx = pc.tx;
        self.trace.events.push(TraceEvent::Base(BaseEvent {
            seq,
            process: ProcessId(p as u32),
            tx,
            kind,
            object,
            value,
            nontrivial,
            atomic_depth: depth,
        }));
    }

    fn wrote(&mut self, _p: usize) {
        for pc in &mut self.procs {
            pc.spin = SpinState::Running;
        }
    }

    fn read(&mut self, p: usize, o: BaseObjectId, depth: u8) -> Result<BaseWord, Fault> {
        let idx = self.check(p, o)?;
        let w = self.words[idx];
        self.record(p, BaseKind::Read, Some(o), Some(w), false, depth);
        Ok(w)
    }

    fn write(&mut self, p: usize, o: BaseObjectId, w: BaseWord, depth: u8) -> Result<(), Fault> {
        let idx = self.check(p, o)?;
        self.words[idx] = w;
        self.record(p, BaseKind::Write, Some(o), Some(w), true, depth);
        self.wrote(p);
        Ok(())
    }

    fn emit_tm(&mut self, p: usize, d: TmDraft) {
        let seq = self.next_seq();
        let t = d.tx;
        {
            let pc = &mut self.procs[p];
            pc.tx = t;
            pc.op_open = d.kind.is_invocation();
            mix(
                &mut pc.digest,
                (d.kind, t, d.object, d.value, d.outcome, d.writer),
            );
            pc.iter_reads_only = false;
        }
        if self.started.insert(t) {
            for &c in &self.completed {
                self.rt.insert((c, t));
            }
        }
        match d.kind {
            TmKind::InvWrite => {
                if let Some(x) = d.object {
                    self.writes.entry(t).or_default().insert(x);
                }
            }
            TmKind::RespRead if d.outcome == Some(Outcome::Value) => {
                if let Some(x) = d.object {
                    self.reads.entry(t).or_default().insert(x);
                }
            }
            TmKind::InvTryC => {
                if let Some(ws) = self.writes.get(&t) {
                    for (a, rs) in &self.reads {
                        if *a != t && !rs.is_disjoint(ws) {
                            self.du.insert((*a, t));
                        }
                    }
                }
            }
            _ => {}
        }
        if matches!(d.outcome, Some(Outcome::Commit) | Some(Outcome::Abort)) {
            self.completed.push(t);
        }
        debug_assert!(d.kind.op() != OpKind::Read || d.object.is_some());
        self.trace.events.push(TraceEvent::Tm(TmEvent {
            seq,
            kind: d.kind,
            tx: t,
            process: ProcessId(p as u32),
            object: d.object,
            value: d.value,
            outcome: d.outcome,
            writer: d.writer,
        }));
    }

    fn emit_lock(&mut self, p: usize, kind: LockKind, objects: &[TObjectId]) {
        let seq = self.next_seq();
        let pid = ProcessId(p as u32);
        mix(&mut self.procs[p].digest, (kind, objects));
        self.procs[p].iter_reads_only = false;
        for &x in objects {
            match kind {
                LockKind::Acquired => {
                    if self.holders.get(&x).is_some_and(|h| *h != pid) {
                        self.lock_violations += 1;
                    }
                    self.holders.insert(x, pid);
                }
                LockKind::Released => {
                    if self.holders.get(&x) == Some(&pid) {
                        self.holders.remove(&x);
                    }
                }
            }
        }
        let tx = self.procs[p].tx;
        self.trace.events.push(TraceEvent::Lock(LockEvent {
            seq,
            process: pid,
            tx,
            kind,
            objects: objects.to_vec(),
        }));
    }
}

struct SimPort<'a> {
    core: &'a mut SimCore,
    p: usize,
}

struct SimAtomic<'a> {
    core: &'a mut SimCore,
    p: usize,
    ops: usize,
}

impl AtomicOps for SimAtomic<'_> {
    fn read(&mut self, o: BaseObjectId) -> Result<BaseWord, Fault> {
        self.ops += 1;
        if self.ops > ATOMIC_BOUND {
            return Err(Fault::UnboundedAtomic);
        }
        self.core.read(self.p, o, 1)
    }

    fn write(&mut self, o: BaseObjectId, w: BaseWord) -> Result<(), Fault> {
        self.ops += 1;
        if self.ops > ATOMIC_BOUND {
            return Err(Fault::UnboundedAtomic);
        }
        self.core.write(self.p, o, w, 1)
    }
}

impl Port for SimPort<'_> {
    fn process(&self) -> ProcessId {
        ProcessId(self.p as u32)
    }

    fn read(&mut self, o: BaseObjectId) -> Result<BaseWord, Fault> {
        self.core.read(self.p, o, 0)
    }

    fn write(&mut self, o: BaseObjectId, w: BaseWord) -> Result<(), Fault> {
        self.core.write(self.p, o, w, 0)
    }

    fn atomic(
        &mut self,
        may_write: bool,
        body: &mut dyn FnMut(&mut dyn AtomicOps),
    ) -> Result<(), Fault> {
        let pc = &self.core.procs[self.p];
        if self.core.check_scope && !pc.op_open && !pc.scope {
            return Err(Fault::OutsideOperation(ProcessId(self.p as u32)));
        }
        self.core
            .record(self.p, BaseKind::AtomicBegin, None, None, may_write, 1);
        let mut ops = SimAtomic {
            core: self.core,
            p: self.p,
            ops: 0,
        };
        body(&mut ops);
        self.core
            .record(self.p, BaseKind::AtomicEnd, None, None, may_write, 1);
        Ok(())
    }

    fn emit_tm(&mut self, ev: TmDraft) {
        self.core.emit_tm(self.p, ev);
    }

    fn emit_lock(&mut self, kind: LockKind, objects: &[TObjectId]) {
        self.core.emit_lock(self.p, kind, objects);
    }

    fn set_scope(&mut self, open: bool) {
        self.core.procs[self.p].scope = open;
    }

    fn set_tx(&mut self, tx: TxId) {
        self.core.procs[self.p].tx = tx;
    }

    fn spin(&mut self) {
        let pc = &mut self.core.procs[self.p];
        pc.spun = true;
        pc.spin = match pc.spin {
            SpinState::Running => SpinState::SpunOnce,
            _ => SpinState::Blocked,
        };
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("no such process {0}")]
    UnknownProcess(ProcessId),
    #[error("{0} has already finished")]
    Finished(ProcessId),
    #[error("{0} faulted: {1}")]
    Fault(ProcessId, Fault),
}

/// A set of programs over one simulated memory.
#[derive(Clone, Debug)]
pub struct Sim<P> {
    core: SimCore,
    procs: Vec<P>,
}

impl<P: Program> Sim<P> {
    /// `size` base objects, all `(0, T0)`; one program per process.
    pub fn new(size: usize, procs: Vec<P>) -> Self {
        let n = procs.len();
        Sim {
            core: SimCore {
                words: vec![BaseWord::ZERO; size],
                trace: ExecutionTrace::default(),
                seq: 0,
                procs: vec![ProcCore::default(); n],
                check_scope: true,
                rt: BTreeSet::new(),
                du: BTreeSet::new(),
                started: BTreeSet::new(),
                completed: Vec::new(),
                reads: BTreeMap::new(),
                writes: BTreeMap::new(),
                holders: BTreeMap::new(),
                lock_violations: 0,
            },
            procs,
        }
    }

    /// Turns off the rule that base accesses happen inside tm-operations.
    pub fn unscoped(mut self) -> Self {
        self.core.check_scope = false;
        self
    }

    pub fn processes(&self) -> usize {
        self.procs.len()
    }

    pub fn program(&self, p: ProcessId) -> &P {
        &self.procs[p.index()]
    }

    pub fn is_done(&self, p: ProcessId) -> bool {
        self.core.procs[p.index()].done
    }

    pub fn spin_state(&self, p: ProcessId) -> SpinState {
        self.core.procs[p.index()].spin
    }

    pub fn fault(&self, p: ProcessId) -> Option<&Fault> {
        self.core.procs[p.index()].fault.as_ref()
    }

    pub fn is_complete(&self) -> bool {
        self.core.procs.iter().all(|p| p.done)
    }

    pub fn faulted(&self) -> Option<(ProcessId, &Fault)> {
        self.core
            .procs
            .iter()
            .enumerate()
            .find_map(|(i, p)| p.fault.as_ref().map(|f| (ProcessId(i as u32), f)))
    }

    /// Processes that have not finished and are not blocked in a busy-wait.
    pub fn enabled(&self) -> Vec<ProcessId> {
        self.core
            .procs
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.done && p.spin != SpinState::Blocked)
            .map(|(i, _)| ProcessId(i as u32))
            .collect()
    }

    pub fn word(&self, index: u32) -> BaseWord {
        self.core.words[index as usize]
    }

    pub fn words(&self) -> &[BaseWord] {
        &self.core.words
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.core.trace
    }

    pub fn into_trace(self) -> ExecutionTrace {
        self.core.trace
    }

    /// Current lock holders, from lock events.
    pub fn holders(&self) -> &BTreeMap<TObjectId, ProcessId> {
        &self.core.holders
    }

    /// Number of acquisitions that found the object held by someone else.
    pub fn lock_violations(&self) -> u32 {
        self.core.lock_violations
    }

    /// Executes one step of `p`: program-local code up to and including one
    /// base access or atomic section.
    pub fn step(&mut self, p: ProcessId) -> Result<(), StepError> {
        let i = p.index();
        if i >= self.procs.len() {
            return Err(StepError::UnknownProcess(p));
        }
        if self.core.procs[i].done {
            return Err(StepError::Finished(p));
        }
        let Sim { core, procs } = self;
        let mut port = SimPort { core, p: i };
        let mut cx = StepCx::new(&mut port);
        let res = match procs[i].step(&mut cx) {
            Poll::Ready(r) => Some(r),
            Poll::Pending if !cx.used() => Some(Err(Fault::Stalled(p))),
            Poll::Pending => None,
        };
        self.fold(i);
        match res {
            None => Ok(()),
            Some(Ok(())) => {
                self.core.procs[i].done = true;
                Ok(())
            }
            Some(Err(f)) => {
                let pc = &mut self.core.procs[i];
                pc.done = true;
                pc.fault = Some(f.clone());
                Err(StepError::Fault(p, f))
            }
        }
    }

    // A busy-wait iteration that only read, saw exactly what the previous
    // iteration saw and left the program where it was adds nothing to any
    // verdict, so the digest goes back to its value after that iteration.
    fn fold(&mut self, i: usize) {
        if !std::mem::take(&mut self.core.procs[i].spun) {
            return;
        }
        let Some(state) = self.procs[i].state_hash() else {
            return;
        };
        let pc = &mut self.core.procs[i];
        match pc.mark {
            Some((d, s, it)) if pc.iter_reads_only && s == state && it == pc.iter => pc.digest = d,
            _ => pc.mark = Some((pc.digest, state, pc.iter)),
        }
        pc.iter = 0;
        pc.iter_reads_only = true;
    }

    /// Drives a step machine for `p` outside any program, one poll per step.
    pub fn drive<R>(
        &mut self,
        p: ProcessId,
        poll: impl FnMut(&mut StepCx<'_>) -> Poll<Result<R, Fault>>,
        max_steps: usize,
    ) -> Result<R, Fault> {
        let mut port = SimPort {
            core: &mut self.core,
            p: p.index(),
        };
        super::drive(&mut port, poll, max_steps)
    }

    /// Runs the lowest-numbered enabled process until everyone is done or
    /// nobody is enabled. Appends the steps taken to `schedule`.
    pub fn run_lowest_first(
        &mut self,
        schedule: &mut Vec<ProcessId>,
        max_steps: usize,
    ) -> Result<(), StepError> {
        for _ in 0..max_steps {
            let Some(&p) = self.enabled().first() else {
                return Ok(());
            };
            schedule.push(p);
            self.step(p)?;
        }
        Ok(())
    }

    /// Hash of everything that determines both the future of this state and
    /// the verdicts on any trace through it.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.core.words.hash(&mut h);
        for pc in &self.core.procs {
            (pc.digest, pc.spin, pc.done, pc.scope).hash(&mut h);
        }
        self.core.rt.hash(&mut h);
        self.core.du.hash(&mut h);
        self.core.lock_violations.hash(&mut h);
        h.finish()
    }

    pub(crate) fn status(&self) -> RunStatus {
        if let Some((p, f)) = self.faulted() {
            RunStatus::Faulted {
                process: p,
                fault: f.to_string(),
            }
        } else if self.is_complete() {
            RunStatus::Complete
        } else {
            RunStatus::Incomplete {
                reason: "every unfinished process is blocked".into(),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    Incomplete { reason: String },
    Faulted { process: ProcessId, fault: String },
}

impl RunStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, RunStatus::Complete)
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: ExecutionTrace,
    pub status: RunStatus,
    /// The schedule prefix actually executed.
    pub schedule: Schedule,
}

/// Executes one step per schedule entry. A schedule that names a finished
/// process, or runs out before everyone finishes, yields an incomplete run.
pub fn run_deterministic<P: Program>(mut sim: Sim<P>, s: &Schedule) -> RunResult {
    let mut done = Vec::new();
    for (i, &p) in s.steps.iter().enumerate() {
        match sim.step(p) {
            Ok(()) => done.push(p),
            Err(StepError::Fault(p, f)) => {
                done.push(p);
                return RunResult {
                    trace: sim.into_trace(),
                    status: RunStatus::Faulted {
                        process: p,
                        fault: f.to_string(),
                    },
                    schedule: Schedule::new(done),
                };
            }
            Err(e) => {
                return RunResult {
                    trace: sim.into_trace(),
                    status: RunStatus::Incomplete {
                        reason: format!("step {}: {e}", i + 1),
                    },
                    schedule: Schedule::new(done),
                };
            }
        }
    }
    let status = if sim.is_complete() {
        RunStatus::Complete
    } else {
        RunStatus::Incomplete {
            reason: "schedule exhausted".into(),
        }
    };
    RunResult {
        trace: sim.into_trace(),
        status,
        schedule: Schedule::new(done),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::task::ready;

    /// Writes `(value, T0)` to each object in turn, then reads each back.
    #[derive(Clone)]
    struct WriteRead {
        objs: Vec<u32>,
        value: i64,
        pc: usize,
        seen: Vec<BaseWord>,
    }

    impl WriteRead {
        fn new(objs: Vec<u32>, value: i64) -> Self {
            WriteRead {
                objs,
                value,
                pc: 0,
                seen: Vec::new(),
            }
        }
    }

    impl Program for WriteRead {
        fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
            let n = self.objs.len();
            while self.pc < 2 * n {
                if self.pc < n {
                    let o = BaseObjectId::untagged(self.objs[self.pc]);
                    ready!(cx.write(o, BaseWord::ctl(self.value)))?;
                } else {
                    let o = BaseObjectId::untagged(self.objs[self.pc - n]);
                    let w = ready!(cx.read(o))?;
                    self.seen.push(w);
                }
                self.pc += 1;
            }
            Poll::Ready(Ok(()))
        }
    }

    #[test]
    fn fresh_read_is_zero() {
        let sim = Sim::new(1, vec![WriteRead::new(vec![], 0)]).unscoped();
        assert_eq!(sim.word(0), BaseWord::ZERO);
    }

    #[test]
    fn later_writer_wins() {
        let sim = Sim::new(
            1,
            vec![WriteRead::new(vec![0], 1), WriteRead::new(vec![0], 2)],
        )
        .unscoped();
        let r = run_deterministic(sim, &Schedule::from_ids(&[0, 1, 0, 1]));
        assert!(r.status.is_complete());
        let last_write = r
            .trace
            .base_events()
            .filter(|e| e.kind == BaseKind::Write)
            .last()
            .unwrap();
        assert_eq!(last_write.value, Some(BaseWord::ctl(2)));
    }

    #[test]
    fn write_outside_operation_faults() {
        let sim = Sim::new(1, vec![WriteRead::new(vec![0], 1)]);
        let r = run_deterministic(sim, &Schedule::from_ids(&[0]));
        assert!(matches!(r.status, RunStatus::Faulted { .. }));
    }

    #[test]
    fn out_of_range_faults() {
        let mut sim = Sim::new(1, vec![WriteRead::new(vec![3], 1)]).unscoped();
        assert_eq!(
            sim.step(ProcessId(0)),
            Err(StepError::Fault(ProcessId(0), Fault::OutOfRange(3)))
        );
    }

    #[test]
    fn same_schedule_same_trace() {
        let mk = || {
            Sim::new(
                2,
                vec![WriteRead::new(vec![0, 1], 1), WriteRead::new(vec![1, 0], 2)],
            )
            .unscoped()
        };
        let s = Schedule::from_ids(&[0, 1, 1, 0, 0, 1, 1, 0]);
        let a = run_deterministic(mk(), &s);
        let b = run_deterministic(mk(), &s);
        assert!(a.status.is_complete());
        assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
    }

    #[test]
    fn scheduling_a_finished_process_is_incomplete() {
        let sim = Sim::new(1, vec![WriteRead::new(vec![0], 1)]).unscoped();
        let r = run_deterministic(sim, &Schedule::from_ids(&[0, 0, 0]));
        assert!(matches!(r.status, RunStatus::Incomplete { .. }));
    }

    #[test]
    fn exhausted_schedule_is_incomplete() {
        let sim = Sim::new(1, vec![WriteRead::new(vec![0], 1)]).unscoped();
        let r = run_deterministic(sim, &Schedule::from_ids(&[0]));
        assert_eq!(
            r.status,
            RunStatus::Incomplete {
                reason: "schedule exhausted".into()
            }
        );
    }
}
