//! Four STMs behind one transactional interface.
//!
//! Every variant shares the canonic front-end: writes are buffered until
//! tryC, a read of an object already written returns the buffered value and
//! a repeated read returns the cached one, both without touching memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::memory::{BaseObjectId, BaseWord, ExecutionTrace, Fault, Program, Sim, StepCx};
use crate::model::{ProcessId, TObjectId, TxId, TxStatus, Value};
use crate::trylock::{BakeryLayout, LockFlavor, LockLayout};

mod client;
mod ops;

pub use client::{TxClient, TxLog};
pub use ops::{Begin, OpResult, TmOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StmVariant {
    /// One global test-and-set lock held for the whole transaction.
    SingleLock,
    /// Progressive, wait-free multi-trylock at commit.
    ProgRaw,
    /// Progressive, one multi-word CAS at commit.
    ProgMcas,
    /// Strongly progressive, starvation-free multi-trylock at commit.
    StrongProg,
}

impl StmVariant {
    pub const ALL: [StmVariant; 4] = [
        StmVariant::SingleLock,
        StmVariant::ProgRaw,
        StmVariant::ProgMcas,
        StmVariant::StrongProg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StmVariant::SingleLock => "single-lock",
            StmVariant::ProgRaw => "prog-raw",
            StmVariant::ProgMcas => "prog-mcas",
            StmVariant::StrongProg => "strong-prog",
        }
    }

    /// Variants whose base accesses stay inside the data set's objects.
    pub fn is_partitioned(self) -> bool {
        matches!(self, StmVariant::ProgRaw | StmVariant::ProgMcas)
    }

    pub fn is_progressive(self) -> bool {
        self != StmVariant::SingleLock
    }
}

impl fmt::Display for StmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown variant `{0}` (expected single-lock, prog-raw, prog-mcas or strong-prog)")]
pub struct UnknownVariant(pub String);

impl FromStr for StmVariant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StmVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| UnknownVariant(s.to_string()))
    }
}

/// Memory map shared by all variants:
///
/// | range | contents | owner |
/// |---|---|---|
/// | `0..M` | `v[j]` | `X_j` |
/// | `M..M+N*M` | `r[i][j]` | `X_j` |
/// | next `N` | `LA[i]` | none |
/// | next `N` | `MC[i]` | none |
/// | next | `color` | none |
/// | next | global lock | none |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StmLayout {
    pub variant: StmVariant,
    pub n: u32,
    pub m: u32,
}

impl StmLayout {
    pub fn new(variant: StmVariant, n: u32, m: u32) -> Self {
        StmLayout { variant, n, m }
    }

    pub fn v(&self, x: TObjectId) -> BaseObjectId {
        BaseObjectId::owned(x.0, x)
    }

    pub fn flags(&self) -> LockLayout {
        LockLayout::new(self.n, self.m, self.m)
    }

    pub fn bakery(&self) -> BakeryLayout {
        BakeryLayout::new(self.flags(), self.flags().end())
    }

    pub fn global_lock(&self) -> BaseObjectId {
        BaseObjectId::untagged(self.bakery().end())
    }

    pub fn size(&self) -> usize {
        self.bakery().end() as usize + 1
    }

    pub fn lock_flavor(&self) -> Option<LockFlavor> {
        match self.variant {
            StmVariant::ProgRaw => Some(LockFlavor::WaitFree(self.flags())),
            StmVariant::StrongProg => Some(LockFlavor::StarvationFree(self.bakery())),
            _ => None,
        }
    }

    /// Base objects owned by each t-object.
    pub fn beta(&self) -> BTreeMap<TObjectId, BTreeSet<BaseObjectId>> {
        (0..self.m)
            .map(|j| {
                let x = TObjectId(j);
                let mut s = BTreeSet::from([self.v(x)]);
                s.extend((0..self.n).map(|i| self.flags().r(i, x)));
                (x, s)
            })
            .collect()
    }
}

/// Local state of a transaction: cached reads and buffered writes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxDescriptor {
    pub tx: TxId,
    /// Word read from `v[j]`, the cached `ov_j`.
    pub rset: BTreeMap<TObjectId, BaseWord>,
    /// Value to write, the buffered `nv_j`.
    pub wset: BTreeMap<TObjectId, Value>,
    pub status: TxStatus,
}

impl TxDescriptor {
    pub fn new(tx: TxId) -> Self {
        TxDescriptor {
            tx,
            rset: BTreeMap::new(),
            wset: BTreeMap::new(),
            status: TxStatus::Live,
        }
    }
}

/// One tm-operation of a transaction script.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxOp {
    Read(TObjectId),
    Write(TObjectId, Value),
    TryC,
    TryA,
}

/// A transaction as a list of operations. Scripts that end without tryC or
/// tryA leave the transaction live.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxScript {
    pub ops: Vec<TxOp>,
}

impl TxScript {
    /// Reads, then writes, then tryC.
    pub fn canonic(reads: &[TObjectId], writes: &[(TObjectId, Value)]) -> Self {
        let mut ops: Vec<TxOp> = reads.iter().map(|&x| TxOp::Read(x)).collect();
        ops.extend(writes.iter().map(|&(x, v)| TxOp::Write(x, v)));
        ops.push(TxOp::TryC);
        TxScript { ops }
    }
}

/// Per-process transactional state: the current descriptor and, for the
/// lock-based variants, which objects this process holds.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TxEngine {
    pub layout: StmLayout,
    pub(crate) lock: Option<crate::trylock::LockClient>,
    pub(crate) desc: Option<TxDescriptor>,
}

impl TxEngine {
    pub fn new(layout: StmLayout) -> Self {
        TxEngine {
            layout,
            lock: layout.lock_flavor().map(crate::trylock::LockClient::new),
            desc: None,
        }
    }

    pub fn descriptor(&self) -> Option<&TxDescriptor> {
        self.desc.as_ref()
    }

    pub fn is_live(&self) -> bool {
        self.desc
            .as_ref()
            .is_some_and(|d| d.status == TxStatus::Live)
    }

    pub fn begin(&mut self, p: ProcessId, k: TxId) -> Result<Begin, Fault> {
        if self.is_live() {
            return Err(Fault::NestedBegin(p));
        }
        self.desc = Some(TxDescriptor::new(k));
        Ok(Begin::new(k))
    }

    pub fn op(&mut self, k: TxId, op: TxOp) -> Result<TmOp, Fault> {
        match &self.desc {
            Some(d) if d.tx == k && d.status == TxStatus::Live => Ok(TmOp::new(k, op)),
            _ => Err(Fault::NotLive(k)),
        }
    }
}

/// A program that does nothing; lets a [`Sim`] host solo sessions.
#[derive(Clone, Copy, Debug, Default)]
pub struct Idle;

impl Program for Idle {
    fn step(&mut self, _cx: &mut StepCx<'_>) -> std::task::Poll<Result<(), Fault>> {
        std::task::Poll::Ready(Ok(()))
    }
}

/// Solo, call-at-a-time access to an STM instance. Every call runs to
/// completion before returning; a call that cannot finish alone faults with
/// [`Fault::Blocked`].
#[derive(Clone, Debug)]
pub struct Session {
    sim: Sim<Idle>,
    engines: Vec<TxEngine>,
    owner: BTreeMap<TxId, ProcessId>,
    next: u64,
}

const SOLO_BOUND: usize = 10_000;

impl Session {
    pub fn new(variant: StmVariant, n: u32, m: u32) -> Self {
        let layout = StmLayout::new(variant, n, m);
        Session {
            sim: Sim::new(layout.size(), vec![Idle; n as usize]),
            engines: vec![TxEngine::new(layout); n as usize],
            owner: BTreeMap::new(),
            next: 1,
        }
    }

    pub fn trace(&self) -> &ExecutionTrace {
        self.sim.trace()
    }

    pub fn word(&self, o: BaseObjectId) -> BaseWord {
        self.sim.word(o.index)
    }

    pub fn descriptor(&self, k: TxId) -> Option<&TxDescriptor> {
        let p = self.owner.get(&k)?;
        self.engines[p.index()].descriptor().filter(|d| d.tx == k)
    }

    pub fn tx_begin(&mut self, p: ProcessId) -> Result<TxId, Fault> {
        let k = TxId(self.next);
        let eng = &mut self.engines[p.index()];
        let mut b = eng.begin(p, k)?;
        self.next += 1;
        self.owner.insert(k, p);
        self.sim.drive(p, |cx| b.poll(eng, cx), SOLO_BOUND)?;
        Ok(k)
    }

    fn run(&mut self, k: TxId, op: TxOp) -> Result<OpResult, Fault> {
        let p = *self.owner.get(&k).ok_or(Fault::NotLive(k))?;
        let eng = &mut self.engines[p.index()];
        let mut m = eng.op(k, op)?;
        self.sim.drive(p, |cx| m.poll(eng, cx), SOLO_BOUND)
    }

    pub fn tx_read(&mut self, k: TxId, x: TObjectId) -> Result<OpResult, Fault> {
        self.run(k, TxOp::Read(x))
    }

    pub fn tx_write(&mut self, k: TxId, x: TObjectId, v: Value) -> Result<OpResult, Fault> {
        self.run(k, TxOp::Write(x, v))
    }

    pub fn tx_tryc(&mut self, k: TxId) -> Result<OpResult, Fault> {
        self.run(k, TxOp::TryC)
    }

    pub fn tx_trya(&mut self, k: TxId) -> Result<OpResult, Fault> {
        self.run(k, TxOp::TryA)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::BaseKind;
    use crate::model::TmKind;

    const X0: TObjectId = TObjectId(0);
    const X1: TObjectId = TObjectId(1);
    const P0: ProcessId = ProcessId(0);
    const P1: ProcessId = ProcessId(1);

    fn val(v: Value) -> OpResult {
        OpResult::Value {
            value: v,
            writer: TxId(0),
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in StmVariant::ALL {
            assert_eq!(v.name().parse::<StmVariant>().unwrap(), v);
            assert_eq!(
                serde_json::to_string(&v).unwrap(),
                format!("\"{}\"", v.name())
            );
        }
        assert!("permissive".parse::<StmVariant>().is_err());
    }

    #[test]
    fn layout_regions_are_disjoint() {
        let l = StmLayout::new(StmVariant::StrongProg, 3, 4);
        let mut all: Vec<u32> = (0..4).map(|j| l.v(TObjectId(j)).index).collect();
        for i in 0..3 {
            for j in 0..4 {
                all.push(l.flags().r(i, TObjectId(j)).index);
            }
            all.push(l.bakery().la(i).index);
            all.push(l.bakery().mc(i).index);
        }
        all.push(l.bakery().color().index);
        all.push(l.global_lock().index);
        let set: BTreeSet<_> = all.iter().collect();
        assert_eq!(set.len(), all.len());
        assert_eq!(all.len(), l.size());
    }

    #[test]
    fn fresh_read_is_zero_and_first_tx_is_t1() {
        for v in StmVariant::ALL {
            let mut s = Session::new(v, 1, 2);
            let k = s.tx_begin(P0).unwrap();
            assert_eq!(k, TxId(1));
            assert_eq!(s.tx_read(k, X0).unwrap(), val(0), "{v}");
        }
    }

    #[test]
    fn nested_begin_faults() {
        let mut s = Session::new(StmVariant::ProgRaw, 1, 1);
        s.tx_begin(P0).unwrap();
        assert_eq!(s.tx_begin(P0), Err(Fault::NestedBegin(P0)));
    }

    #[test]
    fn read_own_write_touches_no_memory() {
        for v in StmVariant::ALL {
            let mut s = Session::new(v, 1, 1);
            let k = s.tx_begin(P0).unwrap();
            s.tx_write(k, X0, 7).unwrap();
            let before = s.trace().base_events().count();
            assert_eq!(
                s.tx_read(k, X0).unwrap(),
                OpResult::Value {
                    value: 7,
                    writer: k
                }
            );
            assert_eq!(s.trace().base_events().count(), before, "{v}");
        }
    }

    #[test]
    fn writes_touch_no_memory_and_last_write_wins() {
        for v in StmVariant::ALL {
            let mut s = Session::new(v, 1, 1);
            let k = s.tx_begin(P0).unwrap();
            let before = s.trace().base_events().count();
            s.tx_write(k, X0, 1).unwrap();
            s.tx_write(k, X0, 2).unwrap();
            assert_eq!(s.trace().base_events().count(), before);
            assert_eq!(s.tx_tryc(k).unwrap(), OpResult::Commit);
            let k2 = s.tx_begin(P0).unwrap();
            assert_eq!(
                s.tx_read(k2, X0).unwrap(),
                OpResult::Value {
                    value: 2,
                    writer: k
                },
                "{v}"
            );
        }
    }

    #[test]
    fn commit_tags_words_with_writer() {
        for v in StmVariant::ALL {
            let mut s = Session::new(v, 1, 2);
            let k = s.tx_begin(P0).unwrap();
            s.tx_write(k, X1, 9).unwrap();
            assert_eq!(s.tx_tryc(k).unwrap(), OpResult::Commit);
            let l = StmLayout::new(v, 1, 2);
            assert_eq!(s.word(l.v(X1)), BaseWord::new(9, k));
        }
    }

    #[test]
    fn read_only_commit_writes_nothing() {
        for v in [
            StmVariant::ProgRaw,
            StmVariant::ProgMcas,
            StmVariant::StrongProg,
        ] {
            let mut s = Session::new(v, 1, 1);
            let k = s.tx_begin(P0).unwrap();
            s.tx_read(k, X0).unwrap();
            let before = s.trace().base_events().count();
            assert_eq!(s.tx_tryc(k).unwrap(), OpResult::Commit);
            assert_eq!(s.trace().base_events().count(), before);
        }
    }

    #[test]
    fn trya_is_self_abort_and_changes_nothing() {
        for v in StmVariant::ALL {
            let mut s = Session::new(v, 1, 1);
            let k = s.tx_begin(P0).unwrap();
            s.tx_write(k, X0, 5).unwrap();
            assert_eq!(s.tx_trya(k).unwrap(), OpResult::Abort);
            let l = StmLayout::new(v, 1, 1);
            assert_eq!(s.word(l.v(X0)), BaseWord::ZERO);
            let h = s.trace().history();
            let txs = h.transactions();
            assert!(!txs.get(k).unwrap().forcefully_aborted);
            assert_eq!(s.tx_read(k, X0), Err(Fault::NotLive(k)));
        }
    }

    #[test]
    fn stale_read_set_aborts_the_reader() {
        for v in [
            StmVariant::ProgRaw,
            StmVariant::ProgMcas,
            StmVariant::StrongProg,
        ] {
            let mut s = Session::new(v, 2, 2);
            let t1 = s.tx_begin(P0).unwrap();
            assert_eq!(s.tx_read(t1, X0).unwrap(), val(0));
            let t2 = s.tx_begin(P1).unwrap();
            s.tx_write(t2, X0, 4).unwrap();
            assert_eq!(s.tx_tryc(t2).unwrap(), OpResult::Commit);
            assert_eq!(s.tx_read(t1, X1).unwrap(), OpResult::Abort, "{v}");
            let h = s.trace().history();
            assert!(h.transactions().get(t1).unwrap().forcefully_aborted);
        }
    }

    #[test]
    fn single_lock_begin_blocks_while_held() {
        let mut s = Session::new(StmVariant::SingleLock, 2, 1);
        s.tx_begin(P0).unwrap();
        assert_eq!(s.tx_begin(P1), Err(Fault::Blocked(P1)));
    }

    #[test]
    fn single_lock_acquire_is_one_atomic_section_before_the_history() {
        let mut s = Session::new(StmVariant::SingleLock, 1, 1);
        let k = s.tx_begin(P0).unwrap();
        s.tx_read(k, X0).unwrap();
        let t = s.trace();
        assert!(
            matches!(&t.events[0], crate::memory::TraceEvent::Base(b) if b.kind == BaseKind::AtomicBegin && b.tx == k)
        );
        let h = t.history();
        assert_eq!(h.events[0].kind, TmKind::InvRead);
    }
}
