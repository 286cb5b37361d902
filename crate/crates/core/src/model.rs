//! Transactions, histories and the partial orders every checker consumes.
//!
//! A [`History`] is the globally ordered sequence of invocations and
//! responses of tm-operations. The initializing transaction `T0` is never
//! stored: checkers materialize it as a committed writer of `0` to every
//! t-object.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::{Verdict, Witness};

/// A transactional object, dense in `[0, M)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TObjectId(pub u32);

/// Transaction identifier. `TxId(0)` is the fictitious initializing transaction.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TxId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

/// Values stored in t-objects. Every t-object starts at `0`.
pub type Value = i64;

impl TxId {
    pub const INIT: TxId = TxId(0);

    pub fn is_init(self) -> bool {
        self.0 == 0
    }
}

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TObjectId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

impl fmt::Display for TObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X{}", self.0)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TmKind {
    #[serde(rename = "inv-read")]
    InvRead,
    #[serde(rename = "resp-read")]
    RespRead,
    #[serde(rename = "inv-write")]
    InvWrite,
    #[serde(rename = "resp-write")]
    RespWrite,
    #[serde(rename = "inv-tryC")]
    InvTryC,
    #[serde(rename = "resp-tryC")]
    RespTryC,
    #[serde(rename = "inv-tryA")]
    InvTryA,
    #[serde(rename = "resp-tryA")]
    RespTryA,
}

/// The four tm-operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Read,
    Write,
    TryC,
    TryA,
}

impl TmKind {
    pub fn is_invocation(self) -> bool {
        matches!(
            self,
            TmKind::InvRead | TmKind::InvWrite | TmKind::InvTryC | TmKind::InvTryA
        )
    }

    pub fn op(self) -> OpKind {
        match self {
            TmKind::InvRead | TmKind::RespRead => OpKind::Read,
            TmKind::InvWrite | TmKind::RespWrite => OpKind::Write,
            TmKind::InvTryC | TmKind::RespTryC => OpKind::TryC,
            TmKind::InvTryA | TmKind::RespTryA => OpKind::TryA,
        }
    }

    pub fn invocation(op: OpKind) -> TmKind {
        match op {
            OpKind::Read => TmKind::InvRead,
            OpKind::Write => TmKind::InvWrite,
            OpKind::TryC => TmKind::InvTryC,
            OpKind::TryA => TmKind::InvTryA,
        }
    }

    pub fn response(op: OpKind) -> TmKind {
        match op {
            OpKind::Read => TmKind::RespRead,
            OpKind::Write => TmKind::RespWrite,
            OpKind::TryC => TmKind::RespTryC,
            OpKind::TryA => TmKind::RespTryA,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Ok,
    Value,
    Commit,
    Abort,
}

/// One invocation or response of a tm-operation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TmEvent {
    pub seq: u64,
    pub kind: TmKind,
    pub tx: TxId,
    pub process: ProcessId,
    #[serde(default)]
    pub object: Option<TObjectId>,
    #[serde(default)]
    pub value: Option<Value>,
    #[serde(default)]
    pub outcome: Option<Outcome>,
    /// Writer tag of the base word a successful read returned, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writer: Option<TxId>,
}

impl TmEvent {
    pub fn is_abort(&self) -> bool {
        self.outcome == Some(Outcome::Abort)
    }

    pub fn is_commit(&self) -> bool {
        self.outcome == Some(Outcome::Commit)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {source}")]
pub struct ParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// A sequence of tm-events in global order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub events: Vec<TmEvent>,
}

impl History {
    pub fn new(events: Vec<TmEvent>) -> Self {
        History { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("tm events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<History, ParseError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line).map_err(|source| ParseError {
                line: i + 1,
                source,
            })?;
            events.push(ev);
        }
        Ok(History { events })
    }

    /// Per-transaction view of the history. Assumes well-formedness; on a
    /// malformed history the view is best effort.
    pub fn transactions(&self) -> Transactions {
        Transactions::build(self)
    }

    /// Keeps only the events of the given transactions, preserving order.
    pub fn restrict(&self, keep: &BTreeSet<TxId>) -> History {
        History {
            events: self
                .events
                .iter()
                .filter(|e| keep.contains(&e.tx))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxStatus {
    Live,
    Committed,
    Aborted,
}

/// One tm-operation of a transaction: its invocation and (if any) response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub kind: OpKind,
    pub object: Option<TObjectId>,
    /// Argument of a write.
    pub arg: Option<Value>,
    pub inv: usize,
    pub resp: Option<usize>,
    pub outcome: Option<Outcome>,
    /// Value returned by a successful read.
    pub result: Option<Value>,
    pub writer: Option<TxId>,
}

impl OpRecord {
    pub fn aborted(&self) -> bool {
        self.outcome == Some(Outcome::Abort)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxRecord {
    pub id: TxId,
    pub process: ProcessId,
    pub ops: Vec<OpRecord>,
    /// Index of the first event in the history.
    pub first: usize,
    /// Index of the last event in the history.
    pub last: usize,
    pub status: TxStatus,
    /// Some operation other than tryA returned an abort.
    pub forcefully_aborted: bool,
}

impl TxRecord {
    pub fn is_complete(&self) -> bool {
        self.status != TxStatus::Live
    }

    pub fn committed(&self) -> bool {
        self.status == TxStatus::Committed
    }

    /// Objects the transaction invoked a read on.
    pub fn rset(&self) -> BTreeSet<TObjectId> {
        self.ops
            .iter()
            .filter(|o| o.kind == OpKind::Read)
            .filter_map(|o| o.object)
            .collect()
    }

    pub fn wset(&self) -> BTreeSet<TObjectId> {
        self.ops
            .iter()
            .filter(|o| o.kind == OpKind::Write)
            .filter_map(|o| o.object)
            .collect()
    }

    pub fn dset(&self) -> BTreeSet<TObjectId> {
        self.ops.iter().filter_map(|o| o.object).collect()
    }

    pub fn is_updating(&self) -> bool {
        self.ops.iter().any(|o| o.kind == OpKind::Write)
    }

    /// The pending invocation, if the last operation has no response.
    pub fn pending(&self) -> Option<&OpRecord> {
        self.ops.last().filter(|o| o.resp.is_none())
    }

    pub fn tryc_invocation(&self) -> Option<usize> {
        self.ops
            .iter()
            .find(|o| o.kind == OpKind::TryC)
            .map(|o| o.inv)
    }
}

/// All transactions of a history, keyed by id.
#[derive(Clone, Debug, Default)]
pub struct Transactions {
    pub txs: BTreeMap<TxId, TxRecord>,
}

impl Transactions {
    fn build(h: &History) -> Transactions {
        let mut txs: BTreeMap<TxId, TxRecord> = BTreeMap::new();
        for (i, ev) in h.events.iter().enumerate() {
            let rec = txs.entry(ev.tx).or_insert_with(|| TxRecord {
                id: ev.tx,
                process: ev.process,
                ops: Vec::new(),
                first: i,
                last: i,
                status: TxStatus::Live,
                forcefully_aborted: false,
            });
            rec.last = i;
            if ev.kind.is_invocation() {
                rec.ops.push(OpRecord {
                    kind: ev.kind.op(),
                    object: ev.object,
                    arg: if ev.kind == TmKind::InvWrite {
                        ev.value
                    } else {
                        None
                    },
                    inv: i,
                    resp: None,
                    outcome: None,
                    result: None,
                    writer: None,
                });
            } else if let Some(op) = rec.ops.last_mut().filter(|o| o.resp.is_none()) {
                op.resp = Some(i);
                op.outcome = ev.outcome;
                if ev.kind == TmKind::RespRead && ev.outcome != Some(Outcome::Abort) {
                    op.result = ev.value;
                    op.writer = ev.writer;
                }
                match ev.outcome {
                    Some(Outcome::Commit) => rec.status = TxStatus::Committed,
                    Some(Outcome::Abort) => {
                        rec.status = TxStatus::Aborted;
                        if op.kind != OpKind::TryA {
                            rec.forcefully_aborted = true;
                        }
                    }
                    _ => {}
                }
            }
        }
        Transactions { txs }
    }

    pub fn get(&self, id: TxId) -> Option<&TxRecord> {
        self.txs.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = TxId> + '_ {
        self.txs.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TxRecord> {
        self.txs.values()
    }

    /// `a` precedes `b` in real time: `a` is complete and its last event
    /// comes before the first event of `b`.
    pub fn precedes(&self, a: TxId, b: TxId) -> bool {
        if a.is_init() {
            return !b.is_init();
        }
        match (self.txs.get(&a), self.txs.get(&b)) {
            (Some(ta), Some(tb)) => ta.is_complete() && ta.last < tb.first,
            _ => false,
        }
    }

    pub fn concurrent(&self, a: TxId, b: TxId) -> bool {
        a != b && !self.precedes(a, b) && !self.precedes(b, a)
    }
}

/// Checks well-formedness: every per-transaction projection is sequential
/// with nothing after its commit or abort, each transaction stays on one
/// process, and every per-process projection is t-sequential.
pub fn validate_history(h: &History) -> Verdict {
    #[derive(Clone, Copy)]
    struct TxState {
        process: ProcessId,
        open: Option<(usize, OpKind)>,
        last: usize,
        done: bool,
    }
    let mut txs: BTreeMap<TxId, TxState> = BTreeMap::new();
    // Per process: the transaction currently running on it.
    let mut running: BTreeMap<ProcessId, (TxId, usize)> = BTreeMap::new();
    let mut prev_seq: Option<(u64, usize)> = None;

    let fail =
        |a: usize, b: usize, why: &str| Verdict::fail(Witness::events(vec![a, b])).with_note(why);

    for (i, ev) in h.events.iter().enumerate() {
        if let Some((s, j)) = prev_seq {
            if ev.seq <= s {
                return fail(j, i, "sequence numbers must increase");
            }
        }
        prev_seq = Some((ev.seq, i));
        if ev.tx.is_init() {
            return fail(i, i, "T0 is implicit and cannot appear in a history");
        }
        let needs_object = matches!(ev.kind.op(), OpKind::Read | OpKind::Write);
        if needs_object && ev.object.is_none() {
            return fail(i, i, "read/write event without an object");
        }
        if !ev.kind.is_invocation() && ev.outcome.is_none() {
            return fail(i, i, "response without an outcome");
        }
        if ev.kind == TmKind::InvWrite && ev.value.is_none() {
            return fail(i, i, "write invocation without a value");
        }

        if let Some(&(cur, at)) = running.get(&ev.process) {
            if cur != ev.tx {
                let cur_done = txs.get(&cur).map(|t| t.done).unwrap_or(true);
                if !cur_done {
                    return fail(at, i, "process starts a transaction while another is live");
                }
            }
        }
        let st = txs.entry(ev.tx).or_insert(TxState {
            process: ev.process,
            open: None,
            last: i,
            done: false,
        });
        if st.process != ev.process {
            return fail(st.last, i, "transaction migrated to another process");
        }
        if st.done {
            return fail(st.last, i, "event after commit or abort");
        }
        if ev.kind.is_invocation() {
            if let Some((at, _)) = st.open {
                return fail(at, i, "new invocation while an operation is pending");
            }
            st.open = Some((i, ev.kind.op()));
        } else {
            match st.open {
                Some((_, op)) if op == ev.kind.op() => {
                    st.open = None;
                    if matches!(ev.outcome, Some(Outcome::Abort) | Some(Outcome::Commit)) {
                        st.done = true;
                    }
                }
                Some((at, _)) => {
                    return fail(at, i, "response does not match the pending invocation")
                }
                None => return fail(st.last, i, "response without a pending invocation"),
            }
        }
        st.last = i;
        running.insert(ev.process, (ev.tx, i));
    }
    Verdict::pass(Witness::None)
}

/// All pairs `(a, b)` with `a` complete and its last event before the first
/// event of `b`. `T0` precedes every participating transaction.
pub fn real_time_order(h: &History) -> BTreeSet<(TxId, TxId)> {
    let txs = h.transactions();
    let mut out = BTreeSet::new();
    for a in txs.iter() {
        out.insert((TxId::INIT, a.id));
        if !a.is_complete() {
            continue;
        }
        for b in txs.iter() {
            if a.id != b.id && a.last < b.first {
                out.insert((a.id, b.id));
            }
        }
    }
    out
}

/// All pairs `(a, b)` such that `b` committed, `a` read some `X` that `b`
/// writes, and the response of that read precedes the invocation of
/// `b`'s tryC.
pub fn deferred_update_order(h: &History) -> BTreeSet<(TxId, TxId)> {
    deferred_update_order_with(&h.transactions(), |t| t.committed())
}

/// Deferred-update order where `committed` decides which transactions count
/// as committed (completions of pending tryC need this).
pub(crate) fn deferred_update_order_with(
    txs: &Transactions,
    committed: impl Fn(&TxRecord) -> bool,
) -> BTreeSet<(TxId, TxId)> {
    let mut out = BTreeSet::new();
    for b in txs.iter().filter(|b| committed(b)) {
        let Some(tryc) = b.tryc_invocation() else {
            continue;
        };
        let wset = b.wset();
        for a in txs.iter().filter(|a| a.id != b.id) {
            let hit = a.ops.iter().any(|op| {
                op.kind == OpKind::Read
                    && op.object.is_some_and(|x| wset.contains(&x))
                    && op.resp.is_some_and(|r| r < tryc)
            });
            if hit {
                out.insert((a.id, b.id));
            }
        }
    }
    out
}

/// Objects on which `a` and `b` conflict: they are concurrent, both access
/// the object and at least one of them writes it.
pub fn conflicts(h: &History, a: TxId, b: TxId) -> BTreeSet<TObjectId> {
    conflicts_in(&h.transactions(), a, b)
}

pub(crate) fn conflicts_in(txs: &Transactions, a: TxId, b: TxId) -> BTreeSet<TObjectId> {
    let (Some(ta), Some(tb)) = (txs.get(a), txs.get(b)) else {
        return BTreeSet::new();
    };
    if !txs.concurrent(a, b) {
        return BTreeSet::new();
    }
    let (wa, wb) = (ta.wset(), tb.wset());
    ta.dset()
        .intersection(&tb.dset())
        .filter(|x| wa.contains(x) || wb.contains(x))
        .copied()
        .collect()
}

/// Builds histories by hand. Each call appends events with increasing
/// sequence numbers; transactions run on the process with the same number
/// unless [`HistoryBuilder::on`] says otherwise.
#[derive(Clone, Debug, Default)]
pub struct HistoryBuilder {
    events: Vec<TmEvent>,
    processes: BTreeMap<TxId, ProcessId>,
}

impl HistoryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, tx: u64, process: u32) -> Self {
        self.processes.insert(TxId(tx), ProcessId(process));
        self
    }

    fn push(
        &mut self,
        kind: TmKind,
        tx: u64,
        object: Option<u32>,
        value: Option<Value>,
        outcome: Option<Outcome>,
    ) {
        let tx = TxId(tx);
        let process = *self.processes.get(&tx).unwrap_or(&ProcessId(tx.0 as u32));
        self.events.push(TmEvent {
            seq: self.events.len() as u64 + 1,
            kind,
            tx,
            process,
            object: object.map(TObjectId),
            value,
            outcome,
            writer: None,
        });
    }

    pub fn inv_read(mut self, tx: u64, x: u32) -> Self {
        self.push(TmKind::InvRead, tx, Some(x), None, None);
        self
    }

    pub fn resp_read(mut self, tx: u64, x: u32, v: Value) -> Self {
        self.push(TmKind::RespRead, tx, Some(x), Some(v), Some(Outcome::Value));
        self
    }

    pub fn resp_read_abort(mut self, tx: u64, x: u32) -> Self {
        self.push(TmKind::RespRead, tx, Some(x), None, Some(Outcome::Abort));
        self
    }

    pub fn read(self, tx: u64, x: u32, v: Value) -> Self {
        self.inv_read(tx, x).resp_read(tx, x, v)
    }

    pub fn read_abort(self, tx: u64, x: u32) -> Self {
        self.inv_read(tx, x).resp_read_abort(tx, x)
    }

    pub fn inv_write(mut self, tx: u64, x: u32, v: Value) -> Self {
        self.push(TmKind::InvWrite, tx, Some(x), Some(v), None);
        self
    }

    pub fn resp_write(mut self, tx: u64, x: u32) -> Self {
        self.push(TmKind::RespWrite, tx, Some(x), None, Some(Outcome::Ok));
        self
    }

    pub fn write(self, tx: u64, x: u32, v: Value) -> Self {
        self.inv_write(tx, x, v).resp_write(tx, x)
    }

    pub fn inv_tryc(mut self, tx: u64) -> Self {
        self.push(TmKind::InvTryC, tx, None, None, None);
        self
    }

    pub fn resp_commit(mut self, tx: u64) -> Self {
        self.push(TmKind::RespTryC, tx, None, None, Some(Outcome::Commit));
        self
    }

    pub fn resp_tryc_abort(mut self, tx: u64) -> Self {
        self.push(TmKind::RespTryC, tx, None, None, Some(Outcome::Abort));
        self
    }

    pub fn commit(self, tx: u64) -> Self {
        self.inv_tryc(tx).resp_commit(tx)
    }

    pub fn tryc_abort(self, tx: u64) -> Self {
        self.inv_tryc(tx).resp_tryc_abort(tx)
    }

    pub fn trya(mut self, tx: u64) -> Self {
        self.push(TmKind::InvTryA, tx, None, None, None);
        self.push(TmKind::RespTryA, tx, None, None, Some(Outcome::Abort));
        self
    }

    pub fn build(self) -> History {
        History {
            events: self.events,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(a: u64, b: u64) -> (TxId, TxId) {
        (TxId(a), TxId(b))
    }

    /// T3 reads X1 = 0, T2 writes X1 and commits, T1 reads X1 (new value)
    /// and X2; T1 and T3 stay live.
    fn fig1() -> History {
        HistoryBuilder::new()
            .read(3, 1, 0)
            .write(2, 1, 7)
            .commit(2)
            .read(1, 1, 7)
            .read(1, 2, 0)
            .build()
    }

    #[test]
    fn empty_history_is_well_formed() {
        assert!(validate_history(&History::default()).pass);
    }

    #[test]
    fn single_sequential_transaction_is_well_formed() {
        let h = HistoryBuilder::new().read(1, 0, 0).commit(1).build();
        assert!(validate_history(&h).pass);
    }

    #[test]
    fn pending_invocation_followed_by_invocation_fails_at_second_event() {
        let h = HistoryBuilder::new()
            .inv_read(1, 0)
            .inv_write(1, 1, 1)
            .build();
        let v = validate_history(&h);
        assert!(!v.pass);
        assert_eq!(v.witness, Witness::events(vec![0, 1]));
    }

    #[test]
    fn event_after_commit_is_malformed() {
        let h = HistoryBuilder::new().commit(1).read(1, 0, 0).build();
        assert!(!validate_history(&h).pass);
    }

    #[test]
    fn overlapping_transactions_on_one_process_are_malformed() {
        let h = HistoryBuilder::new()
            .on(2, 1)
            .read(1, 0, 0)
            .read(2, 0, 0)
            .build();
        assert!(!validate_history(&h).pass);
    }

    #[test]
    fn sequential_composition_orders_in_real_time() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .commit(1)
            .read(2, 0, 0)
            .commit(2)
            .build();
        let rt = real_time_order(&h);
        assert_eq!(rt, [t(0, 1), t(0, 2), t(1, 2)].into_iter().collect());
    }

    #[test]
    fn interleaved_live_transactions_have_no_real_time_edge() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .read(2, 0, 0)
            .read(1, 1, 0)
            .read(2, 1, 0)
            .build();
        let rt = real_time_order(&h);
        assert_eq!(rt, [t(0, 1), t(0, 2)].into_iter().collect());
    }

    #[test]
    fn fig1_real_time_and_deferred_update_edges() {
        let h = fig1();
        let rt = real_time_order(&h);
        assert!(rt.contains(&t(2, 1)));
        assert!(!rt.contains(&t(3, 2)));
        assert!(!rt.contains(&t(2, 3)));
        let du = deferred_update_order(&h);
        assert!(du.contains(&t(3, 2)));
        assert!(!du.contains(&t(1, 2)));
    }

    #[test]
    fn aborted_writer_gets_no_deferred_update_edge() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .write(2, 0, 5)
            .tryc_abort(2)
            .build();
        assert!(deferred_update_order(&h).is_empty());
    }

    #[test]
    fn read_after_tryc_invocation_gives_no_edge() {
        let h = HistoryBuilder::new()
            .write(2, 0, 5)
            .inv_tryc(2)
            .read(1, 0, 0)
            .resp_commit(2)
            .build();
        assert!(deferred_update_order(&h).is_empty());
    }

    #[test]
    fn conflict_requires_a_writer_and_concurrency() {
        let rw = HistoryBuilder::new()
            .read(1, 0, 0)
            .write(2, 0, 1)
            .commit(2)
            .commit(1)
            .build();
        assert_eq!(
            conflicts(&rw, TxId(1), TxId(2)),
            [TObjectId(0)].into_iter().collect()
        );
        let rr = HistoryBuilder::new()
            .read(1, 0, 0)
            .read(2, 0, 0)
            .commit(2)
            .commit(1)
            .build();
        assert!(conflicts(&rr, TxId(1), TxId(2)).is_empty());
        let seq = HistoryBuilder::new()
            .write(1, 0, 1)
            .commit(1)
            .write(2, 0, 2)
            .commit(2)
            .build();
        assert!(conflicts(&seq, TxId(1), TxId(2)).is_empty());
    }

    #[test]
    fn jsonl_round_trip_keeps_field_names() {
        let h = fig1();
        let text = h.to_jsonl();
        let first = text.lines().next().unwrap();
        assert!(first.contains("\"kind\":\"inv-read\""));
        assert!(first.contains("\"object\":1"));
        assert_eq!(History::from_jsonl(&text).unwrap(), h);
    }
}
