//! Reference implementations used to cross-check the library. They work
//! straight from raw events and favour obviousness over speed.

use std::collections::{BTreeMap, BTreeSet};

use stmlab::memory::{BaseKind, ExecutionTrace, TraceEvent};
use stmlab::model::{OpKind, Outcome, TmEvent, TmKind};
use stmlab::{History, TObjectId, TxId, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum End {
    Committed,
    Aborted,
    PendingTryC,
    Live,
}

#[derive(Clone, Debug)]
pub struct Op {
    pub kind: OpKind,
    pub x: Option<TObjectId>,
    pub arg: Option<Value>,
    pub ret: Option<Value>,
    pub inv: usize,
    pub resp: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Tx {
    pub id: TxId,
    pub first: usize,
    pub last: usize,
    pub ops: Vec<Op>,
    pub end: End,
}

impl Tx {
    fn tryc_inv(&self) -> Option<usize> {
        self.ops
            .iter()
            .find(|o| o.kind == OpKind::TryC)
            .map(|o| o.inv)
    }

    fn writes(&self) -> BTreeSet<TObjectId> {
        self.ops
            .iter()
            .filter(|o| o.kind == OpKind::Write)
            .filter_map(|o| o.x)
            .collect()
    }
}

pub fn parse(events: &[TmEvent]) -> Vec<Tx> {
    let mut txs: BTreeMap<TxId, Tx> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        let t = txs.entry(e.tx).or_insert(Tx {
            id: e.tx,
            first: i,
            last: i,
            ops: Vec::new(),
            end: End::Live,
        });
        t.last = i;
        let inv = matches!(
            e.kind,
            TmKind::InvRead | TmKind::InvWrite | TmKind::InvTryC | TmKind::InvTryA
        );
        if inv {
            t.ops.push(Op {
                kind: e.kind.op(),
                x: e.object,
                arg: e.value,
                ret: None,
                inv: i,
                resp: None,
            });
            if e.kind == TmKind::InvTryC {
                t.end = End::PendingTryC;
            }
            continue;
        }
        let op = t.ops.last_mut().expect("response after invocation");
        op.resp = Some(i);
        match e.outcome {
            Some(Outcome::Value) => op.ret = e.value,
            Some(Outcome::Commit) => t.end = End::Committed,
            Some(Outcome::Abort) => t.end = End::Aborted,
            _ => {}
        }
    }
    txs.into_values().collect()
}

fn commits(t: &Tx, chosen: &BTreeSet<TxId>) -> bool {
    t.end == End::Committed || (t.end == End::PendingTryC && chosen.contains(&t.id))
}

/// Whether `order` (a permutation of the transactions, without `T0`) is a
/// serialization when the pending-tryC transactions in `chosen` commit.
pub fn is_serialization(txs: &[Tx], order: &[TxId], chosen: &BTreeSet<TxId>) -> bool {
    let pos: BTreeMap<TxId, usize> = order.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    if pos.len() != txs.len() || txs.iter().any(|t| !pos.contains_key(&t.id)) {
        return false;
    }
    for a in txs {
        for b in txs {
            if a.id == b.id {
                continue;
            }
            let rt = matches!(a.end, End::Committed | End::Aborted) && a.last < b.first;
            let du = commits(b, chosen)
                && b.tryc_inv().is_some_and(|c| {
                    let ws = b.writes();
                    a.ops.iter().any(|o| {
                        o.kind == OpKind::Read
                            && o.x.is_some_and(|x| ws.contains(&x))
                            && o.resp.is_some_and(|r| r < c)
                    })
                });
            if (rt || du) && pos[&a.id] > pos[&b.id] {
                return false;
            }
        }
    }
    let by_id: BTreeMap<TxId, &Tx> = txs.iter().map(|t| (t.id, t)).collect();
    let mut mem: BTreeMap<TObjectId, Value> = BTreeMap::new();
    for id in order {
        let t = by_id[id];
        let mut local: BTreeMap<TObjectId, Value> = BTreeMap::new();
        for o in &t.ops {
            match (o.kind, o.x) {
                (OpKind::Write, Some(x)) => {
                    local.insert(x, o.arg.unwrap_or(0));
                }
                (OpKind::Read, Some(x)) => {
                    if let Some(v) = o.ret {
                        let expect = local.get(&x).or(mem.get(&x)).copied().unwrap_or(0);
                        if v != expect {
                            return false;
                        }
                    }
                }
                _ => {}
            }
        }
        if commits(t, chosen) {
            mem.extend(local);
        }
    }
    true
}

fn permutations(items: &[TxId]) -> Vec<Vec<TxId>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Tries every completion and every permutation.
pub fn opaque(h: &History) -> bool {
    let txs = parse(&h.events);
    let ids: Vec<TxId> = txs.iter().map(|t| t.id).collect();
    let pending: Vec<TxId> = txs
        .iter()
        .filter(|t| t.end == End::PendingTryC)
        .map(|t| t.id)
        .collect();
    let perms = permutations(&ids);
    (0..1u32 << pending.len()).any(|mask| {
        let chosen: BTreeSet<TxId> = pending
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, t)| *t)
            .collect();
        perms.iter().any(|p| is_serialization(&txs, p, &chosen))
    })
}

/// Checks a serialization witness `[T0, ...]` from the library.
pub fn witness_ok(h: &History, order: &[TxId], committed: &[TxId]) -> bool {
    let txs = parse(&h.events);
    let chosen: BTreeSet<TxId> = committed.iter().copied().collect();
    if chosen
        .iter()
        .any(|t| !txs.iter().any(|x| x.id == *t && x.end == End::PendingTryC))
    {
        return false;
    }
    order.first() == Some(&TxId::INIT) && is_serialization(&txs, &order[1..], &chosen)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub raw: usize,
    pub multi_raw: usize,
    pub awar: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Acc {
    R(u32),
    W(u32),
}

/// Largest set of pairwise disjoint RAW intervals, over every RAW pair.
fn max_raws(acc: &[Acc]) -> usize {
    let mut intervals = Vec::new();
    for (i, a) in acc.iter().enumerate() {
        let Acc::W(x) = *a else { continue };
        for (j, b) in acc.iter().enumerate().skip(i + 1) {
            let Acc::R(y) = *b else { continue };
            if y != x && !acc[i + 1..j].contains(&Acc::W(y)) {
                intervals.push((i, j));
            }
        }
    }
    // best[k]: most disjoint intervals lying within positions k..
    let n = acc.len();
    let mut best = vec![0usize; n + 2];
    for k in (0..n).rev() {
        best[k] = best[k + 1];
        for &(i, j) in &intervals {
            if i == k {
                best[k] = best[k].max(1 + best[j + 1]);
            }
        }
    }
    best[0]
}

fn multi_raws(acc: &[Acc]) -> usize {
    // Split into maximal runs of one kind; a write run followed by a read run
    // is a multi-RAW if some read is outside the run's written objects.
    let mut runs: Vec<(bool, Vec<u32>)> = Vec::new();
    for a in acc {
        let (w, x) = match *a {
            Acc::W(x) => (true, x),
            Acc::R(x) => (false, x),
        };
        match runs.last_mut() {
            Some((k, xs)) if *k == w => xs.push(x),
            _ => runs.push((w, vec![x])),
        }
    }
    runs.windows(2)
        .filter(|p| p[0].0 && !p[1].0 && p[1].1.iter().any(|y| !p[0].1.contains(y)))
        .count()
}

/// Pattern counts of each transaction's base-event fragment.
pub fn counts(trace: &ExecutionTrace) -> BTreeMap<TxId, Counts> {
    let mut frags: BTreeMap<TxId, Vec<&stmlab::memory::BaseEvent>> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::Base(b) = e {
            if !b.tx.is_init() {
                frags.entry(b.tx).or_default().push(b);
            }
        }
    }
    frags
        .into_iter()
        .map(|(t, evs)| {
            let acc: Vec<Acc> = evs
                .iter()
                .filter_map(|e| match (e.kind, e.object) {
                    (BaseKind::Read, Some(o)) => Some(Acc::R(o.index)),
                    (BaseKind::Write, Some(o)) => Some(Acc::W(o.index)),
                    _ => None,
                })
                .collect();
            let mut awar = 0;
            let mut section: Option<Vec<BaseKind>> = None;
            for e in &evs {
                match e.kind {
                    BaseKind::AtomicBegin => section = Some(Vec::new()),
                    BaseKind::AtomicEnd => {
                        if let Some(s) = section.take() {
                            let first_read = s.iter().position(|k| *k == BaseKind::Read);
                            let last_write = s.iter().rposition(|k| *k == BaseKind::Write);
                            if matches!((first_read, last_write), (Some(r), Some(w)) if r < w) {
                                awar += 1;
                            }
                        }
                    }
                    k => {
                        if let Some(s) = section.as_mut() {
                            s.push(k);
                        }
                    }
                }
            }
            (
                t,
                Counts {
                    raw: max_raws(&acc),
                    multi_raw: multi_raws(&acc),
                    awar,
                },
            )
        })
        .collect()
}

/// Transactions of a history as `(id, updating, has_read, committed)`.
pub fn tx_kinds(h: &History) -> Vec<(TxId, bool, bool, bool)> {
    parse(&h.events)
        .into_iter()
        .map(|t| {
            let upd = t.ops.iter().any(|o| o.kind == OpKind::Write);
            let rd = t.ops.iter().any(|o| o.kind == OpKind::Read);
            (t.id, upd, rd, t.end == End::Committed)
        })
        .collect()
}
