//! Structural properties of traces: invisible reads, strict data
//! partitioning, disjoint-access parallelism, mutual exclusion of
//! multi-trylocks, and replay consistency of base objects.

use std::collections::{BTreeMap, BTreeSet};

use super::{Verdict, Witness};
use crate::memory::{BaseKind, BaseObjectId, BaseWord, ExecutionTrace, LockKind, TraceEvent};
use crate::model::{ProcessId, TObjectId, TmKind, TxId};

/// No process applies a nontrivial primitive while inside a tm-read.
pub fn check_invisible_reads(trace: &ExecutionTrace) -> Verdict {
    let mut reading: BTreeSet<ProcessId> = BTreeSet::new();
    for (i, ev) in trace.events.iter().enumerate() {
        match ev {
            TraceEvent::Tm(t) if t.kind == TmKind::InvRead => {
                reading.insert(t.process);
            }
            TraceEvent::Tm(t) if t.kind == TmKind::RespRead => {
                reading.remove(&t.process);
            }
            TraceEvent::Base(b) if b.nontrivial && reading.contains(&b.process) => {
                return Verdict::fail(Witness::events(vec![i]))
                    .with_note(format!("{} writes inside a read", b.tx));
            }
            _ => {}
        }
    }
    Verdict::pass(Witness::None)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("base object {0} belongs to both {1} and {2}")]
    Overlap(u32, TObjectId, TObjectId),
}

fn owner_map(
    beta: &BTreeMap<TObjectId, BTreeSet<BaseObjectId>>,
) -> Result<BTreeMap<u32, TObjectId>, PartitionError> {
    let mut owner = BTreeMap::new();
    for (x, objs) in beta {
        for o in objs {
            if let Some(prev) = owner.insert(o.index, *x) {
                if prev != *x {
                    return Err(PartitionError::Overlap(o.index, prev, *x));
                }
            }
        }
    }
    Ok(owner)
}

/// Every base object a transaction touches lies in `beta(X)` for some `X` in
/// its data set.
pub fn check_strict_partitioning(
    trace: &ExecutionTrace,
    beta: &BTreeMap<TObjectId, BTreeSet<BaseObjectId>>,
) -> Result<Verdict, PartitionError> {
    let owner = owner_map(beta)?;
    let txs = trace.history().transactions();
    for (i, ev) in trace.events.iter().enumerate() {
        let TraceEvent::Base(b) = ev else { continue };
        let (Some(o), false) = (b.object, b.tx.is_init()) else {
            continue;
        };
        let dset = txs.get(b.tx).map(|t| t.dset()).unwrap_or_default();
        let ok = owner.get(&o.index).is_some_and(|x| dset.contains(x));
        if !ok {
            return Ok(Verdict::fail(Witness::events(vec![i]))
                .with_note(format!("{} touches {} outside its data set", b.tx, o.index)));
        }
    }
    Ok(Verdict::pass(Witness::None))
}

/// Disjoint-access transactions never contend on a base object.
///
/// Two transactions are disjoint-access when their data sets are not joined
/// by the graph linking the objects of every transaction whose interval
/// meets the span of the two. They contend when both access one base object
/// and at least one access is nontrivial.
pub fn check_dap(trace: &ExecutionTrace) -> Verdict {
    let txs = trace.history().transactions();
    let end = trace.events.len();
    let mut span: BTreeMap<TxId, (usize, usize)> = BTreeMap::new();
    let mut access: BTreeMap<TxId, BTreeMap<u32, bool>> = BTreeMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        let tx = match ev {
            TraceEvent::Tm(t) => t.tx,
            TraceEvent::Base(b) => b.tx,
            TraceEvent::Lock(l) => l.tx,
        };
        if tx.is_init() {
            continue;
        }
        let s = span.entry(tx).or_insert((i, i));
        s.1 = i;
        if let TraceEvent::Base(b) = ev {
            if let Some(o) = b.object {
                *access.entry(tx).or_default().entry(o.index).or_default() |= b.nontrivial;
            }
        }
    }
    for t in txs.iter().filter(|t| !t.is_complete()) {
        if let Some(s) = span.get_mut(&t.id) {
            s.1 = end;
        }
    }
    let ids: Vec<TxId> = span.keys().copied().collect();
    let dset = |t: TxId| txs.get(t).map(|r| r.dset()).unwrap_or_default();
    for (a_i, &a) in ids.iter().enumerate() {
        for &b in &ids[a_i + 1..] {
            let (Some(aa), Some(ab)) = (access.get(&a), access.get(&b)) else {
                continue;
            };
            let shared: Vec<u32> = aa
                .iter()
                .filter(|(o, w)| ab.get(o).is_some_and(|w2| **w || *w2))
                .map(|(o, _)| *o)
                .collect();
            if shared.is_empty() {
                continue;
            }
            let lo = span[&a].0.min(span[&b].0);
            let hi = span[&a].1.max(span[&b].1);
            // Union the data sets of transactions whose interval meets [lo, hi].
            let mut parent: BTreeMap<TObjectId, TObjectId> = BTreeMap::new();
            fn find(p: &mut BTreeMap<TObjectId, TObjectId>, x: TObjectId) -> TObjectId {
                let up = *p.entry(x).or_insert(x);
                if up == x {
                    return x;
                }
                let r = find(p, up);
                p.insert(x, r);
                r
            }
            for (&t, &(s, e)) in &span {
                if s > hi || e < lo {
                    continue;
                }
                let d: Vec<TObjectId> = dset(t).into_iter().collect();
                for w in d.windows(2) {
                    let (r0, r1) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                    parent.insert(r0, r1);
                }
            }
            let ra: BTreeSet<TObjectId> =
                dset(a).into_iter().map(|x| find(&mut parent, x)).collect();
            let joined = dset(b)
                .into_iter()
                .any(|x| ra.contains(&find(&mut parent, x)));
            if !joined {
                return Verdict::fail(Witness::BaseObject {
                    object: BaseObjectId::untagged(shared[0]),
                })
                .with_note(format!("disjoint-access {a} and {b} contend"));
            }
        }
    }
    Verdict::pass(Witness::None)
}

/// No t-object is held by two processes at once.
pub fn check_mutual_exclusion(trace: &ExecutionTrace) -> Verdict {
    let mut held: BTreeMap<TObjectId, (ProcessId, usize)> = BTreeMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        let TraceEvent::Lock(l) = ev else { continue };
        for x in &l.objects {
            match l.kind {
                LockKind::Acquired => {
                    if let Some((q, j)) = held.get(x) {
                        if *q != l.process {
                            return Verdict::fail(Witness::events(vec![*j, i]))
                                .with_note(format!("{x} held by {q} and {}", l.process));
                        }
                    }
                    held.insert(*x, (l.process, i));
                }
                LockKind::Released => {
                    held.remove(x);
                }
            }
        }
    }
    Verdict::pass(Witness::None)
}

/// Every base read returns the last value written to the object, and atomic
/// sections are not interleaved with other processes' events.
pub fn check_memory_consistency(trace: &ExecutionTrace) -> Verdict {
    let mut mem: BTreeMap<u32, BaseWord> = BTreeMap::new();
    let mut section: Option<(ProcessId, usize)> = None;
    let mut last_seq = None;
    for (i, ev) in trace.events.iter().enumerate() {
        if last_seq.is_some_and(|s| ev.seq() <= s) {
            return Verdict::fail(Witness::events(vec![i]))
                .with_note("sequence numbers must increase");
        }
        last_seq = Some(ev.seq());
        if let Some((p, j)) = section {
            if ev.process() != p {
                return Verdict::fail(Witness::events(vec![j, i]))
                    .with_note("atomic section interleaved");
            }
        }
        let TraceEvent::Base(b) = ev else { continue };
        match b.kind {
            BaseKind::AtomicBegin => section = Some((b.process, i)),
            BaseKind::AtomicEnd => section = None,
            BaseKind::Read => {
                let (Some(o), Some(v)) = (b.object, b.value) else {
                    continue;
                };
                if mem.get(&o.index).copied().unwrap_or(BaseWord::ZERO) != v {
                    return Verdict::fail(Witness::events(vec![i]))
                        .with_note("read returns a stale word");
                }
            }
            BaseKind::Write => {
                if let (Some(o), Some(v)) = (b.object, b.value) {
                    mem.insert(o.index, v);
                }
            }
        }
    }
    Verdict::pass(Witness::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{BaseEvent, LockEvent};
    use crate::model::TmEvent;

    fn base(seq: u64, p: u32, tx: u64, kind: BaseKind, o: u32, v: i64) -> TraceEvent {
        TraceEvent::Base(BaseEvent {
            seq,
            process: ProcessId(p),
            tx: TxId(tx),
            kind,
            object: Some(BaseObjectId::untagged(o)),
            value: Some(BaseWord::ctl(v)),
            nontrivial: kind == BaseKind::Write,
            atomic_depth: 0,
        })
    }

    fn lock(seq: u64, p: u32, kind: LockKind, x: u32) -> TraceEvent {
        TraceEvent::Lock(LockEvent {
            seq,
            process: ProcessId(p),
            tx: TxId(1 + p as u64),
            kind,
            objects: vec![TObjectId(x)],
        })
    }

    fn tm(seq: u64, p: u32, tx: u64, kind: TmKind, x: Option<u32>) -> TraceEvent {
        TraceEvent::Tm(TmEvent {
            seq,
            kind,
            tx: TxId(tx),
            process: ProcessId(p),
            object: x.map(TObjectId),
            value: if kind == TmKind::RespRead {
                Some(0)
            } else {
                None
            },
            outcome: None,
            writer: None,
        })
    }

    #[test]
    fn write_inside_read_is_visible() {
        let t = ExecutionTrace {
            events: vec![
                tm(0, 0, 1, TmKind::InvRead, Some(0)),
                base(1, 0, 1, BaseKind::Write, 3, 1),
                tm(2, 0, 1, TmKind::RespRead, Some(0)),
            ],
        };
        assert_eq!(check_invisible_reads(&t).witness, Witness::events(vec![1]));
    }

    #[test]
    fn overlapping_beta_is_an_error() {
        let beta = BTreeMap::from([
            (TObjectId(0), BTreeSet::from([BaseObjectId::untagged(1)])),
            (TObjectId(1), BTreeSet::from([BaseObjectId::untagged(1)])),
        ]);
        let r = check_strict_partitioning(&ExecutionTrace::default(), &beta);
        assert!(matches!(r, Err(PartitionError::Overlap(1, _, _))));
    }

    #[test]
    fn access_outside_data_set_breaks_partitioning() {
        let beta = BTreeMap::from([
            (TObjectId(0), BTreeSet::from([BaseObjectId::untagged(0)])),
            (TObjectId(1), BTreeSet::from([BaseObjectId::untagged(1)])),
        ]);
        let t = ExecutionTrace {
            events: vec![
                tm(0, 0, 1, TmKind::InvRead, Some(0)),
                base(1, 0, 1, BaseKind::Read, 1, 0),
            ],
        };
        assert!(!check_strict_partitioning(&t, &beta).unwrap().pass);
    }

    #[test]
    fn overlapping_holds_break_mutual_exclusion() {
        let ok = ExecutionTrace {
            events: vec![
                lock(0, 0, LockKind::Acquired, 0),
                lock(1, 0, LockKind::Released, 0),
                lock(2, 1, LockKind::Acquired, 0),
            ],
        };
        assert!(check_mutual_exclusion(&ok).pass);
        let bad = ExecutionTrace {
            events: vec![
                lock(0, 0, LockKind::Acquired, 0),
                lock(1, 1, LockKind::Acquired, 0),
            ],
        };
        assert_eq!(
            check_mutual_exclusion(&bad).witness,
            Witness::events(vec![0, 1])
        );
    }

    #[test]
    fn disjoint_transactions_sharing_a_flag_break_dap() {
        let t = ExecutionTrace {
            events: vec![
                tm(0, 0, 1, TmKind::InvRead, Some(0)),
                base(1, 0, 1, BaseKind::Write, 9, 1),
                tm(2, 1, 2, TmKind::InvRead, Some(1)),
                base(3, 1, 2, BaseKind::Read, 9, 1),
            ],
        };
        assert!(!check_dap(&t).pass);
    }

    #[test]
    fn stale_read_breaks_consistency() {
        let t = ExecutionTrace {
            events: vec![
                base(0, 0, 1, BaseKind::Write, 0, 1),
                base(1, 1, 2, BaseKind::Read, 0, 0),
            ],
        };
        assert!(!check_memory_consistency(&t).pass);
    }
}
