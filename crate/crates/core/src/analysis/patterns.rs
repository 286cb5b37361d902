//! Read-after-write and atomic write-after-read patterns in base-object
//! traces.
//!
//! A RAW in a fragment run by one process is a write to `x` followed later
//! by a read of some `y != x` with no write to `y` in between. RAWs overlap
//! when their intervals intersect; counts are maximal sets of pairwise
//! disjoint RAWs. A multi-RAW is a maximal block of writes immediately
//! followed by a block of reads, at least one of which reads an object the
//! write block did not touch. An AWAR is an atomic section that reads some
//! object and later writes one.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Verdict, Witness};
use crate::memory::{BaseEvent, BaseKind, BaseObjectId, ExecutionTrace, TraceEvent};
use crate::model::{OpKind, ProcessId, TxId};
use crate::stm::StmVariant;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub raw_count: usize,
    pub multi_raw_count: usize,
    pub awar_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxPatterns {
    pub tx: TxId,
    pub process: ProcessId,
    #[serde(flatten)]
    pub counts: Counts,
    /// Trace indices of the counted RAWs as `(write, read)`.
    pub raw_pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpPatterns {
    pub tx: TxId,
    /// `None` for accesses made before the first tm-operation.
    pub op: Option<OpKind>,
    /// Position of the operation within its transaction.
    pub ordinal: usize,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternReport {
    pub txs: Vec<TxPatterns>,
    pub ops: Vec<OpPatterns>,
}

impl PatternReport {
    pub fn tx(&self, tx: TxId) -> Option<&TxPatterns> {
        self.txs.iter().find(|t| t.tx == tx)
    }
}

fn count(trace: &[TraceEvent], frag: &[usize]) -> (Counts, Vec<(usize, usize)>) {
    let base = |i: usize| -> &BaseEvent {
        match &trace[i] {
            TraceEvent::Base(b) => b,
            _ => unreachable!("fragments hold base events"),
        }
    };
    let mut c = Counts::default();
    let mut pairs = Vec::new();

    // Greedy by earliest read end. The best RAW ending at a read uses the
    // latest preceding write, which must target another object.
    let mut last_write: Option<(usize, BaseObjectId)> = None;
    let mut last_end: Option<usize> = None;
    for &i in frag {
        let e = base(i);
        match e.kind {
            BaseKind::Write => last_write = e.object.map(|o| (i, o)),
            BaseKind::Read => {
                if let (Some((w, wo)), Some(o)) = (last_write, e.object) {
                    if wo != o && last_end.is_none_or(|l| w > l) {
                        c.raw_count += 1;
                        pairs.push((w, i));
                        last_end = Some(i);
                    }
                }
            }
            _ => {}
        }
    }

    // Multi-RAWs over blocks; brackets are ignored.
    let accesses: Vec<&BaseEvent> = frag
        .iter()
        .map(|&i| base(i))
        .filter(|e| e.is_access())
        .collect();
    let mut k = 0;
    while k < accesses.len() {
        if accesses[k].kind != BaseKind::Write {
            k += 1;
            continue;
        }
        let mut written = BTreeSet::new();
        while k < accesses.len() && accesses[k].kind == BaseKind::Write {
            written.insert(accesses[k].object);
            k += 1;
        }
        let mut fresh = false;
        while k < accesses.len() && accesses[k].kind == BaseKind::Read {
            fresh |= !written.contains(&accesses[k].object);
            k += 1;
        }
        if fresh {
            c.multi_raw_count += 1;
        }
    }

    // AWARs.
    let mut read_in_section = false;
    let mut counted = false;
    for &i in frag {
        let e = base(i);
        match e.kind {
            BaseKind::AtomicBegin => {
                read_in_section = false;
                counted = false;
            }
            BaseKind::Read if e.atomic_depth > 0 => read_in_section = true,
            BaseKind::Write if e.atomic_depth > 0 && read_in_section && !counted => {
                c.awar_count += 1;
                counted = true;
            }
            _ => {}
        }
    }
    (c, pairs)
}

/// Attributes every base event to its transaction and to the tm-operation
/// its process was running, then counts patterns per transaction and per
/// operation.
pub fn detect_patterns(trace: &ExecutionTrace) -> PatternReport {
    let mut by_tx: BTreeMap<TxId, (ProcessId, Vec<usize>)> = BTreeMap::new();
    let mut by_op: BTreeMap<(TxId, usize), (Option<OpKind>, Vec<usize>)> = BTreeMap::new();
    // Per process: current transaction, open operation and ordinal.
    let mut cur: BTreeMap<ProcessId, (TxId, Option<OpKind>, usize)> = BTreeMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        match ev {
            TraceEvent::Tm(t) => {
                let entry = cur.entry(t.process).or_insert((t.tx, None, 0));
                if entry.0 != t.tx {
                    *entry = (t.tx, None, 0);
                }
                if t.kind.is_invocation() {
                    entry.1 = Some(t.kind.op());
                    entry.2 += 1;
                } else {
                    entry.1 = None;
                }
            }
            TraceEvent::Base(b) => {
                if b.tx.is_init() {
                    continue;
                }
                by_tx
                    .entry(b.tx)
                    .or_insert((b.process, Vec::new()))
                    .1
                    .push(i);
                let entry = cur.entry(b.process).or_insert((b.tx, None, 0));
                if entry.0 != b.tx {
                    *entry = (b.tx, None, 0);
                }
                by_op
                    .entry((b.tx, entry.2))
                    .or_insert((entry.1, Vec::new()))
                    .1
                    .push(i);
            }
            TraceEvent::Lock(_) => {}
        }
    }
    let mut report = PatternReport::default();
    for (tx, (process, frag)) in by_tx {
        let (counts, raw_pairs) = count(&trace.events, &frag);
        report.txs.push(TxPatterns {
            tx,
            process,
            counts,
            raw_pairs,
        });
    }
    for ((tx, ordinal), (op, frag)) in by_op {
        let (counts, _) = count(&trace.events, &frag);
        report.ops.push(OpPatterns {
            tx,
            op,
            ordinal,
            counts,
        });
    }
    report
}

/// Checks the per-transaction budgets each variant is built to meet.
///
/// * single-lock: a transaction with a read and a write has a RAW or AWAR.
/// * prog-raw: an updating transaction has at most one multi-RAW and a
///   read-only one has no RAW.
/// * prog-mcas: a committed updating transaction has exactly one AWAR, any
///   other has none.
/// * strong-prog: an updating transaction has at most four RAWs and a
///   read-only one has none.
pub fn check_budgets(variant: StmVariant, trace: &ExecutionTrace) -> Verdict {
    let report = detect_patterns(trace);
    let txs = trace.history().transactions();
    for t in txs.iter() {
        let c = report.tx(t.id).map(|p| p.counts).unwrap_or_default();
        let updating = t.is_updating();
        let reads = !t.rset().is_empty();
        let ok = match variant {
            StmVariant::SingleLock => !(reads && updating) || c.raw_count + c.awar_count >= 1,
            StmVariant::ProgRaw => {
                if updating {
                    c.multi_raw_count <= 1
                } else {
                    c.raw_count == 0
                }
            }
            StmVariant::ProgMcas => {
                if updating && t.committed() {
                    c.awar_count == 1
                } else {
                    c.awar_count == 0
                }
            }
            StmVariant::StrongProg => {
                if updating {
                    c.raw_count <= 4
                } else {
                    c.raw_count == 0
                }
            }
        };
        if !ok {
            return Verdict::fail(Witness::txs([t.id]))
                .with_note(format!("{} breaks the {variant} budget: {c:?}", t.id));
        }
    }
    Verdict::pass(Witness::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::BaseWord;

    fn ev(kind: BaseKind, obj: Option<u32>, depth: u8) -> TraceEvent {
        TraceEvent::Base(BaseEvent {
            seq: 0,
            process: ProcessId(0),
            tx: TxId(1),
            kind,
            object: obj.map(BaseObjectId::untagged),
            value: obj.map(|_| BaseWord::ZERO),
            nontrivial: kind == BaseKind::Write,
            atomic_depth: depth,
        })
    }

    fn trace(evs: Vec<TraceEvent>) -> ExecutionTrace {
        let mut t = ExecutionTrace { events: evs };
        for (i, e) in t.events.iter_mut().enumerate() {
            if let TraceEvent::Base(b) = e {
                b.seq = i as u64;
            }
        }
        t
    }

    fn counts(evs: Vec<TraceEvent>) -> Counts {
        detect_patterns(&trace(evs)).txs[0].counts
    }

    use BaseKind::{AtomicBegin as B, AtomicEnd as E, Read as R, Write as W};

    #[test]
    fn write_then_read_other_object_is_a_raw() {
        let c = counts(vec![ev(W, Some(0), 0), ev(R, Some(1), 0)]);
        assert_eq!((c.raw_count, c.multi_raw_count), (1, 1));
    }

    #[test]
    fn reading_back_own_write_is_not_a_raw() {
        let c = counts(vec![ev(W, Some(0), 0), ev(R, Some(0), 0)]);
        assert_eq!((c.raw_count, c.multi_raw_count), (0, 0));
    }

    #[test]
    fn intervening_write_to_the_read_object_cancels() {
        let c = counts(vec![
            ev(W, Some(0), 0),
            ev(W, Some(1), 0),
            ev(R, Some(1), 0),
        ]);
        assert_eq!(c.raw_count, 0);
    }

    #[test]
    fn overlapping_raws_count_once() {
        // W0 R1 R2: both reads pair with W0, the intervals overlap.
        let c = counts(vec![
            ev(W, Some(0), 0),
            ev(R, Some(1), 0),
            ev(R, Some(2), 0),
        ]);
        assert_eq!(c.raw_count, 1);
        // W0 R1 W2 R3: disjoint.
        let c = counts(vec![
            ev(W, Some(0), 0),
            ev(R, Some(1), 0),
            ev(W, Some(2), 0),
            ev(R, Some(3), 0),
        ]);
        assert_eq!((c.raw_count, c.multi_raw_count), (2, 2));
    }

    #[test]
    fn write_block_then_read_block_is_one_multi_raw() {
        let c = counts(vec![
            ev(W, Some(0), 0),
            ev(W, Some(1), 0),
            ev(R, Some(2), 0),
            ev(R, Some(3), 0),
        ]);
        assert_eq!(c.multi_raw_count, 1);
    }

    #[test]
    fn awar_needs_read_before_write_in_one_section() {
        let c = counts(vec![
            ev(B, None, 1),
            ev(R, Some(0), 1),
            ev(W, Some(0), 1),
            ev(E, None, 1),
        ]);
        assert_eq!(c.awar_count, 1);
        let c = counts(vec![
            ev(B, None, 1),
            ev(W, Some(0), 1),
            ev(R, Some(0), 1),
            ev(E, None, 1),
        ]);
        assert_eq!(c.awar_count, 0);
        let c = counts(vec![
            ev(B, None, 1),
            ev(R, Some(0), 1),
            ev(E, None, 1),
            ev(W, Some(0), 0),
        ]);
        assert_eq!(c.awar_count, 0);
    }
}
