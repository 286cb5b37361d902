//! Progressiveness and strong progressiveness.

use std::collections::{BTreeMap, BTreeSet};

use super::{Verdict, Witness};
use crate::model::{conflicts_in, History, OpKind, TObjectId, Transactions, TxId, TxRecord};

/// Objects invoked before position `end`, split into (all, written).
fn dset_before(t: &TxRecord, end: usize) -> (BTreeSet<TObjectId>, BTreeSet<TObjectId>) {
    let mut all = BTreeSet::new();
    let mut wr = BTreeSet::new();
    for op in t.ops.iter().filter(|o| o.inv < end) {
        if let Some(x) = op.object {
            all.insert(x);
            if op.kind == OpKind::Write {
                wr.insert(x);
            }
        }
    }
    (all, wr)
}

/// A forcefully aborted transaction must have conflicted with a concurrent
/// transaction that was still live at the time.
///
/// For the aborted `Ti` we look at the prefix ending with its abort. A
/// candidate `Tk` is judged in the longest prefix of that in which `Tk` is
/// still live, which gives it the largest data set. Both are then present
/// and neither precedes the other, so only the data sets matter.
pub fn check_progressiveness(h: &History) -> Verdict {
    let txs = h.transactions();
    for ti in txs.iter().filter(|t| t.forcefully_aborted) {
        let cut = ti.last + 1;
        let justified = txs
            .iter()
            .filter(|tk| tk.id != ti.id && tk.first < cut)
            .any(|tk| {
                let end = if tk.is_complete() && tk.last < cut {
                    tk.last
                } else {
                    cut
                };
                if ti.first >= end {
                    return false;
                }
                let (di, wi) = dset_before(ti, end);
                let (dk, wk) = dset_before(tk, end);
                di.intersection(&dk)
                    .any(|x| wi.contains(x) || wk.contains(x))
            });
        if !justified {
            return Verdict::fail(Witness::txs([ti.id]))
                .with_note(format!("{} aborted without a conflict", ti.id));
        }
    }
    Verdict::pass(Witness::None)
}

/// Pairs of transactions whose intervals overlap, found by a sweep.
fn concurrent_pairs(txs: &Transactions) -> Vec<(TxId, TxId)> {
    let mut by_start: Vec<&TxRecord> = txs.iter().collect();
    by_start.sort_by_key(|t| t.first);
    let mut out = Vec::new();
    for (i, a) in by_start.iter().enumerate() {
        let a_end = if a.is_complete() { a.last } else { usize::MAX };
        for b in &by_start[i + 1..] {
            if b.first > a_end {
                break;
            }
            out.push((a.id, b.id));
        }
    }
    out
}

/// Every set of transactions closed under conflicts and having at most one
/// conflicting object keeps at least one member that is not forcefully
/// aborted. Closed sets are unions of components of the conflict graph, so
/// checking each component is enough.
pub fn check_strong_progressiveness(h: &History) -> Verdict {
    let txs = h.transactions();
    let ids: Vec<TxId> = txs.ids().collect();
    let index: BTreeMap<TxId, usize> = ids.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut cobj: Vec<(usize, BTreeSet<TObjectId>)> = Vec::new();
    for (a, b) in concurrent_pairs(&txs) {
        let c = conflicts_in(&txs, a, b);
        if !c.is_empty() {
            let (i, j) = (index[&a], index[&b]);
            let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
            parent[ra] = rb;
            cobj.push((i, c));
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ids.len() {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().push(i);
    }
    let mut objs: BTreeMap<usize, BTreeSet<TObjectId>> = BTreeMap::new();
    for (i, c) in &cobj {
        let r = find(&mut parent, *i);
        objs.entry(r).or_default().extend(c.iter().copied());
    }
    for (root, members) in comps {
        let n_obj = objs.get(&root).map_or(0, |s| s.len());
        let all_aborted = members
            .iter()
            .all(|&i| txs.get(ids[i]).is_some_and(|t| t.forcefully_aborted));
        if n_obj <= 1 && all_aborted {
            return Verdict::fail(Witness::txs(members.iter().map(|&i| ids[i]))).with_note(
                "every transaction of a single-object conflict set was forcefully aborted",
            );
        }
    }
    Verdict::pass(Witness::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HistoryBuilder;

    #[test]
    fn abort_without_conflict_is_not_progressive() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .read(2, 1, 0)
            .tryc_abort(1)
            .commit(2)
            .build();
        assert!(!check_progressiveness(&h).pass);
        assert!(!check_strong_progressiveness(&h).pass);
    }

    #[test]
    fn abort_after_conflict_is_progressive() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .write(2, 0, 1)
            .commit(2)
            .tryc_abort(1)
            .build();
        assert!(check_progressiveness(&h).pass);
        // T2 committed, so the component keeps a survivor.
        assert!(check_strong_progressiveness(&h).pass);
    }

    #[test]
    fn conflict_must_be_with_a_live_transaction() {
        // T2 commits before T1 starts, so T1's abort is unjustified.
        let h = HistoryBuilder::new()
            .write(2, 0, 1)
            .commit(2)
            .read(1, 0, 1)
            .tryc_abort(1)
            .build();
        assert!(!check_progressiveness(&h).pass);
    }

    #[test]
    fn pending_invocation_counts_toward_conflict() {
        // T2 invoked a write on X0 that never returned.
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .inv_write(2, 0, 4)
            .tryc_abort(1)
            .build();
        assert!(check_progressiveness(&h).pass);
    }

    #[test]
    fn both_aborted_on_one_object_breaks_strong_progress_only() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .read(2, 0, 0)
            .write(1, 0, 1)
            .write(2, 0, 2)
            .tryc_abort(1)
            .tryc_abort(2)
            .build();
        assert!(check_progressiveness(&h).pass);
        assert!(!check_strong_progressiveness(&h).pass);
    }

    #[test]
    fn both_aborted_on_two_objects_is_allowed() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .read(2, 1, 0)
            .write(1, 1, 1)
            .write(2, 0, 2)
            .tryc_abort(1)
            .tryc_abort(2)
            .build();
        assert!(check_strong_progressiveness(&h).pass);
    }

    #[test]
    fn trya_is_not_forceful() {
        let h = HistoryBuilder::new().read(1, 0, 0).trya(1).build();
        assert!(check_progressiveness(&h).pass);
        assert!(check_strong_progressiveness(&h).pass);
    }
}
