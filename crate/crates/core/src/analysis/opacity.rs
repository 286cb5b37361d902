//! Opacity and strict serializability by exhaustive search, plus a
//! graph-based check for long histories with a known version order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use super::{Verdict, Witness};
use crate::model::{
    deferred_update_order_with, History, OpKind, TObjectId, Transactions, TxId, TxRecord, Value,
};

/// Default largest number of transactions the exhaustive search accepts.
pub const DEFAULT_MAX_TXS: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("history has {found} transactions; the search bound is {bound}")]
    TooLarge { found: usize, bound: usize },
}

/// How each transaction ends in the completion being tried.
fn completes_committed(t: &TxRecord, commit_pending: &BTreeSet<TxId>) -> bool {
    t.committed() || commit_pending.contains(&t.id)
}

fn pending_tryc(t: &TxRecord) -> bool {
    t.pending().is_some_and(|o| o.kind == OpKind::TryC)
}

/// The reads a transaction must justify: `(object, value, writer tag,
/// own-write value if the transaction wrote the object earlier)`.
#[derive(Clone, Debug)]
struct ReadReq {
    x: TObjectId,
    value: Value,
    writer: Option<TxId>,
    own: Option<Value>,
}

#[derive(Clone, Debug)]
struct Node {
    id: TxId,
    reads: Vec<ReadReq>,
    /// Final values written, if the transaction commits in this completion.
    writes: Vec<(TObjectId, Value)>,
    preds: u64,
}

fn reads_of(t: &TxRecord) -> Vec<ReadReq> {
    let mut local: BTreeMap<TObjectId, Value> = BTreeMap::new();
    let mut out = Vec::new();
    for op in &t.ops {
        match op.kind {
            OpKind::Write => {
                if let (Some(x), Some(v)) = (op.object, op.arg) {
                    local.insert(x, v);
                }
            }
            OpKind::Read => {
                if let (Some(x), Some(v)) = (op.object, op.result) {
                    out.push(ReadReq {
                        x,
                        value: v,
                        writer: op.writer,
                        own: local.get(&x).copied(),
                    });
                }
            }
            _ => {}
        }
    }
    out
}

fn final_writes(t: &TxRecord) -> Vec<(TObjectId, Value)> {
    let mut w: BTreeMap<TObjectId, Value> = BTreeMap::new();
    for op in &t.ops {
        if op.kind == OpKind::Write {
            if let (Some(x), Some(v)) = (op.object, op.arg) {
                w.insert(x, v);
            }
        }
    }
    w.into_iter().collect()
}

/// Current committed state: per object, the value and the transaction that
/// wrote it. Absent objects hold `(0, T0)`.
type State = BTreeMap<TObjectId, (Value, TxId)>;

fn read_ok(r: &ReadReq, me: TxId, state: &State) -> bool {
    if let Some(v) = r.own {
        return r.value == v && r.writer.is_none_or(|w| w == me);
    }
    let (v, w) = state.get(&r.x).copied().unwrap_or((0, TxId::INIT));
    r.value == v && r.writer.is_none_or(|tag| tag == w)
}

struct Search<'a> {
    nodes: &'a [Node],
    failed: HashSet<(u64, Vec<(TObjectId, (Value, TxId))>)>,
}

impl Search<'_> {
    fn go(&mut self, placed: u64, state: &State, order: &mut Vec<usize>) -> bool {
        if order.len() == self.nodes.len() {
            return true;
        }
        let key = (
            placed,
            state.iter().map(|(k, v)| (*k, *v)).collect::<Vec<_>>(),
        );
        if self.failed.contains(&key) {
            return false;
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if placed & (1 << i) != 0 || n.preds & !placed != 0 {
                continue;
            }
            if !n.reads.iter().all(|r| read_ok(r, n.id, state)) {
                continue;
            }
            let mut next = state.clone();
            for &(x, v) in &n.writes {
                next.insert(x, (v, n.id));
            }
            order.push(i);
            if self.go(placed | (1 << i), &next, order) {
                return true;
            }
            order.pop();
        }
        self.failed.insert(key);
        false
    }
}

/// Tries one completion: `commit_pending` are the pending-tryC transactions
/// completed as committed, every other unfinished transaction aborts.
fn search_completion(txs: &Transactions, commit_pending: &BTreeSet<TxId>) -> Option<Vec<TxId>> {
    let ids: Vec<TxId> = txs.ids().collect();
    let index: BTreeMap<TxId, usize> = ids.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let du = deferred_update_order_with(txs, |t| completes_committed(t, commit_pending));
    let mut nodes: Vec<Node> = txs
        .iter()
        .map(|t| Node {
            id: t.id,
            reads: reads_of(t),
            writes: if completes_committed(t, commit_pending) {
                final_writes(t)
            } else {
                Vec::new()
            },
            preds: 0,
        })
        .collect();
    for a in txs.iter() {
        for b in txs.iter() {
            if a.id != b.id && (txs.precedes(a.id, b.id) || du.contains(&(a.id, b.id))) {
                nodes[index[&b.id]].preds |= 1 << index[&a.id];
            }
        }
    }
    let mut s = Search {
        nodes: &nodes,
        failed: HashSet::new(),
    };
    let mut order = Vec::new();
    if s.go(0, &State::new(), &mut order) {
        Some(order.into_iter().map(|i| ids[i]).collect())
    } else {
        None
    }
}

/// Decides opacity exhaustively. On pass the witness is a serialization
/// starting with `T0`.
pub fn check_opacity(h: &History) -> Result<Verdict, CheckError> {
    check_opacity_bounded(h, DEFAULT_MAX_TXS)
}

pub fn check_opacity_bounded(h: &History, bound: usize) -> Result<Verdict, CheckError> {
    let txs = h.transactions();
    let bound = bound.min(63);
    if txs.len() > bound {
        return Err(CheckError::TooLarge {
            found: txs.len(),
            bound,
        });
    }
    let pending: Vec<TxId> = txs
        .iter()
        .filter(|t| pending_tryc(t))
        .map(|t| t.id)
        .collect();
    for mask in 0u32..(1 << pending.len()) {
        let commit: BTreeSet<TxId> = pending
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| *t)
            .collect();
        if let Some(order) = search_completion(&txs, &commit) {
            let mut full = vec![TxId::INIT];
            full.extend(order);
            return Ok(Verdict::pass(Witness::Serialization {
                order: full,
                committed: commit.into_iter().collect(),
            }));
        }
    }
    Ok(Verdict::fail(Witness::txs(txs.ids()))
        .with_note("no completion admits a legal serialization"))
}

/// Opacity restricted to committed transactions (and those with a pending
/// tryC, which may still commit).
pub fn check_strict_serializability(h: &History) -> Result<Verdict, CheckError> {
    let txs = h.transactions();
    let keep: BTreeSet<TxId> = txs
        .iter()
        .filter(|t| t.committed() || pending_tryc(t))
        .map(|t| t.id)
        .collect();
    check_opacity(&h.restrict(&keep))
}

/// Independently re-checks a serialization: `order` must list `T0` and then
/// every transaction once, respect real-time and deferred-update order for
/// the completion that commits `committed`, and be legal.
pub fn validate_serialization(
    h: &History,
    order: &[TxId],
    committed: &[TxId],
) -> Result<(), String> {
    let txs = h.transactions();
    if order.first() != Some(&TxId::INIT) {
        return Err("serialization must start with T0".into());
    }
    let body = &order[1..];
    let mut seen = BTreeSet::new();
    for t in body {
        if txs.get(*t).is_none() {
            return Err(format!("{t} is not in the history"));
        }
        if !seen.insert(*t) {
            return Err(format!("{t} appears twice"));
        }
    }
    if seen.len() != txs.len() {
        return Err("serialization misses transactions".into());
    }
    let commit_pending: BTreeSet<TxId> = committed.iter().copied().collect();
    for t in &commit_pending {
        if !txs.get(*t).is_some_and(pending_tryc) {
            return Err(format!("{t} has no pending tryC to complete"));
        }
    }
    let is_committed = |t: &TxRecord| completes_committed(t, &commit_pending);

    // Real-time order: no transaction placed later may have ended before an
    // earlier one started.
    let first = |t: TxId| txs.get(t).map(|r| r.first).unwrap_or(0);
    let end = |t: TxId| {
        txs.get(t)
            .filter(|r| r.is_complete())
            .map(|r| r.last)
            .unwrap_or(usize::MAX)
    };
    let mut suffix_min = vec![usize::MAX; body.len() + 1];
    for i in (0..body.len()).rev() {
        suffix_min[i] = suffix_min[i + 1].min(end(body[i]));
    }
    for (i, t) in body.iter().enumerate() {
        if suffix_min[i + 1] < first(*t) {
            return Err(format!(
                "{t} is placed after a transaction that precedes it in real time"
            ));
        }
    }

    // Deferred-update order, per object: a reader whose read responded
    // before a committed writer's tryC invocation goes first. Scanning
    // backwards keeps the earliest read response among later transactions.
    let mut first_read: BTreeMap<TxId, BTreeMap<TObjectId, usize>> = BTreeMap::new();
    for t in txs.iter() {
        for op in &t.ops {
            if let (OpKind::Read, Some(x), Some(r)) = (op.kind, op.object, op.resp) {
                let e = first_read.entry(t.id).or_default().entry(x).or_insert(r);
                *e = (*e).min(r);
            }
        }
    }
    let objects: BTreeSet<TObjectId> = first_read
        .values()
        .flat_map(|m| m.keys().copied())
        .collect();
    let wsets: BTreeMap<TxId, BTreeSet<TObjectId>> = txs.iter().map(|t| (t.id, t.wset())).collect();
    for x in objects {
        let mut min_after: Option<(usize, TxId)> = None;
        for t in body.iter().rev() {
            let rec = txs.get(*t).expect("checked above");
            if is_committed(rec) && wsets[t].contains(&x) {
                if let (Some(inv), Some((r, reader))) = (rec.tryc_invocation(), min_after) {
                    if r < inv {
                        return Err(format!(
                            "{reader} read {x} before {t}'s tryC but is placed after it"
                        ));
                    }
                }
            }
            if let Some(&r) = first_read.get(t).and_then(|m| m.get(&x)) {
                if min_after.is_none_or(|(m, _)| r < m) {
                    min_after = Some((r, *t));
                }
            }
        }
    }

    // Legality.
    let mut state = State::new();
    for t in body {
        let rec = txs.get(*t).expect("checked above");
        for r in reads_of(rec) {
            if !read_ok(&r, *t, &state) {
                return Err(format!("{t} reads {} = {} illegally", r.x, r.value));
            }
        }
        if is_committed(rec) {
            for (x, v) in final_writes(rec) {
                state.insert(x, (v, *t));
            }
        }
    }
    Ok(())
}

/// Opacity for long, complete histories whose per-object version order is
/// known (committed writers of each object, oldest first). Builds the
/// serialization graph with reads-from, version-order, anti-dependency
/// and real-time edges, sorts it topologically and
/// re-validates the result with [`validate_serialization`].
pub fn check_opacity_with_versions(
    h: &History,
    versions: &BTreeMap<TObjectId, Vec<TxId>>,
) -> Verdict {
    let txs = h.transactions();
    let ids: Vec<TxId> = txs.ids().collect();
    let mut index: BTreeMap<TxId, usize> = BTreeMap::new();
    // Node 0 is T0.
    index.insert(TxId::INIT, 0);
    for (i, t) in ids.iter().enumerate() {
        index.insert(*t, i + 1);
    }
    let n_tx = ids.len() + 1;
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n_tx];
    let add_node = |edges: &mut Vec<Vec<usize>>| {
        edges.push(Vec::new());
        edges.len() - 1
    };
    // Version order and reads-from.
    let mut next_version: BTreeMap<(TObjectId, TxId), TxId> = BTreeMap::new();
    for (x, ws) in versions {
        let mut prev = TxId::INIT;
        for w in ws {
            if let (Some(&a), Some(&b)) = (index.get(&prev), index.get(w)) {
                edges[a].push(b);
            }
            next_version.insert((*x, prev), *w);
            prev = *w;
        }
    }
    for t in txs.iter() {
        let me = index[&t.id];
        for r in reads_of(t) {
            if r.own.is_some() {
                continue;
            }
            let Some(w) = r.writer else {
                return Verdict::fail(Witness::txs([t.id])).with_note("read without writer tag");
            };
            if let Some(&wi) = index.get(&w) {
                if wi != me {
                    edges[wi].push(me);
                }
            }
            if let Some(nx) = next_version.get(&(r.x, w)) {
                let ni = index[nx];
                if ni != me {
                    edges[me].push(ni);
                }
            }
        }
    }

    // Real time through a chain of end-time nodes.
    let mut ends: Vec<(usize, usize)> = txs
        .iter()
        .filter(|t| t.is_complete())
        .map(|t| (t.last, index[&t.id]))
        .collect();
    ends.sort();
    let chain: Vec<usize> = ends.iter().map(|_| add_node(&mut edges)).collect();
    for (i, &(_, t)) in ends.iter().enumerate() {
        edges[t].push(chain[i]);
        if i + 1 < chain.len() {
            edges[chain[i]].push(chain[i + 1]);
        }
    }
    for t in txs.iter() {
        let k = ends.partition_point(|&(e, _)| e < t.first);
        if k > 0 {
            edges[chain[k - 1]].push(index[&t.id]);
        }
        edges[0].push(index[&t.id]);
    }

    // Deferred-update edges are implied by anti-dependencies and version
    // order whenever the graph is acyclic; the final validation checks them.

    // Kahn's algorithm, lowest node first.
    let n = edges.len();
    let mut indeg = vec![0usize; n];
    for es in &edges {
        for &b in es {
            indeg[b] += 1;
        }
    }
    let mut heap: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::new();
    while let Some(Reverse(a)) = heap.pop() {
        if a < n_tx {
            order.push(if a == 0 { TxId::INIT } else { ids[a - 1] });
        }
        for &b in &edges[a] {
            indeg[b] -= 1;
            if indeg[b] == 0 {
                heap.push(Reverse(b));
            }
        }
    }
    if order.len() != n_tx {
        let stuck: Vec<TxId> = (1..n_tx)
            .filter(|&i| indeg[i] > 0)
            .map(|i| ids[i - 1])
            .collect();
        return Verdict::fail(Witness::txs(stuck)).with_note("serialization graph has a cycle");
    }
    match validate_serialization(h, &order, &[]) {
        Ok(()) => Verdict::pass(Witness::Serialization {
            order,
            committed: Vec::new(),
        }),
        Err(e) => Verdict::fail(Witness::txs(ids)).with_note(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HistoryBuilder;

    fn fig1() -> History {
        HistoryBuilder::new()
            .read(3, 1, 0)
            .write(2, 1, 7)
            .commit(2)
            .read(1, 1, 7)
            .read(1, 2, 0)
            .build()
    }

    fn order(v: &Verdict) -> Vec<u64> {
        match &v.witness {
            Witness::Serialization { order, .. } => order.iter().map(|t| t.0).collect(),
            w => panic!("unexpected witness {w:?}"),
        }
    }

    #[test]
    fn fig1_serializes_as_t3_t2_t1() {
        let v = check_opacity(&fig1()).unwrap();
        assert!(v.pass);
        assert_eq!(order(&v), vec![0, 3, 2, 1]);
        validate_serialization(&fig1(), &[TxId(0), TxId(3), TxId(2), TxId(1)], &[]).unwrap();
    }

    #[test]
    fn write_skew_with_both_committed_is_not_opaque() {
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .read(2, 1, 0)
            .write(1, 1, 1)
            .write(2, 0, 2)
            .commit(1)
            .commit(2)
            .build();
        assert!(!check_opacity(&h).unwrap().pass);
    }

    #[test]
    fn empty_history_is_opaque() {
        let v = check_opacity(&History::default()).unwrap();
        assert!(v.pass);
        assert_eq!(order(&v), vec![0]);
    }

    #[test]
    fn inconsistent_aborted_reader_breaks_opacity_only() {
        // T1 reads X0 = 0; T2 writes X0, X1 and commits; T1 reads X1 = 2 and aborts.
        let h = HistoryBuilder::new()
            .read(1, 0, 0)
            .write(2, 0, 1)
            .write(2, 1, 2)
            .commit(2)
            .read(1, 1, 2)
            .tryc_abort(1)
            .build();
        assert!(!check_opacity(&h).unwrap().pass);
        assert!(check_strict_serializability(&h).unwrap().pass);
    }

    #[test]
    fn pending_tryc_may_complete_either_way() {
        // T2's tryC is pending but T1 already saw its write.
        let h = HistoryBuilder::new()
            .write(2, 0, 5)
            .inv_tryc(2)
            .read(1, 0, 5)
            .build();
        let v = check_opacity(&h).unwrap();
        assert!(v.pass);
        assert_eq!(
            v.witness,
            Witness::Serialization {
                order: vec![TxId(0), TxId(2), TxId(1)],
                committed: vec![TxId(2)]
            }
        );
    }

    #[test]
    fn too_many_transactions_is_an_error() {
        let mut b = HistoryBuilder::new();
        for t in 1..=5 {
            b = b.read(t, 0, 0);
        }
        assert_eq!(
            check_opacity_bounded(&b.build(), 4),
            Err(CheckError::TooLarge { found: 5, bound: 4 })
        );
    }

    #[test]
    fn validator_rejects_real_time_inversion() {
        let h = HistoryBuilder::new()
            .write(1, 0, 1)
            .commit(1)
            .read(2, 0, 1)
            .commit(2)
            .build();
        assert!(validate_serialization(&h, &[TxId(0), TxId(2), TxId(1)], &[]).is_err());
        assert!(validate_serialization(&h, &[TxId(0), TxId(1), TxId(2)], &[]).is_ok());
    }

    #[test]
    fn graph_check_agrees_on_small_cases() {
        let h = fig1();
        let versions = BTreeMap::from([(TObjectId(1), vec![TxId(2)])]);
        let mut h_tagged = h.clone();
        for e in &mut h_tagged.events {
            if e.kind == crate::model::TmKind::RespRead {
                e.writer = Some(if e.value == Some(7) { TxId(2) } else { TxId(0) });
            }
        }
        let v = check_opacity_with_versions(&h_tagged, &versions);
        assert!(v.pass, "{v:?}");
        assert_eq!(order(&v), vec![0, 3, 2, 1]);
    }
}
