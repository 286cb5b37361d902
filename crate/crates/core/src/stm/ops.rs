//! Step machines for begin and the four tm-operations.

use std::collections::BTreeSet;
use std::task::{ready, Poll};

use serde::{Deserialize, Serialize};

use super::{StmVariant, TxEngine, TxOp};
use crate::memory::{BaseWord, Fault, StepCx, TmDraft};
use crate::model::{OpKind, Outcome, TObjectId, TmKind, TxId, TxStatus, Value};
use crate::trylock::{Acquire, IsContended, Release};

/// Response of a tm-operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpResult {
    Ok,
    Value { value: Value, writer: TxId },
    Commit,
    Abort,
}

impl OpResult {
    pub fn ends_tx(self) -> bool {
        matches!(self, OpResult::Commit | OpResult::Abort)
    }
}

/// Starts a transaction. Only the single-lock variant touches memory here:
/// it spins on a test-and-set of the global lock.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Begin {
    k: TxId,
    started: bool,
}

impl Begin {
    pub(crate) fn new(k: TxId) -> Self {
        Begin { k, started: false }
    }

    pub fn poll(&mut self, eng: &mut TxEngine, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
        if !self.started {
            cx.set_tx(self.k);
            self.started = true;
        }
        if eng.layout.variant != StmVariant::SingleLock {
            return Poll::Ready(Ok(()));
        }
        let lock = eng.layout.global_lock();
        cx.set_scope(true);
        loop {
            let got = ready!(cx.atomic(true, |ops| {
                if ops.read(lock)?.value == 0 {
                    ops.write(lock, BaseWord::ctl(1))?;
                    Ok(true)
                } else {
                    Ok(false)
                }
            }))?;
            if got {
                cx.set_scope(false);
                return Poll::Ready(Ok(()));
            }
            cx.spin();
        }
    }
}

/// Either an inner machine is polled to completion, or the first of a list
/// of objects is checked; shared by read validation and commit validation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Check {
    /// `isContended` over the read set, then re-read validation.
    Contended(usize, Option<IsContended>),
    Invalid(usize),
}

/// `isAbortable()` or, for the mCAS variant, `isInvalid()` alone.
/// Returns true if the transaction must abort.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Validate {
    list: Vec<TObjectId>,
    st: Check,
}

impl Validate {
    fn new(eng: &TxEngine, locks: bool) -> Self {
        let list = eng
            .desc
            .as_ref()
            .map(|d| d.rset.keys().copied().collect())
            .unwrap_or_default();
        Validate {
            list,
            st: if locks {
                Check::Contended(0, None)
            } else {
                Check::Invalid(0)
            },
        }
    }

    fn poll(&mut self, eng: &mut TxEngine, cx: &mut StepCx<'_>) -> Poll<Result<bool, Fault>> {
        loop {
            match &mut self.st {
                Check::Contended(i, _) if *i == self.list.len() => self.st = Check::Invalid(0),
                Check::Contended(i, m) => {
                    let lock = eng.lock.as_ref().expect("lock-based variant");
                    let m = m.get_or_insert_with(|| lock.is_contended(self.list[*i]));
                    if ready!(m.poll(cx))? {
                        return Poll::Ready(Ok(true));
                    }
                    self.st = Check::Contended(*i + 1, None);
                }
                Check::Invalid(i) if *i == self.list.len() => return Poll::Ready(Ok(false)),
                Check::Invalid(i) => {
                    let x = self.list[*i];
                    let w = ready!(cx.read(eng.layout.v(x)))?;
                    let desc = eng.desc.as_ref().expect("live transaction");
                    if desc.rset.get(&x) != Some(&w) {
                        return Poll::Ready(Ok(true));
                    }
                    *i += 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum ReadSt {
    Front,
    ReadV,
    Validate(Validate),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct ReadOp {
    x: TObjectId,
    st: ReadSt,
}

impl ReadOp {
    fn poll(&mut self, eng: &mut TxEngine, cx: &mut StepCx<'_>) -> Poll<Result<OpResult, Fault>> {
        let x = self.x;
        loop {
            match &mut self.st {
                ReadSt::Front => {
                    let d = eng.desc.as_ref().expect("live transaction");
                    if let Some(&v) = d.wset.get(&x) {
                        return Poll::Ready(Ok(OpResult::Value {
                            value: v,
                            writer: d.tx,
                        }));
                    }
                    if let Some(w) = d.rset.get(&x) {
                        return Poll::Ready(Ok(OpResult::Value {
                            value: w.value,
                            writer: w.writer,
                        }));
                    }
                    self.st = ReadSt::ReadV;
                }
                ReadSt::ReadV => {
                    let w = ready!(cx.read(eng.layout.v(x)))?;
                    eng.desc
                        .as_mut()
                        .expect("live transaction")
                        .rset
                        .insert(x, w);
                    self.st = match eng.layout.variant {
                        StmVariant::SingleLock => {
                            return Poll::Ready(Ok(OpResult::Value {
                                value: w.value,
                                writer: w.writer,
                            }))
                        }
                        StmVariant::ProgMcas => ReadSt::Validate(Validate::new(eng, false)),
                        StmVariant::ProgRaw | StmVariant::StrongProg => {
                            ReadSt::Validate(Validate::new(eng, true))
                        }
                    };
                }
                ReadSt::Validate(v) => {
                    if ready!(v.poll(eng, cx))? {
                        return Poll::Ready(Ok(OpResult::Abort));
                    }
                    let w = eng.desc.as_ref().expect("live transaction").rset[&x];
                    return Poll::Ready(Ok(OpResult::Value {
                        value: w.value,
                        writer: w.writer,
                    }));
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum TryCSt {
    Start,
    Acquire(Acquire),
    Validate(Validate),
    AbortRelease(Release),
    WriteBack(usize),
    Release(Release),
    McasRead(usize),
    Mcas,
    Unlock,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct TryCOp {
    ws: Vec<(TObjectId, Value)>,
    /// Words read from `v[j]` for write-set members during commit.
    seen: Vec<BaseWord>,
    st: TryCSt,
}

impl TryCOp {
    fn wset(&self) -> BTreeSet<TObjectId> {
        self.ws.iter().map(|(x, _)| *x).collect()
    }

    fn poll(&mut self, eng: &mut TxEngine, cx: &mut StepCx<'_>) -> Poll<Result<OpResult, Fault>> {
        let p = cx.process();
        let k = eng.desc.as_ref().expect("live transaction").tx;
        let variant = eng.layout.variant;
        loop {
            match &mut self.st {
                TryCSt::Start => {
                    let d = eng.desc.as_ref().expect("live transaction");
                    self.ws = d.wset.iter().map(|(x, v)| (*x, *v)).collect();
                    if variant == StmVariant::SingleLock {
                        self.st = TryCSt::WriteBack(0);
                        continue;
                    }
                    if self.ws.is_empty() {
                        return Poll::Ready(Ok(OpResult::Commit));
                    }
                    self.st = match variant {
                        StmVariant::ProgMcas => TryCSt::McasRead(0),
                        _ => TryCSt::Acquire(
                            eng.lock
                                .as_ref()
                                .expect("lock-based variant")
                                .acquire(p, &self.wset())?,
                        ),
                    };
                }
                TryCSt::Acquire(a) => {
                    if !ready!(a.poll(cx))? {
                        return Poll::Ready(Ok(OpResult::Abort));
                    }
                    let q = self.wset();
                    eng.lock.as_mut().expect("lock-based variant").granted(&q);
                    self.st = TryCSt::Validate(Validate::new(eng, true));
                }
                TryCSt::Validate(v) => {
                    if ready!(v.poll(eng, cx))? {
                        let q = self.wset();
                        self.st = TryCSt::AbortRelease(
                            eng.lock
                                .as_mut()
                                .expect("lock-based variant")
                                .release(p, &q)?,
                        );
                    } else {
                        self.st = TryCSt::WriteBack(0);
                    }
                }
                TryCSt::AbortRelease(r) => {
                    ready!(r.poll(cx))?;
                    return Poll::Ready(Ok(OpResult::Abort));
                }
                TryCSt::WriteBack(i) if *i < self.ws.len() => {
                    let (x, v) = self.ws[*i];
                    ready!(cx.write(eng.layout.v(x), BaseWord::new(v, k)))?;
                    *i += 1;
                }
                TryCSt::WriteBack(_) => {
                    if variant == StmVariant::SingleLock {
                        self.st = TryCSt::Unlock;
                    } else {
                        let q = self.wset();
                        self.st = TryCSt::Release(
                            eng.lock
                                .as_mut()
                                .expect("lock-based variant")
                                .release(p, &q)?,
                        );
                    }
                }
                TryCSt::Release(r) => {
                    ready!(r.poll(cx))?;
                    return Poll::Ready(Ok(OpResult::Commit));
                }
                TryCSt::Unlock => {
                    ready!(cx.write(eng.layout.global_lock(), BaseWord::ZERO))?;
                    return Poll::Ready(Ok(OpResult::Commit));
                }
                TryCSt::McasRead(i) if *i < self.ws.len() => {
                    let w = ready!(cx.read(eng.layout.v(self.ws[*i].0)))?;
                    self.seen.push(w);
                    *i += 1;
                }
                TryCSt::McasRead(_) => self.st = TryCSt::Mcas,
                TryCSt::Mcas => {
                    let d = eng.desc.as_ref().expect("live transaction");
                    let dset: BTreeSet<TObjectId> = d
                        .rset
                        .keys()
                        .copied()
                        .chain(self.ws.iter().map(|(x, _)| *x))
                        .collect();
                    let mut v = Vec::new();
                    let mut ov = Vec::new();
                    let mut nv = Vec::new();
                    for x in dset {
                        v.push(eng.layout.v(x));
                        let wi = self.ws.iter().position(|(y, _)| *y == x);
                        ov.push(match (d.rset.get(&x), wi) {
                            (Some(w), _) => *w,
                            (None, Some(i)) => self.seen[i],
                            (None, None) => unreachable!("dset member"),
                        });
                        nv.push(match wi {
                            Some(i) => BaseWord::new(self.ws[i].1, k),
                            None => d.rset[&x],
                        });
                    }
                    let ok = ready!(cx.mcas(&v, &ov, &nv))?;
                    return Poll::Ready(Ok(if ok {
                        OpResult::Commit
                    } else {
                        OpResult::Abort
                    }));
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Inner {
    Read(ReadOp),
    Write(TObjectId, Value),
    TryC(TryCOp),
    TryA,
}

/// A tm-operation with its invocation and response events.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TmOp {
    k: TxId,
    op: TxOp,
    inner: Option<Inner>,
}

impl TmOp {
    pub(crate) fn new(k: TxId, op: TxOp) -> Self {
        TmOp { k, op, inner: None }
    }

    fn kind(&self) -> OpKind {
        match self.op {
            TxOp::Read(_) => OpKind::Read,
            TxOp::Write(..) => OpKind::Write,
            TxOp::TryC => OpKind::TryC,
            TxOp::TryA => OpKind::TryA,
        }
    }

    fn object(&self) -> Option<TObjectId> {
        match self.op {
            TxOp::Read(x) | TxOp::Write(x, _) => Some(x),
            _ => None,
        }
    }

    pub fn poll(
        &mut self,
        eng: &mut TxEngine,
        cx: &mut StepCx<'_>,
    ) -> Poll<Result<OpResult, Fault>> {
        let inner = match &mut self.inner {
            Some(i) => i,
            None => {
                cx.emit(TmDraft {
                    kind: TmKind::invocation(self.kind()),
                    tx: self.k,
                    object: self.object(),
                    value: match self.op {
                        TxOp::Write(_, v) => Some(v),
                        _ => None,
                    },
                    outcome: None,
                    writer: None,
                });
                self.inner.insert(match self.op {
                    TxOp::Read(x) => Inner::Read(ReadOp {
                        x,
                        st: ReadSt::Front,
                    }),
                    TxOp::Write(x, v) => Inner::Write(x, v),
                    TxOp::TryC => Inner::TryC(TryCOp {
                        ws: Vec::new(),
                        seen: Vec::new(),
                        st: TryCSt::Start,
                    }),
                    TxOp::TryA => Inner::TryA,
                })
            }
        };
        let res = match inner {
            Inner::Read(r) => ready!(r.poll(eng, cx))?,
            Inner::Write(x, v) => {
                eng.desc
                    .as_mut()
                    .expect("live transaction")
                    .wset
                    .insert(*x, *v);
                OpResult::Ok
            }
            Inner::TryC(t) => ready!(t.poll(eng, cx))?,
            Inner::TryA => {
                if eng.layout.variant == StmVariant::SingleLock {
                    ready!(cx.write(eng.layout.global_lock(), BaseWord::ZERO))?;
                }
                OpResult::Abort
            }
        };
        let (value, outcome, writer) = match res {
            OpResult::Ok => (None, Outcome::Ok, None),
            OpResult::Value { value, writer } => (Some(value), Outcome::Value, Some(writer)),
            OpResult::Commit => (None, Outcome::Commit, None),
            OpResult::Abort => (None, Outcome::Abort, None),
        };
        let desc = eng.desc.as_mut().expect("live transaction");
        match res {
            OpResult::Commit => desc.status = TxStatus::Committed,
            OpResult::Abort => desc.status = TxStatus::Aborted,
            _ => {}
        }
        cx.emit(TmDraft {
            kind: TmKind::response(self.kind()),
            tx: self.k,
            object: self.object(),
            value,
            outcome: Some(outcome),
            writer,
        });
        Poll::Ready(Ok(res))
    }
}
