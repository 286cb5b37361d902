//! Multi-trylocks over base objects: a wait-free variant that fails fast
//! under contention and a starvation-free Black-White Bakery variant.
//!
//! Both share the `r[i][j]` flag matrix: process `i` announces interest in
//! t-object `j` by setting `r[i][j]`. The bakery variant adds per-process
//! labels `LA`, per-process colors `MC` and a shared `color` bit.

use std::collections::BTreeSet;
use std::task::{ready, Poll};

use crate::memory::{hash_state, BaseObjectId, BaseWord, Fault, LockKind, Program, StepCx};
use crate::model::{ProcessId, TObjectId, TxId};

pub const WHITE: i64 = 0;
pub const BLACK: i64 = 1;

/// Placement of the flag matrix in memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LockLayout {
    pub n: u32,
    pub m: u32,
    pub r_base: u32,
}

impl LockLayout {
    pub fn new(n: u32, m: u32, r_base: u32) -> Self {
        LockLayout { n, m, r_base }
    }

    pub fn r(&self, i: u32, j: TObjectId) -> BaseObjectId {
        BaseObjectId::owned(self.r_base + i * self.m + j.0, j)
    }

    pub fn end(&self) -> u32 {
        self.r_base + self.n * self.m
    }
}

/// Placement of the bakery registers: `LA[i]`, `MC[i]`, then `color`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BakeryLayout {
    pub lock: LockLayout,
    pub base: u32,
}

impl BakeryLayout {
    pub fn new(lock: LockLayout, base: u32) -> Self {
        BakeryLayout { lock, base }
    }

    pub fn la(&self, i: u32) -> BaseObjectId {
        BaseObjectId::untagged(self.base + i)
    }

    pub fn mc(&self, i: u32) -> BaseObjectId {
        BaseObjectId::untagged(self.base + self.lock.n + i)
    }

    pub fn color(&self) -> BaseObjectId {
        BaseObjectId::untagged(self.base + 2 * self.lock.n)
    }

    pub fn end(&self) -> u32 {
        self.base + 2 * self.lock.n + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LockFlavor {
    WaitFree(LockLayout),
    StarvationFree(BakeryLayout),
}

impl LockFlavor {
    pub fn flags(&self) -> LockLayout {
        match self {
            LockFlavor::WaitFree(l) => *l,
            LockFlavor::StarvationFree(b) => b.lock,
        }
    }
}

/// One process's view of a multi-trylock: which objects it holds.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LockClient {
    pub flavor: LockFlavor,
    held: BTreeSet<TObjectId>,
}

impl LockClient {
    pub fn new(flavor: LockFlavor) -> Self {
        LockClient {
            flavor,
            held: BTreeSet::new(),
        }
    }

    pub fn held(&self) -> &BTreeSet<TObjectId> {
        &self.held
    }

    pub fn acquire(&self, p: ProcessId, q: &BTreeSet<TObjectId>) -> Result<Acquire, Fault> {
        if let Some(x) = q.iter().find(|x| self.held.contains(x)) {
            return Err(Fault::ReentrantAcquire(p, *x));
        }
        let q: Vec<_> = q.iter().copied().collect();
        Ok(match self.flavor {
            LockFlavor::WaitFree(l) => Acquire::Wf(WfAcquire::new(l, q)),
            LockFlavor::StarvationFree(b) => Acquire::Sf(SfAcquire::new(b, q)),
        })
    }

    /// Records a successful acquire.
    pub fn granted(&mut self, q: &BTreeSet<TObjectId>) {
        self.held.extend(q.iter().copied());
    }

    pub fn release(&mut self, p: ProcessId, q: &BTreeSet<TObjectId>) -> Result<Release, Fault> {
        if let Some(x) = q.iter().find(|x| !self.held.contains(x)) {
            return Err(Fault::ReleaseUnheld(p, *x));
        }
        for x in q {
            self.held.remove(x);
        }
        let q: Vec<_> = q.iter().copied().collect();
        Ok(match self.flavor {
            LockFlavor::WaitFree(l) => Release::Wf(WfRelease::new(l, q)),
            LockFlavor::StarvationFree(b) => Release::Sf(SfRelease::new(b, q)),
        })
    }

    pub fn is_contended(&self, x: TObjectId) -> IsContended {
        IsContended::new(self.flavor.flags(), x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Acquire {
    Wf(WfAcquire),
    Sf(SfAcquire),
}

impl Acquire {
    pub fn poll(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<bool, Fault>> {
        match self {
            Acquire::Wf(a) => a.poll(cx),
            Acquire::Sf(a) => a.poll(cx),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Release {
    Wf(WfRelease),
    Sf(SfRelease),
}

impl Release {
    pub fn poll(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
        match self {
            Release::Wf(r) => r.poll(cx),
            Release::Sf(r) => r.poll(cx),
        }
    }
}

const ONE: BaseWord = BaseWord {
    value: 1,
    writer: TxId::INIT,
};

/// True iff some other process has its flag for `x` set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IsContended {
    layout: LockLayout,
    x: TObjectId,
    t: u32,
}

impl IsContended {
    pub fn new(layout: LockLayout, x: TObjectId) -> Self {
        IsContended { layout, x, t: 0 }
    }

    pub fn poll(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<bool, Fault>> {
        let i = cx.process().0;
        while self.t < self.layout.n {
            if self.t != i {
                let w = ready!(cx.read(self.layout.r(self.t, self.x)))?;
                if w.value != 0 {
                    return Poll::Ready(Ok(true));
                }
            }
            self.t += 1;
        }
        Poll::Ready(Ok(false))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum WfSt {
    Announce(usize),
    Check(usize, u32),
    Withdraw(usize),
}

/// Sets every flag in `Q`, then reads every foreign flag in `Q`; on any
/// conflict clears its own flags and fails.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WfAcquire {
    layout: LockLayout,
    q: Vec<TObjectId>,
    st: WfSt,
}

impl WfAcquire {
    pub fn new(layout: LockLayout, q: Vec<TObjectId>) -> Self {
        WfAcquire {
            layout,
            q,
            st: WfSt::Announce(0),
        }
    }

    pub fn poll(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<bool, Fault>> {
        let i = cx.process().0;
        loop {
            match self.st {
                WfSt::Announce(a) if a < self.q.len() => {
                    ready!(cx.write(self.layout.r(i, self.q[a]), ONE))?;
                    self.st = WfSt::Announce(a + 1);
                }
                WfSt::Announce(_) => self.st = WfSt::Check(0, 0),
                WfSt::Check(j, _) if j == self.q.len() => {
                    cx.lock_event(LockKind::Acquired, &self.q);
                    return Poll::Ready(Ok(true));
                }
                WfSt::Check(j, t) if t == self.layout.n => self.st = WfSt::Check(j + 1, 0),
                WfSt::Check(j, t) if t == i => self.st = WfSt::Check(j, t + 1),
                WfSt::Check(j, t) => {
                    let w = ready!(cx.read(self.layout.r(t, self.q[j])))?;
                    self.st = if w.value != 0 {
                        WfSt::Withdraw(0)
                    } else {
                        WfSt::Check(j, t + 1)
                    };
                }
                WfSt::Withdraw(a) if a < self.q.len() => {
                    ready!(cx.write(self.layout.r(i, self.q[a]), BaseWord::ZERO))?;
                    self.st = WfSt::Withdraw(a + 1);
                }
                WfSt::Withdraw(_) => return Poll::Ready(Ok(false)),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WfRelease {
    layout: LockLayout,
    q: Vec<TObjectId>,
    at: Option<usize>,
}

impl WfRelease {
    pub fn new(layout: LockLayout, q: Vec<TObjectId>) -> Self {
        WfRelease {
            layout,
            q,
            at: None,
        }
    }

    pub fn poll(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
        let i = cx.process().0;
        loop {
            match self.at {
                None => {
                    cx.lock_event(LockKind::Released, &self.q);
                    self.at = Some(0);
                }
                Some(a) if a < self.q.len() => {
                    ready!(cx.write(self.layout.r(i, self.q[a]), BaseWord::ZERO))?;
                    self.at = Some(a + 1);
                }
                Some(_) => return Poll::Ready(Ok(())),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum SfSt {
    Announce(usize),
    ReadColor,
    WriteMc,
    LabelMc(u32),
    LabelLa(u32),
    WriteLa,
    /// Is `Q[j]` flagged by someone other than us (scanning process `t`)?
    GuardFlag(usize, u32),
    GuardLa(usize, u32),
    /// `k` has no label yet; is it still announcing on `Q[j]`?
    GuardDoor(usize, u32),
    GuardMc(usize, u32, i64),
    GuardColor(usize, u32),
}

/// Black-White Bakery acquire. Takes a label one above every label of the
/// same color, then waits while some other process with a live label is
/// ahead of it on an object of `Q` that someone else flags. A process that
/// flags `Q[j]` but has not written its label yet is still choosing one and
/// is waited for too; without that doorway two processes can both read the
/// other's label as 0 and enter together.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SfAcquire {
    layout: BakeryLayout,
    q: Vec<TObjectId>,
    st: SfSt,
    my_mc: i64,
    my_la: i64,
    max: i64,
}

impl SfAcquire {
    pub fn new(layout: BakeryLayout, q: Vec<TObjectId>) -> Self {
        SfAcquire {
            layout,
            q,
            st: SfSt::Announce(0),
            my_mc: WHITE,
            my_la: 0,
            max: 0,
        }
    }

    fn next_k(&self, j: usize, k: u32, i: u32) -> SfSt {
        let mut k = k + 1;
        if k == i {
            k += 1;
        }
        if k >= self.layout.lock.n {
            SfSt::GuardFlag(j + 1, 0)
        } else {
            SfSt::GuardLa(j, k)
        }
    }

    fn first_k(&self, j: usize, i: u32) -> SfSt {
        let k = if i == 0 { 1 } else { 0 };
        if k >= self.layout.lock.n {
            SfSt::GuardFlag(j + 1, 0)
        } else {
            SfSt::GuardLa(j, k)
        }
    }

    pub fn poll(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<bool, Fault>> {
        let i = cx.process().0;
        let n = self.layout.lock.n;
        loop {
            match self.st {
                SfSt::Announce(a) if a < self.q.len() => {
                    ready!(cx.write(self.layout.lock.r(i, self.q[a]), ONE))?;
                    self.st = SfSt::Announce(a + 1);
                }
                SfSt::Announce(_) => self.st = SfSt::ReadColor,
                SfSt::ReadColor => {
                    self.my_mc = ready!(cx.read(self.layout.color()))?.value;
                    self.st = SfSt::WriteMc;
                }
                SfSt::WriteMc => {
                    ready!(cx.write(self.layout.mc(i), BaseWord::ctl(self.my_mc)))?;
                    self.max = 0;
                    self.st = SfSt::LabelMc(0);
                }
                SfSt::LabelMc(k) if k == n => self.st = SfSt::WriteLa,
                SfSt::LabelMc(k) => {
                    let mc = ready!(cx.read(self.layout.mc(k)))?.value;
                    self.st = if mc == self.my_mc {
                        SfSt::LabelLa(k)
                    } else {
                        SfSt::LabelMc(k + 1)
                    };
                }
                SfSt::LabelLa(k) => {
                    let la = ready!(cx.read(self.layout.la(k)))?.value;
                    self.max = self.max.max(la);
                    self.st = SfSt::LabelMc(k + 1);
                }
                SfSt::WriteLa => {
                    ready!(cx.write(self.layout.la(i), BaseWord::ctl(self.max + 1)))?;
                    self.my_la = self.max + 1;
                    self.st = SfSt::GuardFlag(0, 0);
                }
                SfSt::GuardFlag(j, _) if j == self.q.len() => {
                    cx.lock_event(LockKind::Acquired, &self.q);
                    return Poll::Ready(Ok(true));
                }
                SfSt::GuardFlag(j, t) if t == n => self.st = SfSt::GuardFlag(j + 1, 0),
                SfSt::GuardFlag(j, t) if t == i => self.st = SfSt::GuardFlag(j, t + 1),
                SfSt::GuardFlag(j, t) => {
                    let w = ready!(cx.read(self.layout.lock.r(t, self.q[j])))?;
                    self.st = if w.value != 0 {
                        self.first_k(j, i)
                    } else {
                        SfSt::GuardFlag(j, t + 1)
                    };
                }
                SfSt::GuardLa(j, k) => {
                    let la = ready!(cx.read(self.layout.la(k)))?.value;
                    self.st = if la == 0 {
                        SfSt::GuardDoor(j, k)
                    } else {
                        SfSt::GuardMc(j, k, la)
                    };
                }
                SfSt::GuardDoor(j, k) => {
                    let flag = ready!(cx.read(self.layout.lock.r(k, self.q[j])))?.value;
                    if flag != 0 {
                        cx.spin();
                        self.st = SfSt::GuardFlag(0, 0);
                    } else {
                        self.st = self.next_k(j, k, i);
                    }
                }
                SfSt::GuardMc(j, k, la) => {
                    let mc = ready!(cx.read(self.layout.mc(k)))?.value;
                    if mc == self.my_mc {
                        if (la, k) < (self.my_la, i) {
                            cx.spin();
                            self.st = SfSt::GuardFlag(0, 0);
                        } else {
                            self.st = self.next_k(j, k, i);
                        }
                    } else {
                        self.st = SfSt::GuardColor(j, k);
                    }
                }
                SfSt::GuardColor(j, k) => {
                    let color = ready!(cx.read(self.layout.color()))?.value;
                    if self.my_mc == color {
                        cx.spin();
                        self.st = SfSt::GuardFlag(0, 0);
                    } else {
                        self.st = self.next_k(j, k, i);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum SfRelSt {
    Start,
    Clear(usize),
    ClearLa,
    ReadMc,
    WriteColor(i64),
}

/// Clears the flags, drops the label, hands the color to the other side.
/// The label goes before the color flips: a label left standing under the
/// new color is read as current by a disjoint acquirer, which then climbs
/// past N.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SfRelease {
    layout: BakeryLayout,
    q: Vec<TObjectId>,
    st: SfRelSt,
}

impl SfRelease {
    pub fn new(layout: BakeryLayout, q: Vec<TObjectId>) -> Self {
        SfRelease {
            layout,
            q,
            st: SfRelSt::Start,
        }
    }

    pub fn poll(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
        let i = cx.process().0;
        loop {
            match self.st {
                SfRelSt::Start => {
                    cx.lock_event(LockKind::Released, &self.q);
                    self.st = SfRelSt::Clear(0);
                }
                SfRelSt::Clear(a) if a < self.q.len() => {
                    ready!(cx.write(self.layout.lock.r(i, self.q[a]), BaseWord::ZERO))?;
                    self.st = SfRelSt::Clear(a + 1);
                }
                SfRelSt::Clear(_) => self.st = SfRelSt::ClearLa,
                SfRelSt::ClearLa => {
                    ready!(cx.write(self.layout.la(i), BaseWord::ZERO))?;
                    self.st = SfRelSt::ReadMc;
                }
                SfRelSt::ReadMc => {
                    let mc = ready!(cx.read(self.layout.mc(i)))?.value;
                    self.st = SfRelSt::WriteColor(if mc == BLACK { WHITE } else { BLACK });
                }
                SfRelSt::WriteColor(c) => {
                    ready!(cx.write(self.layout.color(), BaseWord::ctl(c)))?;
                    return Poll::Ready(Ok(()));
                }
            }
        }
    }
}

/// Checks the bakery ordering invariant for every current holder `i`: any
/// other process `k` flagging an object `i` holds and carrying a label is
/// behind `i` — a larger `(LA, id)` if it has `i`'s color, otherwise the
/// shared color differs from `i`'s.
pub fn bakery_order_violation(
    layout: &BakeryLayout,
    word: impl Fn(BaseObjectId) -> BaseWord,
    holders: impl IntoIterator<Item = (TObjectId, ProcessId)>,
) -> Option<String> {
    let n = layout.lock.n;
    let mut by_holder: std::collections::BTreeMap<u32, Vec<TObjectId>> = Default::default();
    for (x, p) in holders {
        by_holder.entry(p.0).or_default().push(x);
    }
    for (i, q) in by_holder {
        let la_i = word(layout.la(i)).value;
        let mc_i = word(layout.mc(i)).value;
        for k in (0..n).filter(|&k| k != i) {
            let flags = q.iter().any(|&x| word(layout.lock.r(k, x)).value != 0);
            let la_k = word(layout.la(k)).value;
            if !flags || la_k == 0 {
                continue;
            }
            let mc_k = word(layout.mc(k)).value;
            if mc_k == mc_i && (la_k, k) < (la_i, i) {
                return Some(format!(
                    "p{k} ({la_k}) is ahead of holder p{i} ({la_i}) with the same color"
                ));
            }
            if mc_k != mc_i && mc_i == word(layout.color()).value {
                return Some(format!(
                    "holder p{i} and waiting p{k} differ in color while p{i} has the shared color"
                ));
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum DriverSt {
    Next,
    Acquiring(Acquire),
    Releasing(Release),
}

/// Runs a list of acquire-then-release attempts on one process. Each attempt
/// is attributed to its own transaction id `1 + p + n * attempt`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LockDriver {
    client: LockClient,
    attempts: Vec<BTreeSet<TObjectId>>,
    at: usize,
    st: DriverSt,
    /// Outcome of each acquire so far.
    pub results: Vec<bool>,
}

impl LockDriver {
    pub fn new(flavor: LockFlavor, attempts: Vec<BTreeSet<TObjectId>>) -> Self {
        LockDriver {
            client: LockClient::new(flavor),
            attempts,
            at: 0,
            st: DriverSt::Next,
            results: Vec::new(),
        }
    }
}

impl Program for LockDriver {
    fn state_hash(&self) -> Option<u64> {
        Some(hash_state(self))
    }

    fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
        let p = cx.process();
        let n = self.client.flavor.flags().n as u64;
        loop {
            match &mut self.st {
                DriverSt::Next => {
                    if self.at == self.attempts.len() {
                        cx.set_scope(false);
                        return Poll::Ready(Ok(()));
                    }
                    cx.set_scope(true);
                    cx.set_tx(TxId(1 + p.0 as u64 + n * self.at as u64));
                    self.st = DriverSt::Acquiring(self.client.acquire(p, &self.attempts[self.at])?);
                }
                DriverSt::Acquiring(a) => {
                    let ok = ready!(a.poll(cx))?;
                    self.results.push(ok);
                    if ok {
                        let q = self.attempts[self.at].clone();
                        self.client.granted(&q);
                        self.st = DriverSt::Releasing(self.client.release(p, &q)?);
                    } else {
                        self.at += 1;
                        self.st = DriverSt::Next;
                    }
                }
                DriverSt::Releasing(r) => {
                    ready!(r.poll(cx))?;
                    self.at += 1;
                    self.st = DriverSt::Next;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{BaseKind, Sim};

    fn set(xs: &[u32]) -> BTreeSet<TObjectId> {
        xs.iter().map(|&x| TObjectId(x)).collect()
    }

    fn wf(n: u32, m: u32) -> (LockFlavor, usize) {
        let l = LockLayout::new(n, m, 0);
        (LockFlavor::WaitFree(l), l.end() as usize)
    }

    fn sf(n: u32, m: u32) -> (LockFlavor, BakeryLayout, usize) {
        let b = BakeryLayout::new(LockLayout::new(n, m, 0), n * m);
        (LockFlavor::StarvationFree(b), b, b.end() as usize)
    }

    /// Acquire only, never release.
    #[derive(Clone)]
    struct Grab {
        a: Acquire,
        got: Option<bool>,
    }

    impl Program for Grab {
        fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
            cx.set_scope(true);
            self.got = Some(ready!(self.a.poll(cx))?);
            Poll::Ready(Ok(()))
        }
    }

    fn grab(flavor: LockFlavor, q: &[u32]) -> Grab {
        let c = LockClient::new(flavor);
        Grab {
            a: c.acquire(ProcessId(0), &set(q)).unwrap(),
            got: None,
        }
    }

    #[test]
    fn solo_wf_acquire_succeeds() {
        let (f, size) = wf(2, 2);
        let mut sim = Sim::new(size, vec![LockDriver::new(f, vec![set(&[0, 1])])]);
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        assert_eq!(sim.program(ProcessId(0)).results, vec![true]);
    }

    #[test]
    fn interleaved_announcements_both_fail() {
        let (f, size) = wf(2, 1);
        let mut sim = Sim::new(size, vec![grab(f, &[0]), grab(f, &[0])]);
        for p in [0, 1, 0, 1] {
            sim.step(ProcessId(p)).unwrap();
        }
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        assert_eq!(sim.program(ProcessId(0)).got, Some(false));
        assert_eq!(sim.program(ProcessId(1)).got, Some(false));
        assert!(sim.words().iter().all(|w| w.value == 0));
    }

    #[test]
    fn acquire_after_release_succeeds() {
        let (f, size) = wf(2, 1);
        let sim = Sim::new(
            size,
            vec![
                LockDriver::new(f, vec![set(&[0])]),
                LockDriver::new(f, vec![set(&[0])]),
            ],
        );
        let mut sim = sim;
        let mut s = Vec::new();
        sim.run_lowest_first(&mut s, 100).unwrap();
        assert_eq!(sim.program(ProcessId(0)).results, vec![true]);
        assert_eq!(sim.program(ProcessId(1)).results, vec![true]);
    }

    #[test]
    fn wf_release_is_writes_only() {
        let (f, size) = wf(1, 2);
        let mut sim = Sim::new(size, vec![LockDriver::new(f, vec![set(&[0, 1])])]);
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        let rel = sim
            .trace()
            .lock_events()
            .find(|l| l.kind == LockKind::Released)
            .unwrap()
            .seq;
        let after: Vec<_> = sim.trace().base_events().filter(|e| e.seq > rel).collect();
        assert_eq!(after.len(), 2);
        assert!(after
            .iter()
            .all(|e| e.kind == BaseKind::Write && e.nontrivial));
    }

    #[derive(Clone)]
    struct Probe {
        c: IsContended,
        got: Option<bool>,
    }

    impl Program for Probe {
        fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
            cx.set_scope(true);
            self.got = Some(ready!(self.c.poll(cx))?);
            Poll::Ready(Ok(()))
        }
    }

    #[derive(Clone)]
    enum Either {
        G(Grab),
        P(Probe),
    }

    impl Program for Either {
        fn step(&mut self, cx: &mut StepCx<'_>) -> Poll<Result<(), Fault>> {
            match self {
                Either::G(g) => g.step(cx),
                Either::P(p) => p.step(cx),
            }
        }
    }

    #[test]
    fn is_contended_sees_others_only() {
        let l = LockLayout::new(2, 1, 0);
        let probe = Probe {
            c: IsContended::new(l, TObjectId(0)),
            got: None,
        };
        // Held by p0, probed by p1.
        let mut sim = Sim::new(
            2,
            vec![
                Either::G(grab(LockFlavor::WaitFree(l), &[0])),
                Either::P(probe.clone()),
            ],
        );
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        let Either::P(pr) = sim.program(ProcessId(1)) else {
            unreachable!()
        };
        assert_eq!(pr.got, Some(true));
        // Quiescent.
        let mut sim = Sim::new(2, vec![Either::P(probe.clone()), Either::P(probe.clone())]);
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        let Either::P(pr) = sim.program(ProcessId(0)) else {
            unreachable!()
        };
        assert_eq!(pr.got, Some(false));
        // Own flag only: p0 holds and probes itself after.
        let mut sim = Sim::new(2, vec![Either::G(grab(LockFlavor::WaitFree(l), &[0]))]);
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        let mut sim = Sim::new(2, vec![Either::P(probe)]);
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        let Either::P(pr) = sim.program(ProcessId(0)) else {
            unreachable!()
        };
        assert_eq!(pr.got, Some(false));
    }

    #[test]
    fn reentrant_acquire_and_unheld_release_fault() {
        let (f, _) = wf(1, 2);
        let mut c = LockClient::new(f);
        c.granted(&set(&[0]));
        assert_eq!(
            c.acquire(ProcessId(0), &set(&[0, 1])).unwrap_err(),
            Fault::ReentrantAcquire(ProcessId(0), TObjectId(0))
        );
        assert_eq!(
            c.release(ProcessId(0), &set(&[1])).unwrap_err(),
            Fault::ReleaseUnheld(ProcessId(0), TObjectId(1))
        );
    }

    #[test]
    fn solo_sf_acquire_and_release_flip_color() {
        let (f, b, size) = sf(1, 2);
        let mut sim = Sim::new(size, vec![LockDriver::new(f, vec![set(&[0, 1])])]);
        sim.run_lowest_first(&mut Vec::new(), 100).unwrap();
        assert_eq!(sim.program(ProcessId(0)).results, vec![true]);
        assert_eq!(sim.word(b.color().index).value, BLACK);
        assert_eq!(sim.word(b.la(0).index).value, 0);
    }

    #[test]
    fn sf_waiter_blocks_until_release() {
        let (f, b, size) = sf(2, 1);
        let holder = LockDriver::new(f, vec![set(&[0])]);
        let waiter = LockDriver::new(f, vec![set(&[0])]);
        let mut sim = Sim::new(size, vec![holder, waiter]);
        // p0 runs until it has acquired; its release has not written yet.
        while sim.trace().lock_events().count() == 0 {
            sim.step(ProcessId(0)).unwrap();
        }
        for _ in 0..200 {
            if sim.spin_state(ProcessId(1)) == crate::memory::SpinState::Blocked {
                break;
            }
            sim.step(ProcessId(1)).unwrap();
        }
        assert_eq!(
            sim.spin_state(ProcessId(1)),
            crate::memory::SpinState::Blocked
        );
        assert!(sim.program(ProcessId(1)).results.is_empty());
        assert!(bakery_order_violation(
            &b,
            |o| sim.word(o.index),
            sim.holders().iter().map(|(x, p)| (*x, *p))
        )
        .is_none());
        sim.run_lowest_first(&mut Vec::new(), 1000).unwrap();
        assert!(sim.is_complete());
        assert_eq!(sim.program(ProcessId(1)).results, vec![true]);
        assert_eq!(sim.lock_violations(), 0);
    }

    #[test]
    fn equal_labels_lower_id_wins() {
        let (f, b, size) = sf(2, 1);
        let mut sim = Sim::new(
            size,
            vec![
                LockDriver::new(f, vec![set(&[0])]),
                LockDriver::new(f, vec![set(&[0])]),
            ],
        );
        // Announce, read color, write MC, two MC reads, two LA reads, write LA.
        for _ in 0..8 {
            sim.step(ProcessId(0)).unwrap();
            sim.step(ProcessId(1)).unwrap();
        }
        assert_eq!(sim.word(b.la(0).index).value, 1);
        assert_eq!(sim.word(b.la(1).index).value, 1);
        sim.run_lowest_first(&mut Vec::new(), 1000).unwrap();
        let first = sim.trace().lock_events().next().unwrap();
        assert_eq!(first.process, ProcessId(0));
        assert_eq!(sim.lock_violations(), 0);
    }
}
