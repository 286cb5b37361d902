//! Schedule exploration over the deterministic backend.

use std::collections::HashMap;

use super::{ExecutionTrace, Program, RunStatus, Schedule, Sim};
use crate::model::ProcessId;

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    /// Branch over every enabled process for the first `depth` steps; past
    /// that, complete the run lowest-enabled-process first.
    pub depth: usize,
    /// Skip states already reached at an equal or smaller depth.
    pub dedup: bool,
    /// Step bound for the completion phase.
    pub max_steps: usize,
    /// Stop after this many expanded states.
    pub max_states: Option<usize>,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            depth: 60,
            dedup: true,
            max_steps: 100_000,
            max_states: None,
        }
    }
}

/// A finished run reached by the explorer. Replaying `schedule` with
/// [`super::run_deterministic`] reproduces `trace` exactly.
#[derive(Clone, Debug)]
pub struct Leaf {
    pub schedule: Schedule,
    pub trace: ExecutionTrace,
    pub status: RunStatus,
}

#[derive(Clone, Debug, Default)]
pub struct ExploreStats {
    pub leaves: usize,
    pub states: usize,
    pub pruned: usize,
    /// The state cap was hit; coverage is partial.
    pub truncated: bool,
    /// State-invariant failures with the schedule that reached them.
    pub violations: Vec<(Schedule, String)>,
}

struct Ctx<'a, P> {
    cfg: &'a ExploreConfig,
    invariant: &'a dyn Fn(&Sim<P>) -> Option<String>,
    on_leaf: &'a mut dyn FnMut(Leaf),
    visited: HashMap<u64, usize>,
    stats: ExploreStats,
}

impl<P: Program + Clone> Ctx<'_, P> {
    fn check(&mut self, sim: &Sim<P>, sched: &[ProcessId]) {
        if let Some(v) = (self.invariant)(sim) {
            self.stats
                .violations
                .push((Schedule::new(sched.to_vec()), v));
        }
    }

    fn leaf(&mut self, sim: Sim<P>, sched: Vec<ProcessId>) {
        self.stats.leaves += 1;
        let status = sim.status();
        (self.on_leaf)(Leaf {
            schedule: Schedule::new(sched),
            trace: sim.into_trace(),
            status,
        });
    }

    fn complete(&mut self, mut sim: Sim<P>, sched: &[ProcessId]) {
        let mut s = sched.to_vec();
        for _ in 0..self.cfg.max_steps {
            if sim.faulted().is_some() {
                break;
            }
            let Some(&p) = sim.enabled().first() else {
                break;
            };
            s.push(p);
            let _ = sim.step(p);
            self.check(&sim, &s);
        }
        self.leaf(sim, s);
    }

    fn dfs(&mut self, sim: Sim<P>, sched: &mut Vec<ProcessId>) {
        if self.stats.truncated {
            return;
        }
        let enabled = sim.enabled();
        if enabled.is_empty() || sim.faulted().is_some() {
            self.leaf(sim, sched.clone());
            return;
        }
        if sched.len() >= self.cfg.depth {
            self.complete(sim, sched);
            return;
        }
        let mut sim = Some(sim);
        for (i, &p) in enabled.iter().enumerate() {
            let mut child = if i + 1 == enabled.len() {
                sim.take().expect("parent kept until last child")
            } else {
                sim.as_ref().expect("parent kept until last child").clone()
            };
            sched.push(p);
            let _ = child.step(p);
            self.stats.states += 1;
            self.check(&child, sched);
            if self.cfg.max_states.is_some_and(|m| self.stats.states > m) {
                self.stats.truncated = true;
                sched.pop();
                return;
            }
            if self.cfg.dedup {
                let fp = child.fingerprint();
                let d = sched.len();
                match self.visited.get(&fp) {
                    Some(&seen) if seen <= d => {
                        self.stats.pruned += 1;
                        sched.pop();
                        continue;
                    }
                    _ => {
                        self.visited.insert(fp, d);
                    }
                }
            }
            self.dfs(child, sched);
            sched.pop();
        }
    }
}

/// Depth-first exploration of interleavings. Every leaf is handed to
/// `on_leaf`; `invariant` is evaluated on every state reached.
pub fn explore<P: Program + Clone>(
    sim: Sim<P>,
    cfg: &ExploreConfig,
    invariant: &dyn Fn(&Sim<P>) -> Option<String>,
    on_leaf: &mut dyn FnMut(Leaf),
) -> ExploreStats {
    let mut ctx = Ctx {
        cfg,
        invariant,
        on_leaf,
        visited: HashMap::new(),
        stats: ExploreStats::default(),
    };
    ctx.check(&sim, &[]);
    let mut sched = Vec::new();
    ctx.dfs(sim, &mut sched);
    ctx.stats
}

/// Every schedule of at most `depth` steps that drives all programs to
/// completion, in lexicographic order.
pub fn enumerate_schedules<P: Program + Clone>(sim: Sim<P>, depth: usize) -> Vec<Schedule> {
    fn go<P: Program + Clone>(
        sim: Sim<P>,
        depth: usize,
        sched: &mut Vec<ProcessId>,
        out: &mut Vec<Schedule>,
    ) {
        if sim.is_complete() {
            out.push(Schedule::new(sched.clone()));
            return;
        }
        if sched.len() >= depth || sim.faulted().is_some() {
            return;
        }
        for p in sim.enabled() {
            let mut child = sim.clone();
            sched.push(p);
            if child.step(p).is_ok() {
                go(child, depth, sched, out);
            }
            sched.pop();
        }
    }
    let mut out = Vec::new();
    go(sim, depth, &mut Vec::new(), &mut out);
    out
}
