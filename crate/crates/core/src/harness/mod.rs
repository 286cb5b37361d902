//! Workloads, presets and experiment runs tying the STMs to the checkers.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::memory::{self, RunResult, Schedule, Sim};
use crate::model::{History, HistoryBuilder, TObjectId, Value};
use crate::stm::{StmLayout, StmVariant, TxClient, TxScript};

mod experiment;

pub use experiment::{
    check_run, default_checks, parse_checks, run_experiment, run_experiment_observed,
    versions_from_trace, Aggregates, Check, CheckSet, ExperimentConfig, ExperimentReport,
    ExploreSummary, Failure, Mode, RunRecord,
};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Bounds(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("unknown check {0:?}")]
    UnknownCheck(String),
}

/// A canonic transaction: reads of distinct objects, then writes to distinct
/// objects, then tryC.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSpec {
    #[serde(default)]
    pub reads: Vec<TObjectId>,
    #[serde(default)]
    pub writes: Vec<(TObjectId, Value)>,
}

impl TxSpec {
    pub fn script(&self) -> TxScript {
        TxScript::canonic(&self.reads, &self.writes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub processes: u32,
    pub objects: u32,
    pub variant: StmVariant,
    #[serde(default)]
    pub seed: u64,
    /// Transactions of each process, in order.
    pub txs: Vec<Vec<TxSpec>>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        if self.processes == 0 || self.objects == 0 {
            return bad("need at least one process and one object".into());
        }
        if self.txs.len() != self.processes as usize {
            return bad(format!(
                "{} processes but {} transaction lists",
                self.processes,
                self.txs.len()
            ));
        }
        for (p, list) in self.txs.iter().enumerate() {
            for (i, t) in list.iter().enumerate() {
                let reads: BTreeSet<_> = t.reads.iter().collect();
                let writes: BTreeSet<_> = t.writes.iter().map(|(x, _)| x).collect();
                if reads.len() != t.reads.len() || writes.len() != t.writes.len() {
                    return bad(format!("p{p} transaction {i} repeats an object"));
                }
                if reads
                    .iter()
                    .chain(writes.iter())
                    .any(|x| x.0 >= self.objects)
                {
                    return bad(format!(
                        "p{p} transaction {i} names an object past {}",
                        self.objects
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> StmLayout {
        StmLayout::new(self.variant, self.processes, self.objects)
    }

    pub fn clients(&self) -> Vec<TxClient> {
        self.txs
            .iter()
            .map(|list| TxClient::new(self.layout(), list.iter().map(TxSpec::script).collect()))
            .collect()
    }

    pub fn sim(&self) -> Sim<TxClient> {
        Sim::new(self.layout().size(), self.clients())
    }

    pub fn with_variant(mut self, variant: StmVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn tx_count(&self) -> usize {
        self.txs.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub processes: u32,
    pub objects: u32,
    pub txs_per_process: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            processes: 8,
            objects: 8,
            txs_per_process: 4,
        }
    }
}

/// Shape of a random workload. Each process gets between one and
/// `txs_per_process` transactions; each transaction reads up to `max_reads`
/// and writes up to `max_writes` distinct objects chosen uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub processes: u32,
    pub objects: u32,
    pub txs_per_process: usize,
    pub max_reads: u32,
    pub max_writes: u32,
    pub variant: StmVariant,
    #[serde(default)]
    pub limits: Limits,
}

impl Template {
    pub fn new(variant: StmVariant, processes: u32, objects: u32, txs_per_process: usize) -> Self {
        Template {
            processes,
            objects,
            txs_per_process,
            max_reads: 2,
            max_writes: 2,
            variant,
            limits: Limits::default(),
        }
    }
}

/// Deterministic in `seed`. Written values are distinct across the workload.
pub fn gen_workload(t: &Template, seed: u64) -> Result<WorkloadSpec, HarnessError> {
    let l = t.limits;
    if t.processes == 0 || t.processes > l.processes {
        return Err(HarnessError::Bounds(format!(
            "processes must be in 1..={}",
            l.processes
        )));
    }
    if t.objects == 0 || t.objects > l.objects {
        return Err(HarnessError::Bounds(format!(
            "objects must be in 1..={}",
            l.objects
        )));
    }
    if t.txs_per_process == 0 || t.txs_per_process > l.txs_per_process {
        return Err(HarnessError::Bounds(format!(
            "transactions per process must be in 1..={}",
            l.txs_per_process
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_value: Value = 1;
    let m = t.objects as usize;
    let mut txs = Vec::new();
    for _ in 0..t.processes {
        let count = rng.gen_range(1..=t.txs_per_process);
        let mut list = Vec::new();
        for _ in 0..count {
            let nr = rng.gen_range(0..=(t.max_reads as usize).min(m));
            let nw = rng.gen_range(0..=(t.max_writes as usize).min(m));
            let mut reads: Vec<TObjectId> = sample(&mut rng, m, nr)
                .into_iter()
                .map(|i| TObjectId(i as u32))
                .collect();
            let writes: Vec<(TObjectId, Value)> = sample(&mut rng, m, nw)
                .into_iter()
                .map(|i| {
                    next_value += 1;
                    (TObjectId(i as u32), next_value - 1)
                })
                .collect();
            if reads.is_empty() && writes.is_empty() {
                reads.push(TObjectId(rng.gen_range(0..t.objects)));
            }
            list.push(TxSpec { reads, writes });
        }
        txs.push(list);
    }
    Ok(WorkloadSpec {
        processes: t.processes,
        objects: t.objects,
        variant: t.variant,
        seed,
        txs,
    })
}

pub const PRESETS: [&str; 3] = ["fig1", "thm2-minimal", "protect-sweep"];

fn x(i: u32) -> TObjectId {
    TObjectId(i)
}

/// Named workloads.
///
/// * `fig1`: T1 reads X1 and X2, T2 writes X1, T3 reads X1, one process each.
/// * `thm2-minimal`: T1 reads X0 and writes X1, T2 reads X1 and writes X0.
/// * `protect-sweep`: T1 writes `X0..X(wset-1)`, T2 reads X0.
pub fn preset(
    name: &str,
    variant: StmVariant,
    wset: Option<u32>,
) -> Result<WorkloadSpec, HarnessError> {
    let (processes, objects, txs) = match name {
        "fig1" => (
            3,
            3,
            vec![
                vec![TxSpec {
                    reads: vec![x(1), x(2)],
                    writes: vec![],
                }],
                vec![TxSpec {
                    reads: vec![],
                    writes: vec![(x(1), 7)],
                }],
                vec![TxSpec {
                    reads: vec![x(1)],
                    writes: vec![],
                }],
            ],
        ),
        "thm2-minimal" => (
            2,
            2,
            vec![
                vec![TxSpec {
                    reads: vec![x(0)],
                    writes: vec![(x(1), 1)],
                }],
                vec![TxSpec {
                    reads: vec![x(1)],
                    writes: vec![(x(0), 2)],
                }],
            ],
        ),
        "protect-sweep" => {
            let m = wset.unwrap_or(2);
            (
                2,
                m.max(1),
                vec![
                    vec![TxSpec {
                        reads: vec![],
                        writes: (0..m).map(|j| (x(j), 100 + j as Value)).collect(),
                    }],
                    vec![TxSpec {
                        reads: vec![x(0)],
                        writes: vec![],
                    }],
                ],
            )
        }
        _ => return Err(HarnessError::UnknownPreset(name.into())),
    };
    Ok(WorkloadSpec {
        processes,
        objects,
        variant,
        seed: 0,
        txs,
    })
}

pub const CANNED: [&str; 2] = ["fig1", "thm2-forbidden"];

/// Hand-written histories.
///
/// * `fig1`: T3 reads X1 = 0; T2 writes X1 = 7 and commits; T1 reads
///   X1 = 7 and X2 = 0. Only T3, T2, T1 serializes it.
/// * `thm2-forbidden`: T1 reads X0 = 0 and writes X1, T2 reads X1 = 0 and
///   writes X0, both commit while overlapping.
pub fn canned_history(name: &str) -> Option<History> {
    match name {
        "fig1" => Some(
            HistoryBuilder::new()
                .read(3, 1, 0)
                .write(2, 1, 7)
                .commit(2)
                .read(1, 1, 7)
                .read(1, 2, 0)
                .build(),
        ),
        "thm2-forbidden" => Some(
            HistoryBuilder::new()
                .read(1, 0, 0)
                .read(2, 1, 0)
                .write(1, 1, 1)
                .write(2, 0, 2)
                .commit(1)
                .commit(2)
                .build(),
        ),
        _ => None,
    }
}

/// Every complete schedule of at most `depth` steps for the workload.
pub fn enumerate_schedules(w: &WorkloadSpec, depth: usize) -> Vec<Schedule> {
    memory::enumerate_schedules(w.sim(), depth)
}

/// Replays one schedule on a fresh simulation of the workload.
pub fn replay(w: &WorkloadSpec, s: &Schedule) -> RunResult {
    memory::run_deterministic(w.sim(), s)
}

/// `count` schedules, each picking a uniformly random enabled process at
/// every step until nobody is enabled or `max_steps` is reached.
/// Deterministic in `seed`.
pub fn random_schedules(
    w: &WorkloadSpec,
    seed: u64,
    count: usize,
    max_steps: usize,
) -> Vec<Schedule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut sim = w.sim();
            let mut steps = Vec::new();
            while steps.len() < max_steps {
                let enabled = sim.enabled();
                if enabled.is_empty() || sim.faulted().is_some() {
                    break;
                }
                let p = enabled[rng.gen_range(0..enabled.len())];
                steps.push(p);
                let _ = sim.step(p);
            }
            Schedule::new(steps)
        })
        .collect()
}
