use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{HarnessError, WorkloadSpec};
use crate::analysis::{self, Counts, PatternReport, Verdict, Witness};
use crate::memory::{self, BaseKind, ExecutionTrace, ExploreConfig, RunStatus, Schedule};
use crate::model::{validate_history, History, TObjectId, TxId, TxStatus};
use crate::stm::{StmLayout, StmVariant};
use crate::trylock::bakery_order_violation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    WellFormed,
    Opacity,
    StrictSerializability,
    Progressiveness,
    StrongProgressiveness,
    InvisibleReads,
    Partitioning,
    Dap,
    MutualExclusion,
    Consistency,
    Budgets,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::WellFormed,
        Check::Opacity,
        Check::StrictSerializability,
        Check::Progressiveness,
        Check::StrongProgressiveness,
        Check::InvisibleReads,
        Check::Partitioning,
        Check::Dap,
        Check::MutualExclusion,
        Check::Consistency,
        Check::Budgets,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::WellFormed => "well-formed",
            Check::Opacity => "opacity",
            Check::StrictSerializability => "strict-serializability",
            Check::Progressiveness => "progressiveness",
            Check::StrongProgressiveness => "strong-progressiveness",
            Check::InvisibleReads => "invisible-reads",
            Check::Partitioning => "partitioning",
            Check::Dap => "dap",
            Check::MutualExclusion => "mutual-exclusion",
            Check::Consistency => "consistency",
            Check::Budgets => "budgets",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::UnknownCheck(s.into()))
    }
}

pub type CheckSet = BTreeSet<Check>;

/// Checks every variant is expected to pass.
pub fn default_checks(variant: StmVariant) -> CheckSet {
    let mut s = BTreeSet::from([
        Check::WellFormed,
        Check::Opacity,
        Check::InvisibleReads,
        Check::MutualExclusion,
        Check::Consistency,
        Check::Budgets,
    ]);
    if variant.is_progressive() {
        s.insert(Check::Progressiveness);
    }
    if variant == StmVariant::StrongProg {
        s.insert(Check::StrongProgressiveness);
    }
    if variant.is_partitioned() {
        s.insert(Check::Partitioning);
        s.insert(Check::Dap);
    }
    s
}

/// Parses a comma-separated list; `default` expands to the variant's set.
pub fn parse_checks(list: &str, variant: StmVariant) -> Result<CheckSet, HarnessError> {
    let mut out = BTreeSet::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "default" {
            out.extend(default_checks(variant));
        } else {
            out.insert(part.parse()?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Mode {
    /// Every interleaving up to `depth` steps, states deduplicated.
    Exhaustive {
        depth: usize,
    },
    Schedules {
        schedules: Vec<Schedule>,
    },
    Native {
        trials: usize,
    },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub checks: CheckSet,
    /// Keep every run in the report, not just failing ones.
    pub keep_runs: bool,
    pub max_states: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, checks: CheckSet) -> Self {
        ExperimentConfig {
            mode,
            checks,
            keep_runs: true,
            max_states: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schedule: Schedule,
    pub status: RunStatus,
    pub history: History,
    pub trace: ExecutionTrace,
    pub verdicts: BTreeMap<Check, Verdict>,
    pub patterns: PatternReport,
    pub pass: bool,
    /// An unfinished run under an unfair schedule; not checked.
    pub skipped: bool,
}

/// Largest pattern counts seen per transaction class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregates {
    pub read_only: Counts,
    pub updating: Counts,
    pub aborted: Counts,
    pub transactions: usize,
}

impl Aggregates {
    fn absorb(&mut self, history: &History, patterns: &PatternReport) {
        for t in history.transactions().iter() {
            self.transactions += 1;
            let c = patterns.tx(t.id).map(|p| p.counts).unwrap_or_default();
            let slot = if t.status == TxStatus::Aborted {
                &mut self.aborted
            } else if t.is_updating() {
                &mut self.updating
            } else {
                &mut self.read_only
            };
            slot.raw_count = slot.raw_count.max(c.raw_count);
            slot.multi_raw_count = slot.multi_raw_count.max(c.multi_raw_count);
            slot.awar_count = slot.awar_count.max(c.awar_count);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Index among all runs, in execution order.
    pub run: usize,
    pub schedule: Schedule,
    pub check: Option<Check>,
    pub verdict: Option<Verdict>,
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub states: usize,
    pub pruned: usize,
    pub leaves: usize,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub workload: WorkloadSpec,
    pub mode: Mode,
    pub checks: CheckSet,
    pub total_runs: usize,
    pub skipped_unfair: usize,
    pub aggregates: Aggregates,
    pub pass: bool,
    pub failures: Vec<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreSummary>,
    pub runs: Vec<RunRecord>,
}

/// Per object, the committed writers in the order their values were
/// installed, read off the writes to the object's value word.
pub fn versions_from_trace(
    layout: &StmLayout,
    trace: &ExecutionTrace,
) -> BTreeMap<TObjectId, Vec<TxId>> {
    let mut out: BTreeMap<TObjectId, Vec<TxId>> = BTreeMap::new();
    for b in trace.base_events() {
        let (BaseKind::Write, Some(o), Some(w)) = (b.kind, b.object, b.value) else {
            continue;
        };
        let Some(x) = o.tag else { continue };
        if o != layout.v(x) || w.writer != b.tx || b.tx.is_init() {
            continue;
        }
        let list = out.entry(x).or_default();
        if list.last() != Some(&b.tx) {
            list.push(b.tx);
        }
    }
    out
}

/// Runs the requested checks on one trace. `exact` selects the exhaustive
/// opacity search; otherwise the version-order graph check is used.
pub fn check_run(
    layout: &StmLayout,
    trace: &ExecutionTrace,
    checks: &CheckSet,
    exact: bool,
) -> BTreeMap<Check, Verdict> {
    let h = trace.history();
    let mut out = BTreeMap::new();
    let opacity = |h: &History| -> Verdict {
        if exact {
            analysis::check_opacity(h)
                .unwrap_or_else(|e| Verdict::fail(Witness::None).with_note(e.to_string()))
        } else {
            analysis::check_opacity_with_versions(h, &versions_from_trace(layout, trace))
        }
    };
    for &c in checks {
        let v = match c {
            Check::WellFormed => validate_history(&h),
            Check::Opacity => opacity(&h),
            Check::StrictSerializability => {
                let txs = h.transactions();
                let keep: BTreeSet<TxId> = txs
                    .iter()
                    .filter(|t| {
                        t.committed()
                            || t.pending()
                                .is_some_and(|o| o.kind == crate::model::OpKind::TryC)
                    })
                    .map(|t| t.id)
                    .collect();
                if exact {
                    analysis::check_strict_serializability(&h)
                        .unwrap_or_else(|e| Verdict::fail(Witness::None).with_note(e.to_string()))
                } else {
                    opacity(&h.restrict(&keep))
                }
            }
            Check::Progressiveness => analysis::check_progressiveness(&h),
            Check::StrongProgressiveness => analysis::check_strong_progressiveness(&h),
            Check::InvisibleReads => analysis::check_invisible_reads(trace),
            Check::Partitioning => analysis::check_strict_partitioning(trace, &layout.beta())
                .unwrap_or_else(|e| Verdict::fail(Witness::None).with_note(e.to_string())),
            Check::Dap => analysis::check_dap(trace),
            Check::MutualExclusion => analysis::check_mutual_exclusion(trace),
            Check::Consistency => analysis::check_memory_consistency(trace),
            Check::Budgets => analysis::check_budgets(layout.variant, trace),
        };
        out.insert(c, v);
    }
    out
}

impl Check {
    /// Whether the verdict depends on the tm-history alone.
    fn on_history(self) -> bool {
        matches!(
            self,
            Check::WellFormed
                | Check::Opacity
                | Check::StrictSerializability
                | Check::Progressiveness
                | Check::StrongProgressiveness
        )
    }
}

// Sequence numbers aside, equal histories get equal history verdicts.
fn history_key(h: &History) -> u64 {
    let mut hasher = DefaultHasher::new();
    for e in &h.events {
        (
            e.kind, e.tx, e.process, e.object, e.value, e.outcome, e.writer,
        )
            .hash(&mut hasher);
    }
    hasher.finish()
}

struct Acc<'a> {
    cfg: &'a ExperimentConfig,
    layout: StmLayout,
    report: ExperimentReport,
    // Exhaustive runs repeat histories a lot; their verdicts are shared.
    seen: HashMap<u64, BTreeMap<Check, Verdict>>,
    observe: &'a mut dyn FnMut(&RunRecord),
}

impl Acc<'_> {
    fn add(&mut self, schedule: Schedule, trace: ExecutionTrace, status: RunStatus, exact: bool) {
        let run = self.report.total_runs;
        self.report.total_runs += 1;
        let history = trace.history();
        let patterns = analysis::detect_patterns(&trace);
        let unfair = matches!(status, RunStatus::Incomplete { .. })
            && self.layout.variant == StmVariant::StrongProg
            && matches!(self.cfg.mode, Mode::Schedules { .. });
        if unfair {
            self.report.skipped_unfair += 1;
            let record = RunRecord {
                schedule,
                status,
                history,
                trace,
                verdicts: BTreeMap::new(),
                patterns,
                pass: true,
                skipped: true,
            };
            (self.observe)(&record);
            if self.cfg.keep_runs {
                self.report.runs.push(record);
            }
            return;
        }
        let verdicts = if exact {
            let (on_h, on_t): (CheckSet, CheckSet) =
                self.cfg.checks.iter().partition(|c| c.on_history());
            let mut v = self
                .seen
                .entry(history_key(&history))
                .or_insert_with(|| check_run(&self.layout, &trace, &on_h, true))
                .clone();
            v.extend(check_run(&self.layout, &trace, &on_t, true));
            v
        } else {
            check_run(&self.layout, &trace, &self.cfg.checks, exact)
        };
        self.report.aggregates.absorb(&history, &patterns);
        let mut pass = true;
        if let RunStatus::Faulted { process, fault } = &status {
            pass = false;
            self.report.failures.push(Failure {
                run,
                schedule: schedule.clone(),
                check: None,
                verdict: None,
                note: format!("{process} faulted: {fault}"),
            });
        }
        if exact
            && matches!(status, RunStatus::Incomplete { .. })
            && !matches!(self.cfg.mode, Mode::Schedules { .. })
        {
            pass = false;
            self.report.failures.push(Failure {
                run,
                schedule: schedule.clone(),
                check: None,
                verdict: None,
                note: "every unfinished process is blocked".into(),
            });
        }
        for (c, v) in &verdicts {
            if !v.pass {
                pass = false;
                self.report.failures.push(Failure {
                    run,
                    schedule: schedule.clone(),
                    check: Some(*c),
                    verdict: Some(v.clone()),
                    note: v.note.clone().unwrap_or_default(),
                });
            }
        }
        self.report.pass &= pass;
        let record = RunRecord {
            schedule,
            status,
            history,
            trace,
            verdicts,
            patterns,
            pass,
            skipped: false,
        };
        (self.observe)(&record);
        if self.cfg.keep_runs || !pass {
            self.report.runs.push(record);
        }
    }
}

/// Executes the workload in the configured mode and checks every run.
pub fn run_experiment(
    w: &WorkloadSpec,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, HarnessError> {
    run_experiment_observed(w, cfg, &mut |_| {})
}

/// Like [`run_experiment`], handing every checked run to `observe` whether
/// or not the report keeps it.
pub fn run_experiment_observed(
    w: &WorkloadSpec,
    cfg: &ExperimentConfig,
    observe: &mut dyn FnMut(&RunRecord),
) -> Result<ExperimentReport, HarnessError> {
    w.validate()?;
    let layout = w.layout();
    let mut acc = Acc {
        cfg,
        layout,
        report: ExperimentReport {
            workload: w.clone(),
            mode: cfg.mode.clone(),
            checks: cfg.checks.clone(),
            total_runs: 0,
            skipped_unfair: 0,
            aggregates: Aggregates::default(),
            pass: true,
            failures: Vec::new(),
            explore: None,
            runs: Vec::new(),
        },
        seen: HashMap::new(),
        observe,
    };
    match &cfg.mode {
        Mode::Exhaustive { depth } => {
            let ecfg = ExploreConfig {
                depth: *depth,
                max_states: cfg.max_states,
                ..ExploreConfig::default()
            };
            let check_locks = cfg.checks.contains(&Check::MutualExclusion);
            let invariant = |sim: &memory::Sim<crate::stm::TxClient>| -> Option<String> {
                if !check_locks {
                    return None;
                }
                if sim.lock_violations() > 0 {
                    return Some("two processes hold one t-object".into());
                }
                if layout.variant == StmVariant::StrongProg {
                    let holders = sim.holders().iter().map(|(x, p)| (*x, *p));
                    return bakery_order_violation(
                        &layout.bakery(),
                        |o| sim.word(o.index),
                        holders,
                    );
                }
                None
            };
            let stats = memory::explore(w.sim(), &ecfg, &invariant, &mut |leaf| {
                acc.add(leaf.schedule, leaf.trace, leaf.status, true)
            });
            for (schedule, note) in stats.violations {
                acc.report.pass = false;
                acc.report.failures.push(Failure {
                    run: acc.report.total_runs,
                    schedule,
                    check: Some(Check::MutualExclusion),
                    verdict: None,
                    note,
                });
            }
            if stats.truncated {
                acc.report.pass = false;
                acc.report.failures.push(Failure {
                    run: acc.report.total_runs,
                    schedule: Schedule::default(),
                    check: None,
                    verdict: None,
                    note: "state cap reached before the exploration finished".into(),
                });
            }
            acc.report.explore = Some(ExploreSummary {
                states: stats.states,
                pruned: stats.pruned,
                leaves: stats.leaves,
                truncated: stats.truncated,
            });
        }
        Mode::Schedules { schedules } => {
            for s in schedules {
                let r = memory::run_deterministic(w.sim(), s);
                acc.add(r.schedule, r.trace, r.status, true);
            }
        }
        Mode::Native { trials } => {
            for _ in 0..*trials {
                let r = memory::run_native(layout.size(), w.clients());
                let exact =
                    r.trace.history().transactions().len() <= analysis::opacity::DEFAULT_MAX_TXS;
                acc.add(r.schedule, r.trace, r.status, exact);
            }
        }
    }
    Ok(acc.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{preset, TxSpec};

    #[test]
    fn fig1_passes_exhaustively_for_every_variant() {
        for v in StmVariant::ALL {
            let w = preset("fig1", v, None).unwrap();
            let mut cfg = ExperimentConfig::new(Mode::Exhaustive { depth: 60 }, default_checks(v));
            cfg.keep_runs = false;
            let r = run_experiment(&w, &cfg).unwrap();
            assert!(r.pass, "{v}: {:?}", r.failures.first());
            assert!(r.total_runs > 1);
            assert_eq!(r.skipped_unfair, 0);
        }
    }

    #[test]
    fn single_lock_thm2_shows_awar() {
        let w = preset("thm2-minimal", StmVariant::SingleLock, None).unwrap();
        let cfg = ExperimentConfig::new(
            Mode::Exhaustive { depth: 60 },
            default_checks(StmVariant::SingleLock),
        );
        let r = run_experiment(&w, &cfg).unwrap();
        assert!(r.pass);
        for run in &r.runs {
            for t in &run.patterns.txs {
                assert!(t.counts.awar_count >= 1);
            }
        }
    }

    #[test]
    fn empty_workload_gives_an_empty_passing_report() {
        let w = WorkloadSpec {
            processes: 1,
            objects: 1,
            variant: StmVariant::ProgRaw,
            seed: 0,
            txs: vec![vec![]],
        };
        let r = run_experiment(
            &w,
            &ExperimentConfig::new(Mode::Exhaustive { depth: 60 }, default_checks(w.variant)),
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.aggregates.transactions, 0);
    }

    #[test]
    fn schedules_replay_byte_identically() {
        let w = preset("thm2-minimal", StmVariant::ProgRaw, None).unwrap();
        let cfg = ExperimentConfig::new(Mode::Exhaustive { depth: 60 }, default_checks(w.variant));
        let r = run_experiment(&w, &cfg).unwrap();
        for run in r.runs.iter().take(20) {
            let again = crate::harness::replay(&w, &run.schedule);
            assert_eq!(again.trace.to_jsonl(), run.trace.to_jsonl());
        }
    }

    #[test]
    fn check_names_round_trip() {
        for c in Check::ALL {
            assert_eq!(c.name().parse::<Check>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!(parse_checks("opacity,nope", StmVariant::ProgRaw).is_err());
        assert_eq!(
            parse_checks("default", StmVariant::SingleLock).unwrap(),
            default_checks(StmVariant::SingleLock)
        );
    }

    #[test]
    fn native_runs_check_clean() {
        let w = WorkloadSpec {
            processes: 2,
            objects: 2,
            variant: StmVariant::ProgRaw,
            seed: 0,
            txs: vec![
                vec![
                    TxSpec {
                        reads: vec![TObjectId(0)],
                        writes: vec![(TObjectId(1), 1)]
                    };
                    3
                ],
                vec![
                    TxSpec {
                        reads: vec![TObjectId(1)],
                        writes: vec![(TObjectId(0), 2)]
                    };
                    3
                ],
            ],
        };
        let r = run_experiment(
            &w,
            &ExperimentConfig::new(Mode::Native { trials: 3 }, default_checks(w.variant)),
        )
        .unwrap();
        assert!(r.pass, "{:?}", r.failures.first());
    }
}
