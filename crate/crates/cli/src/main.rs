//! `stmlab` command line: run workloads, check histories, count patterns,
//! probe valence and enumerate schedules.
//!
//! Exit codes: 0 every requested check passed, 1 some check failed, 2 bad
//! usage or input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use stmlab::analysis::{
    self, detect_patterns, find_protecting_prefix, PatternReport, Probe, Verdict,
};
use stmlab::harness::{
    self, check_run, default_checks, parse_checks, run_experiment, Check, CheckSet,
    ExperimentConfig, ExperimentReport, Mode, Template, WorkloadSpec,
};
use stmlab::memory::ExecutionTrace;
use stmlab::model::validate_history;
use stmlab::stm::StmLayout;
use stmlab::{History, Schedule, StmVariant};

#[derive(Parser)]
#[command(
    name = "stmlab",
    version,
    about = "Run, check and measure software transactional memory executions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload and check every run.
    Run(RunArgs),
    /// Check a history or trace file (JSON lines).
    Check(CheckArgs),
    /// Count RAW, multi-RAW and AWAR patterns in a trace file.
    Count(CountArgs),
    /// Find where an uncontended writer protects its write set.
    Probe(ProbeArgs),
    /// List every complete schedule of a workload up to a depth.
    Enumerate(EnumerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Backend {
    Deterministic,
    Native,
}

#[derive(Args)]
struct Output {
    /// Write the full JSON result here; stdout gets a summary.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Human-readable tables instead of JSON on stdout.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct WorkloadArgs {
    /// STM variant: single-lock, prog-raw, prog-mcas or strong-prog.
    #[arg(long)]
    variant: Option<StmVariant>,
    /// Named workload: fig1, thm2-minimal or protect-sweep.
    #[arg(long, conflicts_with = "workload")]
    preset: Option<String>,
    /// Workload JSON file.
    #[arg(long, value_name = "FILE")]
    workload: Option<PathBuf>,
    /// Seed for random workloads and random schedules.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Processes in a random workload.
    #[arg(long, default_value_t = 2)]
    processes: u32,
    /// Objects in a random workload.
    #[arg(long, default_value_t = 2)]
    objects: u32,
    /// Most transactions per process in a random workload.
    #[arg(long, default_value_t = 2)]
    txs_per_process: usize,
    /// Write-set size for the protect-sweep preset.
    #[arg(long, value_name = "M")]
    probe_wset: Option<u32>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, value_enum, default_value_t = Backend::Deterministic)]
    backend: Backend,
    /// Schedule JSON file: an array of process ids.
    #[arg(long, value_name = "FILE")]
    schedule: Option<PathBuf>,
    /// Explore every interleaving up to --depth steps.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, default_value_t = 60)]
    depth: usize,
    /// Random schedules (deterministic backend) or trials (native).
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Comma-separated checks, or `default`.
    #[arg(long, value_name = "LIST")]
    check: Option<String>,
    /// Include per-transaction pattern counts in the output.
    #[arg(long)]
    count_patterns: bool,
    /// Stop an exhaustive run after this many states.
    #[arg(long)]
    max_states: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CheckArgs {
    /// History or trace, one JSON event per line.
    file: PathBuf,
    /// Comma-separated checks, or `default`. Defaults to opacity for a
    /// history and the variant's defaults for a trace.
    #[arg(long, value_name = "LIST")]
    check: Option<String>,
    /// Variant that produced a trace; needed for budgets and partitioning.
    #[arg(long)]
    variant: Option<StmVariant>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CountArgs {
    /// Trace, one JSON event per line.
    file: PathBuf,
    /// Also check the variant's per-transaction budgets.
    #[arg(long)]
    variant: Option<StmVariant>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long, default_value = "prog-raw")]
    variant: StmVariant,
    /// Objects the writer writes.
    #[arg(long, value_name = "M", default_value_t = 1)]
    probe_wset: u32,
    /// Objects the writer reads first.
    #[arg(long, value_name = "R", default_value_t = 0)]
    probe_rset: u32,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value_t = 60)]
    depth: usize,
    #[command(flatten)]
    output: Output,
}

/// Bad usage or input; exit 2.
struct InputError(String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

type Res<T> = Result<T, InputError>;

fn read_file(p: &Path) -> Res<String> {
    std::fs::read_to_string(p).map_err(|e| InputError(format!("{}: {e}", p.display())))
}

fn load_workload(a: &WorkloadArgs) -> Res<WorkloadSpec> {
    let w = if let Some(name) = &a.preset {
        harness::preset(name, a.variant.unwrap_or(StmVariant::ProgRaw), a.probe_wset)?
    } else if let Some(path) = &a.workload {
        let mut w: WorkloadSpec = serde_json::from_str(&read_file(path)?)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        if let Some(v) = a.variant {
            w.variant = v;
        }
        w
    } else {
        let t = Template::new(
            a.variant.unwrap_or(StmVariant::ProgRaw),
            a.processes,
            a.objects,
            a.txs_per_process,
        );
        harness::gen_workload(&t, a.seed)?
    };
    w.validate()?;
    Ok(w)
}

fn emit(
    out: &Output,
    full: &impl Serialize,
    summary: serde_json::Value,
    pretty: impl FnOnce() -> String,
) -> Res<()> {
    let text = serde_json::to_string_pretty(full)?;
    match &out.out {
        Some(path) => {
            std::fs::write(path, text + "\n")
                .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
            if out.pretty {
                print!("{}", pretty());
            } else {
                println!("{}", serde_json::to_string(&summary)?);
            }
        }
        None if out.pretty => print!("{}", pretty()),
        None => println!("{text}"),
    }
    Ok(())
}

fn code(pass: bool) -> ExitCode {
    ExitCode::from(if pass { 0 } else { 1 })
}

fn pattern_table(p: &PatternReport) -> String {
    let mut s = String::from("  tx      process  RAW  multi-RAW  AWAR\n");
    for t in &p.txs {
        let _ = writeln!(
            s,
            "  {:<7} {:<8} {:>3}  {:>9}  {:>4}",
            t.tx.to_string(),
            t.process.to_string(),
            t.counts.raw_count,
            t.counts.multi_raw_count,
            t.counts.awar_count
        );
    }
    s
}

fn run_table(r: &ExperimentReport, patterns: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} on {} processes, {} objects: {} runs, {} skipped, {}",
        r.workload.variant,
        r.workload.processes,
        r.workload.objects,
        r.total_runs,
        r.skipped_unfair,
        if r.pass { "PASS" } else { "FAIL" }
    );
    if let Some(e) = &r.explore {
        let _ = writeln!(
            s,
            "explored {} states, pruned {}, {} leaves",
            e.states, e.pruned, e.leaves
        );
    }
    let a = &r.aggregates;
    let _ = writeln!(s, "max counts     RAW  multi-RAW  AWAR");
    for (name, c) in [
        ("read-only", a.read_only),
        ("updating", a.updating),
        ("aborted", a.aborted),
    ] {
        let _ = writeln!(
            s,
            "  {name:<12} {:>3}  {:>9}  {:>4}",
            c.raw_count, c.multi_raw_count, c.awar_count
        );
    }
    for f in r.failures.iter().take(10) {
        let check = f
            .check
            .map(|c| c.to_string())
            .unwrap_or_else(|| "run".into());
        let _ = writeln!(s, "failure in run {}: {check}: {}", f.run, f.note);
    }
    if patterns {
        for (i, run) in r.runs.iter().enumerate() {
            let _ = writeln!(s, "run {i}:");
            s.push_str(&pattern_table(&run.patterns));
        }
    }
    s
}

fn cmd_run(a: RunArgs) -> Res<ExitCode> {
    let w = load_workload(&a.workload)?;
    let checks = match &a.check {
        Some(list) => parse_checks(list, w.variant)?,
        None => default_checks(w.variant),
    };
    let mode = match a.backend {
        Backend::Native => {
            if a.schedule.is_some() {
                return Err(InputError(
                    "the native backend cannot follow a schedule file".into(),
                ));
            }
            if a.exhaustive {
                return Err(InputError(
                    "--exhaustive needs the deterministic backend".into(),
                ));
            }
            Mode::Native { trials: a.runs }
        }
        Backend::Deterministic => match (&a.schedule, a.exhaustive) {
            (Some(_), true) => {
                return Err(InputError(
                    "--schedule and --exhaustive exclude each other".into(),
                ))
            }
            (Some(path), false) => {
                let s: Schedule = serde_json::from_str(&read_file(path)?)
                    .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
                if let Some(p) = s.steps.iter().find(|p| p.0 >= w.processes) {
                    return Err(InputError(format!(
                        "schedule names {p}, the workload has {} processes",
                        w.processes
                    )));
                }
                Mode::Schedules { schedules: vec![s] }
            }
            (None, true) => Mode::Exhaustive { depth: a.depth },
            (None, false) => Mode::Schedules {
                schedules: harness::random_schedules(&w, a.workload.seed, a.runs, 100_000),
            },
        },
    };
    let mut cfg = ExperimentConfig::new(mode, checks);
    cfg.max_states = a.max_states;
    // Exhaustive runs keep failing runs only unless patterns are asked for.
    cfg.keep_runs = !a.exhaustive || a.count_patterns;
    let report = run_experiment(&w, &cfg)?;
    let summary = json!({
        "pass": report.pass,
        "total_runs": report.total_runs,
        "skipped_unfair": report.skipped_unfair,
        "failures": report.failures.len(),
        "aggregates": report.aggregates,
    });
    let mut full = serde_json::to_value(&report)?;
    if a.count_patterns {
        let counts: Vec<_> = report.runs.iter().map(|r| &r.patterns).collect();
        full["pattern_counts"] = serde_json::to_value(counts)?;
    }
    emit(&a.output, &full, summary, || {
        run_table(&report, a.count_patterns)
    })?;
    Ok(code(report.pass))
}

enum Input {
    History(History),
    Trace(ExecutionTrace),
}

fn parse_input(text: &str, path: &Path) -> Res<Input> {
    if text.trim().is_empty() {
        return Err(InputError(format!("{}: empty file", path.display())));
    }
    // Trace events carry a `layer` field; plain tm-events do not.
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_default();
    let is_trace = serde_json::from_str::<serde_json::Value>(first)
        .map_err(|e| InputError(format!("{}: line 1: {e}", path.display())))?
        .get("layer")
        .is_some();
    if is_trace {
        Ok(Input::Trace(ExecutionTrace::from_jsonl(text).map_err(
            |e| InputError(format!("{}: {e}", path.display())),
        )?))
    } else {
        Ok(Input::History(History::from_jsonl(text).map_err(|e| {
            InputError(format!("{}: {e}", path.display()))
        })?))
    }
}

/// Smallest layout covering every process and object in the trace.
fn infer_layout(variant: StmVariant, h: &History) -> StmLayout {
    let n = h.events.iter().map(|e| e.process.0 + 1).max().unwrap_or(1);
    let m = h
        .events
        .iter()
        .filter_map(|e| e.object)
        .map(|x| x.0 + 1)
        .max()
        .unwrap_or(1);
    StmLayout::new(variant, n, m)
}

fn history_check(c: Check, h: &History) -> Res<Verdict> {
    let exact = |r: Result<Verdict, analysis::CheckError>| r.map_err(InputError::from);
    Ok(match c {
        Check::WellFormed => validate_history(h),
        Check::Opacity => exact(analysis::check_opacity(h))?,
        Check::StrictSerializability => exact(analysis::check_strict_serializability(h))?,
        Check::Progressiveness => analysis::check_progressiveness(h),
        Check::StrongProgressiveness => analysis::check_strong_progressiveness(h),
        other => return Err(InputError(format!("{other} needs a trace, not a history"))),
    })
}

fn cmd_check(a: CheckArgs) -> Res<ExitCode> {
    let input = parse_input(&read_file(&a.file)?, &a.file)?;
    let verdicts: BTreeMap<Check, Verdict> = match &input {
        Input::History(h) => {
            let checks: CheckSet = match &a.check {
                Some(list) => parse_checks(list, a.variant.unwrap_or(StmVariant::ProgRaw))?
                    .into_iter()
                    .filter(|c| a.check.as_deref() != Some("default") || history_only(*c))
                    .collect(),
                None => [Check::Opacity].into(),
            };
            let mut out = BTreeMap::new();
            for c in checks {
                out.insert(c, history_check(c, h)?);
            }
            out
        }
        Input::Trace(t) => {
            let h = t.history();
            let checks = match (&a.check, a.variant) {
                (Some(list), v) => parse_checks(list, v.unwrap_or(StmVariant::ProgRaw))?,
                (None, Some(v)) => default_checks(v),
                (None, None) => [
                    Check::WellFormed,
                    Check::Opacity,
                    Check::Consistency,
                    Check::MutualExclusion,
                ]
                .into(),
            };
            let needs_variant = checks
                .iter()
                .any(|c| matches!(c, Check::Budgets | Check::Partitioning));
            if needs_variant && a.variant.is_none() {
                return Err(InputError("budgets and partitioning need --variant".into()));
            }
            let layout = infer_layout(a.variant.unwrap_or(StmVariant::ProgRaw), &h);
            let exact = h.transactions().len() <= analysis::opacity::DEFAULT_MAX_TXS;
            check_run(&layout, t, &checks, exact)
        }
    };
    let pass = verdicts.values().all(|v| v.pass);
    let full = json!({ "pass": pass, "verdicts": verdicts });
    let pretty = || {
        let mut s = String::new();
        for (c, v) in &verdicts {
            let _ = writeln!(
                s,
                "{:<24} {}  {}",
                c.to_string(),
                if v.pass { "PASS" } else { "FAIL" },
                serde_json::to_string(&v.witness).unwrap_or_default()
            );
            if let Some(n) = &v.note {
                let _ = writeln!(s, "{:<24} {n}", "");
            }
        }
        s
    };
    emit(&a.output, &full, json!({ "pass": pass }), pretty)?;
    Ok(code(pass))
}

fn history_only(c: Check) -> bool {
    matches!(
        c,
        Check::WellFormed
            | Check::Opacity
            | Check::StrictSerializability
            | Check::Progressiveness
            | Check::StrongProgressiveness
    )
}

fn cmd_count(a: CountArgs) -> Res<ExitCode> {
    let trace = match parse_input(&read_file(&a.file)?, &a.file)? {
        Input::Trace(t) => t,
        Input::History(_) => {
            return Err(InputError(
                "pattern counts need a trace, not a history".into(),
            ))
        }
    };
    let report = detect_patterns(&trace);
    let budgets = a.variant.map(|v| analysis::check_budgets(v, &trace));
    let pass = budgets.as_ref().is_none_or(|v| v.pass);
    let full = json!({ "patterns": report, "budgets": budgets });
    let pretty = || {
        let mut s = pattern_table(&report);
        if let (Some(v), Some(b)) = (a.variant, &budgets) {
            let _ = writeln!(s, "{v} budgets: {}", if b.pass { "PASS" } else { "FAIL" });
        }
        s
    };
    emit(
        &a.output,
        &full,
        json!({ "pass": pass, "transactions": report.txs.len() }),
        pretty,
    )?;
    Ok(code(pass))
}

fn cmd_probe(a: ProbeArgs) -> Res<ExitCode> {
    if !a.variant.is_partitioned() {
        eprintln!(
            "warning: {} is not disjoint-access parallel; every transaction contends on the global lock",
            a.variant
        );
    }
    let probe = Probe::new(a.variant, a.probe_wset).with_rset(a.probe_rset);
    let r = find_protecting_prefix(&probe)?;
    let pretty = || {
        let mut s = format!(
            "{} writer with |Wset| = {}, |Rset| = {}: {} steps, protecting prefix {}\n",
            a.variant,
            a.probe_wset,
            a.probe_rset,
            r.steps,
            r.protecting
                .map(|t| t.to_string())
                .unwrap_or_else(|| "none".into())
        );
        let sym = |v: &analysis::Valence| match v {
            analysis::Valence::Zero => "0",
            analysis::Valence::One => "1",
            analysis::Valence::Bottom => "-",
        };
        for row in &r.table {
            let w: Vec<_> = row.wset.iter().map(sym).collect();
            let rs: Vec<_> = row.rset.iter().map(sym).collect();
            let mark = if Some(row.t) == r.protecting {
                " <"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "  {:>4}  W[{}]  R[{}]{mark}",
                row.t,
                w.join(" "),
                rs.join(" ")
            );
        }
        s
    };
    let summary = json!({ "pass": r.verdict.pass, "protecting": r.protecting, "steps": r.steps });
    emit(&a.output, &r, summary, pretty)?;
    Ok(code(r.verdict.pass))
}

fn cmd_enumerate(a: EnumerateArgs) -> Res<ExitCode> {
    let w = load_workload(&a.workload)?;
    let schedules = harness::enumerate_schedules(&w, a.depth);
    let full = json!({ "count": schedules.len(), "schedules": schedules });
    let pretty = || {
        let mut s = format!("{} schedules\n", schedules.len());
        for sc in &schedules {
            let ids: Vec<String> = sc.steps.iter().map(|p| p.0.to_string()).collect();
            let _ = writeln!(s, "  {}", ids.join(" "));
        }
        s
    };
    emit(
        &a.output,
        &full,
        json!({ "count": schedules.len() }),
        pretty,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Count(a) => cmd_count(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Enumerate(a) => cmd_enumerate(a),
    };
    match res {
        Ok(c) => c,
        Err(InputError(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
