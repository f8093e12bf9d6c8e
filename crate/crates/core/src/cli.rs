//! Batch command-line front end.
//!
//! Every subcommand validates its flags, writes its artifact (CSV for paths
//! and capital, JSON for reports) and prints a one-line JSON summary. Exit
//! codes: 0 ok, 1 input or config error, 2 numeric failure, 3 a report check
//! failed.

use crate::crossings::{constancy_intervals, qv_limit};
use crate::emergence::{
    emergence_suite, event_frequency, normalize_ensemble, EmergenceThresholds, PathEvent,
};
use crate::error::Error;
use crate::hedging::{lindeberg_hedge, ClaimKind, HedgeOptions, SmoothClaim, DEFAULT_QUADRATURE};
use crate::paths::{
    gen_analytic, gen_geometric_brownian, gen_time_changed_brownian, ingest_csv, AnalyticParams,
    CsvOptions, SampledPath, TimeChange,
};
use crate::strategies::{
    run_capital, Cash, FuzzStrategy, HoeffdingParity, ParityBettor, QuadraticReplicator,
    ScheduledBets, SimpleStrategy,
};
use crate::timechange::{normalize_path, tightness_check, TightnessMode};
use crate::variation::{default_delta_schedule, qvar, var_phi, variation_index, Phi, VarPhiOptions};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "GTPROB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gtprob", version, about = "Game-theoretic probability on sampled price paths")]
struct Cli {
    /// Omit the timestamp from summaries and reports.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Flat key=value file; keys are flag names, command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a path and write it as CSV.
    Simulate(SimulateArgs),
    /// Quadratic-variation ladders and Cauchy gaps.
    Qv(QvArgs),
    /// Normalize a path by its quadratic-variation clock.
    Timechange(TimechangeArgs),
    /// phi-variation, variation index and qvar.
    Variation(VariationArgs),
    /// Run a simple strategy and write its capital trajectory.
    Strategy(StrategyArgs),
    /// Hedge a smooth claim of the normalized path.
    Hedge(HedgeArgs),
    /// Emergence suite, event frequencies and tightness on a generated ensemble.
    Emergence(EmergenceArgs),
    /// Merge JSON reports and fail when any check failed.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// brownian | time_changed | geometric | identity | constant | zigzag | sine_drift
    #[arg(long, default_value = "brownian")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// identity | zero | linear:RATE | sine:AMP
    #[arg(long, default_value = "identity")]
    clock: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    value: f64,
    #[arg(long, default_value_t = 1.0)]
    amp: f64,
    #[arg(long, default_value_t = 2.0)]
    period: f64,
    #[arg(long, default_value_t = 1)]
    cycles: usize,
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    #[arg(long, default_value_t = 1.0)]
    frequency: f64,
    #[arg(long, default_value_t = 1001)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Two-column CSV `t,value` with a header row.
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct QvArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Level range `a:b`.
    #[arg(long, default_value = "0:8")]
    levels: String,
    /// Time grid `a:b:step`; defaults to 101 points over the path.
    #[arg(long)]
    grid: Option<String>,
    /// Report constancy intervals of the limit with this tolerance.
    #[arg(long)]
    constancy_eps: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TimechangeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.01)]
    ds: f64,
    /// Ladder level of the clock; defaults to the normalization level.
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VariationArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Power p of the p-variation, or `psi` for Taylor's function.
    #[arg(long, default_value = "2")]
    phi: String,
    /// Interval `a:b`; defaults to the whole path.
    #[arg(long)]
    interval: Option<String>,
    #[arg(long, default_value_t = 10)]
    max_refinement: u32,
    /// Level range `a:b` for the variation index; defaults to `1:floor`.
    #[arg(long)]
    index_levels: Option<String>,
    /// Also compute qvar over `[0, T]`.
    #[arg(long)]
    qvar_t: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StrategyArgs {
    #[command(flatten)]
    input: InputArgs,
    /// cash | constant:BET | parity:N | hoeffding:N:H | replicator:L | fuzz:SEED:LEVEL
    #[arg(long, default_value = "cash")]
    strategy: String,
    #[arg(long, default_value_t = 1.0)]
    capital: f64,
    /// Output grid `a:b:step` for the trajectory; defaults to the event times.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HedgeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// const:V | poly:C0,C1,.. | gaussian:CENTER:SCALE | bump:CENTER:RADIUS
    #[arg(long, default_value = "bump:0:3")]
    claim: String,
    /// Number of coordinates N.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Clock horizon S.
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    /// Lindeberg steps L per stage.
    #[arg(long, default_value_t = 64)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_QUADRATURE)]
    quadrature: usize,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    clock_level: Option<u32>,
    #[arg(long)]
    margin: Option<f64>,
    /// Capital trajectory CSV.
    #[arg(long)]
    capital_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmergenceArgs {
    #[arg(long, default_value_t = 200)]
    paths: usize,
    /// Clock of the generated paths: identity | zero | linear:RATE | sine:AMP | geometric:SIGMA
    #[arg(long, default_value = "sine:0.4")]
    clock: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// Grid step of the normalized paths.
    #[arg(long, default_value_t = 0.001)]
    grid_ds: f64,
    /// Increment scales, comma separated.
    #[arg(long, default_value = "0.01")]
    ds: String,
    /// Test level.
    #[arg(long, default_value_t = 0.01)]
    level: f64,
    /// Clock ladder level; defaults to the normalization level.
    #[arg(long)]
    clock_level: Option<u32>,
    /// Skip the time change (negative control).
    #[arg(long)]
    raw: bool,
    /// Levels a,b of the event "hits a before b".
    #[arg(long, default_value = "1,-1")]
    hit: String,
    /// Also run the tightness check at this alpha.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// JSON reports to merge.
    #[arg(long = "in", value_name = "JSON", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numeric(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Parse { .. } | Error::NoSamples | Error::Io(_) => CliError::Input(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Outcome {
    summary: Value,
    check_failed: bool,
}

/// Run the CLI on `argv` (program name first), printing to stdout and stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_INPUT;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    init_pool();
    let stamp = !cli.no_timestamp;
    match dispatch(cli.command, stamp) {
        Ok(outcome) => {
            let mut summary = outcome.summary;
            summary["status"] = json!(if outcome.check_failed { "check_failed" } else { "ok" });
            if stamp {
                summary["timestamp"] = json!(timestamp());
            }
            let _ = writeln!(out, "{summary}");
            if outcome.check_failed {
                EXIT_CHECK
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            let (code, msg) = match e {
                CliError::Input(m) => (EXIT_INPUT, m),
                CliError::Numeric(m) => (EXIT_NUMERIC, m),
            };
            let _ = writeln!(out, "{}", json!({"status": "error", "exit_code": code, "message": msg}));
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

fn init_pool() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn timestamp() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Replace `--config FILE` by the flags it lists that are not given on the
/// command line, inserted right after the subcommand.
fn expand_config(argv: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().ok_or("--config needs a file")?);
        } else if let Some(f) = a.strip_prefix("--config=") {
            config = Some(f.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(file) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&file).map_err(|e| format!("{file}: {e}"))?;
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("{file}:{}: expected key=value", i + 1))?;
        let key = format!("--{}", k.trim().replace('_', "-"));
        if rest.iter().any(|a| *a == key || a.starts_with(&format!("{key}="))) {
            continue;
        }
        match v.trim() {
            "true" => flags.push(key),
            "false" => {}
            v => {
                flags.push(key);
                flags.push(v.to_string());
            }
        }
    }
    let sub = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 2).unwrap_or(rest.len());
    rest.splice(sub..sub, flags);
    Ok(rest)
}

fn dispatch(cmd: Command, stamp: bool) -> CliResult<Outcome> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Qv(a) => qv(a, stamp),
        Command::Timechange(a) => timechange(a),
        Command::Variation(a) => variation(a, stamp),
        Command::Strategy(a) => strategy(a),
        Command::Hedge(a) => hedge(a, stamp),
        Command::Emergence(a) => emergence(a, stamp),
        Command::Report(a) => report(a, stamp),
    }
}

fn ok(summary: Value) -> CliResult<Outcome> {
    Ok(Outcome { summary, check_failed: false })
}

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn parse_f64(s: &str, what: &str) -> CliResult<f64> {
    s.trim().parse::<f64>().map_err(|_| input_err(format!("{what}: '{s}' is not a number")))
}

/// `a:b` into an inclusive integer range.
fn parse_levels(s: &str) -> CliResult<(u32, u32)> {
    let (a, b) = s.split_once(':').ok_or_else(|| input_err(format!("level range '{s}' is not a:b")))?;
    let p = |x: &str| x.trim().parse::<u32>().map_err(|_| input_err(format!("bad level '{x}' in '{s}'")));
    let (a, b) = (p(a)?, p(b)?);
    if b < a {
        return Err(input_err(format!("empty level range '{s}'")));
    }
    Ok((a, b))
}

/// `a:b` into a real interval.
fn parse_interval(s: &str) -> CliResult<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| input_err(format!("interval '{s}' is not a:b")))?;
    Ok((parse_f64(a, "interval")?, parse_f64(b, "interval")?))
}

/// `a:b:step` into `a, a+step, ..., b` (the endpoint is included when it is
/// within `1e-9 step` of a grid point).
fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(input_err(format!("grid '{s}' is not a:b:step")));
    }
    let (a, b, h) = (parse_f64(parts[0], "grid")?, parse_f64(parts[1], "grid")?, parse_f64(parts[2], "grid")?);
    if !(h > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(input_err(format!("grid '{s}' needs step > 0 and b >= a")));
    }
    let count = ((b - a) / h + 1e-9).floor() as usize;
    if count > 10_000_000 {
        return Err(input_err(format!("grid '{s}' has too many points")));
    }
    let mut g: Vec<f64> = (0..=count).map(|k| a + k as f64 * h).collect();
    if let Some(last) = g.last_mut() {
        if (b - *last).abs() <= 1e-9 * h {
            *last = b;
        }
    }
    Ok(g)
}

fn parse_clock(s: &str) -> CliResult<TimeChange> {
    let clock = match s.split_once(':') {
        None if s == "identity" => TimeChange::Identity,
        None if s == "zero" => TimeChange::Zero,
        Some(("linear", r)) => TimeChange::Linear(parse_f64(r, "clock rate")?),
        Some(("sine", a)) => TimeChange::SineClock(parse_f64(a, "clock amplitude")?),
        _ => return Err(input_err(format!("unknown clock '{s}'"))),
    };
    clock.validate()?;
    Ok(clock)
}

fn parse_claim(s: &str, n: usize, horizon: f64) -> CliResult<SmoothClaim> {
    let (tag, rest) = s.split_once(':').unwrap_or((s, ""));
    let nums = |k: usize| -> CliResult<Vec<f64>> {
        let v: Vec<f64> = rest.split(':').map(|x| parse_f64(x, "claim")).collect::<CliResult<_>>()?;
        if v.len() != k {
            return Err(input_err(format!("claim '{s}' needs {k} parameters")));
        }
        Ok(v)
    };
    let kind = match tag {
        "const" => ClaimKind::Constant { value: nums(1)?[0] },
        "poly" => ClaimKind::Polynomial {
            coeffs: rest.split(',').map(|x| parse_f64(x, "coefficient")).collect::<CliResult<_>>()?,
        },
        "gaussian" => {
            let v = nums(2)?;
            ClaimKind::Gaussian { center: v[0], scale: v[1] }
        }
        "bump" => {
            let v = nums(2)?;
            ClaimKind::Bump { center: v[0], radius: v[1] }
        }
        _ => return Err(input_err(format!("unknown claim '{s}'"))),
    };
    Ok(SmoothClaim::new(n, horizon, kind)?)
}

fn load_path(p: &Path) -> CliResult<SampledPath> {
    let f = File::open(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
    ingest_csv(BufReader::new(f), &CsvOptions::default())
        .map_err(|e| input_err(format!("{}: {e}", p.display())))
}

fn create(p: &Path) -> CliResult<BufWriter<File>> {
    File::create(p).map(BufWriter::new).map_err(|e| input_err(format!("{}: {e}", p.display())))
}

fn write_json(p: &Path, mut v: Value, stamp: bool) -> CliResult<()> {
    if stamp {
        v["timestamp"] = json!(timestamp());
    }
    let mut w = create(p)?;
    let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Numeric(e.to_string()))?;
    writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| input_err(format!("{}: {e}", p.display())))
}

fn to_value<T: serde::Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Numeric(e.to_string()))
}

fn out_name(p: &Option<PathBuf>) -> Value {
    p.as_ref().map(|p| json!(p.display().to_string())).unwrap_or(Value::Null)
}

fn simulate(a: SimulateArgs) -> CliResult<Outcome> {
    let path = match a.kind.as_str() {
        "brownian" => gen_time_changed_brownian(a.seed, &TimeChange::Identity, a.horizon, a.dt, a.start)?,
        "time_changed" => gen_time_changed_brownian(a.seed, &parse_clock(&a.clock)?, a.horizon, a.dt, a.start)?,
        "geometric" => gen_geometric_brownian(a.seed, a.horizon, a.dt, a.start, a.sigma)?,
        kind => {
            let params = AnalyticParams {
                horizon: a.horizon,
                value: a.value,
                amp: a.amp,
                period: a.period,
                cycles: a.cycles,
                drift: a.drift,
                frequency: a.frequency,
                points: a.points,
            };
            gen_analytic(kind, &params)?
        }
    };
    let mut w = create(&a.out)?;
    path.write_csv(&mut w)?;
    w.flush().map_err(|e| input_err(format!("{}: {e}", a.out.display())))?;
    ok(json!({
        "command": "simulate",
        "kind": a.kind,
        "seed": a.seed,
        "rows": path.len(),
        "horizon": path.horizon(),
        "out": a.out.display().to_string(),
    }))
}

fn default_grid(path: &SampledPath) -> Vec<f64> {
    let h = path.horizon();
    (0..=100).map(|k| if k == 100 { h } else { h * k as f64 / 100.0 }).collect()
}

fn qv(a: QvArgs, stamp: bool) -> CliResult<Outcome> {
    let path = load_path(&a.input.input)?;
    let (lo, hi) = parse_levels(&a.levels)?;
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(&path),
    };
    let est = qv_limit(&path, lo, hi, &grid)?;
    let mut report = est.to_json();
    if let Some(eps) = a.constancy_eps {
        report["constancy"] = to_value(&constancy_intervals(&est, &path, eps)?)?;
    }
    if let Some(p) = &a.out {
        write_json(p, report, stamp)?;
    }
    ok(json!({
        "command": "qv",
        "levels": est.levels,
        "limit_at_end": est.limit().last(),
        "cauchy_gaps": est.cauchy_gaps.len(),
        "resolution_floor_flag": est.resolution_floor_flag,
        "out": out_name(&a.out),
    }))
}

fn timechange(a: TimechangeArgs) -> CliResult<Outcome> {
    let path = load_path(&a.input.input)?;
    let tc = normalize_path(&path, a.ds, a.level)?;
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        tc.write_csv(&mut w)?;
        w.flush().map_err(|e| input_err(format!("{}: {e}", p.display())))?;
    }
    ok(json!({
        "command": "timechange",
        "a_end": tc.a_end,
        "domain_end": tc.domain_end(),
        "points": tc.len(),
        "out": out_name(&a.out),
    }))
}

fn variation(a: VariationArgs, stamp: bool) -> CliResult<Outcome> {
    let path = load_path(&a.input.input)?;
    let phi = if a.phi == "psi" { Phi::TaylorPsi } else { Phi::Power(parse_f64(&a.phi, "phi")?) };
    let interval = match &a.interval {
        Some(s) => parse_interval(s)?,
        None => (0.0, path.horizon()),
    };
    let opts = VarPhiOptions { max_refinement: a.max_refinement, ..VarPhiOptions::default() };
    let var = var_phi(&path, phi, interval, opts)?;
    let levels = a.index_levels.as_deref().map(parse_levels).transpose()?;
    let index = variation_index(&path, interval, levels)?;
    let q = match a.qvar_t {
        Some(t) => Some(qvar(&path, t, &default_delta_schedule(&path))?),
        None => None,
    };
    let summary = json!({
        "command": "variation",
        "var_phi": var.value,
        "var_phi_infinite": var.infinite,
        "variation_index": index.value,
        "qvar": q.as_ref().map(|r| r.value),
        "out": out_name(&a.out),
    });
    if let Some(p) = &a.out {
        let report = json!({
            "phi": to_value(&phi)?,
            "interval": [interval.0, interval.1],
            "var_phi": to_value(&var)?,
            "variation_index": to_value(&index)?,
            "qvar": to_value(&q)?,
        });
        write_json(p, report, stamp)?;
    }
    ok(summary)
}

fn build_strategy(desc: &str, path: &SampledPath) -> CliResult<Box<dyn SimpleStrategy>> {
    let parts: Vec<&str> = desc.split(':').collect();
    let int = |x: &str| x.trim().parse::<u64>().map_err(|_| input_err(format!("bad integer '{x}' in '{desc}'")));
    let strat: Box<dyn SimpleStrategy> = match parts.as_slice() {
        ["cash"] => Box::new(Cash),
        ["constant", b] => Box::new(ScheduledBets::constant(parse_f64(b, "bet")?, 0.0)),
        ["parity", n] => Box::new(ParityBettor::new(int(n)? as u32)?),
        ["hoeffding", n, h] => Box::new(HoeffdingParity::new(int(n)? as u32, parse_f64(h, "h")?, 1.0)?),
        ["replicator", l] => {
            let (lo, hi) = path.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            Box::new(QuadraticReplicator::new(int(l)? as u32, 0.0, hi - lo))
        }
        ["fuzz", seed, level] => Box::new(FuzzStrategy::new(int(seed)?, int(level)? as u32, Vec::new(), 1.0)),
        _ => return Err(input_err(format!("unknown strategy '{desc}'"))),
    };
    Ok(strat)
}

fn strategy(a: StrategyArgs) -> CliResult<Outcome> {
    let path = load_path(&a.input.input)?;
    let grid = a.grid.as_deref().map(parse_grid).transpose()?.unwrap_or_default();
    let mut strat = build_strategy(&a.strategy, &path)?;
    let traj = run_capital(strat.as_mut(), &path, a.capital, &grid)?;
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        traj.write_csv(&mut w)?;
        w.flush().map_err(|e| input_err(format!("{}: {e}", p.display())))?;
    }
    ok(json!({
        "command": "strategy",
        "strategy": a.strategy,
        "initial": traj.initial,
        "terminal": traj.terminal,
        "running_max": traj.running_max,
        "running_min": traj.running_min,
        "bets": traj.events.len(),
        "out": out_name(&a.out),
    }))
}

fn hedge(a: HedgeArgs, stamp: bool) -> CliResult<Outcome> {
    let path = load_path(&a.input.input)?;
    let claim = parse_claim(&a.claim, a.n, a.s)?;
    let opts = HedgeOptions { level: a.level, clock_level: a.clock_level, quadrature: a.quadrature, margin: a.margin };
    let rep = lindeberg_hedge(&path, &claim, a.steps, &opts)?;
    if let (Some(p), Some(traj)) = (&a.capital_out, &rep.trajectory) {
        let mut w = create(p)?;
        traj.write_csv(&mut w)?;
        w.flush().map_err(|e| input_err(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &a.out {
        let report = json!({"claim": to_value(&claim)?, "steps": a.steps, "hedge": to_value(&rep)?});
        write_json(p, report, stamp)?;
    }
    ok(json!({
        "command": "hedge",
        "u0": rep.u0,
        "terminal": rep.terminal,
        "realized_claim": rep.realized_claim,
        "replication_error": rep.replication_error,
        "level": rep.level,
        "floor_bound": rep.floor_bound,
        "out": out_name(&a.out),
    }))
}

fn emergence(a: EmergenceArgs, stamp: bool) -> CliResult<Outcome> {
    if a.paths == 0 {
        return Err(input_err("--paths must be at least 1"));
    }
    let ds_list: Vec<f64> = a.ds.split(',').map(|x| parse_f64(x, "ds")).collect::<CliResult<_>>()?;
    let hit: Vec<f64> = a.hit.split(',').map(|x| parse_f64(x, "hit")).collect::<CliResult<_>>()?;
    if hit.len() != 2 {
        return Err(input_err("--hit needs two levels a,b"));
    }
    let gbm = a.clock.strip_prefix("geometric:").map(|s| parse_f64(s, "sigma")).transpose()?;
    let clock = if gbm.is_some() { TimeChange::Identity } else { parse_clock(&a.clock)? };
    let paths: Vec<SampledPath> = (0..a.paths as u64)
        .into_par_iter()
        .map(|i| match gbm {
            Some(sigma) => gen_geometric_brownian(a.seed + i, a.horizon, a.dt, a.start, sigma),
            None => gen_time_changed_brownian(a.seed + i, &clock, a.horizon, a.dt, a.start),
        })
        .collect::<crate::Result<_>>()?;
    let ensemble = if a.raw {
        paths.iter().map(|p| crate::timechange::TimeChangedPath::identity(p, a.grid_ds)).collect::<crate::Result<Vec<_>>>()?
    } else {
        normalize_ensemble(&paths, a.grid_ds, a.clock_level)?
    };
    let suite = emergence_suite(&ensemble, &ds_list, a.level, EmergenceThresholds::default())?;
    let hits = PathEvent::HitsABeforeB { a: hit[0], b: hit[1] };
    let above = PathEvent::AboveLevelAt { s: ds_list[0].max(0.5), x: a.start };
    let events = json!({
        "hits_a_before_b": to_value(&event_frequency(&ensemble, hits, a.start).ok())?,
        "above_level_at": to_value(&event_frequency(&ensemble, above, a.start).ok())?,
    });
    let tight = match a.alpha {
        Some(alpha) => Some(tightness_check(&ensemble, alpha, TightnessMode::Modulus230)?),
        None => None,
    };
    let pass = suite.pass && tight.as_ref().map_or(true, |t| t.pass);
    let summary = json!({
        "command": "emergence",
        "paths": a.paths,
        "seed": a.seed,
        "pass": pass,
        "variance_ratio": suite.per_ds.iter().map(|r| r.variance_ratio).collect::<Vec<_>>(),
        "rejection_rate": suite.per_ds.iter().map(|r| r.rejection_rate).collect::<Vec<_>>(),
        "out": out_name(&a.out),
    });
    if let Some(p) = &a.out {
        let report = json!({
            "scope": "distribution tests cover the lower side; upper bounds need witness strategies per event",
            "seed": a.seed,
            "clock": a.clock,
            "dt": a.dt,
            "horizon": a.horizon,
            "normalized": !a.raw,
            "a_end": ensemble.iter().map(|t| t.a_end).collect::<Vec<_>>(),
            "suite": to_value(&suite)?,
            "events": events,
            "tightness": to_value(&tight)?,
            "pass": pass,
        });
        write_json(p, report, stamp)?;
    }
    Ok(Outcome { summary, check_failed: !pass })
}

fn collect_passes(v: &Value, failed: &mut Vec<String>, at: &str) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                if k == "pass" && *x == Value::Bool(false) {
                    failed.push(here.clone());
                }
                collect_passes(x, failed, &here);
            }
        }
        Value::Array(xs) => {
            for (i, x) in xs.iter().enumerate() {
                collect_passes(x, failed, &format!("{at}[{i}]"));
            }
        }
        _ => {}
    }
}

fn report(a: ReportArgs, stamp: bool) -> CliResult<Outcome> {
    let mut merged = serde_json::Map::new();
    let mut failed = Vec::new();
    for p in &a.inputs {
        let text = std::fs::read_to_string(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
        if let Value::Object(m) = &mut v {
            m.remove("timestamp");
        }
        let name = p.display().to_string();
        collect_passes(&v, &mut failed, &name);
        merged.insert(name, v);
    }
    let pass = failed.is_empty();
    if let Some(p) = &a.out {
        write_json(p, json!({"reports": merged, "failed_checks": failed, "pass": pass}), stamp)?;
    }
    Ok(Outcome {
        summary: json!({
            "command": "report",
            "reports": a.inputs.len(),
            "failed_checks": failed,
            "pass": pass,
            "out": out_name(&a.out),
        }),
        check_failed: !pass,
    })
}
