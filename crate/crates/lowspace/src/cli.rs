//! Command-line driver: `solve`, `verify` and `bench`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::agsp::Case;
use crate::error::{Error, Result};
use crate::hamiltonian::{build_model, LocalHamiltonian, ModelParams};
use crate::solver::{low_space, RunReport, SolveConfig};
use crate::verify::{run_suite, SUITES};

pub const SCHEMA: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RESOURCE: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lowspace", version, about = "Low-energy subspaces of 1D local Hamiltonians")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the solver on one chain and write a JSON report.
    Solve(SolveArgs),
    /// Run a self-check suite against the dense oracle.
    Verify(VerifyArgs),
    /// Time the solver over several chain lengths and write CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    Ff,
    Dg,
    Ld,
}

impl From<CaseArg> for Case {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Ff => Case::Ff,
            CaseArg::Dg => Case::Dg,
            CaseArg::Ld => Case::Ld,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    /// Catalog model (pinned, aklt, tfi, heisenberg) or `custom`.
    #[arg(long, default_value = "pinned")]
    pub model: String,
    /// JSON file with the terms of a custom model.
    #[arg(long)]
    pub terms: Option<PathBuf>,
    /// Model parameter as `key=value`, repeatable (e.g. `g=1.5`).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
}

#[derive(Clone, Debug, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "ff")]
    pub case: CaseArg,
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    /// Spectral gap hint.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Ground-space degeneracy hint.
    #[arg(long)]
    pub r: Option<usize>,
    /// Energy window width for the windowed case.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Window margin for the windowed case.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub s_cap: Option<usize>,
    #[arg(long)]
    pub k_inner: Option<usize>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Bond cap for state families.
    #[arg(long)]
    pub max_bond: Option<usize>,
    /// Bond cap for the filter operators.
    #[arg(long)]
    pub agsp_bond: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the asymptotic constants for subspace size and repetitions.
    #[arg(long)]
    pub asymptotic_constants: bool,
    /// Largest state dimension for which the dense oracle runs.
    #[arg(long)]
    pub dense_limit: Option<usize>,
    /// Largest number of tensor entries one applied state family may hold.
    #[arg(long)]
    pub entry_budget: Option<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub suite: String,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Chain lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub ns: Vec<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Worker count from `LOWSPACE_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("LOWSPACE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()))
}

fn parse_params(raw: &[String]) -> Result<ModelParams> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parameter(format!("model parameter '{kv}' is not key=value")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn load_model(args: &ModelArgs, n: Option<usize>) -> Result<LocalHamiltonian> {
    if args.model == "custom" {
        let path = args.terms.as_ref().ok_or_else(|| Error::Parameter("--model custom needs --terms <file>".into()))?;
        let h = LocalHamiltonian::load(path)?;
        if let Some(n) = n {
            if n != h.n() {
                return Err(Error::Parameter(format!("--n {n} does not match the {} sites in {}", h.n(), path.display())));
            }
        }
        return Ok(h);
    }
    if args.terms.is_some() {
        return Err(Error::Parameter("--terms is only used with --model custom".into()));
    }
    let n = n.ok_or_else(|| Error::Parameter("--n is required for catalog models".into()))?;
    build_model(&args.model, n, &parse_params(&args.params)?)
}

pub fn solve_config(args: &SolverArgs) -> Result<SolveConfig> {
    let mut cfg = SolveConfig { case: args.case.into(), delta: args.delta, seed: args.seed, ..SolveConfig::default() };
    cfg.gamma = args.gamma;
    cfg.degeneracy = args.r;
    cfg.window = match (args.eta, args.mu) {
        (Some(eta), Some(mu)) => Some((eta, mu)),
        (None, None) => None,
        _ => return Err(Error::Parameter("--eta and --mu must be given together".into())),
    };
    cfg.s_cap = args.s_cap;
    if let Some(k) = args.k_inner {
        cfg.k_inner = k;
    }
    if let Some(xi) = args.xi {
        cfg.xi = xi;
    }
    if let Some(b) = args.max_bond {
        cfg.max_bond = b;
    }
    if let Some(b) = args.agsp_bond {
        cfg.agsp.max_bond = b;
    }
    if let Some(limit) = args.dense_limit {
        cfg.dense_limit = limit;
    }
    if let Some(budget) = args.entry_budget {
        cfg.entry_budget = budget;
    }
    cfg.asymptotic_constants = args.asymptotic_constants;
    cfg.threads = thread_count();
    Ok(cfg)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Parameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn emit(out: Option<&Path>, contents: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents)?;
            Ok(stdout.flush()?)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::Resource(_) => EXIT_RESOURCE,
        Error::Parameter(_) | Error::Dimension(_) | Error::Contract(_) | Error::Io(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Numeric(_) | Error::Unavailable(_) => EXIT_FAILED,
    }
}

fn solve_document(args: &SolveArgs, status: &str, error: Option<String>, energies: &[f64], report: &RunReport) -> serde_json::Value {
    json!({
        "schema": SCHEMA,
        "command": "solve",
        "model": {
            "name": args.model.model,
            "n": report.params.as_ref().map(|p| p.n).or(args.n),
            "terms": args.model.terms,
            "params": args.model.params,
        },
        "seed": args.solver.seed,
        "status": status,
        "error": error,
        "energies": energies,
        "final_overlap": report.oracle.as_ref().map(|o| o.overlap),
        "mutual_closeness": report.oracle.as_ref().map(|o| o.mutual_closeness),
        "report": report,
    })
}

pub fn run_solve(args: &SolveArgs) -> Result<i32> {
    let setup = load_model(&args.model, args.n).and_then(|h| solve_config(&args.solver).map(|cfg| (h, cfg)));
    let (h, cfg) = match setup {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    if let Err(e) = cfg.resolve(&h) {
        eprintln!("error: {e}");
        return Ok(EXIT_CONFIG);
    }
    match low_space(&h, &cfg) {
        Ok(sol) => {
            emit(args.out.as_deref(), &to_json(&solve_document(args, "ok", None, &sol.energies, &sol.report))?)?;
            Ok(EXIT_OK)
        }
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            let doc = solve_document(args, "error", Some(failure.error.to_string()), &[], &failure.report);
            emit(args.out.as_deref(), &to_json(&doc)?)?;
            Ok(match exit_for(&failure.error) {
                EXIT_CONFIG => EXIT_CONFIG,
                EXIT_RESOURCE => EXIT_RESOURCE,
                _ => EXIT_FAILED,
            })
        }
    }
}

pub fn run_verify(args: &VerifyArgs) -> Result<i32> {
    if !SUITES.contains(&args.suite.as_str()) {
        eprintln!("error: unknown suite '{}' (known: {})", args.suite, SUITES.join(", "));
        return Ok(EXIT_CONFIG);
    }
    let report = match run_suite(&args.suite, args.n, args.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit_for(&e));
        }
    };
    let doc = json!({ "schema": SCHEMA, "command": "verify", "failed": report.failed(), "result": report });
    emit(args.out.as_deref(), &to_json(&doc)?)?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("failed: {} (measured {:.3e}, bound {:.3e})", c.name, c.measured, c.bound);
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILED })
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub n: String,
    pub phase: String,
    pub seconds: f64,
    pub peak_bond: Option<usize>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn bench_rows(n: usize, report: &RunReport, total: f64) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for (phase, &secs) in &report.timings {
        if phase == "total" {
            continue;
        }
        let peak = if let Some(level) = phase.strip_prefix("level_").and_then(|l| l.parse::<usize>().ok()) {
            report.levels.get(level - 1).and_then(|blocks| blocks.iter().map(|b| b.max_bond).max())
        } else if phase == "refine" {
            report.refine.as_ref().map(|r| r.max_bond)
        } else {
            None
        };
        rows.push(BenchRow { n: n.to_string(), phase: phase.clone(), seconds: secs, peak_bond: peak });
    }
    let peak = report.levels.iter().flatten().map(|b| b.max_bond).chain(report.refine.as_ref().map(|r| r.max_bond)).max();
    rows.push(BenchRow { n: n.to_string(), phase: "total".into(), seconds: total, peak_bond: peak });
    rows
}

pub fn run_bench(args: &BenchArgs) -> Result<i32> {
    let cfg = match solve_config(&args.solver) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut totals = Vec::new();
    for &n in &args.ns {
        let h = match load_model(&args.model, Some(n)) {
            Ok(h) => h,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(EXIT_CONFIG);
            }
        };
        let started = Instant::now();
        let report = match low_space(&h, &cfg) {
            Ok(sol) => sol.report,
            Err(failure) => {
                eprintln!("error at n={n}: {}", failure.error);
                return Ok(if failure.error.is_resource() { EXIT_RESOURCE } else { EXIT_FAILED });
            }
        };
        let total = started.elapsed().as_secs_f64();
        totals.push((n as f64, total));
        for row in bench_rows(n, &report, total) {
            writer.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
    }
    if let Some(slope) = log_log_slope(&totals) {
        let row = BenchRow { n: "all".into(), phase: "growth_rate".into(), seconds: slope, peak_bond: None };
        writer.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    emit(args.out.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Verify(a) => run_verify(a),
        Command::Bench(a) => run_bench(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_for(&e)
    })
}
