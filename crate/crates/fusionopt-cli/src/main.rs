//! Command-line front end: generate instances, compute certified bounds,
//! run approximation pipelines, probe fixings, solve exactly, and time the
//! stages.
//!
//! Every command emits a single JSON report. All fields are deterministic
//! for a fixed build and inputs except the top-level `timestamp_ms` and
//! `wall_time_ms`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fusionopt::approx::{run_approx, ApproxError, ApproxReport};
use fusionopt::exact::{
    root_probe, solve_bnb, BnbConfig, BnbResult, ExactError, RootProbe,
};
use fusionopt::instance::{
    gen_pmu, gen_random, load, read_matrix_csv, save_with_meta, DdfInstance, InstanceError,
};
use fusionopt::linalg::SymMatrix;
use fusionopt::relax::{compute_bounds, BoundReport, FwOptions, RelaxError};

/// Certified data-fusion selection: choose `s` of `n` rank-one updates to
/// maximize the log-determinant of an information matrix.
#[derive(Parser)]
#[command(name = "fusionopt", version, max_term_width = 100)]
struct Cli {
    /// Worker threads (overrides the FUSIONOPT_THREADS environment
    /// variable; 0 or unset picks the hardware default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Verbose logging to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance to a JSON file.
    Generate(GenerateArgs),
    /// Run the certified-bound sweep over the three relaxations.
    Bounds(BoundsArgs),
    /// Run greedy, local search, sampling, and derandomization.
    Approx(ApproxArgs),
    /// Price variable fixings and pair cuts at the root relaxation.
    Probe(ProbeArgs),
    /// Solve exactly by branch-and-bound.
    Solve(SolveArgs),
    /// Time the pipeline stages on one instance.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenerateKind {
    /// Dense Gaussian candidates against a random well-conditioned base.
    Random,
    /// Unit-vector candidates scaled by per-channel noise levels.
    Pmu,
}

#[derive(Args)]
struct GenerateArgs {
    /// Destination instance file.
    out: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    kind: GenerateKind,
    /// Row and column count of the base matrix.
    #[arg(short, long, required_if_eq("kind", "random"))]
    d: Option<usize>,
    /// Candidate count.
    #[arg(short, long, required_if_eq("kind", "random"))]
    n: Option<usize>,
    /// Selection budget.
    #[arg(short, long)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base matrix CSV for the pmu kind.
    #[arg(long, required_if_eq("kind", "pmu"))]
    base_c: Option<PathBuf>,
    /// Comma-separated noise levels for the pmu kind, one per channel.
    #[arg(long, required_if_eq("kind", "pmu"), value_delimiter = ',')]
    sigma: Vec<f64>,
}

#[derive(Args)]
struct BoundsArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct ApproxArgs {
    instance: PathBuf,
    /// Sampled selections to draw.
    #[arg(long, default_value_t = 256)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
}

#[derive(Args)]
struct ProbeArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    time_limit_ms: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    root_iters: usize,
    #[arg(long, default_value_t = 200)]
    node_iters: usize,
    /// Disable gradient cuts.
    #[arg(long)]
    no_grad_cuts: bool,
    /// Disable submodular cuts.
    #[arg(long)]
    no_submod_cuts: bool,
    /// Disable probing and optimality-based fixing.
    #[arg(long)]
    no_opt_cuts: bool,
}

#[derive(Args)]
struct BenchArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 3)]
    reps: usize,
}

// ── Reports ─────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct InstanceSummary {
    d: usize,
    n: usize,
    s: usize,
    logdet_c: f64,
    sigma_max: f64,
}

impl InstanceSummary {
    fn of(inst: &DdfInstance) -> Self {
        InstanceSummary {
            d: inst.d(),
            n: inst.n(),
            s: inst.s(),
            logdet_c: inst.logdet_c(),
            sigma_max: inst.sigma_max(),
        }
    }
}

#[derive(Serialize)]
struct RunReport<T: Serialize> {
    command: &'static str,
    version: &'static str,
    /// Milliseconds since the Unix epoch; non-deterministic.
    timestamp_ms: u128,
    /// Elapsed wall time; non-deterministic.
    wall_time_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    instance: Option<InstanceSummary>,
    payload: T,
}

#[derive(Serialize)]
struct GeneratePayload {
    path: String,
    kind: &'static str,
    d: usize,
    n: usize,
    s: usize,
    seed: u64,
}

#[derive(Serialize)]
struct BenchStage {
    name: &'static str,
    mean_ms: f64,
    min_ms: f64,
    max_ms: f64,
}

#[derive(Serialize)]
struct BenchPayload {
    reps: usize,
    stages: Vec<BenchStage>,
}

// ── Error mapping ───────────────────────────────────────────────────────────

enum CliError {
    /// Bad input or arguments: exit code 2.
    Input(String),
    /// Failure while computing: exit code 1.
    Run(String),
    /// Finished but without proving optimality: exit code 1.
    Unsolved,
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        match e {
            InstanceError::Numerical(_) | InstanceError::Linalg(_) => CliError::Run(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<RelaxError> for CliError {
    fn from(e: RelaxError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<ApproxError> for CliError {
    fn from(e: ApproxError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<ExactError> for CliError {
    fn from(e: ExactError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::from_default_env();
    if cli.verbose {
        logger.filter_level(log::LevelFilter::Debug);
    }
    let _ = logger.try_init();
    setup_threads(cli.threads);

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Unsolved) => {
            log::warn!("finished without proving optimality");
            ExitCode::from(1)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn setup_threads(flag: Option<usize>) {
    let requested = flag.or_else(|| {
        std::env::var("FUSIONOPT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    #[cfg(feature = "parallel")]
    if let Some(k) = requested {
        if k > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                log::warn!("thread pool already initialized: {e}");
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    if let Some(k) = requested {
        if k > 1 {
            log::warn!("built without the parallel feature; running single-threaded");
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(cli, a),
        Command::Bounds(a) => cmd_bounds(cli, a),
        Command::Approx(a) => cmd_approx(cli, a),
        Command::Probe(a) => cmd_probe(cli, a),
        Command::Solve(a) => cmd_solve(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
    }
}

fn load_instance(path: &Path) -> Result<DdfInstance, CliError> {
    load(path).map_err(CliError::from)
}

fn emit<T: Serialize>(
    cli: &Cli,
    command: &'static str,
    instance: Option<InstanceSummary>,
    payload: T,
    started: Instant,
) -> Result<(), CliError> {
    let report = RunReport {
        command,
        version: env!("CARGO_PKG_VERSION"),
        timestamp_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        wall_time_ms: started.elapsed().as_millis() as u64,
        instance,
        payload,
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Run(format!("serializing report: {e}")))?;
    match &cli.output {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            if let Err(e) = writeln!(out, "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let (inst, kind) = match a.kind {
        GenerateKind::Random => {
            let d = a.d.expect("required by clap");
            let n = a.n.expect("required by clap");
            (gen_random(d, n, a.s, a.seed)?, "random")
        }
        GenerateKind::Pmu => {
            let path = a.base_c.as_ref().expect("required by clap");
            let (rows, cols, data) = read_matrix_csv(path)?;
            if rows != cols {
                return Err(CliError::Input(format!(
                    "base matrix must be square, got {rows}x{cols}"
                )));
            }
            let c = SymMatrix::new(rows, &data)
                .map_err(|e| CliError::Input(format!("base matrix: {e}")))?;
            (gen_pmu(c, &a.sigma, a.s)?, "pmu")
        }
    };
    let meta = serde_json::json!({ "kind": kind, "seed": a.seed });
    save_with_meta(&inst, &a.out, Some(meta))?;
    let payload = GeneratePayload {
        path: a.out.display().to_string(),
        kind,
        d: inst.d(),
        n: inst.n(),
        s: inst.s(),
        seed: a.seed,
    };
    emit(cli, "generate", Some(InstanceSummary::of(&inst)), payload, t0)
}

fn cmd_bounds(cli: &Cli, a: &BoundsArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let inst = load_instance(&a.instance)?;
    let opts = FwOptions { max_iters: a.iters, tol: a.tol };
    let report: BoundReport = compute_bounds(&inst, &opts)?;
    emit(cli, "bounds", Some(InstanceSummary::of(&inst)), report, t0)
}

fn cmd_approx(cli: &Cli, a: &ApproxArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let inst = load_instance(&a.instance)?;
    let opts = FwOptions { max_iters: a.iters, ..FwOptions::default() };
    let report: ApproxReport = run_approx(&inst, a.draws, a.seed, &opts)?;
    emit(cli, "approx", Some(InstanceSummary::of(&inst)), report, t0)
}

fn cmd_probe(cli: &Cli, a: &ProbeArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let inst = load_instance(&a.instance)?;
    let report: RootProbe = root_probe(&inst, a.iters)?;
    emit(cli, "probe", Some(InstanceSummary::of(&inst)), report, t0)
}

fn cmd_solve(cli: &Cli, a: &SolveArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let inst = load_instance(&a.instance)?;
    let cfg = BnbConfig {
        gap_tol: a.gap_tol,
        max_nodes: a.max_nodes,
        time_limit_ms: a.time_limit_ms,
        root_fw_iters: a.root_iters,
        node_fw_iters: a.node_iters,
        grad_cuts: !a.no_grad_cuts,
        submod_cuts: !a.no_submod_cuts,
        opt_cuts: !a.no_opt_cuts,
    };
    let mut result: BnbResult = solve_bnb(&inst, &cfg)?;
    // Wall time lives at the report's top level; keep the payload
    // deterministic.
    result.wall_time_ms = 0;
    let solved = result.solved;
    emit(cli, "solve", Some(InstanceSummary::of(&inst)), result, t0)?;
    if solved {
        Ok(())
    } else {
        Err(CliError::Unsolved)
    }
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let inst = load_instance(&a.instance)?;
    if a.reps == 0 {
        return Err(CliError::Input("reps must be at least 1".to_string()));
    }
    let mut stages = Vec::new();
    let record = |name: &'static str, mut f: Box<dyn FnMut() -> Result<(), CliError> + '_>|
     -> Result<BenchStage, CliError> {
        let mut times = Vec::with_capacity(a.reps);
        for _ in 0..a.reps {
            let t = Instant::now();
            f()?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let sum: f64 = times.iter().sum();
        Ok(BenchStage {
            name,
            mean_ms: sum / times.len() as f64,
            min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    };
    let opts = FwOptions::default();
    stages.push(record(
        "bounds",
        Box::new(|| compute_bounds(&inst, &opts).map(|_| ()).map_err(CliError::from)),
    )?);
    stages.push(record(
        "approx",
        Box::new(|| run_approx(&inst, 64, 0, &opts).map(|_| ()).map_err(CliError::from)),
    )?);
    stages.push(record(
        "solve",
        Box::new(|| {
            solve_bnb(&inst, &BnbConfig::default())
                .map(|_| ())
                .map_err(CliError::from)
        }),
    )?);
    let payload = BenchPayload { reps: a.reps, stages };
    emit(cli, "bench", Some(InstanceSummary::of(&inst)), payload, t0)
}
