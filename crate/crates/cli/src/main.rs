use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddss::data::{parse_libsvm, BlockPartition, SparseDataset};
use ddss::dist::{self, DistOptions, Schedule, TransportKind};
use ddss::model::{lambda_max, LossFamily, ModelSpec, Regularizer};
use ddss::solver::{self, oracle_check, OracleOptions, SolverConfig, SolverOutput};
use ddss::speedup::{rows_from_traces, write_speedup_csv, DEFAULT_TARGET_GAP};
use ddss::synth::{gen_synthetic, write_libsvm, Sidecar, SynthSpec};
use ddss::trace::{check_trace, read_trace, write_trace, RunSummary};
use ddss::{shared, Problem};

#[derive(Parser)]
#[command(name = "ddss", version, about = "Sparse composite solvers with dynamic safe screening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write its convergence trace.
    Run(RunArgs),
    /// Serve as a worker for a `run --backend dist --listen` server.
    Worker(WorkerArgs),
    /// Write a synthetic LIBSVM instance and a JSON sidecar with its ground truth.
    Gen(GenArgs),
    /// Tabulate time to a target gap from traces of runs with different worker counts.
    Speedup(SpeedupArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Lasso,
    Logistic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Seq,
    SeqNaive,
    SeqSvrg,
    Oracle,
    Shared,
    SharedNaive,
    Dist,
    DistNaive,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Loopback,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Sync,
    Async,
}

/// Flags that define the problem and step plan; server and workers must agree on them.
#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    data: PathBuf,
    /// Override dimensions as `n,p`.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long, value_enum, default_value = "lasso")]
    model: ModelKind,
    /// `l1`, `group:B` for equal blocks of size B, or `group:@FILE`.
    #[arg(long, default_value = "l1")]
    reg: String,
    /// lambda as a fraction of lambda_max.
    #[arg(long, conflicts_with = "lambda_abs")]
    lambda_ratio: Option<f64>,
    #[arg(long)]
    lambda_abs: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long)]
    inner: Option<usize>,
    /// A positive step size or `auto`.
    #[arg(long, default_value = "auto")]
    step: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    unsafe_screen_ridge: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "seq")]
    backend: BackendKind,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "loopback")]
    transport: TransportArg,
    /// Accept external workers at this address instead of spawning them.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, value_enum, default_value = "sync")]
    schedule: ScheduleArg,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Solve to gap 1e-12 with a reference solver and compare.
    #[arg(long)]
    oracle_check: bool,
}

#[derive(Args)]
struct WorkerArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    connect: String,
    #[arg(long)]
    worker_id: usize,
    #[arg(long)]
    workers: usize,
    /// Send raw gradients for a `dist-naive` server.
    #[arg(long)]
    naive: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 10)]
    k_true: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    unit_rows: bool,
    /// LIBSVM output; the sidecar goes to the same path with `.json` appended.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpeedupArgs {
    /// `WORKERS=PATH`, baseline first.
    #[arg(long = "trace", required = true)]
    traces: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TARGET_GAP)]
    target_gap: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Solver(ddss::Error),
}

impl From<ddss::Error> for Failure {
    fn from(e: ddss::Error) -> Self {
        Failure::Solver(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Worker(args) => worker(args),
        Command::Gen(args) => gen(args),
        Command::Speedup(args) => speedup(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize), Failure> {
    let (n, p) = s.split_once(',').ok_or_else(|| usage(format!("--dims expects n,p, got {s:?}")))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad dimension {v:?}")));
    Ok((parse(n)?, parse(p)?))
}

fn parse_reg(spec: &str, p: usize) -> Result<(Regularizer, BlockPartition), Failure> {
    if spec == "l1" {
        return Ok((Regularizer::L1, BlockPartition::singletons(p)));
    }
    let rest = spec.strip_prefix("group:").ok_or_else(|| usage(format!("unknown regularizer {spec:?}")))?;
    let partition = if let Some(path) = rest.strip_prefix('@') {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read group file {path}: {e}")))?;
        let mut blocks = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let block = line
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| usage(format!("{path}:{}: {e}", no + 1)))?;
            blocks.push(block);
        }
        BlockPartition::new(p, blocks).map_err(|e| usage(e.to_string()))?
    } else {
        let size = rest.parse::<usize>().map_err(|_| usage(format!("bad group size {rest:?}")))?;
        BlockPartition::equal(p, size).map_err(|e| usage(e.to_string()))?
    };
    Ok((Regularizer::GroupL2, partition))
}

fn load_data(args: &ModelArgs) -> Result<SparseDataset, Failure> {
    let dims = args.dims.as_deref().map(parse_dims).transpose()?;
    let file = File::open(&args.data).map_err(|e| usage(format!("cannot open {}: {e}", args.data.display())))?;
    Ok(parse_libsvm(BufReader::new(file), dims)?)
}

struct Setup {
    problem: Problem,
    lambda_max: f64,
    cfg: SolverConfig,
}

fn setup(args: &ModelArgs, tau: usize) -> Result<Setup, Failure> {
    let data = load_data(args)?;
    let loss = match args.model {
        ModelKind::Lasso => LossFamily::Squared,
        ModelKind::Logistic => LossFamily::Logistic,
    };
    let (reg, partition) = parse_reg(&args.reg, data.p())?;
    let lmax = lambda_max(loss, reg, &partition, &data);
    let lambda = match (args.lambda_ratio, args.lambda_abs) {
        (Some(r), None) if r > 0.0 => r * lmax,
        (None, Some(l)) if l > 0.0 => l,
        (None, None) => return Err(usage("one of --lambda-ratio or --lambda-abs is required")),
        _ => return Err(usage("lambda must be positive")),
    };
    if !(args.ridge >= 0.0) {
        return Err(usage("--ridge must be non-negative"));
    }
    let spec = ModelSpec::new(loss, reg, lambda, args.ridge, partition).map_err(|e| usage(e.to_string()))?;
    let eta = match args.step.as_str() {
        "auto" => None,
        s => match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Some(v),
            _ => return Err(usage(format!("--step expects a positive number or auto, got {s:?}"))),
        },
    };
    if args.epochs == 0 {
        return Err(usage("--epochs must be at least 1"));
    }
    if args.inner == Some(0) {
        return Err(usage("--inner must be at least 1"));
    }
    let cfg = SolverConfig {
        eta,
        inner: args.inner,
        epochs: args.epochs,
        seed: args.seed,
        tau_assumed: tau as f64,
        unsafe_screen_ridge: args.unsafe_screen_ridge,
        ..SolverConfig::default()
    };
    Ok(Setup { problem: Problem::new(spec, data)?, lambda_max: lmax, cfg })
}

fn backend_name(b: BackendKind) -> &'static str {
    match b {
        BackendKind::Seq => "seq",
        BackendKind::SeqNaive => "seq-naive",
        BackendKind::SeqSvrg => "seq-svrg",
        BackendKind::Oracle => "oracle",
        BackendKind::Shared => "shared",
        BackendKind::SharedNaive => "shared-naive",
        BackendKind::Dist => "dist",
        BackendKind::DistNaive => "dist-naive",
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    if args.threads == 0 || args.workers == 0 {
        return Err(usage("--threads and --workers must be at least 1"));
    }
    let tau = match args.backend {
        BackendKind::Shared | BackendKind::SharedNaive => args.threads,
        BackendKind::Dist | BackendKind::DistNaive => args.workers,
        _ => 0,
    };
    let Setup { problem, lambda_max, cfg } = setup(&args.model, tau)?;
    let is_dist = matches!(args.backend, BackendKind::Dist | BackendKind::DistNaive);
    if args.listen.is_some() && !is_dist {
        return Err(usage("--listen needs a dist backend"));
    }
    if is_dist && args.workers > problem.n() {
        return Err(usage(format!("--workers {} exceeds the {} samples", args.workers, problem.n())));
    }
    let clock = Instant::now();
    let out = match args.backend {
        BackendKind::Seq => solver::ddss_sequential(&problem, &cfg)?,
        BackendKind::SeqNaive => solver::ddss_naive_sequential(&problem, &cfg)?,
        BackendKind::SeqSvrg => solver::prox_svrg(&problem, &cfg)?,
        BackendKind::Oracle => oracle_output(&problem, &cfg)?,
        BackendKind::Shared => shared::sha_ddss_run(&problem, &cfg, args.threads)?,
        BackendKind::SharedNaive => shared::sha_naive_run(&problem, &cfg, args.threads)?,
        BackendKind::Dist | BackendKind::DistNaive => {
            let mode = if args.backend == BackendKind::Dist { solver::Mode::Ddss } else { solver::Mode::Naive };
            let schedule = match args.schedule {
                ScheduleArg::Sync => Schedule::Sync,
                ScheduleArg::Async => Schedule::Async,
            };
            match &args.listen {
                Some(addr) => {
                    let listener = TcpListener::bind(addr)?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    let links = dist::tcp_accept(&listener, args.workers, dist::frame_block_sizes(&problem))?;
                    dist::serve(&problem, &SolverConfig { mode, ..cfg.clone() }, links, schedule)?
                }
                None => {
                    let transport = match args.transport {
                        TransportArg::Loopback => TransportKind::Loopback,
                        TransportArg::Tcp => TransportKind::Tcp,
                    };
                    let opts = DistOptions { workers: args.workers, transport, schedule };
                    match mode {
                        solver::Mode::Ddss => dist::dist_ddss_run(&problem, &cfg, opts)?,
                        _ => dist::dist_naive_run(&problem, &cfg, opts)?,
                    }
                }
            }
        }
    };
    let total = clock.elapsed().as_secs_f64();
    check_trace(&out.trace)?;
    if let Some(path) = &args.trace_out {
        write_trace(BufWriter::new(File::create(path)?), &out.trace)?;
    }
    let oracle = if args.oracle_check { Some(oracle_check(&problem, &out)?) } else { None };
    let last = out.trace.last();
    let summary = RunSummary {
        backend: backend_name(args.backend).to_string(),
        lambda: problem.spec().lambda,
        lambda_max,
        eta: out.plan.eta,
        inner: out.plan.inner,
        epochs_run: last.map_or(0, |r| r.epoch),
        final_objective: out.final_objective,
        final_gap: out.final_gap,
        total_time_s: total,
        survivors: out.final_active.clone(),
        active_features: out.final_active.iter().map(|&b| problem.spec().partition.block(b).len()).sum(),
        nnz_coefficients: out.x.iter().filter(|v| **v != 0.0).count(),
        coordinate_touches: last.map_or(0, |r| r.coordinate_touches),
        max_staleness: out.trace.iter().map(|r| r.staleness).max().unwrap_or(0),
        speedup: None,
        oracle,
    };
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for r in &out.trace {
        writeln!(
            w,
            "epoch {:>4}  objective {:.12e}  gap {:.3e}  active {:>6}  touches {}",
            r.epoch, r.objective, r.duality_gap, r.active_features, r.coordinate_touches
        )?;
    }
    writeln!(w, "{}", serde_json::to_string(&summary).map_err(ddss::Error::from)?)?;
    Ok(())
}

/// A reference solve presented as a one-epoch run.
fn oracle_output(problem: &Problem, cfg: &SolverConfig) -> Result<SolverOutput, Failure> {
    let clock = Instant::now();
    let sol = solver::oracle_solve(problem.spec(), problem.data(), &OracleOptions::default())?;
    let part = &problem.spec().partition;
    let final_active: Vec<usize> = (0..part.len()).filter(|&b| part.block(b).iter().any(|&j| sol.x[j] != 0.0)).collect();
    let elapsed = clock.elapsed().as_secs_f64();
    let nnz = sol.x.iter().filter(|v| **v != 0.0).count();
    let trace = vec![ddss::trace::TraceRecord {
        epoch: 1,
        wall_time_s: elapsed,
        objective: sol.objective,
        duality_gap: sol.gap,
        active_blocks: final_active.len(),
        active_features: final_active.iter().map(|&b| part.block(b).len()).sum(),
        nnz_coefficients: nnz,
        coordinate_touches: sol.iterations * problem.p() as u64,
        staleness: 0,
    }];
    Ok(SolverOutput {
        x: sol.x,
        trace,
        reports: Vec::new(),
        final_active,
        final_objective: sol.objective,
        final_gap: sol.gap,
        plan: cfg.step_plan(problem)?,
        iterates: Vec::new(),
        touch_violations: 0,
        epoch_violations: 0,
        total_time_s: elapsed,
    })
}

fn worker(args: WorkerArgs) -> Result<(), Failure> {
    if args.workers == 0 || args.worker_id >= args.workers {
        return Err(usage("--worker-id must be below --workers"));
    }
    let Setup { problem, cfg, .. } = setup(&args.model, args.workers)?;
    let mode = if args.naive { solver::Mode::Naive } else { solver::Mode::Ddss };
    let cfg = SolverConfig { mode, ..cfg };
    let link = dist::tcp_connect(args.connect.as_str(), args.worker_id, args.workers, dist::frame_block_sizes(&problem))?;
    dist::run_worker(&problem, &cfg, args.worker_id, args.workers, link)?;
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        n: args.n,
        p: args.p,
        density: args.density,
        k_true: args.k_true,
        noise: args.noise,
        seed: args.seed,
        unit_rows: args.unit_rows,
    };
    let synth = gen_synthetic(&spec).map_err(|e| usage(e.to_string()))?;
    write_libsvm(BufWriter::new(File::create(&args.out)?), &synth.data)?;
    let sidecar = Sidecar { spec, support: synth.support, x_true: synth.x_true };
    let side = sidecar_path(&args.out);
    serde_json::to_writer_pretty(BufWriter::new(File::create(&side)?), &sidecar).map_err(ddss::Error::from)?;
    println!("{}", serde_json::json!({ "data": args.out, "sidecar": side, "nnz": synth.data.nnz() }));
    Ok(())
}

fn speedup(args: SpeedupArgs) -> Result<(), Failure> {
    let mut runs = Vec::with_capacity(args.traces.len());
    for t in &args.traces {
        let (w, path) = t.split_once('=').ok_or_else(|| usage(format!("--trace expects WORKERS=PATH, got {t:?}")))?;
        let w = w.parse::<usize>().map_err(|_| usage(format!("bad worker count {w:?}")))?;
        let trace = read_trace(File::open(path).map_err(|e| usage(format!("cannot open {path}: {e}")))?)?;
        runs.push((w, trace));
    }
    let rows = rows_from_traces(&runs, args.target_gap)?;
    match &args.out {
        Some(path) => write_speedup_csv(BufWriter::new(File::create(path)?), &rows)?,
        None => write_speedup_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}
