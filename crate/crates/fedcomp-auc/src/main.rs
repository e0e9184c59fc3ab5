//! Command-line front end: experiment runs, derivative checks, and the
//! synthetic closed-form benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedcomp_auc::config::{run_experiment, ExperimentConfig};
use fedcomp_auc::fedsim::toy::{make_toy_problem, run_toy_federation, ToyFederationConfig};
use fedcomp_auc::gradcheck;
use fedcomp_auc::metrics::{trace_row, TRACE_HEADER};
use fedcomp_auc::optim::HyperParams;
use fedcomp_auc::Error;

/// Environment variable consulted for the worker-thread count when no
/// `--threads` flag is given. `0` means the library default.
const THREADS_ENV: &str = "FEDCOMP_THREADS";

#[derive(Parser)]
#[command(
    name = "fedcomp-auc",
    version,
    about = "Federated compositional minimax training for AUC maximization"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a federated experiment and write CSV traces.
    Run(RunArgs),
    /// Check every analytic derivative against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the synthetic quadratic benchmark with exact stationarity
    /// measurement.
    Toy(ToyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated algorithms (localscgdam, localsgdm, localsgdam, coda).
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    devices: Option<usize>,
    /// Iterations between averaging rounds.
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory for traces and the summary.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (0 = library default). Also settable via
    /// FEDCOMP_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall-clock times in traces (makes them machine-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    devices: usize,
    /// Iterations between averaging rounds.
    #[arg(long, default_value_t = 4)]
    period: usize,
    #[arg(long, default_value_t = 1600)]
    iterations: usize,
    #[arg(long, default_value_t = 40)]
    eval_every: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Seed for the problem instance and heterogeneity structure (kept
    /// separate so repeats share one landscape).
    #[arg(long, default_value_t = 101)]
    structure_seed: u64,
    #[arg(long, default_value_t = 0.05)]
    hetero: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_g: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_f: f64,
    #[arg(long)]
    threads: Option<usize>,
    /// Write the trace CSV here instead of a stdout summary.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_threads() -> Result<Option<usize>, Error> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))
            })?;
            Ok((n > 0).then_some(n))
        }
        Err(_) => Ok(None),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_toml_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(algo) = &args.algo {
        cfg.algos = algo.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(v) = args.devices {
        cfg.devices = v;
    }
    if let Some(v) = args.period {
        cfg.period = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = &args.out {
        cfg.out_dir = v.clone();
    }
    match args.threads {
        Some(v) => cfg.threads = v,
        None => {
            if let Some(n) = env_threads()? {
                cfg.threads = n;
            }
        }
    }
    if args.timing {
        cfg.timing = true;
    }

    let (train, test) = cfg.build_dataset()?;
    println!(
        "train: {} samples ({} positive, fraction {:.4}); test: {} samples ({} positive)",
        train.len(),
        train.positive_count(),
        train.positive_fraction(),
        test.len(),
        test.positive_count()
    );

    let summary = run_experiment(&cfg)?;
    for f in &summary.trace_files {
        println!("wrote {}", f.display());
    }
    for s in &summary.summaries {
        println!(
            "{}: final test AUC {:.6} +/- {:.6} over {} seed(s)",
            s.algo.name(),
            s.final_auc_mean,
            s.final_auc_std,
            s.seeds
        );
    }
    println!("summary: {}", summary.out_dir.join("summary.csv").display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Error> {
    let reports = gradcheck::run_all(args.seed);
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut failures = 0;
    for r in &reports {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}  {: <width$}  max rel err {:.3e}  (tolerance {:.1e})",
            r.name, r.max_rel_err, r.tolerance
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Config(format!(
            "{failures} derivative suite(s) failed"
        )));
    }
    println!("all {} derivative suites passed", reports.len());
    Ok(())
}

fn cmd_toy(args: ToyArgs) -> Result<(), Error> {
    let threads = match args.threads {
        Some(0) => None,
        Some(n) => Some(n),
        None => env_threads()?,
    };
    let cfg = ToyFederationConfig {
        dim: args.dim,
        devices: args.devices,
        total_iterations: args.iterations,
        eval_every: args.eval_every,
        master_seed: args.seed,
        structure_seed: args.structure_seed,
        hp: HyperParams {
            period: args.period,
            ..HyperParams::default()
        },
        hetero: args.hetero,
        noise_g: args.noise_g,
        noise_f: args.noise_f,
        threads,
        ..ToyFederationConfig::default()
    };
    let problem = make_toy_problem(cfg.dim, cfg.structure_seed)?;
    let run = run_toy_federation(&problem, &cfg)?;

    if let Some(path) = &args.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        let mut text = String::from(TRACE_HEADER);
        text.push('\n');
        for rec in &run.records {
            text.push_str(&trace_row(rec, args.seed));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("wrote {}", path.display());
    } else {
        for rec in &run.records {
            println!(
                "iteration {: >6}  round {: >5}  grad_norm_sq {:.6e}  consensus_gap {:.3e}",
                rec.iteration,
                rec.round,
                rec.grad_norm_sq.unwrap_or(f64::NAN),
                rec.consensus_gap
            );
        }
    }
    let last = run.records.last().expect("at least the final record");
    println!(
        "final squared gradient norm {:.6e} after {} iterations",
        last.grad_norm_sq.unwrap_or(f64::NAN),
        args.iterations
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
        Cmd::Toy(args) => cmd_toy(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
