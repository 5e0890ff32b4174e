//! `falkon` — train, predict, evaluate, and micro-benchmark from the shell.
//!
//! Subcommands print line-oriented `key=value` text; `--json` adds a single
//! JSON object on stdout. Usage errors exit with code 2, runtime errors with
//! code 1 and a diagnostic naming the failing phase.

mod bench;
mod run;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "falkon", version, about = "Nyström-preconditioned kernel solver")]
struct Cli {
    /// Also print a JSON report on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    #[value(name = "32")]
    F32,
    #[value(name = "64")]
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KernelKind {
    Gaussian,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LossKind {
    Squared,
    Logistic,
}

#[derive(Args)]
pub struct ComputeOpts {
    /// Host scratch budget per worker, in megabytes of working precision.
    #[arg(long, default_value_t = 256)]
    budget_mb: usize,
    /// Cooperating workers (the FALKON_WORKERS environment variable
    /// overrides this flag).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Working precision in bits.
    #[arg(long, value_enum, default_value = "64")]
    precision: Precision,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a dataset.
    Train {
        #[arg(long)]
        data: std::path::PathBuf,
        /// csv | fbin | libsvm
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long, value_enum, default_value = "gaussian")]
        kernel: KernelKind,
        /// Gaussian length-scale.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1e-6)]
        lambda: f64,
        /// Number of inducing points.
        #[arg(long, default_value_t = 100)]
        m: usize,
        /// CG iterations (squared loss) or per-step CG iterations (logistic).
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, value_enum, default_value = "squared")]
        loss: LossKind,
        /// Outer Newton steps for the logistic loss.
        #[arg(long, default_value_t = 9)]
        newton_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        compute: ComputeOpts,
        /// Output model path (FLKN format).
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Predict with a saved model; writes one prediction per line.
    Predict {
        #[arg(long)]
        model: std::path::PathBuf,
        #[arg(long)]
        data: std::path::PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        compute: ComputeOpts,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Evaluate a saved model on labeled data.
    Evaluate {
        #[arg(long)]
        model: std::path::PathBuf,
        #[arg(long)]
        data: std::path::PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        /// rmse | rel-rmse | c-error | one-minus-auc
        #[arg(long)]
        metric: String,
        #[command(flatten)]
        compute: ComputeOpts,
    },
    /// Linear-algebra and streaming micro-benchmarks.
    Bench {
        /// cholesky | lauum | mvm | pipeline
        kind: String,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 128)]
        tile: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 256)]
        budget_mb: usize,
    },
}

impl ComputeOpts {
    pub fn workers(&self) -> usize {
        std::env::var("FALKON_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(self.workers)
            .max(1)
    }

    /// Converts the megabyte budget into working-precision element counts.
    pub fn budget_elements(&self) -> usize {
        let bytes = self.budget_mb * (1 << 20);
        match self.precision {
            Precision::F32 => bytes / 4,
            Precision::F64 => bytes / 8,
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            data,
            format,
            kernel,
            sigma,
            lambda,
            m,
            iters,
            loss,
            newton_steps,
            seed,
            compute,
            out,
        } => run::train(run::TrainArgs {
            data,
            format,
            kernel,
            sigma,
            lambda,
            m,
            iters,
            loss,
            newton_steps,
            seed,
            compute,
            out,
            json: cli.json,
        }),
        Command::Predict {
            model,
            data,
            format,
            compute,
            out,
        } => run::predict_cmd(model, data, format, compute, out, cli.json),
        Command::Evaluate {
            model,
            data,
            format,
            metric,
            compute,
        } => run::evaluate(model, data, format, metric, compute, cli.json),
        Command::Bench {
            kind,
            size,
            tile,
            workers,
            budget_mb,
        } => bench::run(&kind, size, tile, workers, budget_mb, cli.json),
    }
}
