//! Command-line surface: reproducible experiments over the library,
//! emitting machine-readable results and plot-ready tables.

mod cmd;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Process exit codes: 0 success, 1 other failures, 2 configuration,
/// 3 data, 4 verification, 5 divergence.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Verification(String),
    Divergence(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Divergence(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Data(m)
            | CliError::Verification(m)
            | CliError::Divergence(m)
            | CliError::Other(m) => m,
        }
    }
}

impl From<scorekit::Error> for CliError {
    fn from(e: scorekit::Error) -> Self {
        use scorekit::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidInput(_) | E::InfeasibleTarget { .. } | E::InvalidPair { .. } => {
                CliError::Config(msg)
            }
            E::Format { .. } | E::Degenerate => CliError::Data(msg),
            E::DivergentRegime { .. } | E::DivergedChain { .. } | E::TrainingDiverged { .. } => {
                CliError::Divergence(msg)
            }
            E::Io(_) => CliError::Other(msg),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "scorekit",
    version,
    about = "Score-model configuration, sampling, and verification experiments"
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed from the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads: 0 keeps the default pool, 1 forces sequential
    /// execution. Results are identical either way.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a noise schedule and its step-size table.
    Schedule,
    /// Run verification batteries and emit a JSON report.
    Verify {
        /// Battery: coupling, concentration, variance-flow, or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Exact-score sampling study over point masses at the data rows,
    /// comparing wide and narrow schedules by pairwise distance.
    Fig2,
    /// Train the score network on the configured data.
    Train,
    /// Draw annealed Langevin samples from a model.
    Sample,
    /// Blend two recorded noise tapes and replay the interior chains.
    Interpolate,
    /// Pairwise-distance statistics of the configured data.
    Stats,
}

fn apply_threads(threads: usize) -> Result<(), CliError> {
    match threads {
        0 => Ok(()),
        1 => {
            scorekit::exec::set_sequential(true);
            Ok(())
        }
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}"))),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    apply_threads(cli.threads)?;
    if let Command::Verify { suite } = &cli.command {
        return cmd::verify_cmd(suite, cli.seed.unwrap_or(0), cli.out.as_deref());
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".to_string()))?;
    let cfg = config::Config::load(config_path)?;
    let seed = cli.seed.unwrap_or(cfg.experiment.seed);
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| CliError::Config("--out is required for this command".to_string()))?;

    match &cli.command {
        Command::Schedule => cmd::schedule_cmd(&cfg, seed, out),
        Command::Fig2 => cmd::fig2_cmd(&cfg, seed, out),
        Command::Train => cmd::train_cmd(&cfg, seed, out),
        Command::Sample => cmd::sample_cmd(&cfg, seed, out),
        Command::Interpolate => cmd::interpolate_cmd(&cfg, seed, out),
        Command::Stats => cmd::stats_cmd(&cfg, seed, out),
        Command::Verify { .. } => unreachable!("handled above"),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
