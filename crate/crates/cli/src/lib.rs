//! Command-line driver: `train`, `eval`, `gradcheck`, `contraction` and
//! `gen-synth`.
//!
//! Exit codes: 0 success, 1 verification failure (`gradcheck`, or a violated
//! bound in `contraction`), 2 configuration/data/I/O error, 3 numerical
//! failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] esrnn::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "esrnn", version, about = "ARMA RNN training under the echo-state constraint")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    pub config: Option<PathBuf>,

    /// Override a config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint and per-epoch CSV report.
    Train {
        #[command(flatten)]
        config: ConfigArgs,

        /// Run the clipping baseline once per threshold instead of a single run.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        thresholds: Vec<f64>,
    },
    /// Print the frame error of a checkpoint on a manifest's data.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare BPTT gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        n_hidden: usize,
        #[arg(long, default_value_t = 12)]
        t_len: usize,
        /// Seeds per (nonlinearity, head, window) combination.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Corrupt the analytic gradient (harness self-test).
        #[arg(long, hide = true)]
        perturb: bool,
    },
    /// Check the state-contraction bound of a checkpoint on random inputs.
    Contraction {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset and its manifest.
    GenSynth {
        #[command(flatten)]
        config: ConfigArgs,

        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_from_args<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Train { config, thresholds } => {
            let cfg = config::RunConfig::load(config.config.as_deref(), &config.overrides)?;
            if thresholds.is_empty() {
                commands::cmd_train(&cfg, out)
            } else {
                commands::cmd_train_sweep(&cfg, &thresholds, out)
            }
        }
        Command::Eval { model, data } => commands::cmd_eval(&model, &data, out),
        Command::Gradcheck {
            seed,
            n_hidden,
            t_len,
            repeats,
            perturb,
        } => commands::cmd_gradcheck(
            &commands::GradcheckOptions {
                seed,
                n_hidden,
                t_len,
                repeats,
                perturb,
            },
            out,
        ),
        Command::Contraction { model, steps, seed } => commands::cmd_contraction(&model, steps, seed, out),
        Command::GenSynth { config, out_dir } => {
            let cfg = config::RunConfig::load(config.config.as_deref(), &config.overrides)?;
            commands::cmd_gen_synth(&cfg, &out_dir, out)
        }
    }
}
