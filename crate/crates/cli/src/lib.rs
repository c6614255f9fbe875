//! Command-line front-end: data generation, tokenizer and language-model
//! training, tokenization round trips and evaluation.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
//! error, 4 numeric failure.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use motiontok::skeleton::Task;

pub use config::RunConfig;
pub use error::{CliError, ErrorKind};

use commands::PredictorKind;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MOTIONTOK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "motiontok", version, about = "Discrete motion tokenizer and motion language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic camera-space sequences as MSKL files.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Synthetic motion settings are taken from this run config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Train the tokenizer and write its checkpoint.
    TrainTokenizer {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory or MSKL file replacing the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON Lines training log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the motion language model on a frozen tokenizer.
    TrainLm {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of pe, mp, mib (default: the config ratios).
        #[arg(long, value_delimiter = ',', value_parser = parse_task)]
        tasks: Option<Vec<Task>>,
        /// Continue from an existing language model checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Convert an MSKL sequence into a token file.
    Tokenize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a token file into a pixel_rootrel MSKL sequence.
    Detokenize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a task and write JSON and text reports.
    Eval {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        /// Tokenizer checkpoint, optionally followed by a language model
        /// checkpoint: `tok.mtck[,lm.mtck]`.
        #[arg(long, value_delimiter = ',', num_args = 1..=2, required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluate on every sequence here instead of the held-out split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        predictor: Option<PredictorKind>,
        /// Directory for usage, cosine-similarity and sphere CSV files.
        #[arg(long)]
        codebook_report: Option<PathBuf>,
        /// JSON Lines file of prompts and generations.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Print the resolved run config and its hash.
    ShowConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

/// Reads the thread cap. Computation is single-threaded, so any positive
/// value is accepted; malformed values are configuration errors.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    thread_cap()?;
    match cli.command {
        Command::GenData { out, count, frames, seed, config, force } => {
            let paths = commands::gen_data(&commands::GenData { config, out: out.clone(), count, frames, seed, force })?;
            eprintln!("wrote {} sequences to {}", paths.len(), out.display());
        }
        Command::TrainTokenizer { config, data, out, log } => {
            commands::train_tokenizer(&commands::TrainTokenizer { config, data, out: out.clone(), log })?;
            eprintln!("saved {}", out.display());
        }
        Command::TrainLm { config, data, tokenizer, out, tasks, resume, log } => {
            commands::train_lm(&commands::TrainLm { config, data, tokenizer, out: out.clone(), tasks, resume, log })?;
            eprintln!("saved {}", out.display());
        }
        Command::Tokenize { ckpt, input, out } => {
            let (grid, err) = commands::tokenize(&ckpt, &input, &out)?;
            eprintln!("{} windows x {} joints, reconstruction MPJPE {err:.4}", grid.windows(), grid.joints());
        }
        Command::Detokenize { ckpt, input, out } => commands::detokenize(&ckpt, &input, &out)?,
        Command::Eval { task, ckpts, config, data, report, predictor, codebook_report, transcripts } => {
            let mut ckpts = ckpts.into_iter();
            let tokenizer = ckpts.next().ok_or_else(|| CliError::config("--ckpts needs a tokenizer checkpoint"))?;
            let r = commands::eval(&commands::Eval {
                config,
                task,
                tokenizer,
                lm: ckpts.next(),
                data,
                report,
                predictor,
                codebook_report,
                transcripts,
            })?;
            print!("{}", r.to_text());
        }
        Command::ShowConfig { config } => {
            let cfg = commands::load_config(config.as_deref())?;
            let text = format!("{}# sha256 {}\n", cfg.to_toml()?, cfg.hash()?);
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = std::io::stdout().write_all(text.as_bytes());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ErrorKind::Config.exit_code() } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
