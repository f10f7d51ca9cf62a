//! `surgkit`: build, review, clean and score a surgical instruction corpus.

mod commands;
mod config;
mod decode;
mod error;
mod files;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::Config;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "surgkit", version, about = "Surgical instruction corpus toolkit")]
struct Cli {
    /// TOML run file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert source annotations (or synthetic frames) to canonical frame lines.
    Ingest(commands::IngestArgs),
    /// Instantiate the instruction corpus from canonical frames.
    Generate(commands::GenerateArgs),
    /// Summarise a corpus and optionally write the sub-task splits.
    Stats(commands::StatsArgs),
    /// Serve the review API for a 1-in-5 sample of the corpus.
    ReviewServe(commands::ReviewArgs),
    /// Compile rules from the decision log and apply them to the corpus.
    ApplyClean(commands::CleanArgs),
    /// Score a prediction transcript against references.
    Eval(commands::EvalArgs),
    /// Run contrastive greedy decoding against a logit provider.
    DecodeSim(decode::DecodeArgs),
}

/// Flags shared by every command after parsing.
#[derive(Debug, Clone, Args)]
pub struct Globals {
    pub jobs: Option<usize>,
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Invalid("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::invalid)?;
    }
    let globals = Globals { jobs: cli.jobs };
    match cli.command {
        Command::Ingest(a) => commands::ingest(a, &config),
        Command::Generate(a) => commands::generate(a, &config),
        Command::Stats(a) => commands::stats(a, &config),
        Command::ReviewServe(a) => commands::review_serve(a, &config, &globals),
        Command::ApplyClean(a) => commands::apply_clean(a, &config),
        Command::Eval(a) => commands::eval(a, &config),
        Command::DecodeSim(a) => decode::decode_sim(a, &config),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    init_logging(cli.verbose, cli.quiet);
    if let Err(e) = run(cli) {
        log::error!("{e}");
        let _ = std::io::stdout().flush();
        std::process::exit(e.exit_code());
    }
}
