//! `lexdt`: generate synthetic corpora, train word models, score
//! video-sentence pairs and run the cross-validated comparison.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lexdt", version, about = "Word-meaning HMMs from sentence-labeled video")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Grammar file (TOML); the builtin grammar otherwise.
    #[arg(long, global = true)]
    grammar: Option<PathBuf>,

    /// Log level unless RUST_LOG is set.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Generate(GenerateArgs),
    /// Train a lexicon on a corpus.
    Train(TrainArgs),
    /// Score sentences against clips with a trained lexicon.
    Score(ScoreArgs),
    /// Cross-validated comparison of all methods.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Generation config (TOML with `seed` and a `[world]` table).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, required_unless_present = "dry_run")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of clips.
    #[arg(long)]
    pub clips: Option<usize>,
    /// Print the summary without writing files.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory written by `generate`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// ml, ml+ml or dt+ml.
    #[arg(long)]
    pub method: Option<String>,
    /// Output model file; trace files are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config (TOML with `method` and a `[trainer]` table).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the initial lexicon jitter.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Seed of negative sampling.
    #[arg(long)]
    pub negative_seed: Option<u64>,
    /// Negatives per competition set.
    #[arg(long)]
    pub negatives: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus directory holding the clips.
    #[arg(long)]
    pub clips: PathBuf,
    /// Sentence file, one per line; `#` starts a comment line.
    #[arg(long)]
    pub sentences: PathBuf,
    /// Append the best participant-to-detection assignment.
    #[arg(long)]
    pub map: bool,
    /// Output table; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for curves and the AUC table.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate a written corpus instead of generating one per seed.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated training ratios.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Comma-separated corpus seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot set up {jobs} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    let grammar = match commands::load_grammar(cli.grammar.as_deref()) {
        Ok(g) => g,
        Err(e) => return commands::report(&e),
    };
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a, &grammar),
        Command::Train(a) => commands::train(a, &grammar),
        Command::Score(a) => commands::score(a, &grammar),
        Command::Evaluate(a) => commands::evaluate(a, &grammar),
    };
    match result {
        Ok(code) => code,
        Err(e) => commands::report(&e),
    }
}
