use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xferscore::score::Method;

mod align;
mod output;
mod rank;
mod score;

#[derive(Parser)]
#[command(name = "xferscore", version)]
#[command(about = "Rank pre-trained speech models by transferability without fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every candidate in a manifest with one method
    Score(ScoreArgs),
    /// Force-align label sequences and write per-frame symbols
    Align(AlignArgs),
    /// Rank score files against fine-tuning results and report Spearman's rho
    Rank(RankArgs),
    /// Run the embedded fixture suite
    Selftest,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    #[arg(long, value_parser = parse_method)]
    pub method: Method,

    /// Where to write the score JSON (stdout when omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Candidates scored concurrently (defaults to the number of cores)
    #[arg(long)]
    pub jobs: Option<usize>,

    /// SWD: number of random projection directions
    #[arg(long, default_value_t = 128)]
    pub projections: usize,

    /// SWD: samples per side at each timestep
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,

    /// tSNE: perplexity (default min(30, (n-1)/3))
    #[arg(long)]
    pub perplexity: Option<f64>,

    /// Replace each utterance by the mean of its frames
    #[arg(long)]
    pub pool_mean: bool,

    /// tSNE: directory receiving one `<candidate>.npy` embedding per candidate
    #[arg(long)]
    pub dump_embedding: Option<PathBuf>,

    /// tSNE: frames kept per domain before embedding
    #[arg(long, default_value_t = 1000)]
    pub max_points: usize,
}

#[derive(clap::Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    #[arg(long)]
    pub candidate: String,

    /// JSONL output (stdout when omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct RankArgs {
    /// Score files written by `score`
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,

    /// Ground-truth JSON: {"metric_direction": ..., "candidates": [{"candidate_id", "metric"}]}
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub ground_truth: Option<PathBuf>,

    /// Take ground truth from the manifest's ground_truth_metric fields
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Report JSON (stdout when omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,

    /// Plain-text table (printed to stderr when omitted)
    #[arg(long)]
    pub table: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(args) => score::run(&args),
        Command::Align(args) => align::run(&args),
        Command::Rank(args) => rank::run(&args),
        Command::Selftest => {
            let report = xferscore::selftest::run_selftest();
            print!("{}", report.text());
            Ok(report.ok())
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", output::fatal_record(&e));
            ExitCode::from(2)
        }
    }
}
