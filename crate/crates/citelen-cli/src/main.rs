//! `citelen` — synthesize corpora, fit length heuristics, train
//! length-controlled generation models, generate, evaluate, and plot.
//!
//! Exit codes: 0 success, 1 domain error (bad data, bad config), 2 I/O or
//! usage error. Every command is deterministic given its flags and seed.

mod commands;
mod errors;
mod kvconf;

use clap::{Args, Parser, Subcommand};
use errors::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Resolve an output path under `CITELEN_OUT_ROOT` when it is set and the
/// path is relative.
pub(crate) fn out_path(p: &std::path::Path) -> PathBuf {
    match std::env::var_os("CITELEN_OUT_ROOT") {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

pub(crate) fn ensure_parent_dir(p: &std::path::Path) -> Result<(), CliError> {
    if let Some(parent) = p.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("creating {}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "citelen",
    version,
    about = "Length-controlled citation generation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic citation corpus and print its length statistics.
    Synth(SynthArgs),
    /// Fit a statistical length estimator on a training corpus.
    FitHeuristics(FitArgs),
    /// Train a model; writes a checkpoint and a training log.
    Train(TrainArgs),
    /// Generate citations for a corpus under a chosen length source.
    Generate(GenerateArgs),
    /// Score generated results against references.
    Evaluate(EvaluateArgs),
    /// Render a length-difference histogram CSV as text art.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of examples to generate.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path for the full corpus.
    #[arg(long)]
    out: PathBuf,
    /// Optionally also write an index-split train/test pair.
    #[arg(long)]
    train_out: Option<PathBuf>,
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Histogram bin width for the printed stats.
    #[arg(long, default_value_t = 5)]
    bin_width: u32,
    #[command(flatten)]
    profile: ProfileArgs,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    n_papers: Option<usize>,
    #[arg(long)]
    n_cited: Option<usize>,
    #[arg(long)]
    n_topics: Option<usize>,
    #[arg(long)]
    topic_len: Option<usize>,
    #[arg(long)]
    paper_mean_mu: Option<f64>,
    #[arg(long)]
    paper_mean_sigma: Option<f64>,
    #[arg(long)]
    within_sigma: Option<f64>,
    #[arg(long)]
    mark_bonus: Option<f64>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl ProfileArgs {
    fn build(&self) -> citelen::SynthProfile {
        let mut p = citelen::SynthProfile::default();
        if let Some(v) = self.n_papers {
            p.n_papers = v;
        }
        if let Some(v) = self.n_cited {
            p.n_cited = v;
        }
        if let Some(v) = self.n_topics {
            p.n_topics = v;
        }
        if let Some(v) = self.topic_len {
            p.topic_len = v;
        }
        if let Some(v) = self.paper_mean_mu {
            p.paper_mean_mu = v;
        }
        if let Some(v) = self.paper_mean_sigma {
            p.paper_mean_sigma = v;
        }
        if let Some(v) = self.within_sigma {
            p.within_sigma = v;
        }
        if let Some(v) = self.mark_bonus {
            p.mark_bonus = v;
        }
        if let Some(v) = self.min_len {
            p.min_len = v;
        }
        if let Some(v) = self.max_len {
            p.max_len = v;
        }
        p
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// average | citation_marks | citing_paper | random | oracle
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary file; built from the corpus (and saved) when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    vocab_size: usize,
}

#[derive(Args, Default, Clone)]
struct TrainArgs {
    /// Key-value config file; command-line flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Vocabulary file; built from the corpus (and saved) when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    heuristic_kind: Option<String>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    max_src_len: Option<usize>,
    #[arg(long)]
    max_tgt_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Skip the per-epoch checkpoint files (the final one is always written).
    #[arg(long, default_value_t = false)]
    no_epoch_checkpoints: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// oracle | predicted | estimator:PATH | fixed:N
    #[arg(long)]
    length_source: String,
    #[arg(long)]
    out: PathBuf,
    /// greedy | beam:K
    #[arg(long, default_value = "greedy")]
    mode: String,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Directory receiving report.json and histogram.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    bin_width: u32,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    histogram: PathBuf,
    /// Output text file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum bar width in characters.
    #[arg(long, default_value_t = 50)]
    width: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::FitHeuristics(args) => commands::fit_heuristics(args),
        Command::Train(args) => commands::train(args),
        Command::Generate(args) => commands::generate(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Plot(args) => commands::plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
