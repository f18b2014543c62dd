//! Implementations of the six subcommands.

use crate::errors::CliError;
use crate::kvconf::KvConfig;
use crate::{ensure_parent_dir, out_path};
use citelen::corpus::{self, Corpus, Split};
use citelen::heuristics::{self, EstimatorKind, LengthEstimator};
use citelen::model::{
    generate as model_generate, load_checkpoint, predict_and_generate, save_checkpoint, DecodeMode,
    GenerationResult, ModelConfig,
};
use citelen::synth::{split_corpus, synth_corpus};
use citelen::training::{self, Strategy, TrainConfig};
use citelen::vocab::Vocab;
use citelen::Scalar;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

fn load_or_build_vocab(
    vocab_path: Option<&Path>,
    corpus: &Corpus,
    max_size: usize,
    fallback: &Path,
) -> Result<(Vocab, PathBuf), CliError> {
    let path = out_path(vocab_path.unwrap_or(fallback));
    if path.exists() {
        Ok((Vocab::load(&path)?, path))
    } else {
        let vocab = corpus::build_vocab(corpus, max_size)?;
        ensure_parent_dir(&path)?;
        vocab.save(&path)?;
        Ok((vocab, path))
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn synth(args: crate::SynthArgs) -> Result<(), CliError> {
    if args.n < 1 {
        return Err(CliError::domain("--n must be >= 1"));
    }
    let profile = args.profile.build();
    let corpus = synth_corpus(args.n, args.seed, &profile);
    let out = out_path(&args.out);
    ensure_parent_dir(&out)?;
    corpus::save_corpus(&corpus, &out)?;

    match (&args.train_out, &args.test_out) {
        (Some(train_out), Some(test_out)) => {
            let (train_c, test_c) = split_corpus(&corpus, args.train_frac);
            let (tp, sp) = (out_path(train_out), out_path(test_out));
            ensure_parent_dir(&tp)?;
            ensure_parent_dir(&sp)?;
            corpus::save_corpus(&train_c, &tp)?;
            corpus::save_corpus(&test_c, &sp)?;
            println!(
                "split: {} train / {} test",
                train_c.examples.len(),
                test_c.examples.len()
            );
        }
        (None, None) => {}
        _ => {
            return Err(CliError::io(
                "--train-out and --test-out must be given together",
            ))
        }
    }

    let vocab = corpus::build_vocab(&corpus, 4096)?;
    let stats = corpus::length_stats(&corpus, &vocab, args.bin_width)?;
    println!(
        "synthesized {} examples -> {} (mean length {:.4}, std {:.4})",
        args.n,
        out.display(),
        stats.mean,
        stats.std
    );
    for bin in &stats.histogram {
        println!("  [{:>4}, {:>4}) {}", bin.lower, bin.upper, bin.count);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-heuristics
// ---------------------------------------------------------------------------

pub fn fit_heuristics(args: crate::FitArgs) -> Result<(), CliError> {
    let kind: EstimatorKind = args
        .kind
        .parse()
        .map_err(|e: heuristics::HeuristicsError| CliError::io(e.to_string()))?;
    let corpus = corpus::load_corpus(&args.corpus, Split::Train)?;
    let fallback = args.out.with_extension("vocab.json");
    let (vocab, _) =
        load_or_build_vocab(args.vocab.as_deref(), &corpus, args.vocab_size, &fallback)?;
    let estimator = heuristics::fit(kind, &corpus, &vocab, args.seed)?;
    let out = out_path(&args.out);
    ensure_parent_dir(&out)?;
    estimator.save(&out)?;
    println!(
        "fitted {} on {} examples (global mean {:.4}) -> {}",
        args.kind,
        corpus.examples.len(),
        estimator.global_mean,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct ResolvedTrain {
    corpus: PathBuf,
    vocab: Option<PathBuf>,
    out_dir: PathBuf,
    train: TrainConfig,
    model: ModelConfig,
    vocab_max_size: usize,
    epoch_checkpoints: bool,
}

fn resolve_train(args: &crate::TrainArgs) -> Result<ResolvedTrain, CliError> {
    let file = match &args.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::empty(),
    };
    // Flags win over config-file entries.
    macro_rules! pick {
        ($flag:expr, $key:literal) => {
            match &$flag {
                Some(v) => Some(v.clone()),
                None => file.get($key)?,
            }
        };
    }
    let corpus: Option<PathBuf> = pick!(args.corpus, "corpus");
    let corpus = corpus.ok_or_else(|| CliError::domain("config field corpus: missing"))?;
    let vocab: Option<PathBuf> = pick!(args.vocab, "vocab");
    let out_dir: PathBuf =
        pick!(args.out_dir, "out_dir").unwrap_or_else(|| PathBuf::from("runs/latest"));

    let strategy_name: Option<String> = pick!(args.strategy, "strategy");
    let strategy: Strategy = strategy_name
        .ok_or_else(|| CliError::domain("config field strategy: missing"))?
        .parse()
        .map_err(|e: training::TrainError| CliError::domain(e.to_string()))?;
    let heuristic_kind = match pick!(args.heuristic_kind, "heuristic_kind") {
        Some(name) => Some(
            name.parse::<EstimatorKind>()
                .map_err(|e: heuristics::HeuristicsError| CliError::domain(e.to_string()))?,
        ),
        None => None,
    };

    let defaults = TrainConfig::default();
    let train = TrainConfig {
        strategy,
        lambda_g: pick!(args.lambda_g, "lambda_g").unwrap_or(defaults.lambda_g),
        p0: pick!(args.p0, "p0").unwrap_or(defaults.p0),
        k: pick!(args.k, "k").unwrap_or(defaults.k),
        epochs: pick!(args.epochs, "epochs").unwrap_or(defaults.epochs),
        batch_size: pick!(args.batch_size, "batch_size").unwrap_or(defaults.batch_size),
        lr: pick!(args.lr, "lr").unwrap_or(defaults.lr),
        seed: pick!(args.seed, "seed").unwrap_or(defaults.seed),
        heuristic_kind,
    };
    let md = ModelConfig::default();
    let model = ModelConfig {
        d_model: pick!(args.d_model, "d_model").unwrap_or(md.d_model),
        n_layers: pick!(args.n_layers, "n_layers").unwrap_or(md.n_layers),
        n_heads: pick!(args.n_heads, "n_heads").unwrap_or(md.n_heads),
        ffn_dim: pick!(args.ffn_dim, "ffn_dim").unwrap_or(md.ffn_dim),
        vocab_size: 0, // filled in after the vocabulary is known
        max_src_len: pick!(args.max_src_len, "max_src_len").unwrap_or(md.max_src_len),
        max_tgt_len: pick!(args.max_tgt_len, "max_tgt_len").unwrap_or(md.max_tgt_len),
        dropout: pick!(args.dropout, "dropout").unwrap_or(md.dropout),
    };
    let vocab_max_size: usize = pick!(args.vocab_size, "vocab_size").unwrap_or(512);
    let no_epoch =
        args.no_epoch_checkpoints || file.get::<bool>("no_epoch_checkpoints")?.unwrap_or(false);
    Ok(ResolvedTrain {
        corpus,
        vocab,
        out_dir,
        train,
        model,
        vocab_max_size,
        epoch_checkpoints: !no_epoch,
    })
}

pub fn train(args: crate::TrainArgs) -> Result<(), CliError> {
    let resolved = resolve_train(&args)?;
    let corpus = corpus::load_corpus(&resolved.corpus, Split::Train)?;
    let out_dir = out_path(&resolved.out_dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", out_dir.display())))?;
    let vocab_fallback = out_dir.join("vocab.json");
    let (vocab, vocab_path) = load_or_build_vocab(
        resolved.vocab.as_deref(),
        &corpus,
        resolved.vocab_max_size,
        &vocab_fallback,
    )?;
    let mut model_cfg = resolved.model;
    model_cfg.vocab_size = vocab.len();
    resolved
        .train
        .validate()
        .map_err(|e| CliError::domain(e.to_string()))?;
    model_cfg
        .validate()
        .map_err(|e| CliError::domain(e.to_string()))?;

    let fingerprint = vocab.fingerprint();
    let strategy_tag = resolved.train.strategy.as_str();
    let epoch_dir = out_dir.clone();
    let write_epochs = resolved.epoch_checkpoints;
    let (params, log) = training::train_with::<Scalar>(
        &resolved.train,
        &corpus,
        &vocab,
        &model_cfg,
        move |epoch, params| {
            if write_epochs {
                let path = epoch_dir.join(format!("checkpoint_epoch{epoch}.json"));
                if let Err(e) = save_checkpoint(params, strategy_tag, fingerprint, &path) {
                    eprintln!("warning: epoch checkpoint {}: {e}", path.display());
                }
            }
        },
    )
    .map_err(CliError::from)?;

    let ckpt_path = out_dir.join("checkpoint.json");
    save_checkpoint(&params, strategy_tag, fingerprint, &ckpt_path)?;
    let log_path = out_dir.join("trainlog.csv");
    log.save_csv(&log_path)?;
    println!(
        "trained {} for {} epochs on {} examples",
        strategy_tag,
        resolved.train.epochs,
        corpus.examples.len()
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("trainlog:   {}", log_path.display());
    println!("vocab:      {}", vocab_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

enum LengthSource {
    Oracle,
    Predicted,
    Estimator(Box<LengthEstimator>),
    Fixed(usize),
}

fn parse_length_source(raw: &str) -> Result<LengthSource, CliError> {
    match raw {
        "oracle" => Ok(LengthSource::Oracle),
        "predicted" => Ok(LengthSource::Predicted),
        _ => {
            if let Some(path) = raw.strip_prefix("estimator:") {
                let est = LengthEstimator::load(path)?;
                Ok(LengthSource::Estimator(Box::new(est)))
            } else if let Some(n) = raw.strip_prefix("fixed:") {
                let n: usize = n
                    .parse()
                    .map_err(|_| CliError::io(format!("length source fixed:{n}: not a number")))?;
                if n < 1 {
                    return Err(CliError::domain("fixed length must be >= 1"));
                }
                Ok(LengthSource::Fixed(n))
            } else {
                Err(CliError::io(format!(
                    "unknown length source {raw:?} (expected oracle, predicted, estimator:PATH, fixed:N)"
                )))
            }
        }
    }
}

fn parse_mode(raw: &str) -> Result<DecodeMode, CliError> {
    match raw {
        "greedy" => Ok(DecodeMode::Greedy),
        _ => match raw
            .strip_prefix("beam:")
            .and_then(|k| k.parse::<usize>().ok())
        {
            Some(k) if k >= 1 => Ok(DecodeMode::Beam(k)),
            _ => Err(CliError::io(format!("unknown decode mode {raw:?}"))),
        },
    }
}

pub fn generate(args: crate::GenerateArgs) -> Result<(), CliError> {
    let checkpoint = load_checkpoint::<Scalar>(&args.checkpoint)?;
    let vocab = Vocab::load(&args.vocab)?;
    checkpoint.check_vocab(vocab.fingerprint())?;
    let corpus = corpus::load_corpus(&args.corpus, Split::Test)?;
    let source = parse_length_source(&args.length_source)?;
    let mode = parse_mode(&args.mode)?;
    let params = &checkpoint.params;
    let max_steps = args.max_steps.unwrap_or(params.config.max_tgt_len);

    let out = out_path(&args.out);
    ensure_parent_dir(&out)?;
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(&out)
            .map_err(|e| CliError::io(format!("creating {}: {e}", out.display())))?,
    );
    for ex in &corpus.examples {
        let input = corpus::build_model_input(ex, &vocab, params.config.max_src_len).seq;
        let result: GenerationResult = match &source {
            LengthSource::Predicted => {
                predict_and_generate(params, &vocab, &input, max_steps, mode, &ex.example_id)?
            }
            other => {
                let control = match other {
                    LengthSource::Oracle => corpus::target_length(ex, &vocab)?,
                    LengthSource::Estimator(est) => est.estimate(ex)?,
                    LengthSource::Fixed(n) => *n,
                    LengthSource::Predicted => unreachable!(),
                };
                model_generate(
                    params,
                    &vocab,
                    &input,
                    control,
                    max_steps,
                    mode,
                    &ex.example_id,
                )?
            }
        };
        let line = serde_json::to_string(&result)
            .map_err(|e| CliError::domain(format!("serializing result: {e}")))?;
        writeln!(file, "{line}")
            .map_err(|e| CliError::io(format!("writing {}: {e}", out.display())))?;
    }
    println!(
        "generated {} results -> {}",
        corpus.examples.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn load_results(path: &Path) -> Result<Vec<GenerationResult>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::io(format!("opening {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let result: GenerationResult = serde_json::from_str(&line)
            .map_err(|e| CliError::domain(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push(result);
    }
    Ok(out)
}

pub fn evaluate(args: crate::EvaluateArgs) -> Result<(), CliError> {
    let results = load_results(&args.results)?;
    let references = corpus::load_corpus(&args.references, Split::Test)?;
    let vocab = Vocab::load(&args.vocab)?;
    let report = citelen::metrics::evaluate_run(&results, &references, &vocab, args.bin_width)?;
    let out_dir = out_path(&args.out_dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", out_dir.display())))?;
    let report_path = out_dir.join("report.json");
    report.save_json(&report_path)?;
    let hist_path = out_dir.join("histogram.csv");
    report.save_histogram_csv(&hist_path)?;
    println!(
        "n {}  ROUGE-1 {:.4}  ROUGE-2 {:.4}  ROUGE-L {:.4}  MAE {}  ControlVar {:.6}",
        report.n,
        report.rouge1_f,
        report.rouge2_f,
        report.rouge_l_f,
        report
            .mae
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "-".into()),
        report.control_variance
    );
    println!("report:    {}", report_path.display());
    println!("histogram: {}", hist_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

fn parse_histogram_csv(path: &Path) -> Result<Vec<(i64, i64, usize)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("opening {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "bin_lower,bin_upper,count" => {}
        other => {
            return Err(CliError::domain(format!(
                "{}: expected header bin_lower,bin_upper,count, got {other:?}",
                path.display()
            )))
        }
    }
    let mut bins = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let parsed = (|| {
            if parts.len() != 3 {
                return None;
            }
            Some((
                parts[0].trim().parse::<i64>().ok()?,
                parts[1].trim().parse::<i64>().ok()?,
                parts[2].trim().parse::<usize>().ok()?,
            ))
        })();
        let Some(bin) = parsed else {
            return Err(CliError::domain(format!(
                "{}: line {}: malformed histogram row {line:?}",
                path.display(),
                i + 2
            )));
        };
        bins.push(bin);
    }
    Ok(bins)
}

pub fn render_histogram(bins: &[(i64, i64, usize)], width: usize) -> String {
    let total: usize = bins.iter().map(|b| b.2).sum();
    let max = bins.iter().map(|b| b.2).max().unwrap_or(0).max(1);
    let mut out = String::new();
    out.push_str(&format!("length-difference histogram (n = {total})\n"));
    for (lower, upper, count) in bins {
        let bar = "#".repeat((count * width).div_ceil(max).min(width));
        out.push_str(&format!(
            "[{lower:>5}, {upper:>5}) |{bar:<width$} {count}\n"
        ));
    }
    out.push_str(&format!("total {total}\n"));
    out
}

pub fn plot(args: crate::PlotArgs) -> Result<(), CliError> {
    let bins = parse_histogram_csv(&args.histogram)?;
    let rendered = render_histogram(&bins, args.width.max(1));
    match &args.out {
        Some(p) => {
            let p = out_path(p);
            ensure_parent_dir(&p)?;
            std::fs::write(&p, &rendered)
                .map_err(|e| CliError::io(format!("writing {}: {e}", p.display())))?;
            println!("plot -> {}", p.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}
