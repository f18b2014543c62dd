//! Synthetic corpus generation for desk-scale experiments.
//!
//! Citation lengths are drawn per citing paper: each paper gets its own
//! mean length from a global distribution, and its citations scatter
//! tightly around that mean. Target spans are built from the cited
//! paper's topic vocabulary (shared with its abstract), so ROUGE rewards
//! both content overlap and hitting the right length.

use crate::corpus::{CitationExample, CitationType, Corpus, Split};
use crate::rng::{self, substream};
use crate::scalar::round_half_up;
use crate::text::MASK_TOKEN;
use serde::{Deserialize, Serialize};

/// Shape of the generated corpus. All fields have spec-free defaults that
/// the CLI exposes as flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    /// Citing-paper pool size; per-paper length means live here.
    pub n_papers: usize,
    /// Cited-paper pool size (topics, titles, abstracts, marks).
    pub n_cited: usize,
    /// Number of distinct topics cited papers are assigned to.
    pub n_topics: usize,
    /// Words in one topic cycle; targets repeat the cycle when longer.
    pub topic_len: usize,
    /// Global mean of per-paper citation-length means.
    pub paper_mean_mu: f64,
    /// Spread of per-paper means (between-paper variation).
    pub paper_mean_sigma: f64,
    /// Within-paper length scatter.
    pub within_sigma: f64,
    /// Extra expected tokens per citation mark beyond the first.
    pub mark_bonus: f64,
    /// Hard clamp on target lengths, in tokens.
    pub min_len: usize,
    pub max_len: usize,
    /// Intro/context/abstract sizes, in words.
    pub intro_len: usize,
    pub context_len: usize,
    pub abstract_len: usize,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            n_papers: 40,
            n_cited: 80,
            n_topics: 12,
            topic_len: 30,
            paper_mean_mu: 24.0,
            paper_mean_sigma: 8.0,
            within_sigma: 1.5,
            mark_bonus: 2.0,
            min_len: 6,
            max_len: 52,
            intro_len: 8,
            context_len: 10,
            abstract_len: 24,
        }
    }
}

const CONTENT_WORDS: &[&str] = &[
    "alignment",
    "ablation",
    "abstraction",
    "accuracy",
    "adapter",
    "aggregation",
    "annotation",
    "attention",
    "augmentation",
    "autoencoder",
    "baseline",
    "batch",
    "beam",
    "benchmark",
    "bias",
    "bilingual",
    "boundary",
    "calibration",
    "candidate",
    "caption",
    "classifier",
    "cluster",
    "coherence",
    "compression",
    "concept",
    "constraint",
    "context",
    "contrastive",
    "convergence",
    "corpus",
    "coverage",
    "curriculum",
    "decoder",
    "dependency",
    "dialogue",
    "discourse",
    "distillation",
    "distribution",
    "document",
    "domain",
    "dropout",
    "embedding",
    "encoder",
    "entity",
    "entropy",
    "evaluation",
    "evidence",
    "extraction",
    "feature",
    "fluency",
    "fusion",
    "gating",
    "generation",
    "gradient",
    "grammar",
    "graph",
    "grounding",
    "hallucination",
    "heuristic",
    "hierarchy",
    "hypothesis",
    "inference",
    "initialization",
    "instruction",
    "interpolation",
    "keyword",
    "knowledge",
    "label",
    "language",
    "lattice",
    "layer",
    "lexicon",
    "likelihood",
    "masking",
    "memory",
    "metric",
    "model",
    "morphology",
    "multitask",
    "negation",
    "network",
    "neuron",
    "normalization",
    "objective",
    "ontology",
    "optimization",
    "paragraph",
    "paraphrase",
    "parser",
    "pipeline",
    "pivot",
    "polarity",
    "pooling",
    "posterior",
    "pragmatics",
    "precision",
    "prediction",
    "pretraining",
    "prior",
    "projection",
    "pronoun",
    "prosody",
    "prototype",
    "pruning",
    "quantization",
    "query",
    "ranking",
    "recall",
    "recurrence",
    "reduction",
    "reference",
    "regression",
    "regularization",
    "relation",
    "representation",
    "residual",
    "retrieval",
    "robustness",
    "routing",
    "saliency",
    "sampling",
    "schema",
    "segment",
    "semantics",
    "sentence",
    "sentiment",
    "sequence",
    "similarity",
    "smoothing",
    "softmax",
    "span",
    "sparsity",
    "speech",
    "stability",
    "structure",
    "subword",
    "summary",
    "supervision",
    "syntax",
    "taxonomy",
    "template",
    "tensor",
    "token",
    "topic",
    "training",
    "transducer",
    "transfer",
    "transformer",
    "translation",
    "tree",
    "tuning",
    "typology",
    "utterance",
    "validation",
    "variance",
    "vector",
    "vocabulary",
    "weighting",
];

const SURNAMES: &[&str] = &[
    "Almeida",
    "Becker",
    "Chen",
    "Dubois",
    "Eriksen",
    "Fontaine",
    "Garcia",
    "Hoffmann",
    "Ivanov",
    "Jansen",
    "Kumar",
    "Larsen",
    "Moreau",
    "Nakamura",
    "Okafor",
    "Petrov",
    "Quinn",
    "Rossi",
    "Schmidt",
    "Tanaka",
    "Umarov",
    "Vasquez",
    "Weber",
    "Xu",
    "Yamamoto",
    "Zhao",
    "Andersson",
    "Bianchi",
    "Costa",
    "Dimitrov",
    "Engel",
    "Ferrari",
    "Gruber",
    "Haddad",
    "Iversen",
    "Jonsson",
    "Keller",
    "Lindgren",
    "Meyer",
    "Novak",
];

struct Topic {
    words: Vec<&'static str>,
}

impl Topic {
    /// Word at stream position `p`; the cycle repeats past `topic_len`.
    fn word(&self, p: usize) -> &'static str {
        self.words[p % self.words.len()]
    }

    fn stream(&self, from: usize, count: usize) -> Vec<&'static str> {
        (from..from + count).map(|p| self.word(p)).collect()
    }
}

struct CitedPaper {
    topic: usize,
    mark: String,
    title: String,
    abstract_text: String,
}

fn clamp_len(len: i64, profile: &SynthProfile) -> usize {
    len.clamp(profile.min_len as i64, profile.max_len as i64) as usize
}

/// Generate `n` examples. Pure function of `(n, seed, profile)`: corpora
/// generated with the same seed and profile share the same paper pools,
/// and example `i` is identical no matter what `n` is.
pub fn synth_corpus(n: usize, seed: u64, profile: &SynthProfile) -> Corpus {
    assert!(n >= 1, "n must be >= 1");
    assert!(profile.n_topics >= 1 && profile.n_papers >= 1 && profile.n_cited >= 1);
    assert!(profile.topic_len >= 2 && profile.topic_len <= CONTENT_WORDS.len());
    assert!(profile.min_len >= 1 && profile.min_len <= profile.max_len);

    let topics: Vec<Topic> = (0..profile.n_topics)
        .map(|t| {
            let mut rng = substream(seed, "synth/topic", t as u64);
            let mut pool: Vec<&'static str> = CONTENT_WORDS.to_vec();
            rng::shuffle(&mut rng, &mut pool);
            Topic {
                words: pool[..profile.topic_len].to_vec(),
            }
        })
        .collect();

    // Per citing paper: its topic flavour and its idiosyncratic mean length.
    let paper_topics: Vec<usize> = (0..profile.n_papers)
        .map(|k| {
            let mut rng = substream(seed, "synth/paper", k as u64);
            rng::uniform_usize(&mut rng, profile.n_topics)
        })
        .collect();
    let paper_means: Vec<f64> = (0..profile.n_papers)
        .map(|k| {
            let mut rng = substream(seed, "synth/paper_mean", k as u64);
            let mean = profile.paper_mean_mu + profile.paper_mean_sigma * rng::normal(&mut rng);
            mean.clamp(profile.min_len as f64 + 2.0, profile.max_len as f64 - 4.0)
        })
        .collect();

    let cited: Vec<CitedPaper> = (0..profile.n_cited)
        .map(|j| {
            let mut rng = substream(seed, "synth/cited", j as u64);
            let topic = rng::uniform_usize(&mut rng, profile.n_topics);
            let year = 2015 + (j % 9);
            let surname = SURNAMES[j % SURNAMES.len()];
            let title_words = topics[topic].stream(0, 3).join(" ");
            CitedPaper {
                topic,
                mark: format!("{surname} et al. ({year})"),
                title: format!("{title_words} t{j}"),
                abstract_text: topics[topic].stream(0, profile.abstract_len).join(" "),
            }
        })
        .collect();

    let examples = (0..n)
        .map(|i| {
            let mut rng = substream(seed, "synth/example", i as u64);
            let paper = rng::uniform_usize(&mut rng, profile.n_papers);
            let primary = rng::uniform_usize(&mut rng, profile.n_cited);
            let roll = rng::uniform(&mut rng);
            let mark_count = if roll < 0.6 {
                1
            } else if roll < 0.9 {
                2
            } else {
                3
            };
            let mut marks = vec![cited[primary].mark.clone()];
            for extra in 1..mark_count {
                let other = (primary + 1 + rng::uniform_usize(&mut rng, profile.n_cited - 1))
                    % profile.n_cited;
                let _ = extra;
                marks.push(cited[other].mark.clone());
            }

            let mean = paper_means[paper] + profile.mark_bonus * (mark_count as f64 - 1.0);
            let drawn = mean + profile.within_sigma * rng::normal(&mut rng);
            let len = clamp_len(round_half_up(drawn), profile);

            let citing_topic = &topics[paper_topics[paper]];
            let intro_offset = rng::uniform_usize(&mut rng, profile.topic_len);
            let intro_words = citing_topic.stream(intro_offset, profile.intro_len - 1);
            let intro_text = format!("paper{paper:03} {}", intro_words.join(" "));

            let ctx_offset = rng::uniform_usize(&mut rng, profile.topic_len);
            let half = profile.context_len / 2;
            let before = citing_topic.stream(ctx_offset, half).join(" ");
            let after = citing_topic
                .stream(ctx_offset + half, profile.context_len - half)
                .join(" ");
            let context_paragraph = format!("{before} {MASK_TOKEN} {after}");

            let citation_type = if rng::uniform(&mut rng) < 0.4 {
                CitationType::Dominant
            } else {
                CitationType::Reference
            };

            let target_span = topics[cited[primary].topic].stream(0, len).join(" ");

            CitationExample {
                example_id: format!("ex{i:05}"),
                citing_paper_id: format!("paper{paper:03}"),
                intro_text,
                context_paragraph,
                citation_marks: marks,
                cited_title: cited[primary].title.clone(),
                cited_abstract: cited[primary].abstract_text.clone(),
                citation_type,
                target_span,
            }
        })
        .collect();

    Corpus {
        examples,
        split: Split::Train,
    }
}

/// Deterministic index split: first `train_frac` of examples become the
/// train corpus, the remainder the test corpus.
pub fn split_corpus(corpus: &Corpus, train_frac: f64) -> (Corpus, Corpus) {
    assert!((0.0..=1.0).contains(&train_frac));
    let cut = (corpus.examples.len() as f64 * train_frac).floor() as usize;
    let train = Corpus {
        examples: corpus.examples[..cut].to_vec(),
        split: Split::Train,
    };
    let test = Corpus {
        examples: corpus.examples[cut..].to_vec(),
        split: Split::Test,
    };
    (train, test)
}
