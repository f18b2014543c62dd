//! Corpus data model, JSONL ingestion, and model-input assembly.
//!
//! One JSON object per line with keys exactly `example_id, citing_paper_id,
//! intro_text, context_paragraph, citation_marks, cited_title,
//! cited_abstract, citation_type, target_span`; the masked citation
//! position is spelled `[CITE_MASK]` inside `context_paragraph`.

use crate::hist::{bin_signed, HistogramBin};
use crate::text::{tokenize, MASK_TOKEN};
use crate::vocab::{self, Vocab, VocabError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CitationType {
    Dominant,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One generation instance: citing-paper context, cited-paper metadata,
/// and the human-written target citation span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitationExample {
    pub example_id: String,
    pub citing_paper_id: String,
    pub intro_text: String,
    pub context_paragraph: String,
    pub citation_marks: Vec<String>,
    pub cited_title: String,
    pub cited_abstract: String,
    pub citation_type: CitationType,
    pub target_span: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<CitationExample>,
    pub split: Split,
}

/// Token-id view of a piece of text; `len()` is the token count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Assembled model input plus how many tokens truncation dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub seq: TokenSequence,
    pub truncated: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("example {example_id}: field {field}: {reason}")]
    Schema {
        example_id: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate example_id {0}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    Empty,
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

fn validate(ex: &CitationExample) -> Result<(), CorpusError> {
    let schema = |field: &'static str, reason: String| CorpusError::Schema {
        example_id: ex.example_id.clone(),
        field,
        reason,
    };
    let masks = tokenize(&ex.context_paragraph)
        .iter()
        .filter(|t| t.as_str() == MASK_TOKEN)
        .count();
    if masks != 1 {
        return Err(schema(
            "context_paragraph",
            format!("expected exactly one {MASK_TOKEN}, found {masks}"),
        ));
    }
    if ex.citation_marks.is_empty() {
        return Err(schema("citation_marks", "must be non-empty".into()));
    }
    if ex.target_span.trim().is_empty() {
        return Err(schema("target_span", "must be non-empty".into()));
    }
    Ok(())
}

/// Load a JSONL corpus, preserving file order. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: CitationExample =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                line: i + 1,
                source,
            })?;
        validate(&ex)?;
        if !seen.insert(ex.example_id.clone()) {
            return Err(CorpusError::DuplicateId(ex.example_id));
        }
        examples.push(ex);
    }
    Ok(Corpus { examples, split })
}

/// Write a corpus as JSONL, one example per line.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for ex in &corpus.examples {
        let line = serde_json::to_string(ex).expect("serializable example");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Count token frequencies over every text field of the corpus and build a
/// vocabulary of exactly `max_size` entries (reserved tokens included).
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocab, CorpusError> {
    if corpus.examples.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut bump = |text: &str| {
        for t in tokenize(text) {
            *counts.entry(t).or_insert(0) += 1;
        }
    };
    for ex in &corpus.examples {
        bump(&ex.intro_text);
        bump(&ex.context_paragraph);
        for m in &ex.citation_marks {
            bump(m);
        }
        bump(&ex.cited_title);
        bump(&ex.cited_abstract);
        bump(&ex.target_span);
    }
    Ok(vocab::build_from_counts(counts, max_size)?)
}

/// Assemble `[CLS] intro [SEP] context [SEP] marks [SEP] title [SEP] abstract`.
///
/// When the result exceeds `max_len`, tokens are dropped from the tail of
/// intro first, then abstract, then context, then title, then marks; `[CLS]`
/// and the four separators always survive, so the output length is exactly
/// `min(full_length, max_len)`.
pub fn build_model_input(ex: &CitationExample, vocab: &Vocab, max_len: usize) -> ModelInput {
    assert!(max_len >= 8, "max_len must be at least 8");
    let mut intro = vocab.encode(&ex.intro_text);
    let mut context = vocab.encode(&ex.context_paragraph);
    let mut marks = Vec::new();
    for m in &ex.citation_marks {
        marks.extend(vocab.encode(m));
    }
    let mut title = vocab.encode(&ex.cited_title);
    let mut abstract_ = vocab.encode(&ex.cited_abstract);

    let structural = 1 + 4; // CLS + four separators
    let content_len = intro.len() + context.len() + marks.len() + title.len() + abstract_.len();
    let mut over = (structural + content_len).saturating_sub(max_len);
    let truncated = over;
    for section in [
        &mut intro,
        &mut abstract_,
        &mut context,
        &mut title,
        &mut marks,
    ] {
        if over == 0 {
            break;
        }
        let cut = over.min(section.len());
        section.truncate(section.len() - cut);
        over -= cut;
    }

    let mut ids = Vec::with_capacity(structural + content_len - truncated);
    ids.push(vocab::CLS);
    ids.extend(&intro);
    ids.push(vocab::SEP);
    ids.extend(&context);
    ids.push(vocab::SEP);
    ids.extend(&marks);
    ids.push(vocab::SEP);
    ids.extend(&title);
    ids.push(vocab::SEP);
    ids.extend(&abstract_);
    ModelInput {
        seq: TokenSequence::new(ids),
        truncated,
    }
}

/// Token count of the target span; BOS/EOS are never part of it.
pub fn target_length(ex: &CitationExample, vocab: &Vocab) -> Result<usize, CorpusError> {
    if ex.target_span.trim().is_empty() {
        return Err(CorpusError::Schema {
            example_id: ex.example_id.clone(),
            field: "target_span",
            reason: "must be non-empty".into(),
        });
    }
    Ok(vocab.encode(&ex.target_span).len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub histogram: Vec<HistogramBin>,
}

/// Mean/population-std/histogram of target lengths.
pub fn length_stats(
    corpus: &Corpus,
    vocab: &Vocab,
    bin_width: u32,
) -> Result<LengthStats, CorpusError> {
    if corpus.examples.is_empty() {
        return Err(CorpusError::Empty);
    }
    let lengths: Vec<usize> = corpus
        .examples
        .iter()
        .map(|ex| target_length(ex, vocab))
        .collect::<Result<_, _>>()?;
    let n = lengths.len();
    let mean = lengths.iter().sum::<usize>() as f64 / n as f64;
    let var = lengths
        .iter()
        .map(|&l| (l as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let signed: Vec<i64> = lengths.iter().map(|&l| l as i64).collect();
    Ok(LengthStats {
        mean,
        std: var.sqrt(),
        n,
        histogram: bin_signed(&signed, bin_width),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{CLS, MASK, SEP, UNK};

    pub(crate) fn example(id: &str) -> CitationExample {
        CitationExample {
            example_id: id.to_string(),
            citing_paper_id: "paper1".to_string(),
            intro_text: "we study summarization".to_string(),
            context_paragraph: "prior work [CITE_MASK] explored this".to_string(),
            citation_marks: vec!["Smith et al. (2023)".to_string()],
            cited_title: "a study of things".to_string(),
            cited_abstract: "this paper proposes a method for things".to_string(),
            citation_type: CitationType::Dominant,
            target_span: "smith et al proposed a method".to_string(),
        }
    }

    fn small_corpus() -> Corpus {
        Corpus {
            examples: vec![example("e1"), example("e2")],
            split: Split::Train,
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_examples_and_order() {
        let dir = std::env::temp_dir().join(format!("citelen-corpus-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.jsonl");
        let mut corpus = small_corpus();
        corpus.examples.push(example("e3"));
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path, Split::Train).unwrap();
        assert_eq!(loaded, corpus);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn malformed_json_names_line_number() {
        let dir = std::env::temp_dir().join(format!("citelen-corpus-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        let good = serde_json::to_string(&example("e1")).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        let err = load_corpus(&path, Split::Train).unwrap_err();
        assert!(
            matches!(err, CorpusError::MalformedLine { line: 2, .. }),
            "{err}"
        );
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn missing_field_is_a_parse_error() {
        let dir = std::env::temp_dir().join(format!("citelen-corpus-mf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("missing.jsonl");
        let mut value = serde_json::to_value(example("e1")).unwrap();
        value.as_object_mut().unwrap().remove("cited_abstract");
        std::fs::write(&path, format!("{value}\n")).unwrap();
        let err = load_corpus(&path, Split::Train).unwrap_err();
        assert!(err.to_string().contains("cited_abstract"), "{err}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn two_masks_violate_the_invariant() {
        let mut ex = example("e1");
        ex.context_paragraph = "a [CITE_MASK] b [CITE_MASK] c".to_string();
        let err = validate(&ex).unwrap_err();
        match err {
            CorpusError::Schema {
                example_id, field, ..
            } => {
                assert_eq!(example_id, "e1");
                assert_eq!(field, "context_paragraph");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn zero_masks_violate_the_invariant() {
        let mut ex = example("e1");
        ex.context_paragraph = "no mask here".to_string();
        assert!(validate(&ex).is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = std::env::temp_dir().join(format!("citelen-corpus-dup-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dup.jsonl");
        let line = serde_json::to_string(&example("e1")).unwrap();
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(
            load_corpus(&path, Split::Train),
            Err(CorpusError::DuplicateId(_))
        ));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn model_input_layout_degenerate_sections() {
        let mut ex = example("e1");
        ex.intro_text = String::new();
        ex.context_paragraph = MASK_TOKEN.to_string();
        ex.citation_marks = vec!["A (2020)".to_string()];
        ex.cited_title = String::new();
        ex.cited_abstract = String::new();
        let vocab = build_vocab(
            &Corpus {
                examples: vec![ex.clone()],
                split: Split::Train,
            },
            64,
        )
        .unwrap();
        let input = build_model_input(&ex, &vocab, 64);
        let mark_ids = vocab.encode("A (2020)");
        let mut expected = vec![CLS, SEP, MASK, SEP];
        expected.extend(&mark_ids);
        expected.extend([SEP, SEP]);
        assert_eq!(input.seq.ids, expected);
        assert_eq!(input.truncated, 0);
    }

    #[test]
    fn truncation_hits_max_len_exactly_with_cls_first() {
        let ex = example("e1");
        let vocab = build_vocab(&small_corpus(), 128).unwrap();
        let input = build_model_input(&ex, &vocab, 8);
        assert_eq!(input.seq.len(), 8);
        assert_eq!(input.seq.ids[0], CLS);
        assert!(input.truncated > 0);
    }

    #[test]
    fn untruncated_input_counts_content_plus_structural() {
        // Hand count: intro 3, context 5 (incl mask), marks 7, title 4,
        // abstract 7 = 26 content tokens; plus CLS and 4 separators = 31.
        let ex = example("e1");
        let vocab = build_vocab(&small_corpus(), 128).unwrap();
        let input = build_model_input(&ex, &vocab, 512);
        assert_eq!(input.seq.len(), 26 + 4 + 1);
        assert_eq!(input.truncated, 0);
        assert_eq!(input.seq.ids[0], CLS);
    }

    #[test]
    fn truncation_drops_intro_before_abstract() {
        let ex = example("e1");
        let vocab = build_vocab(&small_corpus(), 128).unwrap();
        // Full is 31; removing 3 should exactly consume the intro.
        let input = build_model_input(&ex, &vocab, 28);
        assert_eq!(input.seq.len(), 28);
        assert_eq!(input.truncated, 3);
        // intro gone: CLS directly followed by SEP.
        assert_eq!(input.seq.ids[1], SEP);
        // abstract still intact at the tail.
        let abstract_ids = vocab.encode(&ex.cited_abstract);
        assert_eq!(
            &input.seq.ids[input.seq.len() - abstract_ids.len()..],
            &abstract_ids[..]
        );
    }

    #[test]
    fn target_length_counts_tokenizer_tokens() {
        let vocab = build_vocab(&small_corpus(), 128).unwrap();
        let mut ex = example("e1");
        ex.target_span = "one two three four five".to_string();
        assert_eq!(target_length(&ex, &vocab).unwrap(), 5);
        // Hand tokenization: smith / et / al / . / ( / 2023 / ) / rocks -> 8.
        ex.target_span = "Smith et al. (2023) rocks".to_string();
        assert_eq!(target_length(&ex, &vocab).unwrap(), 8);
        ex.target_span = "  ".to_string();
        assert!(target_length(&ex, &vocab).is_err());
    }

    #[test]
    fn oov_target_tokens_still_count() {
        let vocab = build_vocab(&small_corpus(), 128).unwrap();
        let mut ex = example("e1");
        ex.target_span = "zzz qqq".to_string();
        assert_eq!(vocab.encode(&ex.target_span), vec![UNK, UNK]);
        assert_eq!(target_length(&ex, &vocab).unwrap(), 2);
    }

    #[test]
    fn length_stats_mean_and_std() {
        let vocab = build_vocab(&small_corpus(), 128).unwrap();
        let mut c = Corpus {
            examples: Vec::new(),
            split: Split::Train,
        };
        for (i, words) in [10usize, 20, 30].iter().enumerate() {
            let mut ex = example(&format!("s{i}"));
            ex.target_span = vec!["method"; *words].join(" ");
            c.examples.push(ex);
        }
        let stats = length_stats(&c, &vocab, 10).unwrap();
        assert!((stats.mean - 20.0).abs() < 1e-12);
        let expected_std = (200.0f64 / 3.0).sqrt();
        assert!((stats.std - expected_std).abs() < 1e-12);
        let total: usize = stats.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn length_stats_single_example_std_zero() {
        let vocab = build_vocab(&small_corpus(), 128).unwrap();
        let mut ex = example("only");
        ex.target_span = ["w"; 7].join(" ");
        let c = Corpus {
            examples: vec![ex],
            split: Split::Train,
        };
        let stats = length_stats(&c, &vocab, 5).unwrap();
        assert_eq!(stats.mean, 7.0);
        assert_eq!(stats.std, 0.0);
    }

    #[test]
    fn empty_corpus_stats_error() {
        let vocab = Vocab::new(vec!["a".into()]);
        let c = Corpus {
            examples: vec![],
            split: Split::Train,
        };
        assert!(matches!(
            length_stats(&c, &vocab, 5),
            Err(CorpusError::Empty)
        ));
    }
}
