//! Property tests for the tokenizer, the positional-encoding identities,
//! and the metric invariants.

use citelen::hist::bin_signed;
use citelen::ldpe::{ldpe_value, sinusoidal_pe};
use citelen::metrics::{control_variance, mae, rouge_l, rouge_n};
use citelen::text::{detokenize, tokenize};
use proptest::prelude::*;

fn token_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,8}",
        "[0-9]{1,4}",
        Just("(".to_string()),
        Just(")".to_string()),
        Just(".".to_string()),
        Just(",".to_string()),
        Just("[CITE_MASK]".to_string()),
    ]
}

proptest! {
    #[test]
    fn detokenize_tokenize_round_trip(tokens in prop::collection::vec(token_strategy(), 0..40)) {
        let text = detokenize(&tokens);
        let round = tokenize(&text);
        prop_assert_eq!(round, tokens);
    }

    #[test]
    fn tokenize_is_idempotent_through_detokenize(s in ".{0,80}") {
        let once = tokenize(&s);
        let twice = tokenize(&detokenize(&once));
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn ldpe_equals_sinusoidal_at_remaining_budget(
        len in 0i64..200,
        pos in 0usize..220,
        pair_count in 1usize..12,
    ) {
        let d = 2 * pair_count;
        let pe = sinusoidal_pe::<f64>(len - pos as i64, d);
        for (k, &want) in pe.iter().enumerate() {
            let v = ldpe_value(pos, len as f64, k, d);
            prop_assert!((v - want).abs() < 1e-12, "pos {} len {} k {}", pos, len, k);
        }
    }

    #[test]
    fn ldpe_shift_invariance(
        len in 0.0f64..100.0,
        pos in 0usize..64,
        shift in 0usize..50,
        pair_count in 1usize..10,
    ) {
        let d = 2 * pair_count;
        for k in 0..d {
            let a = ldpe_value(pos, len, k, d);
            let b = ldpe_value(pos + shift, len + shift as f64, k, d);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ldpe_entries_bounded(
        len in -50.0f64..150.0,
        pos in 0usize..64,
        pair_count in 1usize..10,
    ) {
        let d = 2 * pair_count;
        for k in 0..d {
            let v = ldpe_value(pos, len, k, d);
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn rouge_f1_symmetric_under_swap(
        a in prop::collection::vec("[a-e]", 0..20),
        b in prop::collection::vec("[a-e]", 0..20),
        n in 1usize..3,
    ) {
        let ab = rouge_n::<f64>(&a, &b, n).unwrap();
        let ba = rouge_n::<f64>(&b, &a, n).unwrap();
        prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
        prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
        prop_assert!((ab.recall - ba.precision).abs() < 1e-12);
        let labs = rouge_l::<f64>(&a, &b);
        let lba = rouge_l::<f64>(&b, &a);
        prop_assert!((labs.f1 - lba.f1).abs() < 1e-12);
    }

    #[test]
    fn rouge_scores_lie_in_unit_interval(
        a in prop::collection::vec("[a-d]", 0..16),
        b in prop::collection::vec("[a-d]", 0..16),
    ) {
        for n in 1..=2 {
            let prf = rouge_n::<f64>(&a, &b, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&prf.f1));
        }
        let l = rouge_l::<f64>(&a, &b);
        prop_assert!((0.0..=1.0).contains(&l.f1));
    }

    #[test]
    fn control_variance_permutation_invariant_and_linear(
        pairs in prop::collection::vec((0usize..60, 0usize..60), 1..30),
        seed in 0u64..1000,
    ) {
        let v = control_variance::<f64>(&pairs).unwrap();
        let mut shuffled = pairs.clone();
        let mut rng = citelen::rng::substream(seed, "prop", 0);
        citelen::rng::shuffle(&mut rng, &mut shuffled);
        let vs = control_variance::<f64>(&shuffled).unwrap();
        prop_assert!((v - vs).abs() < 1e-12);
        // Linear in the per-pair squared errors: value equals the direct sum.
        let direct: f64 = pairs
            .iter()
            .map(|&(l, t)| (l as f64 - t as f64).powi(2))
            .sum::<f64>() * 0.001 / pairs.len() as f64;
        prop_assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn mae_is_at_most_rmse(
        pairs in prop::collection::vec((0.0f64..80.0, 0usize..80), 1..30),
    ) {
        let float_pairs: Vec<(f64, f64)> =
            pairs.iter().map(|&(p, t)| (p, t as f64)).collect();
        let mean_abs = mae(&float_pairs).unwrap();
        let rmse = (float_pairs
            .iter()
            .map(|&(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / float_pairs.len() as f64)
            .sqrt();
        prop_assert!(mean_abs <= rmse + 1e-12);
    }

    #[test]
    fn histogram_counts_always_sum_to_n(
        values in prop::collection::vec(-100i64..100, 0..60),
        width in 1u32..20,
    ) {
        let bins = bin_signed(&values, width);
        let total: usize = bins.iter().map(|b| b.count).sum();
        prop_assert_eq!(total, values.len());
        for b in &bins {
            prop_assert_eq!(b.upper - b.lower, width as i64);
        }
    }
}

#[test]
fn model_input_always_starts_with_cls_and_respects_max_len() {
    use citelen::corpus::build_model_input;
    use citelen::synth::{synth_corpus, SynthProfile};
    let corpus = synth_corpus(50, 77, &SynthProfile::default());
    let vocab = citelen::corpus::build_vocab(&corpus, 512).unwrap();
    for max_len in [8usize, 12, 32, 96, 512] {
        for ex in &corpus.examples {
            let input = build_model_input(ex, &vocab, max_len);
            assert_eq!(input.seq.ids[0], citelen::vocab::CLS);
            assert!(input.seq.len() <= max_len);
        }
    }
}
