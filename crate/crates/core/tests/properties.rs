use calirank::calibrate::{fit_platt, fit_platt_traced, PlattModel, PlattOptions};
use calirank::letor::{parse_letor_str, RankingDataset, RawExample, SplitTag};
use calirank::losses::{list_ce, softmax_ce, LossSpec, Transformation};
use calirank::metrics::{ece_query, ndcg_at_k};
use calirank::net::{AdamConfig, AdamState, ScorerNetwork};
use calirank::oracle::{compatibility_residuals, verify_divergence_under_translation};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn examples() -> impl Strategy<Value = Vec<RawExample>> {
    let example = (
        0u32..5,
        0u8..6,
        prop::collection::btree_map(1u32..8, -1e6f64..1e6, 0..7),
    )
        .prop_map(|(label, q, features)| RawExample {
            label,
            query_id: format!("q{q}"),
            features,
        });
    prop::collection::vec(example, 1..60)
}

proptest! {
    #[test]
    fn letor_round_trip_is_bit_exact(raw in examples()) {
        let ds = RankingDataset::from_examples(&raw, SplitTag::Train, 7).unwrap();
        prop_assert_eq!(ds.document_count(), raw.len());
        let mut text = Vec::new();
        ds.write_letor(&mut text).unwrap();
        let parsed = parse_letor_str(std::str::from_utf8(&text).unwrap()).unwrap();
        let again = RankingDataset::from_examples(&parsed, SplitTag::Train, 7).unwrap();
        prop_assert_eq!(ds.groups.len(), again.groups.len());
        for (a, b) in ds.groups.iter().zip(&again.groups) {
            prop_assert_eq!(&a.query_id, &b.query_id);
            prop_assert_eq!(&a.labels, &b.labels);
            let bits = |m: &Array2<f64>| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.features), bits(&b.features));
        }
        let bin = again.binarize_labels();
        prop_assert!(bin.groups.iter().flat_map(|g| &g.labels).all(|&y| y == 0.0 || y == 1.0));
    }

    #[test]
    fn normalized_train_split_is_standardized(raw in examples()) {
        let ds = RankingDataset::from_examples(&raw, SplitTag::Train, 7).unwrap();
        let stats = ds.fit_normalization().unwrap();
        let ds = ds.apply_normalization(&stats).unwrap();
        let n = ds.document_count() as f64;
        for j in 0..7 {
            if stats.0[j].stddev == 0.0 {
                continue;
            }
            let col: Vec<f64> = ds.groups.iter().flat_map(|g| g.features.column(j).to_vec()).collect();
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9, "mean {mean}");
            prop_assert!((sd - 1.0).abs() < 1e-9, "sd {sd}");
        }
    }

    #[test]
    fn softmax_and_pairwise_are_translation_invariant(
        s in prop::collection::vec(-5.0f64..5.0, 2..12),
        c in -50.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y: Vec<f64> = s.iter().map(|_| f64::from(rng.random_bool(0.5))).collect();
        y[0] = 1.0;
        for spec in [LossSpec::softmax_ce(), LossSpec::pairwise_logistic()] {
            let r = verify_divergence_under_translation(&spec, &s, &y, c, 0).unwrap();
            prop_assert!(r.invariant(1e-9), "{}: {:?}", spec.name(), r);
        }
    }

    #[test]
    fn list_ce_exp_equals_softmax_ce(
        s in prop::collection::vec(-30.0f64..30.0, 1..=50),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = s.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let a = list_ce(Transformation::Exp, &s, &y);
        let b = softmax_ce(&s, &y);
        prop_assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, z) in a.grad.iter().zip(&b.grad) {
            prop_assert!((x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn rcr_components_share_the_logit_fixed_point(
        p in prop::collection::vec(0.01f64..0.99, 1..=16),
    ) {
        let (pointwise, listwise) = compatibility_residuals(&p);
        prop_assert!(pointwise < 1e-9 && listwise < 1e-9, "{pointwise} {listwise}");
    }

    #[test]
    fn platt_preserves_ranking(
        s in prop::collection::vec(-5.0f64..5.0, 2..40),
        a in 0.01f64..5.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = s.iter().map(|_| f64::from(rng.random_bool(0.3))).collect();
        let model = PlattModel { scale: a, offset: b };
        prop_assert_eq!(ndcg_at_k(&model.apply(&s), &y, 10), ndcg_at_k(&s, &y, 10));
    }

    #[test]
    fn platt_objective_never_increases(
        s in prop::collection::vec(-5.0f64..5.0, 4..80),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y: Vec<f64> = s.iter().map(|&v| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-v).exp()))).collect();
        y[0] = 0.0;
        y[1] = 1.0;
        let fit = fit_platt_traced(&s, &y, PlattOptions::default()).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", fit.objective_trace);
        }
    }

    #[test]
    fn ece_ignores_order_within_a_bin(
        y in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0)], 10),
        p in 0.0f64..1.0,
    ) {
        // ten equal predictions form one tie block; any label order gives the same ECE
        let preds = vec![p; 10];
        let mut rev = y.clone();
        rev.reverse();
        prop_assert!((ece_query(&preds, &y, 1) - ece_query(&preds, &rev, 1)).abs() < 1e-15);
        let mean = y.iter().sum::<f64>() / 10.0;
        prop_assert!(ece_query(&[mean; 10], &y, 1) < 1e-12);
    }
}

#[test]
fn sigmoid_losses_are_not_translation_invariant() {
    let s = [0.3, -1.2, 0.8, 2.0];
    let y = [1.0, 0.0, 0.0, 1.0];
    let r = verify_divergence_under_translation(&LossSpec::sigmoid_ce(), &s, &y, 1.0, 0).unwrap();
    assert!(r.loss_change > 0.01);
    let r = verify_divergence_under_translation(&LossSpec::list_ce(Transformation::Sigmoid), &s, &y, 10.0, 0).unwrap();
    assert!(r.loss_change > 0.0);
    // softmax scores drift without bound on binary labels
    let r = verify_divergence_under_translation(&LossSpec::softmax_ce(), &[0.0; 4], &[0.0; 4], 0.0, 2000).unwrap();
    assert!(r.norm_end > r.norm_start + 5.0, "{r:?}");
}

#[test]
fn dropout_is_unbiased_in_expectation() {
    let mut net = ScorerNetwork::init(3, &[6], 0.5, 11).unwrap();
    net.params.layers[0].bias.fill(0.3);
    let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.5) * 0.7 + j as f64 * 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, eval) = net.forward(x.view(), false, &mut rng).unwrap();
    let clean = &eval.inputs[1];
    let reps = 20_000;
    let mut sum = Array2::<f64>::zeros(clean.dim());
    let mut sq = Array2::<f64>::zeros(clean.dim());
    for _ in 0..reps {
        let (_, t) = net.forward(x.view(), true, &mut rng).unwrap();
        sum += &t.inputs[1];
        sq += &t.inputs[1].mapv(|v| v * v);
    }
    let n = reps as f64;
    for ((s, q), c) in sum.iter().zip(sq.iter()).zip(clean.iter()) {
        let mean = s / n;
        let se = ((q / n - mean * mean).max(0.0) / n).sqrt();
        assert!((mean - c).abs() <= 3.0 * se + 1e-12, "mean {mean} clean {c} se {se}");
    }
}

#[test]
fn training_steps_are_deterministic() {
    let run = || {
        let mut net = ScorerNetwork::init(4, &[8, 4], 0.5, 3).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::with_learning_rate(0.01));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 4 + j) as f64).sin());
        let y = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let spec = LossSpec::rcr(0.5).unwrap();
        for _ in 0..10 {
            let (s, trace) = net.forward(x.view(), true, &mut rng).unwrap();
            let g = net.backward(&trace, &spec.evaluate(&s, &y).grad).unwrap();
            adam.step(&mut net, &g).unwrap();
        }
        net.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn platt_recovers_shifted_logistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s: Vec<f64> = (0..20_000).map(|_| rng.random_range(-4.0..4.0)).collect();
    let y: Vec<f64> = s
        .iter()
        .map(|&v| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-(2.0 * v - 1.0)).exp())))
        .collect();
    let m = fit_platt(&s, &y, PlattOptions::default()).unwrap();
    assert!((m.scale - 2.0).abs() < 0.1 && (m.offset + 1.0).abs() < 0.1, "{m:?}");
}
