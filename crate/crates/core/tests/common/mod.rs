//! Brute-force oracles and finite-difference helpers shared by the
//! integration tests.
#![allow(dead_code)]

use calirank::losses::{LossSpec, Transformation};
use calirank::net::ScorerNetwork;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every loss the library implements, combined ones at a few alphas.
pub fn all_losses() -> Vec<LossSpec> {
    let mut v = vec![
        LossSpec::sigmoid_ce(),
        LossSpec::pairwise_logistic(),
        LossSpec::softmax_ce(),
        LossSpec::list_ce(Transformation::Exp),
        LossSpec::list_ce(Transformation::Sigmoid),
    ];
    for a in [0.1, 0.5, 0.9] {
        v.push(LossSpec::multi_objective(a).unwrap());
        v.push(LossSpec::rcr(a).unwrap());
    }
    v
}

/// `||a - b|| / max(||a||, ||b||)`, or the plain difference norm when both
/// gradients are below `1e-6`, where finite differences are dominated by
/// cancellation.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-6 {
        diff
    } else {
        diff / scale
    }
}

pub fn fd_score_grad(spec: &LossSpec, s: &[f64], y: &[f64], h: f64) -> Vec<f64> {
    (0..s.len())
        .map(|i| {
            let mut up = s.to_vec();
            let mut down = s.to_vec();
            up[i] += h;
            down[i] -= h;
            (spec.evaluate(&up, y).loss - spec.evaluate(&down, y).loss) / (2.0 * h)
        })
        .collect()
}

pub fn random_list(rng: &mut impl Rng, n: usize, soft: bool) -> (Vec<f64>, Vec<f64>) {
    let s = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let y = (0..n)
        .map(|_| {
            if soft {
                rng.random_range(0.0..1.0)
            } else {
                f64::from(rng.random_bool(0.4))
            }
        })
        .collect();
    (s, y)
}

const KINK_MARGIN: f64 = 5e-3;

/// Relative error between backprop and central differences of
/// `spec(net(X), y)` with respect to every parameter. Dropout is off.
pub fn network_grad_error(spec: &LossSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.random_range(1..=5);
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
    let n = rng.random_range(1..=8);
    let mut net = ScorerNetwork::init(f, &hidden, 0.0, seed).unwrap();
    let x = Array2::from_shape_fn((n, f), |_| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();

    // Non-zero biases so every parameter matters, redrawn until no ReLU input
    // lies within reach of the finite-difference step.
    let (scores, trace) = loop {
        for layer in &mut net.params.layers {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let (scores, trace) = net.forward(x.view(), true, &mut rng).unwrap();
        let margin = trace
            .pre_activations
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if margin > KINK_MARGIN {
            break (scores, trace);
        }
    };
    let g = spec.evaluate(&scores, &y).grad;
    let analytic: Vec<f64> = net.backward(&trace, &g).unwrap().iter().copied().collect();

    let h = 1e-4;
    let loss_at = |net: &ScorerNetwork| spec.evaluate(&net.predict(x.view()).unwrap(), &y).loss;
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let mut up = net.clone();
        *up.params.iter_mut().nth(i).unwrap() += h;
        let mut down = net.clone();
        *down.params.iter_mut().nth(i).unwrap() -= h;
        numeric.push((loss_at(&up) - loss_at(&down)) / (2.0 * h));
    }
    rel_err(&analytic, &numeric)
}

/// DCG@k with each document's rank found by pairwise comparison: documents
/// with higher scores, or equal scores and lower index, come first.
pub fn dcg_oracle(scores: &[f64], labels: &[f64], k: usize) -> f64 {
    let n = scores.len();
    let mut total = 0.0;
    for i in 0..n {
        let rank = (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count();
        if rank < k {
            total += (2f64.powf(labels[i]) - 1.0) / ((rank + 2) as f64).log2();
        }
    }
    total
}

/// Average precision by enumerating every distinct prediction as a
/// threshold, from highest to lowest.
pub fn aucpr_oracle(predictions: &[f64], labels: &[f64]) -> f64 {
    let positives = labels.iter().filter(|&&y| y > 0.5).count() as f64;
    let mut thresholds = predictions.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let selected: Vec<usize> = (0..predictions.len()).filter(|&i| predictions[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| labels[i] > 0.5).count() as f64;
        let recall = tp / positives;
        let precision = tp / selected.len() as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// O(n^2) dominance: some other point is >= on both axes and > on one.
pub fn dominated_oracle(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(x, y)| {
            points
                .iter()
                .any(|&(a, b)| a >= x && b >= y && (a > x || b > y))
        })
        .collect()
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}
