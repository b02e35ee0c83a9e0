//! Synthetic worlds with known click probabilities, used to check where each
//! loss puts its minimum.
//!
//! Every document carries a ground-truth probability `P_i = E[y_i | q, x_i]`.
//! The fixed-point checks optimize one free score per document directly on
//! the expected labels `P`, so the result reflects the loss geometry alone and
//! not the capacity of a model.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::letor::RawExample;
use crate::losses::{list_ce, softmax_ce, LossKind, LossSpec, Transformation};
use crate::util::{logit, sigmoid};

pub const MIN_PROB: f64 = 0.01;
pub const MAX_PROB: f64 = 0.99;
/// Noise columns appended after the `logit(P)` feature.
pub const DISTRACTOR_DIMS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldGroup {
    pub probabilities: Vec<f64>,
    /// `N x (1 + DISTRACTOR_DIMS)`; column 0 is `logit(P_i)`.
    pub features: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub groups: Vec<WorldGroup>,
    pub seed: u64,
}

impl SyntheticWorld {
    /// World with fixed probabilities; distractor columns drawn from `seed`.
    pub fn from_probabilities(probabilities: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = probabilities
            .into_iter()
            .map(|p| {
                if let Some(bad) = p.iter().find(|&&v| !(MIN_PROB..=MAX_PROB).contains(&v)) {
                    return Err(Error::InvalidArgument(format!(
                        "probability {bad} outside [{MIN_PROB}, {MAX_PROB}]"
                    )));
                }
                Ok(WorldGroup {
                    features: world_features(&p, &mut rng),
                    probabilities: p,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { groups, seed })
    }
}

fn world_features(p: &[f64], rng: &mut ChaCha8Rng) -> Array2<f64> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut f = Array2::zeros((p.len(), 1 + DISTRACTOR_DIMS));
    for (i, &pi) in p.iter().enumerate() {
        f[[i, 0]] = logit(pi);
        for j in 1..=DISTRACTOR_DIMS {
            f[[i, j]] = noise.sample(rng);
        }
    }
    f
}

/// `num_queries` lists of `list_size` documents with `P_i ~ U[0.01, 0.99]`.
pub fn make_world(num_queries: usize, list_size: usize, seed: u64) -> Result<SyntheticWorld> {
    if num_queries == 0 {
        return Err(Error::InvalidArgument("num_queries must be >= 1".into()));
    }
    if list_size < 2 {
        return Err(Error::InvalidArgument("list_size must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = (0..num_queries)
        .map(|_| {
            let p: Vec<f64> = (0..list_size)
                .map(|_| rng.random_range(MIN_PROB..=MAX_PROB))
                .collect();
            WorldGroup {
                features: world_features(&p, &mut rng),
                probabilities: p,
            }
        })
        .collect();
    Ok(SyntheticWorld { groups, seed })
}

/// Independent Bernoulli(P_i) labels for every document.
pub fn sample_labels<R: Rng + ?Sized>(world: &SyntheticWorld, rng: &mut R) -> Vec<Vec<f64>> {
    world
        .groups
        .iter()
        .map(|g| {
            g.probabilities
                .iter()
                .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScoreInit {
    Zeros,
    /// Uniform in `[-scale, scale]`.
    Random { seed: u64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointOptions {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Stop once the gradient's infinity norm falls below this.
    pub tol: f64,
    pub init: ScoreInit,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_steps: 100_000,
            tol: 1e-9,
            init: ScoreInit::Zeros,
        }
    }
}

/// Scores with an L2 norm above this are reported as diverged.
pub const DIVERGENCE_NORM: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupFixedPoint {
    pub scores: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
    pub diverged: bool,
    pub grad_norm: f64,
    /// `max_i |sigmoid(s_i) - P_i|`
    pub calibration_error: f64,
    /// `max_i |T(s_i)/sum_j T(s_j) - P_i/sum_j P_j|`
    pub ratio_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub loss: String,
    pub groups: Vec<GroupFixedPoint>,
    pub max_calibration_error: f64,
    pub max_ratio_error: f64,
    pub all_converged: bool,
    pub any_diverged: bool,
}

impl FixedPointReport {
    /// The error a loss is expected to drive to zero: calibration for losses
    /// with a pointwise term, ratio error for purely listwise ones.
    pub fn primary_error(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::SoftmaxCe | LossKind::ListCe => self.max_ratio_error,
            _ => self.max_calibration_error,
        }
    }
}

fn ratio_transformation(spec: &LossSpec) -> Transformation {
    match spec.kind {
        LossKind::ListCe | LossKind::SigmoidCePlusListCe => {
            spec.transformation.unwrap_or(Transformation::Sigmoid)
        }
        _ => Transformation::Exp,
    }
}

/// Gradient descent on free per-document scores against expected labels.
pub fn verify_fixed_point(
    spec: &LossSpec,
    world: &SyntheticWorld,
    opts: &FixedPointOptions,
) -> Result<FixedPointReport> {
    spec.validate()?;
    if spec.kind == LossKind::PairwiseLogistic {
        return Err(Error::InvalidArgument(
            "pairwise loss indicators are not defined on expected labels".into(),
        ));
    }
    let t = ratio_transformation(spec);
    let mut init_rng = match opts.init {
        ScoreInit::Random { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        ScoreInit::Zeros => None,
    };

    let mut groups = Vec::with_capacity(world.groups.len());
    for g in &world.groups {
        let p = &g.probabilities;
        let mut s: Vec<f64> = match (&opts.init, init_rng.as_mut()) {
            (ScoreInit::Random { scale, .. }, Some(rng)) => {
                p.iter().map(|_| rng.random_range(-scale..=*scale)).collect()
            }
            _ => vec![0.0; p.len()],
        };
        let mut steps = 0;
        let mut converged = false;
        let mut diverged = false;
        let mut grad_norm;
        loop {
            let r = spec.evaluate(&s, p);
            grad_norm = r.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if grad_norm < opts.tol {
                converged = true;
                break;
            }
            if steps == opts.max_steps {
                break;
            }
            for (si, gi) in s.iter_mut().zip(&r.grad) {
                *si -= opts.learning_rate * gi;
            }
            steps += 1;
            let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                diverged = true;
                break;
            }
        }

        let calibration_error = s
            .iter()
            .zip(p)
            .map(|(&si, &pi)| (sigmoid(si) - pi).abs())
            .fold(0.0, f64::max);
        let log_t: Vec<f64> = s.iter().map(|&v| t.log_value(v)).collect();
        let lse = crate::util::log_sum_exp(&log_t);
        let p_sum: f64 = p.iter().sum();
        let ratio_error = log_t
            .iter()
            .zip(p)
            .map(|(&lt, &pi)| ((lt - lse).exp() - pi / p_sum).abs())
            .fold(0.0, f64::max);
        groups.push(GroupFixedPoint {
            scores: s,
            steps,
            converged,
            diverged,
            grad_norm,
            calibration_error,
            ratio_error,
        });
    }

    Ok(FixedPointReport {
        loss: spec.name(),
        max_calibration_error: groups.iter().map(|g| g.calibration_error).fold(0.0, f64::max),
        max_ratio_error: groups.iter().map(|g| g.ratio_error).fold(0.0, f64::max),
        all_converged: groups.iter().all(|g| g.converged),
        any_diverged: groups.iter().any(|g| g.diverged),
        groups,
    })
}

/// Infinity norms of the expected gradients of sigmoid CE and ListCE(sigmoid)
/// at `s = logit(P)`. Both vanish for every `P`.
pub fn compatibility_residuals(probabilities: &[f64]) -> (f64, f64) {
    let s: Vec<f64> = probabilities.iter().map(|&p| logit(p)).collect();
    let inf = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let point = crate::losses::sigmoid_ce(&s, probabilities);
    let list = list_ce(Transformation::Sigmoid, &s, probabilities);
    (inf(&point.grad), inf(&list.grad))
}

/// Infinity norm of the expected softmax CE gradient at the sigmoid fixed
/// point `s = logit(P)`; non-zero unless `sum P = 1`.
pub fn softmax_residual_at_logits(probabilities: &[f64]) -> f64 {
    let s: Vec<f64> = probabilities.iter().map(|&p| logit(p)).collect();
    softmax_ce(&s, probabilities)
        .grad
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TranslationReport {
    pub loss: String,
    pub shift: f64,
    /// `|L(s + c) - L(s)|`
    pub loss_change: f64,
    /// `max_i |grad_i(s + c) - grad_i(s)|`
    pub grad_change: f64,
    /// Score norm before and after `steps` of gradient descent on binary labels.
    pub norm_start: f64,
    pub norm_end: f64,
    pub steps: usize,
}

impl TranslationReport {
    pub fn invariant(&self, tol: f64) -> bool {
        self.loss_change < tol && self.grad_change < tol
    }
}

/// Shifts every score by `shift` and measures how loss and gradient change,
/// then runs `steps` of plain gradient descent (LR 1) on a one-hot label list
/// and reports how far the scores drift.
pub fn verify_divergence_under_translation(
    spec: &LossSpec,
    scores: &[f64],
    labels: &[f64],
    shift: f64,
    steps: usize,
) -> Result<TranslationReport> {
    spec.validate()?;
    let base = spec.evaluate(scores, labels);
    let shifted_scores: Vec<f64> = scores.iter().map(|s| s + shift).collect();
    let shifted = spec.evaluate(&shifted_scores, labels);
    let grad_change = base
        .grad
        .iter()
        .zip(&shifted.grad)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let mut s = scores.to_vec();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_start = norm(&s);
    let mut binary = vec![0.0; scores.len()];
    if let Some(first) = binary.first_mut() {
        *first = 1.0;
    }
    for _ in 0..steps {
        let r = spec.evaluate(&s, &binary);
        for (si, gi) in s.iter_mut().zip(&r.grad) {
            *si -= gi;
        }
    }
    Ok(TranslationReport {
        loss: spec.name(),
        shift,
        loss_change: (base.loss - shifted.loss).abs(),
        grad_change,
        norm_start,
        norm_end: norm(&s),
        steps,
    })
}

/// One line of the verification report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    /// `below` when `value` must be under the threshold, `above` otherwise.
    pub direction: &'static str,
    pub passed: bool,
}

impl CheckRow {
    fn below(check: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            value,
            threshold,
            direction: "below",
            passed: value < threshold,
        }
    }

    fn above(check: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            value,
            threshold,
            direction: "above",
            passed: value > threshold,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub rows: Vec<CheckRow>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "[{}] {:<58} {:>12.3e} ({} {:.0e})",
                if r.passed { "PASS" } else { "FAIL" },
                r.check,
                r.value,
                r.direction,
                r.threshold
            );
        }
        let passed = self.rows.iter().filter(|r| r.passed).count();
        let _ = writeln!(out, "{passed}/{} checks passed", self.rows.len());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,value,threshold,direction,passed\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.check, r.value, r.threshold, r.direction, r.passed
            );
        }
        out
    }
}

/// Runs the standard set of loss-geometry checks on seeded synthetic worlds.
pub fn verify_suite(seed: u64) -> Result<VerificationReport> {
    let mut rows = Vec::new();
    let opts = FixedPointOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // ListCE(exp) against SoftmaxCE
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
        let a = list_ce(Transformation::Exp, &s, &y);
        let b = softmax_ce(&s, &y);
        worst = worst.max((a.loss - b.loss).abs());
        for (x, z) in a.grad.iter().zip(&b.grad) {
            worst = worst.max((x - z).abs());
        }
    }
    rows.push(CheckRow::below("list_ce(exp) == softmax_ce", worst, 1e-12));

    // compatibility of the two RCR components at logit(P)
    let world = make_world(100, 16, seed)?;
    let mut point = 0.0f64;
    let mut list = 0.0f64;
    for g in &world.groups {
        let (a, b) = compatibility_residuals(&g.probabilities);
        point = point.max(a);
        list = list.max(b);
    }
    rows.push(CheckRow::below("sigmoid_ce gradient at logit(P)", point, 1e-9));
    rows.push(CheckRow::below("list_ce(sigmoid) gradient at logit(P)", list, 1e-9));

    let small = make_world(20, 8, seed.wrapping_add(1))?;
    for t in [Transformation::Exp, Transformation::Sigmoid] {
        let r = verify_fixed_point(&LossSpec::list_ce(t), &small, &opts)?;
        rows.push(CheckRow::below(
            format!("list_ce({t}) minimizer ratio error"),
            r.max_ratio_error,
            1e-6,
        ));
    }

    let varied: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let n = rng.random_range(2..=16);
            (0..n).map(|_| rng.random_range(MIN_PROB..=MAX_PROB)).collect()
        })
        .collect();
    let varied = SyntheticWorld::from_probabilities(varied, seed)?;
    for alpha in [0.1, 0.5, 0.9] {
        let r = verify_fixed_point(&LossSpec::rcr(alpha)?, &varied, &opts)?;
        rows.push(CheckRow::below(
            format!("rcr(alpha={alpha}) calibration error"),
            r.max_calibration_error,
            1e-6,
        ));
    }

    let conflict = SyntheticWorld::from_probabilities(vec![vec![0.6, 0.2]], seed)?;
    let multi = verify_fixed_point(&LossSpec::multi_objective(0.5)?, &conflict, &opts)?;
    rows.push(CheckRow::above(
        "sigmoid_ce+softmax_ce(alpha=0.5) calibration error, P=[0.6,0.2]",
        multi.max_calibration_error,
        0.01,
    ));
    let rcr = verify_fixed_point(&LossSpec::rcr(0.5)?, &conflict, &opts)?;
    rows.push(CheckRow::below(
        "rcr(alpha=0.5) calibration error, P=[0.6,0.2]",
        rcr.max_calibration_error,
        1e-6,
    ));
    rows.push(CheckRow::above(
        "softmax_ce gradient at logit(P), P=[0.6,0.2]",
        softmax_residual_at_logits(&[0.6, 0.2]),
        0.0,
    ));

    let s = [0.3, -1.2, 0.8, 2.0];
    let y = [1.0, 0.0, 0.0, 1.0];
    for spec in [LossSpec::softmax_ce(), LossSpec::pairwise_logistic()] {
        let r = verify_divergence_under_translation(&spec, &s, &y, 100.0, 0)?;
        rows.push(CheckRow::below(
            format!("{} change under s+100", spec.name()),
            r.loss_change.max(r.grad_change),
            1e-9,
        ));
    }
    let r = verify_divergence_under_translation(&LossSpec::sigmoid_ce(), &s, &y, 1.0, 0)?;
    rows.push(CheckRow::above("sigmoid_ce change under s+1", r.loss_change, 0.01));
    let r = verify_divergence_under_translation(&LossSpec::list_ce(Transformation::Sigmoid), &s, &y, 10.0, 0)?;
    rows.push(CheckRow::above("list_ce(sigmoid) change under s+10", r.loss_change, 0.0));

    Ok(VerificationReport { rows })
}

/// Shape of the synthetic LETOR data used for desk-scale experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLetorConfig {
    pub train_queries: usize,
    pub validation_queries: usize,
    pub test_queries: usize,
    pub min_docs: usize,
    pub max_docs: usize,
    pub informative_features: usize,
    pub noise_features: usize,
    pub seed: u64,
}

impl Default for SyntheticLetorConfig {
    fn default() -> Self {
        Self {
            train_queries: 400,
            validation_queries: 100,
            test_queries: 100,
            min_docs: 10,
            max_docs: 40,
            informative_features: 8,
            noise_features: 4,
            seed: 7,
        }
    }
}

/// Graded LETOR examples generated from a hidden click model. Each query has a
/// latent base rate that is only weakly visible through one query-level
/// feature; document relevance is a non-linear function of the informative
/// features. Positive grades are spread over 1..=4.
pub fn synthetic_letor(cfg: &SyntheticLetorConfig) -> [Vec<RawExample>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let k = cfg.informative_features.max(1);
    let weights: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
    let mut qid = 0usize;
    let mut split = |queries: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::new();
        for _ in 0..queries {
            qid += 1;
            let base = -1.0 + 1.5 * normal.sample(rng);
            let visible_base = base + 1.5 * normal.sample(rng);
            let n = rng.random_range(cfg.min_docs..=cfg.max_docs.max(cfg.min_docs));
            for _ in 0..n {
                let x: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
                let linear: f64 = x.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() / (k as f64).sqrt();
                let interaction = if k >= 2 { x[0] * x[1] } else { 0.0 };
                let p = sigmoid(base + 1.5 * linear + 0.75 * interaction - 0.5 * x[k - 1].powi(2));
                let grade = if rng.random::<f64>() < p {
                    rng.random_range(1..=4)
                } else {
                    0
                };
                let mut features = std::collections::BTreeMap::new();
                features.insert(1, visible_base);
                for (j, v) in x.iter().enumerate() {
                    features.insert(2 + j as u32, *v);
                }
                for j in 0..cfg.noise_features {
                    features.insert((2 + k + j) as u32, normal.sample(rng));
                }
                out.push(RawExample {
                    label: grade,
                    query_id: qid.to_string(),
                    features,
                });
            }
        }
        out
    };
    let train = split(cfg.train_queries, &mut rng);
    let validation = split(cfg.validation_queries, &mut rng);
    let test = split(cfg.test_queries, &mut rng);
    [train, validation, test]
}
