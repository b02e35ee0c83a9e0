use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PerQueryMetrics;

pub const DEFAULT_RESAMPLES: usize = 100_000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Better,
    Worse,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    /// Mean of `candidate - baseline`.
    pub mean_diff: f64,
    pub flag: Flag,
}

/// Two-sided paired permutation test: the sign of each per-query difference
/// is flipped at random and the observed |sum| is compared with the resampled
/// ones. `p = (hits + 1) / (resamples + 1)`.
pub fn paired_permutation_test(
    baseline: &[f64],
    candidate: &[f64],
    higher_is_better: bool,
    resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if baseline.len() != candidate.len() {
        return Err(Error::Shape(format!(
            "paired vectors differ in length: {} vs {}",
            baseline.len(),
            candidate.len()
        )));
    }
    let diffs: Vec<f64> = candidate.iter().zip(baseline).map(|(c, b)| c - b).collect();
    let n = diffs.len();
    if n == 0 || diffs.iter().all(|&d| d == 0.0) {
        return Ok(SignificanceResult {
            p_value: 1.0,
            mean_diff: 0.0,
            flag: Flag::Neutral,
        });
    }
    let observed: f64 = diffs.iter().sum();
    // guard against summation-order noise on exact ties
    let threshold = observed.abs() * (1.0 - 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        let mut sum = 0.0;
        for chunk in diffs.chunks(64) {
            let bits: u64 = rng.random();
            for (i, &d) in chunk.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    sum += d;
                } else {
                    sum -= d;
                }
            }
        }
        if sum.abs() >= threshold {
            hits += 1;
        }
    }
    let p_value = (hits + 1) as f64 / (resamples + 1) as f64;
    let mean_diff = observed / n as f64;
    let flag = if p_value >= SIGNIFICANCE_LEVEL {
        Flag::Neutral
    } else if (mean_diff > 0.0) == higher_is_better {
        Flag::Better
    } else {
        Flag::Worse
    };
    Ok(SignificanceResult {
        p_value,
        mean_diff,
        flag,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceFlags {
    pub ndcg10: SignificanceResult,
    pub logloss: SignificanceResult,
}

/// Candidate against baseline on per-query NDCG@10 (higher is better) and
/// per-query LogLoss (lower is better).
pub fn run_significance(
    baseline: &PerQueryMetrics,
    candidate: &PerQueryMetrics,
    resamples: usize,
    seed: u64,
) -> Result<SignificanceFlags> {
    Ok(SignificanceFlags {
        ndcg10: paired_permutation_test(&baseline.ndcg10, &candidate.ndcg10, true, resamples, seed)?,
        logloss: paired_permutation_test(&baseline.logloss, &candidate.logloss, false, resamples, seed)?,
    })
}
