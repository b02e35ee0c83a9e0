use std::cmp::Ordering;

use super::{SelectionMetric, TrialResult};
use crate::error::{Error, Result};

/// Ordering of two trials under a selection metric, best first. Ties on the
/// metric fall back to lower validation LogLoss, then lower learning rate,
/// then lower alpha.
pub fn selection_order(a: &TrialResult, b: &TrialResult, metric: SelectionMetric) -> Ordering {
    let primary = match metric {
        SelectionMetric::Ndcg10 => b.validation.ndcg(10).total_cmp(&a.validation.ndcg(10)),
        SelectionMetric::LogLoss => a.validation.logloss.total_cmp(&b.validation.logloss),
    };
    primary
        .then_with(|| a.validation.logloss.total_cmp(&b.validation.logloss))
        .then_with(|| a.learning_rate.total_cmp(&b.learning_rate))
        .then_with(|| {
            a.alpha
                .unwrap_or(0.0)
                .total_cmp(&b.alpha.unwrap_or(0.0))
        })
}

/// Best non-diverged trial by validation metric. Test metrics are never read.
pub fn select_model(trials: &[TrialResult], metric: SelectionMetric) -> Result<&TrialResult> {
    trials
        .iter()
        .filter(|t| !t.diverged && t.validation.is_finite())
        .min_by(|a, b| selection_order(a, b, metric))
        .ok_or_else(|| Error::NoTrials("every trial diverged".into()))
}
