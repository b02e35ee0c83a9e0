use serde::{Deserialize, Serialize};

use super::{Method, TrialResult};

/// One trial on the ranking/regression plane: `x` is test NDCG@10, `y` is
/// negated test LogLoss, so larger is better on both axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub method: Method,
    pub learning_rate: f64,
    pub alpha: Option<f64>,
    pub x: f64,
    pub y: f64,
    pub dominated: bool,
}

/// `flags[i]` is true when some other point is at least as good on both axes
/// and strictly better on one. Identical points do not dominate each other.
pub fn dominance_flags(points: &[(f64, f64)]) -> Vec<bool> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    // descending x, then descending y
    idx.sort_by(|&a, &b| {
        points[b]
            .0
            .total_cmp(&points[a].0)
            .then(points[b].1.total_cmp(&points[a].1))
    });
    let mut flags = vec![false; n];
    // best y among points with strictly larger x
    let mut best_y_right = f64::NEG_INFINITY;
    let mut i = 0;
    while i < n {
        let x = points[idx[i]].0;
        let mut j = i;
        while j < n && points[idx[j]].0 == x {
            j += 1;
        }
        // first element of the run has the run's largest y
        let group_max_y = points[idx[i]].1;
        for &k in &idx[i..j] {
            let y = points[k].1;
            flags[k] = y < group_max_y || best_y_right >= y;
        }
        best_y_right = best_y_right.max(group_max_y);
        i = j;
    }
    flags
}

/// Non-dominated points sorted by ascending `x` (then `y`).
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    let flags = dominance_flags(&xy);
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .zip(flags)
        .filter(|(_, d)| !d)
        .map(|(p, _)| ParetoPoint {
            dominated: false,
            ..p.clone()
        })
        .collect();
    front.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    front
}

/// Test-set points of one method's trials with dominance flags filled in.
pub fn pareto_points(trials: &[TrialResult]) -> Vec<ParetoPoint> {
    let finite: Vec<&TrialResult> = trials
        .iter()
        .filter(|t| t.test.ndcg(10).is_finite() && t.test.logloss.is_finite())
        .collect();
    let xy: Vec<(f64, f64)> = finite
        .iter()
        .map(|t| (t.test.ndcg(10), -t.test.logloss))
        .collect();
    finite
        .iter()
        .zip(dominance_flags(&xy))
        .map(|(t, dominated)| ParetoPoint {
            method: t.method,
            learning_rate: t.learning_rate,
            alpha: t.alpha,
            x: t.test.ndcg(10),
            y: -t.test.logloss,
            dominated,
        })
        .collect()
}
