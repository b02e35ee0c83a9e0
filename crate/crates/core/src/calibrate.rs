//! Platt scaling: `p = sigmoid(scale * s + offset)` fitted by maximum likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattModel {
    pub scale: f64,
    pub offset: f64,
}

impl PlattModel {
    pub const IDENTITY: PlattModel = PlattModel {
        scale: 1.0,
        offset: 0.0,
    };

    pub fn apply(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.predict(s)).collect()
    }

    pub fn predict(&self, score: f64) -> f64 {
        sigmoid(self.scale * score + self.offset)
    }
}

pub fn apply_platt(model: &PlattModel, scores: &[f64]) -> Vec<f64> {
    model.apply(scores)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlattOptions {
    pub max_iters: usize,
    /// Stop once the gradient's infinity norm falls below this.
    pub tol: f64,
}

impl Default for PlattOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-10,
        }
    }
}

/// Fit diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct PlattFit {
    pub model: PlattModel,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Mean cross entropy of `sigmoid(a s + b)` against `labels`.
pub fn platt_objective(model: &PlattModel, scores: &[f64], labels: &[f64]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let z = model.scale * s + model.offset;
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / n
}

pub fn fit_platt(scores: &[f64], labels: &[f64], opts: PlattOptions) -> Result<PlattModel> {
    fit_platt_traced(scores, labels, opts).map(|f| f.model)
}

/// Newton's method with step halving on the two-parameter convex problem.
pub fn fit_platt_traced(scores: &[f64], labels: &[f64], opts: PlattOptions) -> Result<PlattFit> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidArgument("Platt labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("Platt scores".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::InvalidArgument(
            "Platt scaling needs both positive and negative labels".into(),
        ));
    }

    let n = scores.len() as f64;
    let mut model = PlattModel::IDENTITY;
    let mut obj = platt_objective(&model, scores, labels);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        // gradient and Hessian of the mean cross entropy in (a, b)
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &y) in scores.iter().zip(labels) {
            let p = model.predict(s);
            let r = p - y;
            let w = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        let (ga, gb, haa, hab, hbb) = (ga / n, gb / n, haa / n, hab / n, hbb / n);
        if ga.abs().max(gb.abs()) < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        // a small ridge keeps the system solvable when all scores coincide
        let ridge = 1e-12 * (1.0 + haa + hbb);
        let (haa, hbb) = (haa + ridge, hbb + ridge);
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = PlattModel {
                scale: model.scale - step * da,
                offset: model.offset - step * db,
            };
            let cand_obj = platt_objective(&cand, scores, labels);
            if cand_obj <= obj {
                model = cand;
                obj = cand_obj;
                trace.push(obj);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent possible at machine precision
            converged = true;
            break;
        }
    }

    Ok(PlattFit {
        model,
        iterations,
        converged,
        objective_trace: trace,
    })
}
