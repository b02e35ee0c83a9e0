use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Method, SelectionMetric};
use crate::calibrate::{fit_platt, PlattModel, PlattOptions};
use crate::error::{Error, Result};
use crate::letor::{PreparedSplits, RankingDataset};
use crate::losses::{batch_objective, LossKind, LossSpec};
use crate::metrics::{evaluate, MetricReport, PerQueryMetrics};
use crate::net::{AdamConfig, AdamState, ScorerNetwork};
use crate::util::sigmoid;

/// Outcome of one (method, learning rate, alpha) training run, reported at the
/// epoch with the best validation selection metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub validation: MetricReport,
    pub test: MetricReport,
    pub test_per_query: PerQueryMetrics,
    /// 1-based epoch of the kept snapshot; 0 if no epoch finished.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub wall_seconds: f64,
    pub diverged: bool,
    pub platt: Option<PlattModel>,
}

impl TrialResult {
    pub fn selection_value(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::Ndcg10 => self.validation.ndcg(10),
            SelectionMetric::LogLoss => self.validation.logloss,
        }
    }
}

/// A trained network's result plus, for SoftmaxCE, its Platt-scaled twin.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub result: TrialResult,
    pub platt: Option<TrialResult>,
    pub network: ScorerNetwork,
}

fn predict_all(net: &ScorerNetwork, data: &RankingDataset) -> Result<Vec<Vec<f64>>> {
    data.groups
        .iter()
        .map(|g| net.predict(g.features.view()))
        .collect()
}

/// Metrics of `net` on `data`; probabilities are `sigmoid(score)` or the
/// Platt-scaled score when a model is given.
pub fn evaluate_network(
    net: &ScorerNetwork,
    data: &RankingDataset,
    platt: Option<&PlattModel>,
    ks: &[usize],
) -> Result<(MetricReport, PerQueryMetrics, Vec<Vec<f64>>)> {
    let scores = predict_all(net, data)?;
    let probs: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| match platt {
            Some(m) => m.apply(s),
            None => s.iter().map(|&v| sigmoid(v)).collect(),
        })
        .collect();
    let (report, per_query) = evaluate(&data.groups, &scores, &probs, ks);
    Ok((report, per_query, scores))
}

fn better(metric: SelectionMetric, candidate: &MetricReport, incumbent: &MetricReport) -> bool {
    match metric {
        SelectionMetric::Ndcg10 => candidate.ndcg(10) > incumbent.ndcg(10),
        SelectionMetric::LogLoss => candidate.logloss < incumbent.logloss,
    }
}

/// Trains a fresh network with Adam on shuffled batches of queries.
///
/// Validation metrics are computed after every epoch and the best snapshot
/// (by the method's selection metric) is the one evaluated on test. A
/// non-finite loss or gradient stops training and flags the trial as
/// diverged; the best snapshot so far is still reported.
pub fn run_trial(
    config: &ExperimentConfig,
    data: &PreparedSplits,
    method: Method,
    learning_rate: f64,
    alpha: Option<f64>,
    seed: u64,
) -> Result<TrialRun> {
    config.validate()?;
    let started = Instant::now();
    let spec = method.loss_spec(alpha)?;
    let selection = config.selection_metric(method);
    let ks = config.report_ks();
    let train = &data.train;
    if train.groups.is_empty() {
        return Err(Error::InvalidArgument("training split has no queries".into()));
    }

    let mut net = ScorerNetwork::init(train.feature_count, &config.hidden, config.dropout, seed)?;
    let mut adam = AdamState::new(&net, AdamConfig::with_learning_rate(learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train.groups.len()).collect();

    let mut best: Option<(ScorerNetwork, MetricReport, usize)> = None;
    let mut diverged = false;
    let mut final_train_loss = f64::NAN;
    let mut epochs_run = 0;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_queries) {
            let mut traces = Vec::with_capacity(batch.len());
            let mut scores = Vec::with_capacity(batch.len());
            for &qi in batch {
                let (s, trace) = net.forward(train.groups[qi].features.view(), true, &mut rng)?;
                scores.push(s);
                traces.push(trace);
            }
            let items: Vec<(&[f64], &[f64])> = batch
                .iter()
                .zip(&scores)
                .map(|(&qi, s)| (s.as_slice(), train.groups[qi].labels.as_slice()))
                .collect();
            let objective = batch_objective(&spec, &items);
            if !objective.loss.is_finite() {
                diverged = true;
                break 'epochs;
            }
            let mut grad = net.params.zeros_like();
            for (trace, g) in traces.iter().zip(&objective.grads) {
                grad.add_assign(&net.backward(trace, g)?);
            }
            match adam.step(&mut net, &grad) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if !net.params.all_finite() {
                diverged = true;
                break 'epochs;
            }
            loss_sum += objective.loss;
            batches += 1;
        }
        final_train_loss = loss_sum / batches.max(1) as f64;
        epochs_run = epoch;

        let (val, _, _) = evaluate_network(&net, &data.validation, None, &ks)?;
        if !val.is_finite() {
            diverged = true;
            break;
        }
        let improved = match &best {
            None => true,
            Some((_, incumbent, _)) => better(selection, &val, incumbent),
        };
        if improved {
            best = Some((net.clone(), val, epoch));
        }
    }

    let (snapshot, validation, best_epoch) = match best {
        Some(b) => b,
        None => {
            // diverged in the first epoch: report the freshly initialized network
            let init = ScorerNetwork::init(train.feature_count, &config.hidden, config.dropout, seed)?;
            let (val, _, _) = evaluate_network(&init, &data.validation, None, &ks)?;
            (init, val, 0)
        }
    };
    let (test, test_per_query, _) = evaluate_network(&snapshot, &data.test, None, &ks)?;

    let result = TrialResult {
        method: method.training_method(),
        loss: spec,
        learning_rate,
        alpha,
        seed,
        validation,
        test,
        test_per_query,
        best_epoch,
        epochs_run,
        final_train_loss,
        wall_seconds: 0.0,
        diverged,
        platt: None,
    };

    let platt = if spec.kind == LossKind::SoftmaxCe {
        platt_variant(&snapshot, data, &result, &ks)?
    } else {
        None
    };

    let elapsed = started.elapsed().as_secs_f64();
    let mut result = result;
    result.wall_seconds = elapsed;
    let platt = platt.map(|mut p| {
        p.wall_seconds = elapsed;
        p
    });
    Ok(TrialRun {
        result,
        platt,
        network: snapshot,
    })
}

/// Fits Platt scaling on validation scores of the kept snapshot and
/// re-evaluates both splits with calibrated probabilities.
fn platt_variant(
    net: &ScorerNetwork,
    data: &PreparedSplits,
    raw: &TrialResult,
    ks: &[usize],
) -> Result<Option<TrialResult>> {
    let scores = predict_all(net, &data.validation)?;
    let flat_scores: Vec<f64> = scores.concat();
    let flat_labels: Vec<f64> = data
        .validation
        .groups
        .iter()
        .flat_map(|g| g.labels.iter().copied())
        .collect();
    let model = match fit_platt(&flat_scores, &flat_labels, PlattOptions::default()) {
        Ok(m) => m,
        // single-class validation data cannot be calibrated
        Err(Error::InvalidArgument(_)) | Err(Error::NonFinite(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (validation, _, _) = evaluate_network(net, &data.validation, Some(&model), ks)?;
    let (test, test_per_query, _) = evaluate_network(net, &data.test, Some(&model), ks)?;
    Ok(Some(TrialResult {
        method: Method::SoftmaxCePlatt,
        validation,
        test,
        test_per_query,
        platt: Some(model),
        ..raw.clone()
    }))
}
