use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_trial, select_model, ExperimentConfig, Method, TrialResult};
use crate::error::{Error, Result};
use crate::letor::{load_splits, PrepareOptions, PreparedSplits};

/// Every trial of one method plus the model picked on validation data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResults {
    pub method: Method,
    pub trials: Vec<TrialResult>,
    /// `None` when every trial diverged.
    pub selected: Option<TrialResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub methods: Vec<MethodResults>,
}

impl SweepResults {
    pub fn get(&self, method: Method) -> Option<&MethodResults> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Reads and preprocesses the three splits named in the config.
pub fn load_data(config: &ExperimentConfig) -> Result<PreparedSplits> {
    let (train, vali, test) = config.validate_paths()?;
    load_splits(
        train,
        vali,
        test,
        &PrepareOptions {
            subsample_queries: config.subsample_queries,
            eval_max_docs: config.eval_max_docs,
            seed: config.seed,
        },
    )
}

/// Trained methods in first-requested order; the Platt row reuses SoftmaxCE
/// networks.
fn training_methods(methods: &[Method]) -> Vec<Method> {
    let mut out = Vec::new();
    for m in methods {
        let t = m.training_method();
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

fn grid(config: &ExperimentConfig) -> Vec<(Method, f64, Option<f64>)> {
    let mut jobs = Vec::new();
    for method in training_methods(&config.methods) {
        for &lr in &config.learning_rates {
            if method.uses_alpha() {
                jobs.extend(config.alphas.iter().map(|&a| (method, lr, Some(a))));
            } else {
                jobs.push((method, lr, None));
            }
        }
    }
    jobs
}

pub fn run_sweep(config: &ExperimentConfig, data: &PreparedSplits) -> Result<SweepResults> {
    run_sweep_with(config, data, |_| {})
}

/// Runs the full grid on `config.workers` threads. `on_trial` is called as
/// each trial finishes (in completion order); results are in grid order and
/// do not depend on the worker count.
pub fn run_sweep_with(
    config: &ExperimentConfig,
    data: &PreparedSplits,
    on_trial: impl Fn(&TrialResult) + Sync,
) -> Result<SweepResults> {
    config.validate()?;
    let jobs = grid(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<(TrialResult, Option<TrialResult>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, lr, alpha)| {
                let run = run_trial(config, data, method, lr, alpha, config.seed)?;
                on_trial(&run.result);
                Ok((run.result, run.platt))
            })
            .collect::<Result<_>>()
    })?;

    let mut methods = Vec::new();
    for &method in &config.methods {
        let trained = method.training_method();
        let raw: Vec<&(TrialResult, Option<TrialResult>)> =
            runs.iter().filter(|(r, _)| r.method == trained).collect();
        let results = if method == Method::SoftmaxCePlatt {
            let trials: Vec<TrialResult> = raw.iter().filter_map(|(_, p)| p.clone()).collect();
            let base: Vec<TrialResult> = raw.iter().map(|(r, _)| r.clone()).collect();
            let metric = config.selection_metric(Method::SoftmaxCe);
            let selected = select_model(&base, metric).ok().and_then(|chosen| {
                raw.iter()
                    .find(|(r, _)| r == chosen)
                    .and_then(|(_, p)| p.clone())
            });
            MethodResults {
                method,
                trials,
                selected,
            }
        } else {
            let trials: Vec<TrialResult> = raw.iter().map(|(r, _)| r.clone()).collect();
            let selected = select_model(&trials, config.selection_metric(method)).ok().cloned();
            MethodResults {
                method,
                trials,
                selected,
            }
        };
        methods.push(results);
    }
    Ok(SweepResults { methods })
}
