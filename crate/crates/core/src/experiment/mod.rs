//! End-to-end experimental protocol: train one network per grid cell, pick a
//! model per method on validation data, report test metrics and Pareto
//! frontiers of ranking quality against LogLoss.

mod config;
mod pareto;
mod report;
mod select;
mod significance;
mod svg;
mod sweep;
mod trial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec, Transformation};

pub use config::ExperimentConfig;
pub use pareto::{dominance_flags, pareto_frontier, pareto_points, ParetoPoint};
pub use report::{
    emit_report, format_pareto_csv, format_summary_csv, parse_csv, read_trials, significance_rows,
    trial_json, ReportFiles,
};
pub use select::{select_model, selection_order};
pub use significance::{
    paired_permutation_test, run_significance, Flag, SignificanceFlags, SignificanceResult,
    DEFAULT_RESAMPLES,
};
pub use svg::{method_color, render_pareto_svg};
pub use sweep::{load_data, run_sweep, run_sweep_with, MethodResults, SweepResults};
pub use trial::{evaluate_network, run_trial, TrialResult, TrialRun};

/// A row of the comparison table: a training loss, or SoftmaxCE followed by
/// Platt scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SigmoidCe,
    PairwiseLogistic,
    SoftmaxCe,
    SoftmaxCePlatt,
    ListCeSigmoid,
    SigmoidCePlusSoftmaxCe,
    SigmoidCePlusListCe,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::SigmoidCe,
        Method::PairwiseLogistic,
        Method::SoftmaxCe,
        Method::SoftmaxCePlatt,
        Method::ListCeSigmoid,
        Method::SigmoidCePlusSoftmaxCe,
        Method::SigmoidCePlusListCe,
    ];

    /// The six methods of the standard comparison.
    pub const TABLE: [Method; 6] = [
        Method::SigmoidCe,
        Method::ListCeSigmoid,
        Method::SoftmaxCe,
        Method::SoftmaxCePlatt,
        Method::SigmoidCePlusSoftmaxCe,
        Method::SigmoidCePlusListCe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SigmoidCe => "sigmoid_ce",
            Method::PairwiseLogistic => "pairwise_logistic",
            Method::SoftmaxCe => "softmax_ce",
            Method::SoftmaxCePlatt => "softmax_ce_platt",
            Method::ListCeSigmoid => "list_ce_sigmoid",
            Method::SigmoidCePlusSoftmaxCe => "sigmoid_ce_plus_softmax_ce",
            Method::SigmoidCePlusListCe => "sigmoid_ce_plus_list_ce",
        }
    }

    pub fn uses_alpha(self) -> bool {
        matches!(
            self,
            Method::SigmoidCePlusSoftmaxCe | Method::SigmoidCePlusListCe
        )
    }

    /// Method whose networks are actually trained.
    pub fn training_method(self) -> Method {
        match self {
            Method::SoftmaxCePlatt => Method::SoftmaxCe,
            m => m,
        }
    }

    pub fn loss_spec(self, alpha: Option<f64>) -> Result<LossSpec> {
        let spec = match self.training_method() {
            Method::SigmoidCe => LossSpec::sigmoid_ce(),
            Method::PairwiseLogistic => LossSpec::pairwise_logistic(),
            Method::SoftmaxCe => LossSpec::softmax_ce(),
            Method::ListCeSigmoid => LossSpec::list_ce(Transformation::Sigmoid),
            Method::SigmoidCePlusSoftmaxCe => LossSpec::new(LossKind::SigmoidCePlusSoftmaxCe, None, alpha)?,
            Method::SigmoidCePlusListCe => {
                LossSpec::new(LossKind::SigmoidCePlusListCe, Some(Transformation::Sigmoid), alpha)?
            }
            Method::SoftmaxCePlatt => unreachable!(),
        };
        if !self.uses_alpha() && alpha.is_some() {
            return Err(Error::InvalidArgument(format!("{self} does not take alpha")));
        }
        Ok(spec)
    }

    /// Pointwise regression is selected on LogLoss, everything else on NDCG@10.
    pub fn default_selection(self) -> SelectionMetric {
        match self {
            Method::SigmoidCe => SelectionMetric::LogLoss,
            _ => SelectionMetric::Ndcg10,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "rcr" {
            return Ok(Method::SigmoidCePlusListCe);
        }
        if s == "multi_objective" {
            return Ok(Method::SigmoidCePlusSoftmaxCe);
        }
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Ndcg10,
    LogLoss,
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ndcg@10" | "ndcg10" | "ndcg" => Ok(SelectionMetric::Ndcg10),
            "logloss" => Ok(SelectionMetric::LogLoss),
            other => Err(Error::Config(format!("unknown selection metric {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("rcr".parse::<Method>().unwrap(), Method::SigmoidCePlusListCe);
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn loss_specs() {
        assert_eq!(Method::SoftmaxCePlatt.loss_spec(None).unwrap(), LossSpec::softmax_ce());
        assert!(Method::SigmoidCePlusListCe.loss_spec(None).is_err());
        assert!(Method::SigmoidCe.loss_spec(Some(0.5)).is_err());
        assert_eq!(
            Method::SigmoidCePlusListCe.loss_spec(Some(0.5)).unwrap(),
            LossSpec::rcr(0.5).unwrap()
        );
    }
}
