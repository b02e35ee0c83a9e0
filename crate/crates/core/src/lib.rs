//! Calibrated learning-to-rank.
//!
//! Scores produced by listwise ranking losses such as softmax cross entropy are
//! translation invariant and therefore carry no absolute meaning. This crate
//! trains dense scorers with losses whose ranking and regression components
//! share a single global minimizer, so that `sigmoid(score)` is a usable click
//! probability while the ranking quality of a listwise loss is retained.
//!
//! Modules:
//!
//! * [`letor`]: LETOR / SVMLight parsing, query grouping, binarization, z-score normalization.
//! * [`net`]: dense ReLU scorer with dropout, manual backprop and Adam.
//! * [`losses`]: per-query losses and score gradients.
//! * [`metrics`]: NDCG@k, LogLoss, ECE, AUCPR.
//! * [`calibrate`]: two-parameter Platt scaling.
//! * [`oracle`]: synthetic worlds with known click probabilities for checking loss minima.
//! * [`experiment`]: trial runner, grid sweep, model selection, Pareto frontiers, reports.

pub mod calibrate;
pub mod error;
pub mod experiment;
pub mod letor;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod oracle;

mod util;

pub use error::{Error, Result};
