//! Per-query ranking losses and their gradients with respect to the scores.
//!
//! Labels may be soft values in `[0, 1]` so that the same functions can be
//! evaluated on expected labels `E[y | q, x]`.
//!
//! The regression-compatible loss combines per-document sigmoid cross entropy
//! with a listwise cross entropy whose normalizer uses `sigmoid` instead of
//! `exp`:
//!
//! ```text
//! (1 - a) * sum_i SigmoidCE(s_i, y_i) + a * ListCE(sigmoid, s, y)
//! ListCE(T, s, y) = -(1/C) * sum_i y_i * log(T(s_i) / sum_j T(s_j)),   C = sum_j y_j
//! ```
//!
//! Both terms are minimized at `sigmoid(s_i) = E[y_i]`, unlike the classic
//! SigmoidCE + SoftmaxCE mix whose components pull scores to different targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{log_sigmoid, log_sum_exp, logit, sigmoid};

/// Positive, non-decreasing score transformation used by [`list_ce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transformation {
    Exp,
    Sigmoid,
}

impl Transformation {
    pub fn value(self, s: f64) -> f64 {
        match self {
            Transformation::Exp => s.exp(),
            Transformation::Sigmoid => sigmoid(s),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Transformation::Exp => s.exp(),
            Transformation::Sigmoid => {
                let p = sigmoid(s);
                p * (1.0 - p)
            }
        }
    }

    /// `log T(s)`, finite for every finite `s`.
    pub fn log_value(self, s: f64) -> f64 {
        match self {
            Transformation::Exp => s,
            Transformation::Sigmoid => log_sigmoid(s),
        }
    }

    /// `d/ds log T(s)`.
    fn log_derivative(self, s: f64) -> f64 {
        match self {
            Transformation::Exp => 1.0,
            Transformation::Sigmoid => sigmoid(-s),
        }
    }
}

impl fmt::Display for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transformation::Exp => "exp",
            Transformation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Transformation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(Transformation::Exp),
            "sigmoid" | "sigma" => Ok(Transformation::Sigmoid),
            other => Err(Error::InvalidArgument(format!(
                "unknown transformation {other:?}"
            ))),
        }
    }
}

/// Loss value and score gradient for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryLossResult {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// False when the query has nothing to learn from under this loss (no
    /// positives for listwise terms, no ordered pairs for pairwise).
    pub contributing: bool,
}

impl QueryLossResult {
    fn skipped(n: usize) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; n],
            contributing: false,
        }
    }

    fn scaled(mut self, w: f64) -> Self {
        self.loss *= w;
        self.grad.iter_mut().for_each(|g| *g *= w);
        self
    }
}

fn check_lengths(scores: &[f64], labels: &[f64]) {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels must have the same length"
    );
}

/// Sum over documents of sigmoid cross entropy.
pub fn sigmoid_ce(scores: &[f64], labels: &[f64]) -> QueryLossResult {
    check_lengths(scores, labels);
    if scores.is_empty() {
        return QueryLossResult::skipped(0);
    }
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            loss += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
            sigmoid(s) - y
        })
        .collect();
    QueryLossResult {
        loss,
        grad,
        contributing: true,
    }
}

/// RankNet loss: sum over ordered pairs with `y_j > y_i` of `-log sigmoid(s_j - s_i)`.
pub fn pairwise_logistic(scores: &[f64], labels: &[f64]) -> QueryLossResult {
    check_lengths(scores, labels);
    let n = scores.len();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if labels[j] > labels[i] {
                let diff = scores[i] - scores[j];
                // -log sigmoid(s_j - s_i) = softplus(s_i - s_j)
                loss += diff.max(0.0) + (-diff.abs()).exp().ln_1p();
                let g = sigmoid(diff);
                grad[i] += g;
                grad[j] -= g;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return QueryLossResult::skipped(n);
    }
    QueryLossResult {
        loss,
        grad,
        contributing: true,
    }
}

/// ListNet softmax cross entropy, normalized by the label mass `C`.
pub fn softmax_ce(scores: &[f64], labels: &[f64]) -> QueryLossResult {
    check_lengths(scores, labels);
    let c: f64 = labels.iter().sum();
    if c <= 0.0 {
        return QueryLossResult::skipped(scores.len());
    }
    let lse = log_sum_exp(scores);
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let log_p = s - lse;
            loss -= y * log_p;
            log_p.exp() - y / c
        })
        .collect();
    QueryLossResult {
        loss: loss / c,
        grad,
        contributing: true,
    }
}

/// Listwise cross entropy with `p_i = T(s_i) / sum_j T(s_j)`, computed in log space.
pub fn list_ce(transformation: Transformation, scores: &[f64], labels: &[f64]) -> QueryLossResult {
    check_lengths(scores, labels);
    let c: f64 = labels.iter().sum();
    if c <= 0.0 {
        return QueryLossResult::skipped(scores.len());
    }
    let log_t: Vec<f64> = scores
        .iter()
        .map(|&s| transformation.log_value(s))
        .collect();
    let lse = log_sum_exp(&log_t);
    let mut loss = 0.0;
    // dL/ds_k = (log T)'(s_k) * (p_k - y_k / C)
    let grad = scores
        .iter()
        .zip(&log_t)
        .zip(labels)
        .map(|((&s, &lt), &y)| {
            let log_p = lt - lse;
            loss -= y * log_p;
            transformation.log_derivative(s) * (log_p.exp() - y / c)
        })
        .collect();
    QueryLossResult {
        loss: loss / c,
        grad,
        contributing: true,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SigmoidCe,
    PairwiseLogistic,
    SoftmaxCe,
    ListCe,
    SigmoidCePlusSoftmaxCe,
    SigmoidCePlusListCe,
}

impl LossKind {
    pub fn is_combined(self) -> bool {
        matches!(
            self,
            LossKind::SigmoidCePlusSoftmaxCe | LossKind::SigmoidCePlusListCe
        )
    }

    fn uses_transformation(self) -> bool {
        matches!(self, LossKind::ListCe | LossKind::SigmoidCePlusListCe)
    }

    /// Adding a constant to every score leaves the loss unchanged.
    pub fn is_translation_invariant(self) -> bool {
        matches!(self, LossKind::PairwiseLogistic | LossKind::SoftmaxCe)
    }
}

/// Which loss a trial trains with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformation: Option<Transformation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl LossSpec {
    pub fn new(
        kind: LossKind,
        transformation: Option<Transformation>,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let spec = Self {
            kind,
            transformation,
            alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sigmoid_ce() -> Self {
        Self {
            kind: LossKind::SigmoidCe,
            transformation: None,
            alpha: None,
        }
    }

    pub fn pairwise_logistic() -> Self {
        Self {
            kind: LossKind::PairwiseLogistic,
            transformation: None,
            alpha: None,
        }
    }

    pub fn softmax_ce() -> Self {
        Self {
            kind: LossKind::SoftmaxCe,
            transformation: None,
            alpha: None,
        }
    }

    pub fn list_ce(t: Transformation) -> Self {
        Self {
            kind: LossKind::ListCe,
            transformation: Some(t),
            alpha: None,
        }
    }

    /// SigmoidCE + SoftmaxCE.
    pub fn multi_objective(alpha: f64) -> Result<Self> {
        Self::new(LossKind::SigmoidCePlusSoftmaxCe, None, Some(alpha))
    }

    /// SigmoidCE + ListCE(sigmoid).
    pub fn rcr(alpha: f64) -> Result<Self> {
        Self::new(
            LossKind::SigmoidCePlusListCe,
            Some(Transformation::Sigmoid),
            Some(alpha),
        )
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind.is_combined(), self.alpha) {
            (true, Some(a)) if (0.0..=1.0).contains(&a) => {}
            (true, Some(a)) => {
                return Err(Error::InvalidArgument(format!(
                    "alpha must lie in [0, 1], got {a}"
                )))
            }
            (true, None) => {
                return Err(Error::InvalidArgument(format!(
                    "{:?} requires alpha",
                    self.kind
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidArgument(format!(
                    "{:?} does not take alpha",
                    self.kind
                )))
            }
            (false, None) => {}
        }
        if self.kind.uses_transformation() != self.transformation.is_some() {
            return Err(Error::InvalidArgument(format!(
                "transformation is required exactly for list_ce variants (kind {:?})",
                self.kind
            )));
        }
        Ok(())
    }

    fn listwise_term(&self, scores: &[f64], labels: &[f64]) -> Option<QueryLossResult> {
        match self.kind {
            LossKind::SigmoidCe => None,
            LossKind::PairwiseLogistic => Some(pairwise_logistic(scores, labels)),
            LossKind::SoftmaxCe | LossKind::SigmoidCePlusSoftmaxCe => {
                Some(softmax_ce(scores, labels))
            }
            LossKind::ListCe | LossKind::SigmoidCePlusListCe => {
                let t = self.transformation.expect("validated");
                Some(list_ce(t, scores, labels))
            }
        }
    }

    /// The weighted pointwise and listwise parts of the loss for one query.
    pub fn terms(&self, scores: &[f64], labels: &[f64]) -> QueryTerms {
        let (w_point, w_list) = match (self.kind, self.alpha) {
            (LossKind::SigmoidCe, _) => (1.0, 0.0),
            (k, Some(a)) if k.is_combined() => (1.0 - a, a),
            _ => (0.0, 1.0),
        };
        let pointwise = (self.kind == LossKind::SigmoidCe || self.kind.is_combined())
            .then(|| sigmoid_ce(scores, labels).scaled(w_point));
        let listwise = self
            .listwise_term(scores, labels)
            .filter(|r| r.contributing)
            .map(|r| r.scaled(w_list));
        QueryTerms {
            pointwise,
            listwise,
        }
    }

    /// Loss for a single query: the sum of its weighted terms.
    pub fn evaluate(&self, scores: &[f64], labels: &[f64]) -> QueryLossResult {
        self.terms(scores, labels).total(scores.len())
    }

    pub fn name(&self) -> String {
        match self.kind {
            LossKind::SigmoidCe => "sigmoid_ce".into(),
            LossKind::PairwiseLogistic => "pairwise_logistic".into(),
            LossKind::SoftmaxCe => "softmax_ce".into(),
            LossKind::ListCe => format!("list_ce_{}", self.transformation.expect("validated")),
            LossKind::SigmoidCePlusSoftmaxCe => "sigmoid_ce_plus_softmax_ce".into(),
            LossKind::SigmoidCePlusListCe => match self.transformation {
                Some(Transformation::Sigmoid) => "sigmoid_ce_plus_list_ce".into(),
                Some(t) => format!("sigmoid_ce_plus_list_ce_{t}"),
                None => unreachable!("validated"),
            },
        }
    }
}

/// Weighted pieces of one query's loss. Terms that do not apply are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryTerms {
    pub pointwise: Option<QueryLossResult>,
    pub listwise: Option<QueryLossResult>,
}

impl QueryTerms {
    pub fn total(self, n: usize) -> QueryLossResult {
        let mut out = QueryLossResult::skipped(n);
        for term in [self.pointwise, self.listwise].into_iter().flatten() {
            out.loss += term.loss;
            out.contributing = true;
            for (g, t) in out.grad.iter_mut().zip(term.grad) {
                *g += t;
            }
        }
        out
    }
}

/// `(1 - a) * sigmoid_ce + a * listwise` for the combined loss kinds.
pub fn combined_loss(spec: &LossSpec, scores: &[f64], labels: &[f64]) -> Result<QueryLossResult> {
    if !spec.kind.is_combined() {
        return Err(Error::InvalidArgument(format!(
            "{:?} is not a combined loss",
            spec.kind
        )));
    }
    spec.validate()?;
    Ok(spec.evaluate(scores, labels))
}

/// Mini-batch objective over several queries.
#[derive(Clone, Debug)]
pub struct BatchObjective {
    pub loss: f64,
    /// Gradient of `loss` with respect to each query's scores.
    pub grads: Vec<Vec<f64>>,
    pub pointwise_queries: usize,
    pub listwise_queries: usize,
}

/// Averages each loss term over the queries it applies to: the pointwise term
/// over every query, the listwise term over queries that contribute to it.
pub fn batch_objective(spec: &LossSpec, batch: &[(&[f64], &[f64])]) -> BatchObjective {
    let terms: Vec<QueryTerms> = batch.iter().map(|(s, y)| spec.terms(s, y)).collect();
    let n_point = terms.iter().filter(|t| t.pointwise.is_some()).count();
    let n_list = terms.iter().filter(|t| t.listwise.is_some()).count();
    let mut loss = 0.0;
    let grads = terms
        .into_iter()
        .zip(batch)
        .map(|(t, (s, _))| {
            let mut g = vec![0.0; s.len()];
            for (term, count) in [(t.pointwise, n_point), (t.listwise, n_list)] {
                if let Some(term) = term {
                    let w = 1.0 / count as f64;
                    loss += w * term.loss;
                    for (gi, ti) in g.iter_mut().zip(term.grad) {
                        *gi += w * ti;
                    }
                }
            }
            g
        })
        .collect();
    BatchObjective {
        loss,
        grads,
        pointwise_queries: n_point,
        listwise_queries: n_list,
    }
}

/// Score targets implied by the two components on ground-truth probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTargets {
    /// Sigmoid CE fixed point `logit(P_i)`.
    pub pointwise_logits: Vec<f64>,
    /// Listwise target ratios `P_i / sum_j P_j`.
    pub listwise_ratios: Vec<f64>,
}

pub fn loss_gradient_targets(probabilities: &[f64]) -> Result<GradientTargets> {
    if let Some(p) = probabilities.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "probabilities must lie in (0, 1), got {p}"
        )));
    }
    let total: f64 = probabilities.iter().sum();
    Ok(GradientTargets {
        pointwise_logits: probabilities.iter().map(|&p| logit(p)).collect(),
        listwise_ratios: probabilities.iter().map(|&p| p / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sigmoid_ce_examples() {
        let r = sigmoid_ce(&[0.0], &[1.0]);
        assert!(close(r.loss, std::f64::consts::LN_2, 1e-12));
        assert_eq!(r.grad, vec![-0.5]);
        assert!(close(sigmoid_ce(&[0.0, 0.0], &[1.0, 0.0]).loss, 1.386294, 1e-6));
        assert!(close(sigmoid_ce(&[2.0], &[1.0]).loss, 0.126928, 1e-6));
    }

    #[test]
    fn pairwise_examples() {
        assert!(close(pairwise_logistic(&[0.0, 0.0], &[0.0, 1.0]).loss, std::f64::consts::LN_2, 1e-12));
        for y in [[1.0, 1.0], [0.0, 0.0]] {
            let r = pairwise_logistic(&[0.3, -0.2], &y);
            assert_eq!(r.loss, 0.0);
            assert!(!r.contributing);
        }
        assert!(close(pairwise_logistic(&[1.0, 0.0], &[0.0, 1.0]).loss, 1.313262, 1e-6));
    }

    #[test]
    fn softmax_examples() {
        assert!(close(softmax_ce(&[0.0, 0.0], &[1.0, 0.0]).loss, LN2, 1e-12));
        for n in 1..8 {
            let s = vec![3.7; n];
            let mut y = vec![0.0; n];
            y[n / 2] = 1.0;
            assert!(close(softmax_ce(&s, &y).loss, (n as f64).ln(), 1e-12));
        }
        assert!(close(softmax_ce(&[1.0, 0.0], &[1.0, 0.0]).loss, 0.313262, 1e-6));
        let r = softmax_ce(&[1.0, 2.0], &[0.0, 0.0]);
        assert!(!r.contributing);
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn list_ce_examples() {
        assert!(close(
            list_ce(Transformation::Sigmoid, &[0.0, 0.0], &[1.0, 0.0]).loss,
            std::f64::consts::LN_2,
            1e-6
        ));
        let s = [logit(0.6), logit(0.2)];
        assert!(close(
            list_ce(Transformation::Sigmoid, &s, &[1.0, 0.0]).loss,
            0.287682,
            1e-6
        ));
        let s = [0.4, -1.1, 2.0];
        let y = [1.0, 0.0, 1.0];
        let a = list_ce(Transformation::Exp, &s, &y);
        let b = softmax_ce(&s, &y);
        assert!(close(a.loss, b.loss, 1e-12));
    }

    #[test]
    fn sigmoid_list_ce_stable_at_extremes() {
        let r = list_ce(Transformation::Sigmoid, &[-800.0, -790.0, 50.0], &[1.0, 0.0, 0.0]);
        assert!(r.loss.is_finite());
        assert!(r.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn combined_examples() {
        let s = [0.3, -0.7, 1.2];
        let y = [1.0, 0.0, 1.0];
        let a0 = combined_loss(&LossSpec::rcr(0.0).unwrap(), &s, &y).unwrap();
        assert_eq!(a0, sigmoid_ce(&s, &y));
        let a1 = combined_loss(&LossSpec::rcr(1.0).unwrap(), &s, &y).unwrap();
        assert_eq!(a1.loss, list_ce(Transformation::Sigmoid, &s, &y).loss);
        let m1 = combined_loss(&LossSpec::multi_objective(1.0).unwrap(), &s, &y).unwrap();
        assert_eq!(m1.loss, softmax_ce(&s, &y).loss);

        let half = combined_loss(&LossSpec::rcr(0.5).unwrap(), &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(close(half.loss, 1.039721, 1e-6));
    }

    #[test]
    fn combined_no_positives_keeps_pointwise() {
        let spec = LossSpec::rcr(0.5).unwrap();
        let r = spec.evaluate(&[0.0, 0.0], &[0.0, 0.0]);
        assert!(r.contributing);
        assert!(close(r.loss, 0.5 * 2.0 * LN2, 1e-12));
        assert!(spec.terms(&[0.0], &[0.0]).listwise.is_none());
    }

    #[test]
    fn combined_rejects_single_losses() {
        assert!(combined_loss(&LossSpec::softmax_ce(), &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::rcr(1.5).is_err());
        assert!(LossSpec::new(LossKind::SoftmaxCe, None, Some(0.1)).is_err());
        assert!(LossSpec::new(LossKind::SigmoidCePlusSoftmaxCe, None, None).is_err());
        assert!(LossSpec::new(LossKind::ListCe, None, None).is_err());
        assert!(LossSpec::new(LossKind::SoftmaxCe, Some(Transformation::Exp), None).is_err());
        assert_eq!(LossSpec::rcr(0.3).unwrap().name(), "sigmoid_ce_plus_list_ce");
    }

    #[test]
    fn gradient_targets() {
        let t = loss_gradient_targets(&[0.5, 0.5]).unwrap();
        assert_eq!(t.pointwise_logits, vec![0.0, 0.0]);
        assert_eq!(t.listwise_ratios, vec![0.5, 0.5]);

        let t = loss_gradient_targets(&[0.6, 0.2]).unwrap();
        assert!(close(t.pointwise_logits[0], 0.405465, 1e-6));
        assert!(close(t.pointwise_logits[1], -1.386294, 1e-6));
        assert!(close(t.listwise_ratios[0], 0.75, 1e-12));
        assert!(close(t.listwise_ratios[1], 0.25, 1e-12));

        assert!(loss_gradient_targets(&[0.0, 0.5]).is_err());
        assert!(loss_gradient_targets(&[1.0]).is_err());
    }

    #[test]
    fn batch_objective_denominators() {
        let spec = LossSpec::rcr(0.5).unwrap();
        let s1 = [0.0, 0.0];
        let y1 = [1.0, 0.0];
        let s2 = [0.0, 0.0];
        let y2 = [0.0, 0.0];
        let b = batch_objective(&spec, &[(&s1, &y1), (&s2, &y2)]);
        assert_eq!(b.pointwise_queries, 2);
        assert_eq!(b.listwise_queries, 1);
        // pointwise: 0.5 * mean(2 ln2, 2 ln2); listwise: 0.5 * ln2 over one query
        assert!(close(b.loss, 0.5 * 2.0 * LN2 + 0.5 * LN2, 1e-12));
    }
}
