//! Ranking, regression and calibration metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::letor::QueryGroup;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-15;
pub const DEFAULT_ECE_BINS: usize = 10;

/// Document indices in descending score order, ties by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

pub fn dcg_at_k(scores: &[f64], labels: &[f64], k: usize) -> f64 {
    assert_eq!(scores.len(), labels.len());
    rank_order(scores)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(pos, doc)| (2f64.powf(labels[doc]) - 1.0) / ((pos + 2) as f64).log2())
        .sum()
}

/// `None` when the ideal DCG is zero (no relevant documents); such queries are
/// left out of NDCG averages.
pub fn ndcg_at_k(scores: &[f64], labels: &[f64], k: usize) -> Option<f64> {
    let ideal = dcg_at_k(labels, labels, k);
    (ideal > 0.0).then(|| dcg_at_k(scores, labels, k) / ideal)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn logloss_sum(predictions: &[f64], labels: &[f64]) -> f64 {
    predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// Mean binary cross entropy of predicted probabilities.
pub fn logloss(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if predictions.is_empty() {
        return 0.0;
    }
    logloss_sum(predictions, labels) / predictions.len() as f64
}

/// Equal-frequency bin sizes: `n` documents over `min(n, m)` bins, the first
/// `n % bins` bins holding one extra document.
pub fn bin_sizes(n: usize, m_bins: usize) -> Vec<usize> {
    let bins = n.min(m_bins);
    if bins == 0 {
        return Vec::new();
    }
    let (base, rem) = (n / bins, n % bins);
    (0..bins).map(|b| base + usize::from(b < rem)).collect()
}

/// Calibration error of a single query.
pub fn ece_query(predictions: &[f64], labels: &[f64], m_bins: usize) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    let n = predictions.len();
    if n == 0 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    let mut start = 0;
    let mut total = 0.0;
    for size in bin_sizes(n, m_bins) {
        let bin = &idx[start..start + size];
        let mean_y = bin.iter().map(|&i| labels[i]).sum::<f64>() / size as f64;
        let mean_p = bin.iter().map(|&i| predictions[i]).sum::<f64>() / size as f64;
        total += size as f64 * (mean_y - mean_p).abs();
        start += size;
    }
    total / n as f64
}

/// Per-query binned calibration error, averaged uniformly over queries.
pub fn ece(predictions: &[Vec<f64>], labels: &[Vec<f64>], m_bins: usize) -> f64 {
    assert!(m_bins >= 1, "need at least one bin");
    assert_eq!(predictions.len(), labels.len());
    let queries: Vec<f64> = predictions
        .iter()
        .zip(labels)
        .filter(|(p, _)| !p.is_empty())
        .map(|(p, y)| ece_query(p, y, m_bins))
        .collect();
    if queries.is_empty() {
        return 0.0;
    }
    queries.iter().sum::<f64>() / queries.len() as f64
}

/// Area under the precision-recall step curve (average precision). Documents
/// with equal predictions enter the ranking together.
pub fn aucpr(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    assert_eq!(predictions.len(), labels.len());
    let positives: f64 = labels.iter().sum();
    if positives <= 0.0 {
        return Err(Error::InvalidArgument(
            "AUCPR needs at least one positive label".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..predictions.len()).collect();
    idx.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]));

    let (mut tp, mut seen, mut prev_recall, mut area) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let threshold = predictions[idx[i]];
        while i < idx.len() && predictions[idx[i]] == threshold {
            tp += labels[idx[i]];
            seen += 1.0;
            i += 1;
        }
        let recall = tp / positives;
        area += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ndcg_at: BTreeMap<usize, f64>,
    pub logloss: f64,
    pub ece: f64,
    /// Pooled over all documents; 0 when the split has no positives.
    pub aucpr: f64,
    pub query_count: usize,
    pub document_count: usize,
    /// Queries with at least one relevant document (the NDCG denominator).
    pub ndcg_query_count: usize,
}

impl MetricReport {
    pub fn ndcg(&self, k: usize) -> f64 {
        self.ndcg_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn is_finite(&self) -> bool {
        self.ndcg_at.values().all(|v| v.is_finite())
            && self.logloss.is_finite()
            && self.ece.is_finite()
            && self.aucpr.is_finite()
    }
}

/// Per-query values kept for paired significance tests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerQueryMetrics {
    /// NDCG@10 of every query with a relevant document, in group order.
    pub ndcg10: Vec<f64>,
    /// Mean LogLoss of every query, in group order.
    pub logloss: Vec<f64>,
}

/// Evaluates raw scores (for ranking) and probabilities (for regression and
/// calibration) over a set of query groups.
pub fn evaluate(
    groups: &[QueryGroup],
    scores: &[Vec<f64>],
    predictions: &[Vec<f64>],
    ks: &[usize],
) -> (MetricReport, PerQueryMetrics) {
    assert_eq!(groups.len(), scores.len());
    assert_eq!(groups.len(), predictions.len());
    let mut ndcg_sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut per_query = PerQueryMetrics::default();
    let mut ndcg_queries = 0usize;
    let mut ll_total = 0.0;
    let mut docs = 0usize;
    let mut pooled_p = Vec::new();
    let mut pooled_y = Vec::new();

    for ((g, s), p) in groups.iter().zip(scores).zip(predictions) {
        let y = &g.labels;
        if dcg_at_k(y, y, 1) > 0.0 {
            ndcg_queries += 1;
            for (&k, sum) in ndcg_sums.iter_mut() {
                *sum += ndcg_at_k(s, y, k).unwrap_or(0.0);
            }
            per_query
                .ndcg10
                .push(ndcg_at_k(s, y, 10).unwrap_or(0.0));
        }
        let ll = logloss_sum(p, y);
        ll_total += ll;
        per_query.logloss.push(ll / y.len().max(1) as f64);
        docs += y.len();
        pooled_p.extend_from_slice(p);
        pooled_y.extend_from_slice(y);
    }

    let labels: Vec<Vec<f64>> = groups.iter().map(|g| g.labels.clone()).collect();
    let report = MetricReport {
        ndcg_at: ndcg_sums
            .into_iter()
            .map(|(k, sum)| (k, if ndcg_queries > 0 { sum / ndcg_queries as f64 } else { 0.0 }))
            .collect(),
        logloss: if docs > 0 { ll_total / docs as f64 } else { 0.0 },
        ece: ece(predictions, &labels, DEFAULT_ECE_BINS),
        aucpr: aucpr(&pooled_p, &pooled_y).unwrap_or(0.0),
        query_count: groups.len(),
        document_count: docs,
        ndcg_query_count: ndcg_queries,
    };
    (report, per_query)
}
