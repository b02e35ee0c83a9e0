//! LETOR / SVMLight ranking data.
//!
//! Lines look like `<label> qid:<qid> <fid>:<val> ... [# comment]`. Parsed
//! examples are grouped by query into dense `N x F` matrices, labels are
//! binarized (any non-zero grade is relevant) and features are z-scored with
//! statistics fitted on the training split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One parsed line of a LETOR file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub label: u32,
    pub query_id: String,
    /// Sparse features keyed by 1-based feature id.
    pub features: BTreeMap<u32, f64>,
}

impl RawExample {
    pub fn max_feature_id(&self) -> u32 {
        self.features.keys().next_back().copied().unwrap_or(0)
    }
}

/// Parses LETOR text. Blank (or comment-only) lines are skipped; errors carry
/// the 1-based line number.
pub fn parse_letor<R: BufRead>(reader: R) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(example) = parse_line(&line, line_no)? {
            out.push(example);
        }
    }
    Ok(out)
}

pub fn parse_letor_str(text: &str) -> Result<Vec<RawExample>> {
    parse_letor(text.as_bytes())
}

pub fn parse_letor_file(path: impl AsRef<Path>) -> Result<Vec<RawExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_letor(BufReader::new(file))
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<RawExample>> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let body = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = body.split_whitespace();
    let Some(label_tok) = tokens.next() else {
        return Ok(None);
    };
    let label: u32 = label_tok
        .parse()
        .map_err(|_| err(format!("invalid label {label_tok:?}")))?;
    let qid_tok = tokens
        .next()
        .ok_or_else(|| err("missing qid".to_string()))?;
    let query_id = match qid_tok.strip_prefix("qid:") {
        Some(q) if !q.is_empty() => q.to_string(),
        _ => return Err(err(format!("expected qid:<id>, found {qid_tok:?}"))),
    };

    let mut features = BTreeMap::new();
    for tok in tokens {
        let (fid, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected <fid>:<value>, found {tok:?}")))?;
        let fid: u32 = fid
            .parse()
            .map_err(|_| err(format!("invalid feature id {fid:?}")))?;
        if fid == 0 {
            return Err(err("feature ids are 1-based".to_string()));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("invalid feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite value for feature {fid}")));
        }
        if features.insert(fid, val).is_some() {
            return Err(err(format!("duplicate feature id {fid}")));
        }
    }
    Ok(Some(RawExample {
        label,
        query_id,
        features,
    }))
}

/// All documents of one query, densified.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    /// `N x F`, missing sparse entries are 0.0.
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> f64 {
        self.labels.iter().sum()
    }
}

/// Highest feature id over a set of examples.
pub fn max_feature_id(examples: &[RawExample]) -> usize {
    examples
        .iter()
        .map(RawExample::max_feature_id)
        .max()
        .unwrap_or(0) as usize
}

/// Groups examples by query id, in order of first appearance. Document order
/// inside a group follows input order.
///
/// Feature ids above `feature_count` are rejected.
pub fn group_by_query(examples: &[RawExample], feature_count: usize) -> Result<Vec<QueryGroup>> {
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<&RawExample>> = HashMap::new();
    for ex in examples {
        if ex.max_feature_id() as usize > feature_count {
            return Err(Error::InvalidArgument(format!(
                "query {}: feature id {} exceeds feature count {}",
                ex.query_id,
                ex.max_feature_id(),
                feature_count
            )));
        }
        members
            .entry(ex.query_id.as_str())
            .or_insert_with(|| {
                order.push(ex.query_id.as_str());
                Vec::new()
            })
            .push(ex);
    }

    Ok(order
        .into_iter()
        .map(|qid| {
            let docs = &members[qid];
            let mut features = Array2::zeros((docs.len(), feature_count));
            for (row, ex) in docs.iter().enumerate() {
                for (&fid, &val) in &ex.features {
                    features[[row, fid as usize - 1]] = val;
                }
            }
            QueryGroup {
                query_id: qid.to_string(),
                features,
                labels: docs.iter().map(|ex| f64::from(ex.label)).collect(),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats(pub Vec<FeatureStats>);

impl NormalizationStats {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingDataset {
    pub groups: Vec<QueryGroup>,
    pub feature_count: usize,
    pub split: SplitTag,
    /// Training-split statistics, set once the dataset has been normalized.
    pub normalization: Option<NormalizationStats>,
}

impl RankingDataset {
    pub fn from_examples(
        examples: &[RawExample],
        split: SplitTag,
        feature_count: usize,
    ) -> Result<Self> {
        Ok(Self {
            groups: group_by_query(examples, feature_count)?,
            feature_count,
            split,
            normalization: None,
        })
    }

    pub fn document_count(&self) -> usize {
        self.groups.iter().map(QueryGroup::len).sum()
    }

    /// Maps every non-zero label to 1.0.
    pub fn binarize_labels(mut self) -> Self {
        for g in &mut self.groups {
            for y in &mut g.labels {
                *y = if *y > 0.0 { 1.0 } else { 0.0 };
            }
        }
        self
    }

    /// Per-feature population mean and standard deviation over all documents.
    pub fn fit_normalization(&self) -> Result<NormalizationStats> {
        let n = self.document_count();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "cannot fit normalization on an empty dataset".into(),
            ));
        }
        let f = self.feature_count;
        let mut mean = vec![0.0; f];
        for g in &self.groups {
            for row in g.features.rows() {
                for (m, &x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        // second pass keeps the variance exact for large offsets
        let mut var = vec![0.0; f];
        for g in &self.groups {
            for row in g.features.rows() {
                for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        Ok(NormalizationStats(
            mean.into_iter()
                .zip(var)
                .map(|(mean, v)| FeatureStats {
                    mean,
                    stddev: (v / n as f64).sqrt(),
                })
                .collect(),
        ))
    }

    /// `x -> (x - mean) / stddev`, with a zero stddev treated as 1.
    pub fn apply_normalization(mut self, stats: &NormalizationStats) -> Result<Self> {
        if stats.len() != self.feature_count {
            return Err(Error::Shape(format!(
                "normalization has {} features, dataset has {}",
                stats.len(),
                self.feature_count
            )));
        }
        for g in &mut self.groups {
            for mut row in g.features.rows_mut() {
                for (x, s) in row.iter_mut().zip(&stats.0) {
                    let scale = if s.stddev > 0.0 { s.stddev } else { 1.0 };
                    *x = (*x - s.mean) / scale;
                }
            }
        }
        self.normalization = Some(stats.clone());
        Ok(self)
    }

    /// Writes the dataset back out as dense LETOR lines. Values use Rust's
    /// shortest round-trip formatting, so re-parsing is bit-exact.
    pub fn write_letor<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for g in &self.groups {
            for (row, &label) in g.features.rows().into_iter().zip(&g.labels) {
                write!(out, "{} qid:{}", label, g.query_id)?;
                for (j, x) in row.iter().enumerate() {
                    write!(out, " {}:{}", j + 1, x)?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Keeps `k` queries chosen uniformly at random (deterministic in `seed`),
    /// preserving their original order.
    pub fn subsample_queries(mut self, k: usize, seed: u64) -> Self {
        if k >= self.groups.len() {
            return self;
        }
        let mut idx: Vec<usize> = (0..self.groups.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut keep = idx[..k].to_vec();
        keep.sort_unstable();
        self.groups = take_indices(self.groups, &keep);
        self
    }

    /// Keeps a random subset of whole queries whose total document count does
    /// not exceed `max_docs`. Queries are visited in seeded random order and
    /// added while they fit.
    pub fn limit_documents(mut self, max_docs: usize, seed: u64) -> Self {
        if self.document_count() <= max_docs {
            return self;
        }
        let mut idx: Vec<usize> = (0..self.groups.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut total = 0;
        let mut keep = Vec::new();
        for i in idx {
            let n = self.groups[i].len();
            if total + n <= max_docs {
                total += n;
                keep.push(i);
            }
        }
        keep.sort_unstable();
        self.groups = take_indices(self.groups, &keep);
        self
    }
}

fn take_indices(groups: Vec<QueryGroup>, sorted_keep: &[usize]) -> Vec<QueryGroup> {
    let mut keep = sorted_keep.iter().peekable();
    groups
        .into_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            if keep.peek() == Some(&&i) {
                keep.next();
                Some(g)
            } else {
                None
            }
        })
        .collect()
}

/// Train / validation / test splits after the full preprocessing pipeline.
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub train: RankingDataset,
    pub validation: RankingDataset,
    pub test: RankingDataset,
}

/// Options applied while preparing splits.
#[derive(Clone, Debug, Default)]
pub struct PrepareOptions {
    /// Keep only this many training queries.
    pub subsample_queries: Option<usize>,
    /// Cap on the number of documents in each evaluation split.
    pub eval_max_docs: Option<usize>,
    pub seed: u64,
}

/// Groups, binarizes and normalizes three parsed splits. The feature count
/// and normalization statistics both come from the training split; subsampling
/// happens before statistics are fitted.
pub fn prepare_splits(
    train: &[RawExample],
    validation: &[RawExample],
    test: &[RawExample],
    opts: &PrepareOptions,
) -> Result<PreparedSplits> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let f = max_feature_id(train);
    if f == 0 {
        return Err(Error::InvalidArgument(
            "training split has no features".into(),
        ));
    }
    let mut train = RankingDataset::from_examples(train, SplitTag::Train, f)?.binarize_labels();
    let mut validation =
        RankingDataset::from_examples(validation, SplitTag::Validation, f)?.binarize_labels();
    let mut test = RankingDataset::from_examples(test, SplitTag::Test, f)?.binarize_labels();

    if let Some(k) = opts.subsample_queries {
        train = train.subsample_queries(k, opts.seed);
    }
    if let Some(max) = opts.eval_max_docs {
        validation = validation.limit_documents(max, opts.seed.wrapping_add(1));
        test = test.limit_documents(max, opts.seed.wrapping_add(2));
    }

    let stats = train.fit_normalization()?;
    Ok(PreparedSplits {
        train: train.apply_normalization(&stats)?,
        validation: validation.apply_normalization(&stats)?,
        test: test.apply_normalization(&stats)?,
    })
}

pub fn load_splits(
    train: impl AsRef<Path>,
    validation: impl AsRef<Path>,
    test: impl AsRef<Path>,
    opts: &PrepareOptions,
) -> Result<PreparedSplits> {
    prepare_splits(
        &parse_letor_file(train)?,
        &parse_letor_file(validation)?,
        &parse_letor_file(test)?,
        opts,
    )
}
