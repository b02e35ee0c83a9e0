use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Method, SelectionMetric};
use crate::error::{Error, Result};
use crate::net::{DEFAULT_DROPOUT, DEFAULT_HIDDEN};

/// Everything a sweep needs. Built from defaults, then a flat `key=value`
/// file, then command-line flags, later sources overriding earlier ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: Option<PathBuf>,
    pub vali: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub learning_rates: Vec<f64>,
    pub alphas: Vec<f64>,
    pub epochs: usize,
    pub batch_queries: usize,
    pub seed: u64,
    /// NDCG cutoffs; 1, 5 and 10 are always reported.
    pub ks: Vec<usize>,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub subsample_queries: Option<usize>,
    pub eval_max_docs: Option<usize>,
    pub workers: usize,
    pub out: PathBuf,
    /// Per-method overrides of the model-selection metric.
    pub selection: BTreeMap<Method, SelectionMetric>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: None,
            vali: None,
            test: None,
            methods: Method::TABLE.to_vec(),
            learning_rates: vec![0.01, 0.001],
            alphas: vec![
                0.001, 0.005, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.995, 0.999,
            ],
            epochs: 100,
            batch_queries: 128,
            seed: 0,
            ks: vec![1, 5, 10],
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            subsample_queries: None,
            eval_max_docs: None,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            out: PathBuf::from("out"),
            selection: BTreeMap::new(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl ExperimentConfig {
    /// Sets one option. Keys are the long flag names without dashes
    /// (`batch-queries`, `lrs`, ...); `_` and `-` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        match key.as_str() {
            "train" => self.train = Some(PathBuf::from(value.trim())),
            "vali" | "validation" => self.vali = Some(PathBuf::from(value.trim())),
            "test" => self.test = Some(PathBuf::from(value.trim())),
            "method" | "methods" => self.methods = parse_list(&key, value)?,
            "lrs" | "learning-rates" => self.learning_rates = parse_list(&key, value)?,
            "alphas" => self.alphas = parse_list(&key, value)?,
            "epochs" => self.epochs = parse_one(&key, value)?,
            "batch-queries" => self.batch_queries = parse_one(&key, value)?,
            "seed" => self.seed = parse_one(&key, value)?,
            "ks" => self.ks = parse_list(&key, value)?,
            "hidden" => self.hidden = parse_list(&key, value)?,
            "dropout" => self.dropout = parse_one(&key, value)?,
            "subsample-queries" => self.subsample_queries = Some(parse_one(&key, value)?),
            "eval-max-docs" => self.eval_max_docs = Some(parse_one(&key, value)?),
            "workers" => self.workers = parse_one(&key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "select" => {
                for item in value.split(',').filter(|s| !s.trim().is_empty()) {
                    let (m, metric) = item
                        .split_once('=')
                        .or_else(|| item.split_once(':'))
                        .ok_or_else(|| Error::Config(format!("select: expected method:metric, got {item:?}")))?;
                    self.selection.insert(m.parse()?, metric.parse()?);
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file. `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_file_text(&text)
    }

    pub fn selection_metric(&self, method: Method) -> SelectionMetric {
        self.selection
            .get(&method)
            .copied()
            .unwrap_or_else(|| method.default_selection())
    }

    /// NDCG cutoffs to compute, always including 1, 5 and 10.
    pub fn report_ks(&self) -> Vec<usize> {
        let mut ks = self.ks.clone();
        ks.extend([1, 5, 10]);
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Checks grids and training settings. Paths are checked separately by
    /// [`ExperimentConfig::validate_paths`].
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_queries == 0 {
            return Err(Error::Config("batch-queries must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.learning_rates.is_empty() {
            return Err(Error::Config("learning-rate grid is empty".into()));
        }
        if let Some(lr) = self.learning_rates.iter().find(|&&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        if self.methods.iter().any(|m| m.uses_alpha()) && self.alphas.is_empty() {
            return Err(Error::Config("alpha grid is empty".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!("alpha {a} outside [0, 1]")));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("NDCG cutoffs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn validate_paths(&self) -> Result<(&Path, &Path, &Path)> {
        Ok((
            existing(&self.train, "train")?,
            existing(&self.vali, "vali")?,
            existing(&self.test, "test")?,
        ))
    }
}

fn existing<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::Config(format!("--{name} is required")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{name} path {} does not exist", p.display())));
    }
    Ok(p)
}
