use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    pareto_points, render_pareto_svg, run_significance, Method, ParetoPoint, SignificanceFlags,
    SweepResults, TrialResult, DEFAULT_RESAMPLES,
};
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str = "method,lr,alpha,ndcg@1,ndcg@5,ndcg@10,logloss,ece,aucpr";
pub const PARETO_HEADER: &str = "lr,alpha,ndcg@10,neg_logloss,dominated";
pub const SIGNIFICANCE_HEADER: &str = "method,metric,mean_diff,p_value,flag";

/// Paths written by [`emit_report`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub pareto: Vec<PathBuf>,
    pub svg: PathBuf,
    pub significance: Option<PathBuf>,
    pub trials: PathBuf,
}

fn alpha_cell(alpha: Option<f64>) -> String {
    alpha.map(|a| a.to_string()).unwrap_or_default()
}

/// One row per method: the test metrics of its selected model.
pub fn format_summary_csv(results: &SweepResults) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for m in &results.methods {
        match &m.selected {
            Some(t) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    m.method,
                    t.learning_rate,
                    alpha_cell(t.alpha),
                    t.test.ndcg(1),
                    t.test.ndcg(5),
                    t.test.ndcg(10),
                    t.test.logloss,
                    t.test.ece,
                    t.test.aucpr
                );
            }
            None => {
                let _ = writeln!(s, "{},,,NaN,NaN,NaN,NaN,NaN,NaN", m.method);
            }
        }
    }
    s
}

pub fn format_pareto_csv(points: &[ParetoPoint]) -> String {
    let mut s = String::from(PARETO_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.learning_rate,
            alpha_cell(p.alpha),
            p.x,
            p.y,
            p.dominated
        );
    }
    s
}

/// Header and rows of a plain comma-separated file (no quoting).
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty csv".into(),
        })?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_owned).collect();
        if row.len() != header.len() {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn format_significance_csv(rows: &[(Method, SignificanceFlags)]) -> String {
    let mut s = String::from(SIGNIFICANCE_HEADER);
    s.push('\n');
    for (method, flags) in rows {
        for (metric, r) in [("ndcg@10", &flags.ndcg10), ("logloss", &flags.logloss)] {
            let flag = serde_json::to_value(r.flag)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            let _ = writeln!(s, "{method},{metric},{},{},{flag}", r.mean_diff, r.p_value);
        }
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Significance of every selected model against the selected SoftmaxCE +
/// Platt model, if that baseline was run.
pub fn significance_rows(results: &SweepResults) -> Result<Vec<(Method, SignificanceFlags)>> {
    let Some(baseline) = results
        .get(Method::SoftmaxCePlatt)
        .and_then(|m| m.selected.as_ref())
    else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for m in &results.methods {
        if m.method == Method::SoftmaxCePlatt {
            continue;
        }
        if let Some(t) = &m.selected {
            let flags = run_significance(
                &baseline.test_per_query,
                &t.test_per_query,
                DEFAULT_RESAMPLES,
                0,
            )?;
            rows.push((m.method, flags));
        }
    }
    Ok(rows)
}

/// Writes `summary.csv`, one `pareto_<method>.csv` per method, `pareto.svg`,
/// `trials.json` and, when the Platt baseline is present, `significance.csv`.
pub fn emit_report(results: &SweepResults, out_dir: impl AsRef<Path>) -> Result<ReportFiles> {
    if results.methods.is_empty() {
        return Err(Error::NoTrials("no methods to report".into()));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let summary = out.join("summary.csv");
    write(&summary, &format_summary_csv(results))?;

    let mut pareto = Vec::new();
    let mut series = Vec::new();
    for m in &results.methods {
        let points = pareto_points(&m.trials);
        let path = out.join(format!("pareto_{}.csv", m.method));
        write(&path, &format_pareto_csv(&points))?;
        pareto.push(path);
        series.push((m.method, points));
    }

    let svg = out.join("pareto.svg");
    write(&svg, &render_pareto_svg(&series))?;

    let rows = significance_rows(results)?;
    let significance = if rows.is_empty() {
        None
    } else {
        let path = out.join("significance.csv");
        write(&path, &format_significance_csv(&rows))?;
        Some(path)
    };

    let trials = out.join("trials.json");
    let json = serde_json::to_string_pretty(results)
        .map_err(|e| Error::InvalidArgument(format!("serializing results: {e}")))?;
    write(&trials, &json)?;

    Ok(ReportFiles {
        summary,
        pareto,
        svg,
        significance,
        trials,
    })
}

/// Reads back a `trials.json` written by [`emit_report`].
pub fn read_trials(path: impl AsRef<Path>) -> Result<SweepResults> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Single-trial convenience used by `train`: the JSON of one result.
pub fn trial_json(trial: &TrialResult) -> Result<String> {
    serde_json::to_string_pretty(trial)
        .map_err(|e| Error::InvalidArgument(format!("serializing trial: {e}")))
}
