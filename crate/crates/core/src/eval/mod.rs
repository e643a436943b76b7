//! Offline evaluation: metrics, thresholded relevance from judge scores, and
//! report rendering.

mod judge;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use judge::{judge_pair, judge_schema, judge_view, JudgeError, Judgment, Judgments};
pub use metrics::{average_precision, mean, ndcg_at_k, precision_at_k, reciprocal_rank};

/// Threshold whose nDCG cells correspond to the published layout; other
/// thresholds report nDCG for reference only.
pub const REFERENCE_NDCG_THRESHOLD: u8 = 80;
pub const DEFAULT_THRESHOLDS: [u8; 2] = [80, 50];
pub const DEFAULT_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("runs {path}: {reason}")]
    Runs { path: String, reason: String },
}

/// Ranked product ids per query for one system.
pub type RunSet = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub thresholds: Vec<u8>,
    pub ks: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    /// Percent values keyed by cutoff.
    pub ndcg: BTreeMap<usize, f64>,
    pub precision: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub map: f64,
    /// Queries this system has no list for; they score zero.
    pub missing_queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBlock {
    pub threshold: u8,
    pub ndcg_comparable: bool,
    pub rows: Vec<SystemRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub query_count: usize,
    pub ks: Vec<usize>,
    pub blocks: Vec<ThresholdBlock>,
    /// Distinct ranked (query, product) pairs without a judgment; they count
    /// as not relevant.
    pub absent_judgments: usize,
    pub missing_judgment_policy: String,
}

impl EvalReport {
    pub fn block(&self, threshold: u8) -> Option<&ThresholdBlock> {
        self.blocks.iter().find(|b| b.threshold == threshold)
    }

    pub fn row(&self, threshold: u8, system: &str) -> Option<&SystemRow> {
        self.block(threshold)?.rows.iter().find(|r| r.system == system)
    }
}

/// Relevance of each ranked item: judged score ≥ threshold. Absent judgments
/// are not relevant.
pub fn relevance_vector(query_id: &str, ranked: &[String], judgments: &Judgments, threshold: u8) -> Vec<bool> {
    ranked
        .iter()
        .map(|p| judgments.get(query_id, p).is_some_and(|j| j.score >= threshold))
        .collect()
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

/// Averages every metric over the union of queries across systems, per
/// threshold.
pub fn run_eval(systems: &BTreeMap<String, RunSet>, judgments: &Judgments, options: &EvalOptions) -> EvalReport {
    let queries: BTreeSet<&str> = systems.values().flat_map(|r| r.keys().map(String::as_str)).collect();
    let absent: BTreeSet<(&str, &str)> = systems
        .values()
        .flat_map(|run| {
            run.iter()
                .flat_map(|(q, list)| list.iter().map(move |p| (q.as_str(), p.as_str())))
        })
        .filter(|(q, p)| judgments.get(q, p).is_none())
        .collect();

    let blocks = options
        .thresholds
        .iter()
        .map(|&threshold| {
            let rows = systems
                .iter()
                .map(|(system, run)| {
                    let mut missing = Vec::new();
                    let rels: Vec<Vec<bool>> = queries
                        .iter()
                        .map(|q| match run.get(*q) {
                            Some(list) => relevance_vector(q, list, judgments, threshold),
                            None => {
                                missing.push(q.to_string());
                                Vec::new()
                            }
                        })
                        .collect();
                    let avg = |f: &dyn Fn(&[bool]) -> f64| pct(mean(&rels.iter().map(|r| f(r)).collect::<Vec<_>>()));
                    SystemRow {
                        system: system.clone(),
                        ndcg: options.ks.iter().map(|&k| (k, avg(&|r| ndcg_at_k(r, k)))).collect(),
                        precision: options.ks.iter().map(|&k| (k, avg(&|r| precision_at_k(r, k)))).collect(),
                        mrr: avg(&reciprocal_rank),
                        map: avg(&average_precision),
                        missing_queries: missing,
                    }
                })
                .collect();
            ThresholdBlock {
                threshold,
                ndcg_comparable: threshold == REFERENCE_NDCG_THRESHOLD,
                rows,
            }
        })
        .collect();

    EvalReport {
        query_count: queries.len(),
        ks: options.ks.clone(),
        blocks,
        absent_judgments: absent.len(),
        missing_judgment_policy: "absent judgment counts as not relevant".to_string(),
    }
}

/// Fixed-width table: one block per threshold, columns nDCG@k…, P@k…, MRR,
/// mAP.
pub fn render_table(report: &EvalReport) -> String {
    let width = report
        .blocks
        .iter()
        .flat_map(|b| b.rows.iter().map(|r| r.system.len()))
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = String::new();
    for block in &report.blocks {
        let mark = if block.ndcg_comparable { "" } else { "*" };
        let _ = writeln!(out, "Eval threshold >= {} ({} queries)", block.threshold, report.query_count);
        let mut header = format!("{:<width$}", "system");
        for k in &report.ks {
            header.push_str(&format!(" {:>8}", format!("nDCG@{k}{mark}")));
        }
        for k in &report.ks {
            header.push_str(&format!(" {:>8}", format!("P@{k}")));
        }
        header.push_str(&format!(" {:>8} {:>8}", "MRR", "mAP"));
        let _ = writeln!(out, "{header}");
        for row in &block.rows {
            let mut line = format!("{:<width$}", row.system);
            for k in &report.ks {
                line.push_str(&format!(" {:>8.2}", row.ndcg[k]));
            }
            for k in &report.ks {
                line.push_str(&format!(" {:>8.2}", row.precision[k]));
            }
            line.push_str(&format!(" {:>8.2} {:>8.2}", row.mrr, row.map));
            if !row.missing_queries.is_empty() {
                line.push_str(&format!("  (missing {} queries)", row.missing_queries.len()));
            }
            let _ = writeln!(out, "{line}");
        }
        if !block.ndcg_comparable {
            let _ = writeln!(
                out,
                "* nDCG at this threshold is reported for reference and is not comparable with the >= {REFERENCE_NDCG_THRESHOLD} block"
            );
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "absent judgments: {} ({})",
        report.absent_judgments, report.missing_judgment_policy
    );
    out
}

/// Ranked ids from a rank result (`items`) or candidate set (`entries`).
pub fn ranked_ids(value: &Value) -> Option<(String, Vec<String>)> {
    let query = value["query_id"].as_str()?.to_string();
    let list = value["items"].as_array().or_else(|| value["entries"].as_array())?;
    let ids = list
        .iter()
        .map(|i| i["product_id"].as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()?;
    Some((query, ids))
}

/// Reads every `*.jsonl` file in `dir` as one system named after the file
/// stem; each line is a rank result or candidate set.
pub fn load_runs(dir: &Path) -> Result<BTreeMap<String, RunSet>, EvalError> {
    let err = |path: &Path, reason: String| EvalError::Runs {
        path: path.display().to_string(),
        reason,
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| err(dir, e.to_string()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(err(dir, "no *.jsonl run files".into()));
    }
    let mut systems = BTreeMap::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| err(&path, e.to_string()))?;
        let mut run = RunSet::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line).map_err(|e| err(&path, format!("line {}: {e}", i + 1)))?;
            let (q, ids) = ranked_ids(&v)
                .ok_or_else(|| err(&path, format!("line {}: expected a rank result or candidate set", i + 1)))?;
            run.insert(q, ids);
        }
        let name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        systems.insert(name, run);
    }
    Ok(systems)
}

/// Cohen's kappa for two label sequences; `None` when lengths differ, the
/// input is empty, or chance agreement is 1.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ca: BTreeMap<&T, f64> = BTreeMap::new();
    let mut cb: BTreeMap<&T, f64> = BTreeMap::new();
    for x in a {
        *ca.entry(x).or_default() += 1.0;
    }
    for y in b {
        *cb.entry(y).or_default() += 1.0;
    }
    let expected: f64 = ca.iter().map(|(k, c)| c / n * cb.get(k).copied().unwrap_or(0.0) / n).sum();
    if (1.0 - expected).abs() < f64::EPSILON {
        return None;
    }
    Some((observed - expected) / (1.0 - expected))
}
