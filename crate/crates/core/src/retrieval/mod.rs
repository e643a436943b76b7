//! Candidate generation: BM25 over product text and cosine search over
//! embeddings.

mod dense;
mod ivf;
mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dense::{build_dense_index, DenseIndex};
pub use ivf::{IvfConfig, IvfIndex};
pub use sparse::{build_sparse_index, tokenize, SparseIndex, BM25_B, BM25_K1};

/// Default number of retrieved candidates.
pub const DEFAULT_K: usize = 50;
pub const MAX_K: usize = 200;

/// Clamps a configured candidate count into `[1, MAX_K]`.
pub fn clamp_k(k: usize) -> usize {
    k.clamp(1, MAX_K)
}

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("query vector has dimension {got}, index expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown product {0}")]
    NotFound(String),
    #[error("index file {path}: {reason}")]
    File { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sparse,
    Dense,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(Method::Sparse),
            "dense" => Ok(Method::Dense),
            other => Err(format!("unknown retrieval method {other:?} (expected sparse or dense)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub product_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub method: Method,
    pub k: usize,
    pub entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|c| c.product_id.clone()).collect()
    }

    pub fn score_of(&self, product_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|c| c.product_id == product_id)
            .map(|c| c.score)
    }
}

/// Keeps the `k` best `(ordinal, score)` pairs: score descending, then
/// ordinal ascending. Ordinals follow sorted product ids, so the second key is
/// the product id tie rule.
pub(crate) fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored
}
