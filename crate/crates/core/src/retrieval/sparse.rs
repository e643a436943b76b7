use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{top_k, Candidate, CandidateSet, Method, RetrievalError};
use crate::catalog::{product_text, ProductStore};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Lowercases and splits on anything that is not alphanumeric. No stemming,
/// no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    /// term → (doc ordinal, term frequency), sorted by ordinal.
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    pub doc_lengths: Vec<u32>,
    pub avgdl: f64,
    pub doc_ids: Vec<String>,
    pub k1: f64,
    pub b: f64,
}

/// Indexes `product_text` of every record. Ordinals follow product id order.
pub fn build_sparse_index(store: &ProductStore) -> SparseIndex {
    SparseIndex::from_documents(store.iter().map(|r| (r.product_id.clone(), product_text(r))))
}

impl SparseIndex {
    pub fn from_documents<I: IntoIterator<Item = (String, String)>>(docs: I) -> Self {
        let mut docs: Vec<(String, String)> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (ord, (_, text)) in docs.iter().enumerate() {
            let terms = tokenize(text);
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((ord as u32, n));
            }
        }
        let avgdl = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        SparseIndex {
            postings,
            doc_lengths,
            avgdl,
            doc_ids: docs.into_iter().map(|(id, _)| id).collect(),
            k1: BM25_K1,
            b: BM25_B,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 scores of every document matching at least one query term. Each
    /// distinct query term contributes once.
    pub fn score_all(&self, query_text: &str) -> Vec<(usize, f64)> {
        let terms: BTreeSet<String> = tokenize(query_text).into_iter().collect();
        let mut acc = vec![0.0f64; self.len()];
        let mut hit = vec![false; self.len()];
        for t in &terms {
            let Some(list) = self.postings.get(t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(ord, tf) in list {
                let ord = ord as usize;
                let tf = tf as f64;
                let dl = self.doc_lengths[ord] as f64;
                let norm = if self.avgdl > 0.0 { dl / self.avgdl } else { 0.0 };
                acc[ord] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm));
                hit[ord] = true;
            }
        }
        acc.into_iter()
            .enumerate()
            .filter(|(i, _)| hit[*i])
            .collect()
    }

    /// Top-`k` documents for `query_text`, leaving out `exclude_id`.
    pub fn search(&self, query_id: &str, query_text: &str, k: usize, exclude_id: Option<&str>) -> CandidateSet {
        let excluded = exclude_id.and_then(|id| self.doc_ids.binary_search_by(|d| d.as_str().cmp(id)).ok());
        let scored: Vec<(usize, f64)> = self
            .score_all(query_text)
            .into_iter()
            .filter(|(i, _)| Some(*i) != excluded)
            .collect();
        CandidateSet {
            query_id: query_id.to_string(),
            method: Method::Sparse,
            k,
            entries: top_k(scored, k)
                .into_iter()
                .map(|(i, score)| Candidate {
                    product_id: self.doc_ids[i].clone(),
                    score,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let text = serde_json::to_string(self).expect("sparse index serializes");
        std::fs::write(path, text).map_err(|e| RetrievalError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let err = |reason: String| RetrievalError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}
