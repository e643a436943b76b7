use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{top_k, Candidate, CandidateSet, Method, RetrievalError};
use crate::catalog::{product_text, ProductStore};
use crate::provider::EmbeddingProvider;

/// Row-major matrix of unit-normalized embeddings, one row per product in
/// product id order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dimension: usize,
    doc_ids: Vec<String>,
    vectors: Vec<f32>,
}

pub fn build_dense_index(store: &ProductStore, embedder: &dyn EmbeddingProvider) -> DenseIndex {
    let rows = store
        .iter()
        .map(|r| (r.product_id.clone(), embedder.embed(&product_text(r))));
    DenseIndex::from_rows(embedder.dimension(), rows)
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    dim: usize,
    ids: Vec<String>,
}

impl DenseIndex {
    /// Builds from `(product_id, vector)` rows; rows are sorted by id and
    /// L2-normalized (a zero row becomes e₀).
    pub fn from_rows<I: IntoIterator<Item = (String, Vec<f32>)>>(dimension: usize, rows: I) -> Self {
        let mut rows: Vec<(String, Vec<f32>)> = rows.into_iter().collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut vectors = Vec::with_capacity(rows.len() * dimension);
        let mut doc_ids = Vec::with_capacity(rows.len());
        for (id, mut v) in rows {
            assert_eq!(v.len(), dimension, "row {id} has the wrong dimension");
            normalize(&mut v);
            vectors.extend_from_slice(&v);
            doc_ids.push(id);
        }
        DenseIndex {
            dimension,
            doc_ids,
            vectors,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, ordinal: usize) -> &[f32] {
        &self.vectors[ordinal * self.dimension..(ordinal + 1) * self.dimension]
    }

    pub fn ordinal(&self, product_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(product_id)).ok()
    }

    pub fn vector_of(&self, product_id: &str) -> Option<&[f32]> {
        self.ordinal(product_id).map(|i| self.row(i))
    }

    fn check_dim(&self, query: &[f32]) -> Result<(), RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::Dimension {
                expected: self.dimension,
                got: query.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn to_candidates(&self, query_id: &str, k: usize, scored: Vec<(usize, f64)>) -> CandidateSet {
        CandidateSet {
            query_id: query_id.to_string(),
            method: Method::Dense,
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

    /// Exact top-`k` by dot product with `query` (cosine for unit vectors).
    pub fn search(
        &self,
        query_id: &str,
        query: &[f32],
        k: usize,
        exclude_id: Option<&str>,
    ) -> Result<CandidateSet, RetrievalError> {
        self.check_dim(query)?;
        let excluded = exclude_id.and_then(|id| self.ordinal(id));
        let scored = (0..self.len())
            .filter(|&i| Some(i) != excluded)
            .map(|i| (i, dot(self.row(i), query)))
            .collect();
        Ok(self.to_candidates(query_id, k, scored))
    }

    /// Neighbors of an indexed product, excluding itself.
    pub fn search_product(&self, product_id: &str, k: usize) -> Result<CandidateSet, RetrievalError> {
        let q = self
            .vector_of(product_id)
            .ok_or_else(|| RetrievalError::NotFound(product_id.to_string()))?
            .to_vec();
        self.search(product_id, &q, k, Some(product_id))
    }

    /// Header line `{"n","dim","ids"}` followed by the little-endian f32
    /// payload.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let err = |e: std::io::Error| RetrievalError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut out = BufWriter::new(File::create(path).map_err(err)?);
        let header = Header {
            n: self.len(),
            dim: self.dimension,
            ids: self.doc_ids.clone(),
        };
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.write_all(b"\n").map_err(err)?;
        for x in &self.vectors {
            out.write_all(&x.to_le_bytes()).map_err(err)?;
        }
        out.flush().map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let err = |reason: String| RetrievalError::File {
            path: path.display().to_string(),
            reason,
        };
        let mut r = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| err(e.to_string()))?;
        let header: Header = serde_json::from_str(&line).map_err(|e| err(format!("header: {e}")))?;
        if header.ids.len() != header.n {
            return Err(err(format!("header lists {} ids for n={}", header.ids.len(), header.n)));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| err(e.to_string()))?;
        let expected = header.n * header.dim * 4;
        if bytes.len() != expected {
            return Err(err(format!("payload has {} bytes, expected {expected}", bytes.len())));
        }
        let vectors = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(DenseIndex {
            dimension: header.dim,
            doc_ids: header.ids,
            vectors,
        })
    }
}
