use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::catalog::{product_text, ProductRecord};
use crate::extraction::AttributeSet;
use crate::prompts::{PromptError, PromptKind, PromptSet};
use crate::provider::{GenerateError, ResponseSchema, StructuredClient};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub query_id: String,
    pub product_id: String,
    pub score: u8,
    pub judge: String,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judging {query_id}/{product_id}: {source}")]
    Provider {
        query_id: String,
        product_id: String,
        #[source]
        source: GenerateError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("judgments file {path}: {reason}")]
    File { path: String, reason: String },
}

/// Judgments keyed by (query, product); later entries replace earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    by_pair: BTreeMap<(String, String), Judgment>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, j: Judgment) {
        self.by_pair.insert((j.query_id.clone(), j.product_id.clone()), j);
    }

    pub fn get(&self, query_id: &str, product_id: &str) -> Option<&Judgment> {
        self.by_pair.get(&(query_id.to_string(), product_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.by_pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_pair.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Judgment> {
        self.by_pair.values()
    }

    pub fn load(path: &Path) -> Result<Self, JudgeError> {
        let err = |reason: String| JudgeError::File {
            path: path.display().to_string(),
            reason,
        };
        let f = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut out = Judgments::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let j: Judgment = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            if j.score > 100 {
                return Err(err(format!("line {}: score {} outside 0-100", i + 1, j.score)));
            }
            out.insert(j);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), JudgeError> {
        let err = |e: std::io::Error| JudgeError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut out = BufWriter::new(File::create(path).map_err(err)?);
        for j in self.by_pair.values() {
            serde_json::to_writer(&mut out, j).expect("judgments serialize");
            out.write_all(b"\n").map_err(err)?;
        }
        out.flush().map_err(err)
    }
}

impl FromIterator<Judgment> for Judgments {
    fn from_iter<I: IntoIterator<Item = Judgment>>(iter: I) -> Self {
        let mut out = Judgments::new();
        for j in iter {
            out.insert(j);
        }
        out
    }
}

pub fn judge_schema() -> ResponseSchema {
    ResponseSchema::new(
        "judge_score",
        json!({
            "type": "object",
            "required": ["score"],
            "properties": {"score": {"type": "number", "minimum": 0, "maximum": 100}}
        }),
    )
}

/// Product text followed by its extracted attributes, as shown to the judge.
pub fn judge_view(record: &ProductRecord, attributes: Option<&AttributeSet>) -> String {
    let mut out = product_text(record);
    if let Some(set) = attributes.filter(|s| !s.pairs.is_empty()) {
        out.push_str("\nAttributes:");
        for (a, v) in &set.pairs {
            out.push_str(&format!("\n- {a}: {v}"));
        }
    }
    out
}

/// Scores one query–candidate pair on the 0–100 judge scale.
#[allow(clippy::too_many_arguments)]
pub fn judge_pair(
    query: &ProductRecord,
    query_attrs: Option<&AttributeSet>,
    candidate: &ProductRecord,
    candidate_attrs: Option<&AttributeSet>,
    client: &StructuredClient,
    prompts: &PromptSet,
    judge: &str,
) -> Result<Judgment, JudgeError> {
    let prompt = prompts.render(
        PromptKind::Judge,
        &[
            ("query_id", &query.product_id),
            ("query", &judge_view(query, query_attrs)),
            ("candidate_id", &candidate.product_id),
            ("candidate", &judge_view(candidate, candidate_attrs)),
        ],
    )?;
    let out = client
        .generate_structured(&prompt, &judge_schema())
        .map_err(|source| JudgeError::Provider {
            query_id: query.product_id.clone(),
            product_id: candidate.product_id.clone(),
            source,
        })?;
    let score = out.payload["score"].as_f64().unwrap_or(0.0);
    Ok(Judgment {
        query_id: query.product_id.clone(),
        product_id: candidate.product_id.clone(),
        score: (score + 0.5).floor().clamp(0.0, 100.0) as u8,
        judge: judge.to_string(),
    })
}
