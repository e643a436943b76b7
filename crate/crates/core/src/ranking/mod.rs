//! List-wise ranking of retrieved candidates against a query product.

mod overlap;
mod payload;
mod tokens;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use overlap::{attribute_overlap_score, overlap_score, text_overlap_score, value_credit, MIN_CONTAINMENT_LEN};
pub use payload::{
    build_rank_payload, build_raw_payload, raw_product_blocks, render_candidate_attributes, render_candidate_block,
    render_payload, render_query_block, render_raw_payload, structured_product_blocks, CandidateBlock, RankPayload,
    RawPayload, ABSENT, MAX_CANDIDATES_PER_CALL, MAX_EXTRA_ATTRIBUTES, RAW_TOKEN_CAP,
};
pub use tokens::{count_tokens, token_report, truncate_tokens, TokenStats};

use crate::catalog::{product_text, ProductRecord};
use crate::graph::LocalSubgraph;
use crate::prompts::{PromptError, PromptKind, PromptSet};
use crate::provider::{repair_prompt, ResponseSchema, StructuredClient};
use crate::retrieval::CandidateSet;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("nothing to rank")]
    NothingToRank,
    #[error("subgraph is for {subgraph} but candidates are for {candidates}")]
    QueryMismatch { subgraph: String, candidates: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranker {
    Graph,
    Raw,
    Fallback,
}

impl std::str::FromStr for Ranker {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "graph" => Ok(Ranker::Graph),
            "raw" => Ok(Ranker::Raw),
            "fallback" => Ok(Ranker::Fallback),
            other => Err(format!("unknown ranker {other:?} (expected graph, raw or fallback)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Model,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub product_id: String,
    pub score: u8,
    pub source: ScoreSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub ranker: Ranker,
    pub degraded: bool,
    pub items: Vec<ScoredCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_stats: Option<TokenStats>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.product_id.clone()).collect()
    }
}

pub fn rank_response_schema() -> ResponseSchema {
    ResponseSchema::new(
        "rank_scores",
        json!({
            "type": "object",
            "required": ["scores"],
            "properties": {
                "scores": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["product_id", "score"],
                        "properties": {
                            "product_id": {"type": "string"},
                            "score": {"type": "number"},
                            "rationale": {"type": "string"}
                        }
                    }
                }
            }
        }),
    )
}

/// Score desc, then retrieval score desc, then product id asc.
pub fn sort_items(items: &mut [ScoredCandidate], retrieval: &CandidateSet) {
    let rs: BTreeMap<&str, f64> = retrieval
        .entries
        .iter()
        .map(|c| (c.product_id.as_str(), c.score))
        .collect();
    let r = |id: &str| rs.get(id).copied().unwrap_or(f64::NEG_INFINITY);
    items.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then_with(|| r(&b.product_id).total_cmp(&r(&a.product_id)))
            .then_with(|| a.product_id.cmp(&b.product_id))
    });
}

type ParsedScores = BTreeMap<String, (u8, Option<String>)>;

/// Accepts scores for expected ids that appear exactly once with a value in
/// [0, 100]; fractional values round half up. Everything else is reported.
fn parse_scores(payload: &Value, expected: &[String]) -> (ParsedScores, Vec<String>) {
    let mut seen: BTreeMap<String, Vec<(f64, Option<String>)>> = BTreeMap::new();
    for item in payload["scores"].as_array().into_iter().flatten() {
        let (Some(id), Some(score)) = (item["product_id"].as_str(), item["score"].as_f64()) else {
            continue;
        };
        let rationale = item["rationale"].as_str().map(str::to_string);
        seen.entry(id.to_string()).or_default().push((score, rationale));
    }
    let mut problems = Vec::new();
    for id in seen.keys() {
        if !expected.contains(id) {
            problems.push(format!("unknown candidate id {id}"));
        }
    }
    let mut valid = BTreeMap::new();
    for id in expected {
        match seen.get(id).map(Vec::as_slice) {
            None | Some([]) => problems.push(format!("missing candidate id {id}")),
            Some([(score, rationale)]) => {
                if (0.0..=100.0).contains(score) {
                    valid.insert(id.clone(), ((score + 0.5).floor() as u8, rationale.clone()));
                } else {
                    problems.push(format!("score for {id} out of range: {score}"));
                }
            }
            Some(_) => problems.push(format!("duplicate candidate id {id}")),
        }
    }
    (valid, problems)
}

/// One list-wise call with one semantic repair. Candidates the model does not
/// score validly get `fallback` scores; if the provider fails outright the
/// whole list is fallback-scored and flagged degraded.
fn rank_listwise(
    prompt: &str,
    prompt_ids: &[String],
    retrieval: &CandidateSet,
    ranker: Ranker,
    client: &StructuredClient,
    fallback: &dyn Fn(&str) -> u8,
) -> RankedList {
    let schema = rank_response_schema();
    let scores = match client.generate_structured(prompt, &schema) {
        Err(e) => {
            log::warn!("ranking {} failed, using fallback scores: {e}", retrieval.query_id);
            None
        }
        Ok(first) => {
            let (mut valid, problems) = parse_scores(&first.payload, prompt_ids);
            if !problems.is_empty() {
                let retry = repair_prompt(prompt, &problems.join("; "));
                match client.generate_structured(&retry, &schema) {
                    Ok(second) => valid.extend(parse_scores(&second.payload, prompt_ids).0),
                    Err(e) => log::warn!("ranking repair for {} failed: {e}", retrieval.query_id),
                }
            }
            Some(valid)
        }
    };
    let degraded = scores.is_none();
    let scores = scores.unwrap_or_default();
    let mut items: Vec<ScoredCandidate> = retrieval
        .entries
        .iter()
        .map(|c| match scores.get(&c.product_id) {
            Some((score, rationale)) => ScoredCandidate {
                product_id: c.product_id.clone(),
                score: *score,
                source: ScoreSource::Model,
                rationale: rationale.clone(),
            },
            None => ScoredCandidate {
                product_id: c.product_id.clone(),
                score: fallback(&c.product_id),
                source: ScoreSource::Fallback,
                rationale: None,
            },
        })
        .collect();
    sort_items(&mut items, retrieval);
    RankedList {
        query_id: retrieval.query_id.clone(),
        ranker: if degraded { Ranker::Fallback } else { ranker },
        degraded,
        items,
        token_stats: None,
    }
}

/// Ranks with the attribute-overlap scorer alone.
pub fn rank_fallback(subgraph: &LocalSubgraph, candidates: &CandidateSet) -> Result<RankedList, RankError> {
    if candidates.entries.is_empty() {
        return Err(RankError::NothingToRank);
    }
    let mut items: Vec<ScoredCandidate> = candidates
        .entries
        .iter()
        .map(|c| ScoredCandidate {
            product_id: c.product_id.clone(),
            score: attribute_overlap_score(subgraph, &c.product_id),
            source: ScoreSource::Fallback,
            rationale: None,
        })
        .collect();
    sort_items(&mut items, candidates);
    Ok(RankedList {
        query_id: candidates.query_id.clone(),
        ranker: Ranker::Fallback,
        degraded: false,
        items,
        token_stats: None,
    })
}

pub fn render_graph_prompt(payload: &RankPayload, prompts: &PromptSet) -> Result<String, RankError> {
    Ok(prompts.render(PromptKind::RankGraph, &[("payload", &render_payload(payload))])?)
}

/// Graph-aware ranking: compares attribute triples of each candidate against
/// the query.
pub fn rank_graph(
    subgraph: &LocalSubgraph,
    candidates: &CandidateSet,
    client: &StructuredClient,
    prompts: &PromptSet,
) -> Result<RankedList, RankError> {
    let payload = build_rank_payload(subgraph, candidates, prompts.version(PromptKind::RankGraph))?;
    let prompt = render_graph_prompt(&payload, prompts)?;
    let ids: Vec<String> = payload.candidate_blocks.iter().map(|b| b.product_id.clone()).collect();
    let fallback = |id: &str| attribute_overlap_score(subgraph, id);
    Ok(rank_listwise(&prompt, &ids, candidates, Ranker::Graph, client, &fallback))
}

pub fn render_raw_prompt(payload: &RawPayload, prompts: &PromptSet) -> Result<String, RankError> {
    Ok(prompts.render(PromptKind::RankRaw, &[("payload", &render_raw_payload(payload))])?)
}

/// Baseline ranking from truncated product text. `candidates` must hold a
/// record for every entry of `retrieval`.
pub fn rank_raw(
    query: &ProductRecord,
    candidates: &[&ProductRecord],
    retrieval: &CandidateSet,
    client: &StructuredClient,
    prompts: &PromptSet,
) -> Result<RankedList, RankError> {
    let by_id: BTreeMap<&str, &ProductRecord> = candidates.iter().map(|r| (r.product_id.as_str(), *r)).collect();
    let ordered: Vec<&ProductRecord> = retrieval
        .entries
        .iter()
        .filter_map(|c| by_id.get(c.product_id.as_str()).copied())
        .collect();
    let payload = build_raw_payload(query, &ordered, prompts.version(PromptKind::RankRaw))?;
    let prompt = render_raw_prompt(&payload, prompts)?;
    let ids: Vec<String> = payload.candidates.iter().map(|(id, _)| id.clone()).collect();
    let query_text = product_text(query);
    let fallback = |id: &str| {
        by_id
            .get(id)
            .map_or(0, |r| text_overlap_score(&query_text, &product_text(r)))
    };
    Ok(rank_listwise(&prompt, &ids, retrieval, Ranker::Raw, client, &fallback))
}
