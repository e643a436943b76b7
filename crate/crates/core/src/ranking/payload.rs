use std::fmt::Write as _;

use serde::Serialize;

use super::tokens::truncate_tokens;
use super::RankError;
use crate::catalog::{product_text, ProductRecord};
use crate::graph::{LocalSubgraph, Triple};
use crate::retrieval::CandidateSet;

/// Cap on candidate-only attributes listed per candidate.
pub const MAX_EXTRA_ATTRIBUTES: usize = 10;
/// Cap on approximate tokens per product in the raw-text payload.
pub const RAW_TOKEN_CAP: usize = 700;
/// Candidates beyond this many are left out of the prompt and scored by the
/// fallback scorer.
pub const MAX_CANDIDATES_PER_CALL: usize = 80;

pub const ABSENT: &str = "(absent)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateBlock {
    pub product_id: String,
    pub triples: Vec<Triple>,
    pub extra_attributes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankPayload {
    pub query_id: String,
    pub query_block: Vec<(String, String)>,
    pub candidate_blocks: Vec<CandidateBlock>,
    pub instructions_version: String,
}

pub fn build_rank_payload(
    subgraph: &LocalSubgraph,
    candidates: &CandidateSet,
    instructions_version: &str,
) -> Result<RankPayload, RankError> {
    if subgraph.query_id != candidates.query_id {
        return Err(RankError::QueryMismatch {
            subgraph: subgraph.query_id.clone(),
            candidates: candidates.query_id.clone(),
        });
    }
    if candidates.entries.is_empty() {
        return Err(RankError::NothingToRank);
    }
    // Triples against the query itself list its attributes in triple order.
    let query_block = subgraph
        .shared_triples(&subgraph.query_id)
        .into_iter()
        .map(|t| (t.attribute, t.query_value))
        .collect();

    let candidate_blocks = candidates
        .entries
        .iter()
        .take(MAX_CANDIDATES_PER_CALL)
        .map(|c| {
            let mut extra = subgraph.candidate_only(&c.product_id);
            extra.truncate(MAX_EXTRA_ATTRIBUTES);
            CandidateBlock {
                product_id: c.product_id.clone(),
                triples: subgraph.shared_triples(&c.product_id),
                extra_attributes: extra,
            }
        })
        .collect();
    Ok(RankPayload {
        query_id: subgraph.query_id.clone(),
        query_block,
        candidate_blocks,
        instructions_version: instructions_version.to_string(),
    })
}

fn render_pairs(out: &mut String, pairs: impl IntoIterator<Item = (impl AsRef<str>, impl AsRef<str>)>) {
    for (a, v) in pairs {
        let _ = writeln!(out, "- {}: {}", a.as_ref(), v.as_ref());
    }
}

pub fn render_query_block(payload: &RankPayload) -> String {
    let mut out = format!("Query product: {}\n", payload.query_id);
    render_pairs(&mut out, payload.query_block.iter().map(|(a, v)| (a, v)));
    out
}

pub fn render_candidate_block(block: &CandidateBlock) -> String {
    let mut out = format!("Candidate ID: {}\n", block.product_id);
    for t in &block.triples {
        let cv = t.candidate_value.as_deref().unwrap_or(ABSENT);
        let _ = writeln!(out, "- {}: {} | {}", t.attribute, t.query_value, cv);
    }
    if !block.extra_attributes.is_empty() {
        out.push_str("Other candidate attributes:\n");
        render_pairs(&mut out, block.extra_attributes.iter().map(|(a, v)| (a, v)));
    }
    out
}

/// The candidate's own attributes as they appear in its block, rendered as a
/// standalone product description.
pub fn render_candidate_attributes(block: &CandidateBlock) -> String {
    let mut out = format!("Candidate ID: {}\n", block.product_id);
    let present = block
        .triples
        .iter()
        .filter_map(|t| t.candidate_value.as_deref().map(|v| (t.attribute.as_str(), v)));
    render_pairs(&mut out, present);
    render_pairs(&mut out, block.extra_attributes.iter().map(|(a, v)| (a.as_str(), v.as_str())));
    out
}

/// Text substituted into the ranking template.
pub fn render_payload(payload: &RankPayload) -> String {
    let mut out = render_query_block(payload);
    for block in &payload.candidate_blocks {
        out.push('\n');
        out.push_str(&render_candidate_block(block));
    }
    out
}

/// Per-product renderings of a structured payload: the query first, then
/// each candidate.
pub fn structured_product_blocks(payload: &RankPayload) -> Vec<String> {
    std::iter::once(render_query_block(payload))
        .chain(payload.candidate_blocks.iter().map(render_candidate_attributes))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RawPayload {
    pub query_id: String,
    pub query_text: String,
    pub candidates: Vec<(String, String)>,
    pub instructions_version: String,
}

pub fn build_raw_payload(
    query: &ProductRecord,
    candidates: &[&ProductRecord],
    instructions_version: &str,
) -> Result<RawPayload, RankError> {
    if candidates.is_empty() {
        return Err(RankError::NothingToRank);
    }
    let text = |r: &ProductRecord| truncate_tokens(&product_text(r), RAW_TOKEN_CAP).to_string();
    Ok(RawPayload {
        query_id: query.product_id.clone(),
        query_text: text(query),
        candidates: candidates
            .iter()
            .take(MAX_CANDIDATES_PER_CALL)
            .map(|r| (r.product_id.clone(), text(r)))
            .collect(),
        instructions_version: instructions_version.to_string(),
    })
}

/// Per-product renderings of a raw payload, query first.
pub fn raw_product_blocks(payload: &RawPayload) -> Vec<String> {
    std::iter::once(format!("Query product: {}\n{}\n", payload.query_id, payload.query_text))
        .chain(
            payload
                .candidates
                .iter()
                .map(|(id, text)| format!("Candidate ID: {id}\n{text}\n")),
        )
        .collect()
}

pub fn render_raw_payload(payload: &RawPayload) -> String {
    raw_product_blocks(payload).join("\n")
}
