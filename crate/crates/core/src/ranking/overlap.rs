use std::collections::{BTreeMap, BTreeSet};

use crate::graph::LocalSubgraph;
use crate::retrieval::tokenize;
use crate::text::comparable_value;

/// Minimum length (in characters) of the shorter value for a containment
/// match.
pub const MIN_CONTAINMENT_LEN: usize = 3;

/// Credit for one attribute: 1 for equal normalized values, 0.5 when one
/// contains the other, 0 otherwise.
pub fn value_credit(query_value: &str, candidate_value: &str) -> f64 {
    let q = comparable_value(query_value);
    let c = comparable_value(candidate_value);
    if q == c {
        return 1.0;
    }
    let (short, long) = if q.chars().count() <= c.chars().count() { (&q, &c) } else { (&c, &q) };
    if short.chars().count() >= MIN_CONTAINMENT_LEN && long.contains(short.as_str()) {
        0.5
    } else {
        0.0
    }
}

/// Query-normalized attribute agreement on a 0–100 scale.
pub fn overlap_score<Q, C>(query: &BTreeMap<Q, Q>, candidate: &BTreeMap<C, C>) -> u8
where
    Q: AsRef<str> + Ord,
    C: AsRef<str> + Ord + std::borrow::Borrow<str>,
{
    if query.is_empty() {
        return 0;
    }
    let credit: f64 = query
        .iter()
        .map(|(a, qv)| {
            candidate
                .get(a.as_ref())
                .map_or(0.0, |cv| value_credit(qv.as_ref(), cv.as_ref()))
        })
        .sum();
    (100.0 * credit / query.len() as f64).round() as u8
}

/// Deterministic fallback score for a candidate in a local subgraph.
pub fn attribute_overlap_score(subgraph: &LocalSubgraph, candidate_id: &str) -> u8 {
    overlap_score(
        &subgraph.attributes_of(&subgraph.query_id),
        &subgraph.attributes_of(candidate_id),
    )
}

/// Fallback for the raw-text ranker: share of distinct query tokens present in
/// the candidate text.
pub fn text_overlap_score(query_text: &str, candidate_text: &str) -> u8 {
    let q: BTreeSet<String> = tokenize(query_text).into_iter().collect();
    if q.is_empty() {
        return 0;
    }
    let c: BTreeSet<String> = tokenize(candidate_text).into_iter().collect();
    (100.0 * q.intersection(&c).count() as f64 / q.len() as f64).round() as u8
}
