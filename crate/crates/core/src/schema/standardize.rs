//! Attribute-name standardization: normalization, alias merging by token
//! similarity, manual overrides, and merge suggestions for curation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CategorySchema, SchemaError, SchemaRegistry};
use crate::text::normalize_name;

/// Minimum token-set Jaccard similarity for an automatic merge.
pub const MERGE_THRESHOLD: f64 = 0.5;

/// A pair of names that looked related but did not clear the automatic
/// merge rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSuggestion {
    pub names: Vec<String>,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub registry: SchemaRegistry,
    pub suggestions: Vec<MergeSuggestion>,
}

/// Jaccard similarity of the whitespace-token sets of two names.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<&str> = a.split_whitespace().collect();
    let tb: BTreeSet<&str> = b.split_whitespace().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

fn head_noun(name: &str) -> Option<&str> {
    name.split_whitespace().last()
}

fn auto_merge(a: &str, b: &str) -> bool {
    head_noun(a).is_some() && head_noun(a) == head_noun(b) && token_jaccard(a, b) >= MERGE_THRESHOLD
}

fn related(a: &str, b: &str) -> bool {
    head_noun(a) == head_noun(b) || token_jaccard(a, b) >= MERGE_THRESHOLD
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Deterministic: the smaller index becomes the root.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Reads a manual alias override file: a JSON map alias → canonical.
pub fn load_alias_overrides(path: &Path) -> Result<BTreeMap<String, String>, SchemaError> {
    let file_err = |reason: String| SchemaError::File {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
}

pub fn save_suggestions(path: &Path, suggestions: &[MergeSuggestion]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(suggestions).expect("suggestions serialize");
    std::fs::write(path, text + "\n")
}

/// Clusters attribute names across all schemas and rewrites the registry so
/// each cluster has one canonical name.
///
/// Two names merge automatically when their token-set Jaccard similarity is at
/// least [`MERGE_THRESHOLD`] and their last tokens agree. `overrides` maps an
/// alias to its canonical name and always merges. The canonical name of a
/// cluster is an override target if there is one, otherwise the name used by
/// the most schemas (ties go to the lexicographically smallest). Related pairs
/// that stay apart are returned as suggestions. The registry version is bumped
/// when anything changes.
pub fn standardize(registry: &SchemaRegistry, overrides: &BTreeMap<String, String>) -> Standardized {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for schema in registry.schemas() {
        for def in &schema.attributes {
            *freq.entry(normalize_name(&def.canonical_name)).or_default() += 1;
            for alias in &def.aliases {
                freq.entry(normalize_name(alias)).or_default();
            }
        }
    }
    for (alias, canon) in registry.alias_table() {
        freq.entry(normalize_name(alias)).or_default();
        freq.entry(normalize_name(canon)).or_default();
    }
    let overrides: Vec<(String, String)> = overrides
        .iter()
        .map(|(a, c)| (normalize_name(a), normalize_name(c)))
        .filter(|(a, c)| !a.is_empty() && !c.is_empty() && a != c)
        .collect();
    for (a, c) in &overrides {
        freq.entry(a.clone()).or_default();
        freq.entry(c.clone()).or_default();
    }

    let names: Vec<String> = freq.keys().cloned().collect();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut uf = UnionFind::new(names.len());

    for (alias, canon) in registry.alias_table() {
        uf.union(index[normalize_name(alias).as_str()], index[normalize_name(canon).as_str()]);
    }
    for schema in registry.schemas() {
        for def in &schema.attributes {
            let c = index[normalize_name(&def.canonical_name).as_str()];
            for alias in &def.aliases {
                uf.union(c, index[normalize_name(alias).as_str()]);
            }
        }
    }
    let mut forced: BTreeSet<usize> = BTreeSet::new();
    for (a, c) in &overrides {
        let (ia, ic) = (index[a.as_str()], index[c.as_str()]);
        uf.union(ia, ic);
        forced.insert(ic);
    }

    // Only names sharing a token can be related, so compare within token buckets.
    let mut by_token: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, n) in names.iter().enumerate() {
        for t in n.split_whitespace().collect::<BTreeSet<_>>() {
            by_token.entry(t).or_default().push(i);
        }
    }
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for members in by_token.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    for &(i, j) in &pairs {
        if auto_merge(&names[i], &names[j]) {
            uf.union(i, j);
        }
    }
    let mut suggestions = Vec::new();
    for &(i, j) in &pairs {
        if uf.find(i) != uf.find(j) && related(&names[i], &names[j]) {
            suggestions.push(MergeSuggestion {
                names: vec![names[i].clone(), names[j].clone()],
                similarity: token_jaccard(&names[i], &names[j]),
            });
        }
    }

    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..names.len() {
        clusters.entry(uf.find(i)).or_default().push(i);
    }
    let mut canonical_of: BTreeMap<&str, &str> = BTreeMap::new();
    let mut members_of: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for members in clusters.values() {
        let forced_here: Vec<usize> = members.iter().copied().filter(|m| forced.contains(m)).collect();
        if forced_here.len() > 1 {
            log::warn!(
                "alias overrides name several canonical targets in one cluster: {:?}",
                forced_here.iter().map(|&m| &names[m]).collect::<Vec<_>>()
            );
        }
        let canon = forced_here.first().copied().unwrap_or_else(|| {
            *members
                .iter()
                .max_by(|&&a, &&b| freq[&names[a]].cmp(&freq[&names[b]]).then(names[b].cmp(&names[a])))
                .expect("clusters are non-empty")
        });
        let canon = names[canon].as_str();
        for &m in members {
            canonical_of.insert(names[m].as_str(), canon);
        }
        members_of.insert(
            canon,
            members
                .iter()
                .map(|&m| names[m].clone())
                .filter(|n| n != canon)
                .collect(),
        );
    }

    let alias_table: BTreeMap<String, String> = canonical_of
        .iter()
        .filter(|(n, c)| n != c)
        .map(|(n, c)| (n.to_string(), c.to_string()))
        .collect();

    let rename = |schema: &CategorySchema| -> CategorySchema {
        let mut seen = BTreeSet::new();
        let mut attributes = Vec::new();
        for def in &schema.attributes {
            let canon = canonical_of[normalize_name(&def.canonical_name).as_str()];
            if !seen.insert(canon) {
                continue;
            }
            let mut d = def.clone();
            d.canonical_name = canon.to_string();
            d.aliases = members_of[canon].clone();
            attributes.push(d);
        }
        CategorySchema {
            category_path: schema.category_path.clone(),
            attributes,
            origin: schema.origin,
        }
    };
    let mut schemas: BTreeMap<_, _> = registry
        .schema_map()
        .iter()
        .map(|(p, s)| (p.clone(), rename(s)))
        .collect();
    // Merging can make a sub-level name collide with an inherited one.
    let supers: BTreeMap<_, BTreeSet<String>> = schemas
        .iter()
        .filter(|(p, _)| p.is_super())
        .map(|(p, s)| (p.clone(), s.names().map(str::to_string).collect()))
        .collect();
    for (path, schema) in schemas.iter_mut() {
        if let Some(inherited) = supers.get(&path.parent()).filter(|_| !path.is_super()) {
            schema.attributes.retain(|d| !inherited.contains(&d.canonical_name));
        }
    }

    let mut out = registry.clone();
    out.set_contents(schemas, alias_table);
    if out != *registry {
        out.version = registry.version + 1;
    }
    Standardized {
        registry: out,
        suggestions,
    }
}
