//! Artifact statistics: graph sizes, attribute coverage, cache freshness.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::ProductStore;
use crate::extraction::AttributeStore;
use crate::graph::AttributeGraph;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    /// Catalog products with an attribute set at the current schema version.
    pub current: usize,
    /// Catalog products whose cached set is from an older schema version.
    pub stale: usize,
    pub missing: usize,
}

impl CacheStats {
    /// Share of catalog products that would be served from the cache.
    pub fn hit_rate(&self) -> f64 {
        let total = self.current + self.stale + self.missing;
        if total == 0 {
            0.0
        } else {
            self.current as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub products: usize,
    pub categories: usize,
    pub attributes: usize,
    pub edges: usize,
    /// Number of graph products by how many attributes they have.
    pub coverage_histogram: BTreeMap<usize, usize>,
    /// Products per attribute, most common first.
    pub top_attributes: Vec<(String, usize)>,
    pub cache: Option<CacheStats>,
    pub cache_hit_rate: Option<f64>,
}

const TOP_ATTRIBUTES: usize = 10;

pub fn graph_stats(graph: &AttributeGraph) -> Stats {
    let mut coverage_histogram = BTreeMap::new();
    for p in graph.products() {
        *coverage_histogram.entry(graph.degree(p)).or_insert(0) += 1;
    }
    let mut top_attributes: Vec<(String, usize)> = graph
        .attributes()
        .iter()
        .map(|a| (a.clone(), graph.products_with(a).map_or(0, |s| s.len())))
        .collect();
    top_attributes.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top_attributes.truncate(TOP_ATTRIBUTES);
    Stats {
        products: graph.products().len(),
        categories: 0,
        attributes: graph.attributes().len(),
        edges: graph.edge_count(),
        coverage_histogram,
        top_attributes,
        cache: None,
        cache_hit_rate: None,
    }
}

pub fn cache_stats(catalog: &ProductStore, store: &AttributeStore, version: u64) -> CacheStats {
    let mut out = CacheStats::default();
    for id in catalog.ids() {
        match store.get(id) {
            Some(s) if s.schema_version == version => out.current += 1,
            Some(_) => out.stale += 1,
            None => out.missing += 1,
        }
    }
    out
}

/// Graph statistics plus catalog categories and cache freshness.
pub fn collect_stats(graph: &AttributeGraph, catalog: &ProductStore, store: &AttributeStore, version: u64) -> Stats {
    let mut stats = graph_stats(graph);
    let categories: BTreeSet<_> = catalog.category_index().keys().collect();
    stats.categories = categories.len();
    let cache = cache_stats(catalog, store, version);
    stats.cache_hit_rate = Some(cache.hit_rate());
    stats.cache = Some(cache);
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ProductRecord;
    use crate::extraction::AttributeSet;
    use crate::graph::build_graph;

    fn sets() -> Vec<AttributeSet> {
        vec![
            AttributeSet::new("a", 2).with_pairs([("brand", "X"), ("color", "red")]),
            AttributeSet::new("b", 2).with_pairs([("brand", "Y")]),
            AttributeSet::new("c", 1).with_pairs([("brand", "X")]),
            AttributeSet::new("d", 2),
        ]
    }

    #[test]
    fn counts_match_graph() {
        let g = build_graph(&sets());
        let s = graph_stats(&g);
        assert_eq!((s.products, s.attributes, s.edges), (4, 2, 4));
        assert_eq!(s.coverage_histogram, BTreeMap::from([(0, 1), (1, 2), (2, 1)]));
        assert_eq!(s.coverage_histogram.values().sum::<usize>(), s.products);
        assert_eq!(s.top_attributes[0], ("brand".to_string(), 3));
    }

    #[test]
    fn empty_graph_is_zeros() {
        let s = graph_stats(&AttributeGraph::new());
        assert_eq!((s.products, s.attributes, s.edges), (0, 0, 0));
        assert!(s.coverage_histogram.is_empty());
    }

    #[test]
    fn cache_freshness() {
        let catalog = ProductStore::from_records(
            ["a", "b", "c", "d", "e"]
                .into_iter()
                .map(|id| ProductRecord::new(id, "t").with_category("S", None)),
        )
        .0;
        let store = AttributeStore::from_sets(sets());
        let s = collect_stats(&build_graph(&sets()), &catalog, &store, 2);
        assert_eq!(s.cache, Some(CacheStats { current: 3, stale: 1, missing: 1 }));
        assert_eq!(s.cache_hit_rate, Some(0.6));
        assert_eq!(s.categories, 1);
    }
}
