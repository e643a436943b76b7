//! Shared corpora for the benchmarks.

use attrgraph::extraction::AttributeSet;
use attrgraph::graph::build_graph;
use attrgraph::synthetic::{generate, GroundTruth, SynthConfig};
use attrgraph::{AttributeGraph, ProductStore};

pub struct Corpus {
    pub products: ProductStore,
    pub truth: GroundTruth,
    pub graph: AttributeGraph,
}

/// Synthetic catalog of `n` products with a graph built from its ground
/// truth attributes.
pub fn corpus(n: usize) -> Corpus {
    let synthetic = generate(&SynthConfig {
        products: n,
        ..Default::default()
    });
    let sets: Vec<AttributeSet> = synthetic
        .truth
        .products
        .iter()
        .map(|(id, entry)| AttributeSet::new(id.clone(), 1).with_pairs(entry.attributes.clone()))
        .collect();
    Corpus {
        products: ProductStore::from_records(synthetic.records).0,
        truth: synthetic.truth,
        graph: build_graph(&sets),
    }
}
