use std::hint::black_box;
use std::sync::Arc;

use attrgraph::eval::{average_precision, ndcg_at_k};
use attrgraph::provider::{ProviderSettings, StructuredClient};
use attrgraph::ranking::{count_tokens, rank_fallback, rank_graph};
use attrgraph::retrieval::{Candidate, CandidateSet, Method};
use attrgraph::synthetic::SimulatedProvider;
use attrgraph::PromptSet;
use attrgraph_bench::corpus;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn ranking(c: &mut Criterion) {
    let corpus = corpus(500);
    let ids: Vec<String> = corpus.products.ids().map(str::to_string).collect();
    let query = ids[0].clone();
    let client = StructuredClient::new(
        Arc::new(SimulatedProvider::new(corpus.truth.clone())),
        ProviderSettings::immediate(),
    );
    let prompts = PromptSet::default();

    let mut group = c.benchmark_group("rank");
    for k in [10, 50] {
        let candidates = CandidateSet {
            query_id: query.clone(),
            method: Method::Dense,
            k,
            entries: ids[1..=k]
                .iter()
                .enumerate()
                .map(|(i, id)| Candidate {
                    product_id: id.clone(),
                    score: 1.0 / (i + 1) as f64,
                })
                .collect(),
        };
        let sub = corpus.graph.local_subgraph(&query, &candidates.ids()).unwrap();
        group.bench_with_input(BenchmarkId::new("subgraph", k), &k, |b, _| {
            b.iter(|| corpus.graph.local_subgraph(&query, black_box(&candidates.ids())).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fallback", k), &k, |b, _| {
            b.iter(|| rank_fallback(black_box(&sub), &candidates).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("graph_simulated", k), &k, |b, _| {
            b.iter(|| rank_graph(black_box(&sub), &candidates, &client, &prompts).unwrap())
        });
    }
    group.finish();

    let text = corpus.products.get(&query).unwrap().description.clone();
    c.bench_function("count_tokens_description", |b| b.iter(|| count_tokens(black_box(&text))));

    let rel: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
    c.bench_function("metrics_50", |b| {
        b.iter(|| (average_precision(black_box(&rel)), ndcg_at_k(black_box(&rel), 10)))
    });
}

criterion_group!(benches, ranking);
criterion_main!(benches);
