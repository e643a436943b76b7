use std::hint::black_box;

use attrgraph::catalog::product_text;
use attrgraph::provider::HashEmbedder;
use attrgraph::retrieval::{build_dense_index, build_sparse_index, IvfConfig, IvfIndex};
use attrgraph_bench::corpus;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn retrieval(c: &mut Criterion) {
    let corpus = corpus(2000);
    let embedder = HashEmbedder::default();
    let sparse = build_sparse_index(&corpus.products);
    let dense = build_dense_index(&corpus.products, &embedder);
    let ivf = IvfIndex::build(dense.clone(), IvfConfig::default());
    let query_id = corpus.products.ids().nth(17).unwrap().to_string();
    let query_text = product_text(corpus.products.get(&query_id).unwrap());
    let query_vec = dense.vector_of(&query_id).unwrap().to_vec();

    let mut group = c.benchmark_group("retrieve_2000");
    for k in [10, 50] {
        group.bench_with_input(BenchmarkId::new("bm25", k), &k, |b, &k| {
            b.iter(|| sparse.search(&query_id, black_box(&query_text), k, Some(&query_id)))
        });
        group.bench_with_input(BenchmarkId::new("dense_exact", k), &k, |b, &k| {
            b.iter(|| dense.search(&query_id, black_box(&query_vec), k, Some(&query_id)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense_ivf", k), &k, |b, &k| {
            b.iter(|| ivf.search(&query_id, black_box(&query_vec), k, Some(&query_id)).unwrap())
        });
    }
    group.finish();

    c.bench_function("build_sparse_2000", |b| b.iter(|| build_sparse_index(black_box(&corpus.products))));
}

criterion_group!(benches, retrieval);
criterion_main!(benches);
