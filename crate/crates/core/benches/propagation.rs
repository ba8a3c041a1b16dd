use cflgcn::datasets::SyntheticBlocks;
use cflgcn::eval::evaluate_embeddings;
use cflgcn::graph::{InteractionGraph, Normalization};
use cflgcn::propagation::EmbeddingTable;
use cflgcn::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn execs() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

// roughly Douban-Movie sized: ~3k users, ~7k items, ~200k interactions
fn graph() -> InteractionGraph {
    let data = SyntheticBlocks {
        blocks: 30,
        users: 3000,
        items: 7000,
        density: 0.25,
        noise: 0.001,
    }
    .generate(0);
    InteractionGraph::from_edges(3000, 7000, &data.edges).unwrap()
}

fn products(c: &mut Criterion) {
    let g = graph().normalize(Normalization::Symmetric);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let items = EmbeddingTable::gaussian(g.num_items(), 64, 0.1, &mut rng).into_inner();
    let users = EmbeddingTable::gaussian(g.num_users(), 64, 0.1, &mut rng).into_inner();
    let mut group = c.benchmark_group("products");
    for (name, exec) in execs() {
        group.bench_with_input(BenchmarkId::new("items_to_users", name), &exec, |b, &e| {
            b.iter(|| g.agg_items_to_users_with(&items, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("users_to_items", name), &exec, |b, &e| {
            b.iter(|| g.agg_users_to_items_with(&users, e).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let train = graph();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let users = EmbeddingTable::gaussian(train.num_users(), 64, 0.1, &mut rng).into_inner();
    let items = EmbeddingTable::gaussian(train.num_items(), 64, 0.1, &mut rng).into_inner();
    let test: Vec<Vec<usize>> = (0..train.num_users())
        .map(|u| vec![(u * 7) % train.num_items()])
        .collect();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in execs() {
        group.bench_with_input(BenchmarkId::new("recall_ndcg@20", name), &exec, |b, &e| {
            b.iter(|| evaluate_embeddings(&users, &items, &train, &test, 20, e).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, products, evaluation);
criterion_main!(benches);
