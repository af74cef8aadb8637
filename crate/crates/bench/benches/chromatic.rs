use criterion::{criterion_group, criterion_main, Criterion};

use prcc_core::bounds::conflict_graph;
use prcc_core::{build_share_graph, chromatic_number, enumerate_causal_pasts, Guard, ReplicaId, Topology};

fn bench(c: &mut Criterion) {
    let topology = Topology::from_sets(&[&["x", "y"][..], &["x", "z"][..], &["y", "z"][..]]).unwrap();
    let graph = build_share_graph(&topology);
    let i = ReplicaId(1);
    let en = enumerate_causal_pasts(&topology, i, 1, Guard::default()).unwrap();
    let pasts: Vec<_> = en.pasts.iter().map(|p| p.past.clone()).collect();
    let h = conflict_graph(&graph, i, &pasts);

    let mut group = c.benchmark_group("bounds");
    group.sample_size(10);
    group.bench_function("enumerate_triangle_m1", |b| {
        b.iter(|| enumerate_causal_pasts(&topology, i, 1, Guard::default()).unwrap())
    });
    group.bench_function("chromatic_triangle_m1", |b| b.iter(|| chromatic_number(&h, 10_000).unwrap()));
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
