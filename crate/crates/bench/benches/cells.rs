use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ttrnn::cells::Recurrent;
use ttrnn::CellKind;
use ttrnn_bench::{dense_cell, fused_cell, input_vector, pergate_cell, state, HIDDEN, INPUT};

fn bench_step<C: Recurrent>(
    group: &mut criterion::BenchmarkGroup<'_, criterion::measurement::WallTime>,
    id: BenchmarkId,
    cell: &C,
) {
    let x = input_vector(INPUT, 1);
    let s = state(cell.kind(), HIDDEN, 2);
    group.bench_function(id, |b| b.iter(|| black_box(cell.step(black_box(&x), &s).unwrap())));
}

fn steps(c: &mut Criterion) {
    for kind in [CellKind::Lstm, CellKind::Gru] {
        let mut group = c.benchmark_group(format!("{kind}_step_512x4096"));
        group.sample_size(20);
        bench_step(&mut group, BenchmarkId::new("dense", "-"), &dense_cell(kind, 0));
        for r in [2, 3, 4] {
            bench_step(&mut group, BenchmarkId::new("tt-pergate", r), &pergate_cell(kind, r, 0).unwrap());
            bench_step(&mut group, BenchmarkId::new("tt-fused", r), &fused_cell(kind, r, 0).unwrap());
        }
        group.finish();
    }
}

criterion_group!(benches, steps);
criterion_main!(benches);
