use std::hint::black_box;

use airls::problems::{gen_supply_demand, gen_water, SupplyDemandParams, WaterParams};
use airls::{airls_solve, airls_sweep, SolverConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn sweep(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let mut group = c.benchmark_group("sweep");
    for t in [20, 100, 400] {
        let inst = gen_supply_demand(&SupplyDemandParams::new(t, 2, 0.01, 0)).unwrap();
        group.bench_with_input(BenchmarkId::new("supply_demand", t), &inst, |b, inst| {
            b.iter(|| airls_sweep(&inst.model, black_box(&inst.x_init), &cfg).unwrap())
        });
    }
    let water = gen_water(&WaterParams::new(50, 0.01, 0)).unwrap();
    group.bench_function("water_50", |b| {
        b.iter(|| airls_sweep(&water.model, black_box(&water.x_init), &cfg).unwrap())
    });
    group.finish();
}

fn solve(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let inst = gen_supply_demand(&SupplyDemandParams::new(100, 2, 0.01, 0)).unwrap();
    c.bench_function("solve/supply_demand_100", |b| {
        b.iter(|| airls_solve(&inst.model, black_box(&inst.x_init), &cfg).unwrap())
    });
}

criterion_group!(benches, sweep, solve);
criterion_main!(benches);
