//! Sequential against rayon-parallel execution for the heavy sweeps.
//! With the `parallel` feature off both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use epr2_core::chained::optimize_chained;
use epr2_core::decomposition::max_bound_gap;
use epr2_core::density::{Density, DensityGrid};
use epr2_core::local_model::correlator_l_mc;
use epr2_core::search::SearchConfig;
use epr2_core::two_lambda::density_check;
use epr2_core::{Exec, RandomStream, SettingPair, StateParam};

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn grid_search(c: &mut Criterion) {
    let state = StateParam::from_c(0.9).unwrap();
    let mut group = c.benchmark_group("max_bound_gap");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        let cfg = SearchConfig {
            exec,
            ..SearchConfig::coarse()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| max_bound_gap(black_box(&state), &cfg))
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let pair = SettingPair::from_params(0.3, -0.4, 1.2);
    let stream = RandomStream::new(1);
    let mut group = c.benchmark_group("correlator_mc_1e6");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| correlator_l_mc(black_box(&pair), 1_000_000, &stream, exec))
        });
    }
    group.finish();
}

fn chained(c: &mut Criterion) {
    let state = StateParam::from_c(0.5).unwrap();
    let mut group = c.benchmark_group("optimize_chained_n12");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        let cfg = SearchConfig {
            exec,
            ..SearchConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| optimize_chained(black_box(&state), 12, &cfg).unwrap())
        });
    }
    group.finish();
}

fn density(c: &mut Criterion) {
    let state = StateParam::from_s(0.5).unwrap();
    let rho = Density::Grid(DensityGrid::uniform(64, 64));
    let mut group = c.benchmark_group("density_check_64");
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| density_check(black_box(&state), &rho, 1e-6, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, grid_search, monte_carlo, chained, density);
criterion_main!(benches);
