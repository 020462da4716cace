use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cqed_core::inference::{calibrate_lorentzian_pair, LorentzianPairParams, LorentzianPeak};
use cqed_core::model::SystemParams;
use cqed_core::parallel::Execution;
use cqed_core::sweep::{simulate_sweep, SweepSpec};

fn detuning_sweep(c: &mut Criterion) {
    let mut spec = SweepSpec::new(SystemParams::micropillar(), (-20..=20).map(|i| 10.0 * i as f64).collect());
    spec.grid_points = 2048;
    let mut group = c.benchmark_group("detuning_sweep");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| black_box(simulate_sweep(&spec, exec)))
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let truth = LorentzianPairParams::new(LorentzianPeak::new(-57.0, 60.0, 1.0), LorentzianPeak::new(57.0, 65.0, 0.9));
    let grid: Vec<f64> = (0..1201).map(|i| -300.0 + 0.5 * i as f64).collect();
    let mut group = c.benchmark_group("lorentzian_calibration");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| black_box(calibrate_lorentzian_pair(&truth, &grid, 0.01, 64, 1, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, detuning_sweep, monte_carlo);
criterion_main!(benches);
