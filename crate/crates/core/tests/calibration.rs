use cqed_core::inference::*;
use cqed_core::instrument::{gaussian_irf, Domain};
use cqed_core::parallel::Execution;

const SEED: u64 = 20_261_015;
const REPLICATES: usize = 200;

fn report(rows: &[(String, BiasSummary)]) -> String {
    rows.iter()
        .map(|(n, b)| format!("{n}: bias {:+.3e} sem {:.3e} ({:.2} sem)", b.bias, b.sem, b.bias / b.sem))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn lorentzian_pair_with_one_percent_noise() {
    let truth = LorentzianPairParams::new(LorentzianPeak::new(-57.0, 60.0, 1.0), LorentzianPeak::new(57.0, 65.0, 0.9));
    let grid: Vec<f64> = (0..1201).map(|i| -300.0 + 0.5 * i as f64).collect();
    let rows = calibrate_lorentzian_pair(&truth, &grid, 0.01, REPLICATES, SEED, Execution::default()).unwrap();
    let text = report(&rows);
    for (name, b) in &rows {
        if name.starts_with("center") {
            assert!(b.bias.abs() < 0.5, "{text}");
        }
        if name.starts_with("fwhm") {
            assert!((b.bias / b.truth).abs() < 0.02, "{text}");
        }
        // unbiased estimator: the mean lies within a few standard errors of the truth
        assert!(b.bias.abs() < 4.0 * b.sem, "{text}");
    }
}

#[test]
fn bi_exponential_decay_with_counting_noise() {
    let truth = DecayModelParams { mode: DecayMode::Bi, rates: vec![18.5, 0.39], amplitudes: vec![2000.0, 200.0], baseline: 5.0 };
    let step = 0.004;
    let grid: Vec<f64> = (0..3001).map(|i| -1.0 + step * i as f64).collect();
    let irf = gaussian_irf(0.05, step, Domain::Temporal).unwrap();
    let rows = calibrate_decay(&truth, &grid, &irf, DecayWeights::Counts, REPLICATES, SEED, Execution::default())
        .unwrap();
    let text = report(&rows);
    let fast = &rows[0].1;
    assert!((fast.bias / fast.truth).abs() < 0.02, "{text}");
    // data weights pull the baseline low by about one count per bin
    let baseline = &rows[4].1;
    assert!(baseline.bias < -0.5, "{text}");
    eprintln!("counts weights\n{text}");

    let rows = calibrate_decay(&truth, &grid, &irf, DecayWeights::Model, REPLICATES, SEED, Execution::default())
        .unwrap();
    let text = report(&rows);
    eprintln!("model weights\n{text}");
    for (_, b) in &rows {
        assert!(b.bias.abs() < 4.0 * b.sem, "{text}");
    }
}

#[test]
fn replicates_do_not_depend_on_execution() {
    let truth = LorentzianPairParams::new(LorentzianPeak::new(-57.0, 60.0, 1.0), LorentzianPeak::new(57.0, 65.0, 0.9));
    let grid: Vec<f64> = (0..601).map(|i| -300.0 + i as f64).collect();
    let a = calibrate_lorentzian_pair(&truth, &grid, 0.01, 16, 1, Execution::Sequential).unwrap();
    let b = calibrate_lorentzian_pair(&truth, &grid, 0.01, 16, 1, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
