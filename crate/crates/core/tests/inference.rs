use cqed_core::inference::*;
use cqed_core::instrument::{convolve, gaussian_irf, Domain, SampledSignal};
use cqed_core::model::SystemParams;
use cqed_core::numeric::brent;
use cqed_core::parallel::Execution;
use cqed_core::spectra::{correlation_kernel, emission_spectrum_with, rabi_splitting, DetectionCoefficients};
use cqed_core::sweep::{simulate_sweep, SweepSpec};
use cqed_core::Error;

fn time_grid(step: f64, t0: f64, t1: f64) -> Vec<f64> {
    let n = ((t1 - t0) / step).round() as usize + 1;
    (0..n).map(|i| t0 + i as f64 * step).collect()
}

fn decay_curve(params: &DecayModelParams, step: f64, t1: f64) -> (SampledSignal, cqed_core::instrument::IrfKernel) {
    let t = time_grid(step, -1.0, t1);
    let irf = gaussian_irf(0.05, step, Domain::Temporal).unwrap();
    let y = decay_model(params, &t, Some(&irf));
    (SampledSignal::new(t, y, Domain::Temporal).unwrap(), irf)
}

#[test]
fn single_exponential_through_detector_response() {
    let truth = DecayModelParams { mode: DecayMode::Single, rates: vec![0.39], amplitudes: vec![1000.0], baseline: 2.0 };
    let (curve, irf) = decay_curve(&truth, 0.01, 20.0);
    let fit = fit_decay(&curve, &irf, DecayMode::Single).unwrap();
    let rate = fit.get("rate_1").unwrap();
    assert!((rate / 0.39 - 1.0).abs() < 5e-3, "{rate}");
    assert!(fit.flags.is_empty());
}

#[test]
fn bi_exponential_fast_rate() {
    let truth =
        DecayModelParams { mode: DecayMode::Bi, rates: vec![18.5, 0.39], amplitudes: vec![10_000.0, 1000.0], baseline: 1.0 };
    let (curve, irf) = decay_curve(&truth, 0.002, 12.0);
    let fit = fit_decay(&curve, &irf, DecayMode::Bi).unwrap();
    let fast = fit.get("rate_1").unwrap();
    assert!((fast / 18.5 - 1.0).abs() < 0.02, "{fast}");
    assert!((fit.get("rate_2").unwrap() / 0.39 - 1.0).abs() < 0.02);
    let back = DecayModelParams::from_fit(&fit).unwrap();
    assert!(back.rates[0] > back.rates[1]);

    let multi = fit_decay(&curve, &irf, DecayMode::Multi).unwrap();
    assert_eq!(multi.model, "exp_decay_2");
}

#[test]
fn single_exponential_data_collapses_bi_fit() {
    let truth = DecayModelParams { mode: DecayMode::Single, rates: vec![2.0], amplitudes: vec![5000.0], baseline: 0.0 };
    let (curve, irf) = decay_curve(&truth, 0.005, 8.0);
    let fit = fit_decay(&curve, &irf, DecayMode::Bi).unwrap();
    assert_eq!(fit.model, "exp_decay_1", "{}", fit.to_key_value());
    assert!(!fit.flags.is_empty());
    assert!((fit.get("rate_1").unwrap() / 2.0 - 1.0).abs() < 1e-6);
}

#[test]
fn flat_decay_curve_is_rejected() {
    let t = time_grid(0.01, -1.0, 5.0);
    let irf = gaussian_irf(0.05, 0.01, Domain::Temporal).unwrap();
    let curve = SampledSignal::new(t.clone(), vec![20.0; t.len()], Domain::Temporal).unwrap();
    assert!(matches!(fit_decay(&curve, &irf, DecayMode::Multi), Err(Error::NoDecay(_))));
}

fn pc_spectrum(g: f64) -> SampledSignal {
    let p = SystemParams::photonic_crystal().with_g(g);
    let grid: Vec<f64> = (0..2401).map(|i| -1200.0 + i as f64).collect();
    let kernel = correlation_kernel(&p).unwrap();
    let s = emission_spectrum_with(&kernel, &p, &DetectionCoefficients::default(), &grid).unwrap();
    SampledSignal::from_spectrum(&s)
}

#[test]
fn jc_fit_recovers_coupling() {
    let p = SystemParams::photonic_crystal();
    let spec = pc_spectrum(p.g);
    let fit = fit_jc_cavity_spectrum(&spec, &JcFixedParams::from_params(&p), 60.0, None).unwrap();
    let g = fit.get("g").unwrap();
    assert!((g / 92.4 - 1.0).abs() < 0.01, "{g}");
    assert!(fit.get("offset").unwrap().abs() < 0.01);
}

#[test]
fn jc_fit_through_spectrometer_response() {
    let p = SystemParams::photonic_crystal();
    let spec = pc_spectrum(p.g);
    let irf = gaussian_irf(29.9, spec.step(), Domain::Spectral).unwrap();
    let blurred = convolve(&spec, &irf).unwrap();
    let fit = fit_jc_cavity_spectrum(&blurred, &JcFixedParams::from_params(&p), 70.0, Some(&irf)).unwrap();
    assert!((fit.get("g").unwrap() / 92.4 - 1.0).abs() < 0.01);
}

#[test]
fn jc_fit_on_spectrum_with_measured_splitting() {
    // choose g so the resolvent splitting equals the observed 114 ueV, then fit the spectrum
    let split_at = |g: f64| -> cqed_core::Result<f64> {
        let p = SystemParams::photonic_crystal().with_g(g);
        let grid: Vec<f64> = (0..8001).map(|i| -2000.0 + 0.5 * i as f64).collect();
        let s = emission_spectrum_with(&correlation_kernel(&p)?, &p, &DetectionCoefficients::default(), &grid)?;
        Ok(rabi_splitting(&s)? - 114.0)
    };
    let (a, b) = (80.0, 100.0);
    let g = brent(split_at, a, b, split_at(a).unwrap(), split_at(b).unwrap(), 1e-9, 1e-9).unwrap();
    let spec = pc_spectrum(g);
    let fit =
        fit_jc_cavity_spectrum(&spec, &JcFixedParams::from_params(&SystemParams::photonic_crystal()), 60.0, None)
            .unwrap();
    let g_fit = fit.get("g").unwrap();
    assert!((g_fit / 92.4 - 1.0).abs() < 0.10, "{g_fit}");
}

#[test]
fn jc_fit_in_weak_coupling() {
    // small couplings stay small and consistent with the truth
    let p = SystemParams::photonic_crystal();
    let spec = pc_spectrum(5.0);
    let fit = fit_jc_cavity_spectrum(&spec, &JcFixedParams::from_params(&p), 20.0, None).unwrap();
    let g = fit.get("g").unwrap();
    assert!((g - 5.0).abs() < 2.0 * fit.std_error("g").unwrap().max(1e-6 * 5.0), "{g}");
}

fn gaussian_blurred_pair(irf_fwhm: f64) -> (SampledSignal, cqed_core::instrument::IrfKernel) {
    let truth = LorentzianPairParams::new(LorentzianPeak::new(-57.0, 60.0, 1.0), LorentzianPeak::new(57.0, 65.0, 0.9));
    let grid: Vec<f64> = (0..2401).map(|i| -600.0 + 0.5 * i as f64).collect();
    let values = grid.iter().map(|&x| truth.value(x)).collect();
    let s = SampledSignal::new(grid, values, Domain::Spectral).unwrap();
    let irf = gaussian_irf(irf_fwhm, 0.5, Domain::Spectral).unwrap();
    (convolve(&s, &irf).unwrap(), irf)
}

#[test]
fn irf_aware_fit_removes_width_bias() {
    let (blurred, irf) = gaussian_blurred_pair(29.9);
    let seed = seed_lorentzian_pair(&blurred, None).unwrap();
    let naive = fit_lorentzian_pair(&blurred, &seed, None).unwrap();
    assert!(naive.get("fwhm_1").unwrap() > 65.0);
    let seed = seed_lorentzian_pair(&blurred, Some(&irf)).unwrap();
    let aware = fit_lorentzian_pair(&blurred, &seed, Some(&irf)).unwrap();
    assert!((aware.get("fwhm_1").unwrap() / 60.0 - 1.0).abs() < 1e-3, "{}", aware.get("fwhm_1").unwrap());
    assert!((aware.get("fwhm_2").unwrap() / 65.0 - 1.0).abs() < 1e-3);
}

fn eigen_branch_records(g: f64, kappa: f64, gamma_tot: f64) -> Vec<SweepRecord> {
    (-6..=6)
        .map(|i| {
            let d = 30.0 * i as f64;
            // eigen-energies of the coupled-mode matrix, cavity at -d relative to the emitter
            let half = ((0.5 * d).powi(2) + g * g).sqrt();
            let mid = -0.5 * d;
            SweepRecord {
                detuning: d,
                centers: [mid - half, mid + half],
                fwhms: [kappa, gamma_tot],
                q_factors: [1.0, 1.0],
                relative_areas: [0.5, 0.5],
                cavity_index: 0,
                source: format!("d{d}"),
            }
        })
        .collect()
}

#[test]
fn constructed_strong_coupling_branches_anti_cross() {
    let recs = eigen_branch_records(60.0, 100.0, 10.0);
    let c = classify_coupling(&recs).unwrap();
    assert_eq!(c.label, CouplingLabel::AntiCrossing);
    assert!((c.min_separation - 120.0).abs() < 1e-9);
}

fn fitted_sweep(base: SystemParams, detunings: Vec<f64>) -> Vec<SweepRecord> {
    let mut spec = SweepSpec::new(base, detunings);
    spec.grid_points = 2048;
    simulate_sweep(&spec, Execution::default())
        .into_iter()
        .filter_map(|p| {
            let p = p.unwrap();
            let seed = seed_lorentzian_pair(&p.spectrum, None).ok()?;
            let fit = fit_lorentzian_pair(&p.spectrum, &seed, None).ok()?;
            extract_sweep_record(&fit, 952.0, p.detuning, "synthetic").ok()
        })
        .collect()
}

#[test]
fn photonic_crystal_sweep_anti_crosses() {
    let recs = fitted_sweep(SystemParams::photonic_crystal(), (-4..=4).map(|i| 50.0 * i as f64).collect());
    assert!(recs.len() >= 7, "{} records", recs.len());
    let c = classify_coupling(&recs).unwrap();
    assert_eq!(c.label, CouplingLabel::AntiCrossing);
    assert!((c.min_separation / 114.0 - 1.0).abs() < 0.10, "min separation {}", c.min_separation);
}

#[test]
fn micropillar_sweep_crosses() {
    let recs = fitted_sweep(SystemParams::micropillar(), (-4..=4).map(|i| 50.0 * i as f64).collect());
    assert!(recs.len() >= 5, "{} records", recs.len());
    let c = classify_coupling(&recs).unwrap();
    assert_eq!(c.label, CouplingLabel::Crossing, "{c:?}");
}
