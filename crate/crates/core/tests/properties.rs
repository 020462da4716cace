use cqed_core::inference::{classify_coupling, SweepRecord};
use cqed_core::instrument::{convolve, deconvolve, gaussian_irf, Domain, SampledSignal};
use cqed_core::model::*;
use cqed_core::units::{energy_to_rate, rate_to_energy};
use proptest::prelude::*;

fn dissipative() -> impl Strategy<Value = SystemParams> {
    (0.0..150.0, 20.0..300.0, 0.1..20.0, 0.0..10.0, -200.0..200.0).prop_map(|(g, kappa, gamma, gamma_dp, delta)| {
        SystemParams { g, kappa, gamma, gamma_dp, delta, omega_qd: None }
    })
}

proptest! {
    #[test]
    fn unit_round_trip(x in -1e6..1e6f64) {
        let back = rate_to_energy(energy_to_rate(x));
        prop_assert!((back - x).abs() <= 4.0 * f64::EPSILON * x.abs());
    }

    #[test]
    fn weak_coupling_rate_decreases_with_detuning(p in dissipative(), a in 0.0..300.0f64, b in 0.0..300.0f64) {
        prop_assume!(p.g > 0.1 && (a - b).abs() > 1e-3);
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        let r_near = weak_coupling_rate(&p.with_delta(near));
        let r_far = weak_coupling_rate(&p.with_delta(-far));
        prop_assert!(r_near > r_far);
    }

    #[test]
    fn weak_coupling_rate_increases_with_coupling(p in dissipative(), a in 0.1..150.0f64, b in 0.1..150.0f64) {
        prop_assume!((a - b).abs() > 1e-3);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(weak_coupling_rate(&p.with_g(hi)) > weak_coupling_rate(&p.with_g(lo)));
    }

    #[test]
    fn dephasing_only_broadens(g in 0.5..5.0f64, kappa in 100.0..300.0f64, gamma in 0.5..5.0f64, d1 in 0.0..50.0f64, d2 in 0.0..50.0f64) {
        prop_assume!((d1 - d2).abs() > 1e-3);
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let p = SystemParams { g, kappa, gamma, gamma_dp: lo, delta: 0.0, omega_qd: None };
        let r_lo = weak_coupling_rate(&p);
        let r_hi = weak_coupling_rate(&SystemParams { gamma_dp: hi, ..p });
        prop_assert!(r_hi < r_lo);
        prop_assert!(r_hi > energy_to_rate(gamma));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_balance(p in dissipative()) {
        let traj = simulate(&p).unwrap();
        prop_assert!((traj.energy_balance() - 1.0).abs() <= 1e-6, "{}", traj.energy_balance());
    }

    #[test]
    fn deep_weak_coupling_matches_rate_equation(p in dissipative()) {
        let p = p.with_g(p.gamma_tot() / 25.0);
        let full = mean_decay_rate_of(&p, DecayWeighting::default()).unwrap();
        let rate = weak_coupling_rate(&p);
        prop_assert!((full / rate - 1.0).abs() < 0.05, "{full} vs {rate}");
    }

    #[test]
    fn convolution_keeps_area(c in -50.0..50.0f64, w in 20.0..80.0f64, fwhm in 2.0..40.0f64) {
        let grid: Vec<f64> = (0..2001).map(|i| -500.0 + 0.5 * i as f64).collect();
        let s = w / 2.354_820_045;
        let values = grid.iter().map(|x| (-0.5 * ((x - c) / s).powi(2)).exp()).collect();
        let sig = SampledSignal::new(grid, values, Domain::Spectral).unwrap();
        let irf = gaussian_irf(fwhm, 0.5, Domain::Spectral).unwrap();
        let out = convolve(&sig, &irf).unwrap();
        prop_assert!((out.area() / sig.area() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deconvolution_undoes_convolution(c in -50.0..50.0f64, w in 60.0..120.0f64) {
        let grid: Vec<f64> = (0..2001).map(|i| -500.0 + 0.5 * i as f64).collect();
        let s = w / 2.354_820_045;
        let values = grid.iter().map(|x| (-0.5 * ((x - c) / s).powi(2)).exp()).collect();
        let sig = SampledSignal::new(grid, values, Domain::Spectral).unwrap();
        let irf = gaussian_irf(29.9, 0.5, Domain::Spectral).unwrap();
        let back = deconvolve(&convolve(&sig, &irf).unwrap(), &irf, None).unwrap();
        let worst = back.values.iter().zip(&sig.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 0.01 * sig.peak());
    }

    #[test]
    fn classification_ignores_offset_and_scale(offset in -1e4..1e4f64, g in 0.0..120.0f64, kappa in 50.0..200.0f64) {
        let records: Vec<SweepRecord> = (-5..=5)
            .map(|i| {
                let d = 40.0 * i as f64;
                let half = ((0.5 * d).powi(2) + g * g).sqrt();
                SweepRecord {
                    detuning: d,
                    centers: [-0.5 * d - half, -0.5 * d + half],
                    fwhms: [kappa, 10.0],
                    q_factors: [1.0, 1.0],
                    relative_areas: [0.3, 0.7],
                    cavity_index: 0,
                    source: String::new(),
                }
            })
            .collect();
        let base = classify_coupling(&records).unwrap();
        let shifted: Vec<SweepRecord> = records
            .iter()
            .map(|r| SweepRecord { centers: [r.centers[0] + offset, r.centers[1] + offset], ..r.clone() })
            .collect();
        // intensity rescaling leaves centers, widths and relative areas unchanged
        let c = classify_coupling(&shifted).unwrap();
        prop_assert_eq!(c.label, base.label);
        prop_assert!((c.min_separation - base.min_separation).abs() < 1e-9 * (1.0 + offset.abs()));
    }
}
