use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MICROPILLAR: &str = "[system]\ng_uev = 22.6\nkappa_uev = 110\ngamma_uev = 1.3\ngamma_dp_uev = 6.3\n";
const PC: &str = "[system]\ng_uev = 92.4\nkappa_uev = 195\ngamma_uev = 0.2\ngamma_dp_uev = 4\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqed-lab"))
        .current_dir(dir)
        .env_remove("CQED_LAB_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn columns(path: &Path) -> (Vec<f64>, Vec<f64>) {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace().map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .unzip()
}

fn sweep_config(base: &str) -> String {
    format!("{base}[sweep]\nstart_uev = -200\nstop_uev = 200\nstep_uev = 50\ngrid_points = 2048\n")
}

#[test]
fn synthesis_is_byte_identical_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{MICROPILLAR}[sweep]\ndetunings_uev = [-40, 0, 40]\ngrid_points = 512\n[instrument]\ntemporal_irf_fwhm_ns = 0.05\n[synthesize]\npeak_counts = 1000\nbackground_counts = 2\ntime_window_ns = 3\n"
    );
    write_config(dir.path(), "exp.toml", &text);
    for (out, seed, jobs) in [("a", "7", "1"), ("b", "7", "3"), ("c", "8", "1")] {
        let o = run(dir.path(), &["--config", "exp.toml", "--out", out, "--seed", seed, "--jobs", jobs, "synthesize"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = tree(&dir.path().join("a"));
    assert_eq!(a.len(), 12);
    assert_eq!(a, tree(&dir.path().join("b")));
    assert_ne!(a, tree(&dir.path().join("c")));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let text = format!("{MICROPILLAR}[sweep]\ngrid_points = 256\n[synthesize]\npeak_counts = 100\ntime_window_ns = 2\n");
    write_config(dir.path(), "exp.toml", &text);
    let with_env = |out: &str, seed: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_cqed-lab"))
            .current_dir(dir.path())
            .env("CQED_LAB_SEED", seed)
            .args(["--config", "exp.toml", "--out", out, "synthesize"])
            .output()
            .unwrap();
        assert!(o.status.success());
    };
    with_env("env5", "5");
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "flag5", "--seed", "5", "synthesize"]).status.success());
    assert_eq!(tree(&dir.path().join("env5")), tree(&dir.path().join("flag5")));
}

#[test]
fn sweep_csv_header_is_pinned() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "exp.toml", &format!("{MICROPILLAR}[sweep]\ndetunings_uev = [30, -30, 0]\ngrid_points = 512\n"));
    let o = run(dir.path(), &["--config", "exp.toml", "--out", "out", "--quiet", "simulate-sweep"]);
    assert!(o.status.success());
    assert!(o.stderr.is_empty(), "quiet run logged: {}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema = cqed-lab/sweep/v1"));
    assert_eq!(lines.next(), Some("detuning_uev,mean_rate_per_ns,weak_coupling_rate_per_ns,peak_separation_uev"));
    let detunings: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(detunings, vec![-30.0, 0.0, 30.0]);
    assert!(dir.path().join("out/sweep.svg").is_file());
    assert!(dir.path().join("out/spectra/spectrum_002.txt").is_file());
}

#[test]
fn uncoupled_emitter_gives_a_flat_rate() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{}[sweep]\nstart_uev = -100\nstop_uev = 100\nstep_uev = 25\ngrid_points = 512\n[detection]\neta_qd_re = 1\n",
        MICROPILLAR.replace("g_uev = 22.6", "g_uev = 0")
    );
    write_config(dir.path(), "exp.toml", &text);
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "out", "simulate-sweep"]).status.success());
    let expected = 1.3 / 0.6582119569;
    let rows = csv_rows(&dir.path().join("out/sweep.csv"));
    assert_eq!(rows.len(), 9);
    for r in rows {
        let rate: f64 = r[1].parse().unwrap();
        assert!((rate / expected - 1.0).abs() < 1e-8, "{rate}");
    }
}

#[test]
fn config_errors_exit_with_two_and_name_the_line() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "bad.toml", &MICROPILLAR.replace("kappa_uev = 110", "kappa_uev = -1"));
    let o = run(dir.path(), &["--config", "bad.toml", "simulate-sweep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml:3:"));

    write_config(dir.path(), "missing.toml", &format!("{MICROPILLAR}[fit]\nspectra = [\"absent.txt\"]\n"));
    let o = run(dir.path(), &["--config", "missing.toml", "fit-spectra"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml:7:"));

    assert_eq!(run(dir.path(), &["simulate-sweep"]).status.code(), Some(2));
    write_config(dir.path(), "ok.toml", MICROPILLAR);
    assert_eq!(run(dir.path(), &["--config", "ok.toml", "fit-decay"]).status.code(), Some(2));
}

#[test]
fn corrupt_spectrum_is_skipped_and_fails_the_run() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "exp.toml", &sweep_config(MICROPILLAR));
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "sim", "simulate-sweep"]).status.success());
    fs::write(dir.path().join("sim/spectra/zz_corrupt.txt"), "# detuning_uev = 10\n0 1\n1 banana\n").unwrap();
    let mut args = vec!["--config", "exp.toml", "--out", "fit", "fit-spectra"];
    let files: Vec<String> = (0..9).map(|i| format!("sim/spectra/spectrum_{i:03}.txt")).collect();
    args.extend(files.iter().map(String::as_str));
    args.push("sim/spectra/zz_corrupt.txt");
    let o = run(dir.path(), &args);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zz_corrupt.txt"));
    assert_eq!(csv_rows(&dir.path().join("fit/sweep_records.csv")).len(), 9);
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit/verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["classification"]["label"], "crossing");
    assert_eq!(verdict["failures"][0]["file"], "zz_corrupt.txt");
}

#[test]
fn sweep_records_header_is_pinned() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "exp.toml", &sweep_config(PC));
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "sim", "simulate-sweep"]).status.success());
    let files: Vec<String> = (0..9).map(|i| format!("sim/spectra/spectrum_{i:03}.txt")).collect();
    let mut args = vec!["--config", "exp.toml", "--out", "fit", "fit-spectra"];
    args.extend(files.iter().map(String::as_str));
    assert!(run(dir.path(), &args).status.success());
    let text = fs::read_to_string(dir.path().join("fit/sweep_records.csv")).unwrap();
    let header: Vec<&str> = text.lines().take(2).collect();
    assert_eq!(
        header,
        [
            "# schema = cqed-lab/sweep_records/v1",
            "detuning_uev,source,center_1_uev,fwhm_1_uev,q_1,relative_area_1,center_2_uev,fwhm_2_uev,q_2,relative_area_2,cavity_peak,separation_uev,flags",
        ]
    );
}

#[test]
fn noiseless_synthesis_equals_the_forward_model() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "exp.toml", &format!("{PC}[sweep]\ndetunings_uev = [0, 60]\ngrid_points = 1024\n"));
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "sim", "simulate-sweep"]).status.success());
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "syn", "synthesize"]).status.success());
    for i in 0..2 {
        let name = format!("spectra/spectrum_{i:03}.txt");
        assert_eq!(columns(&dir.path().join("sim").join(&name)), columns(&dir.path().join("syn").join(&name)));
    }
}

#[test]
fn poisson_noise_at_ten_thousand_counts_is_one_percent() {
    let dir = TempDir::new().unwrap();
    let base = format!("{PC}[sweep]\ngrid_points = 4096\n");
    write_config(dir.path(), "clean.toml", &base);
    write_config(dir.path(), "noisy.toml", &format!("{base}[synthesize]\npeak_counts = 10000\n"));
    assert!(run(dir.path(), &["--config", "clean.toml", "--out", "clean", "synthesize"]).status.success());
    assert!(run(dir.path(), &["--config", "noisy.toml", "--out", "noisy", "--seed", "3", "synthesize"]).status.success());
    let (_, model) = columns(&dir.path().join("clean/spectra/spectrum_000.txt"));
    let (_, counts) = columns(&dir.path().join("noisy/spectra/spectrum_000.txt"));
    let top = model.iter().copied().fold(0.0, f64::max);
    let rel: Vec<f64> = model
        .iter()
        .zip(&counts)
        .filter(|(m, _)| **m > 0.8 * top)
        .map(|(m, c)| {
            let mean = m / top * 1e4;
            (c - mean) / mean
        })
        .collect();
    assert!(rel.len() > 30, "{}", rel.len());
    let rms = (rel.iter().map(|r| r * r).sum::<f64>() / rel.len() as f64).sqrt();
    assert!((rms / 0.01 - 1.0).abs() < 0.3, "relative noise {rms}");
}

#[test]
fn synthesized_decays_refit_to_the_truth() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{PC}[instrument]\ntemporal_irf_fwhm_ns = 0.05\n[synthesize]\ndecay_rates_per_ns = [18.5, 0.39]\ndecay_amplitudes = [2000, 200]\n[fit]\ndecay_mode = \"bi\"\ndecay_weights = \"model\"\n"
    );
    write_config(dir.path(), "exp.toml", &text);
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "syn", "--seed", "11", "synthesize"]).status.success());
    let o = run(dir.path(), &["--config", "exp.toml", "--out", "fit", "fit-decay", "syn/decays/decay_000.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("fit/decay_fits.csv")).unwrap();
    assert!(text.starts_with("# schema = cqed-lab/decay_fits/v1\ndetuning_uev,source,components,rate_1_per_ns,rate_1_err,"));
    let row = &csv_rows(&dir.path().join("fit/decay_fits.csv"))[0];
    let rate_1: f64 = row[3].parse().unwrap();
    let rate_2: f64 = row[7].parse().unwrap();
    assert!((rate_1 / 18.5 - 1.0).abs() < 0.03, "{rate_1}");
    assert!((rate_2 / 0.39 - 1.0).abs() < 0.03, "{rate_2}");
}

#[test]
fn decay_only_comparison_is_a_partial_report() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{PC}[instrument]\ntemporal_irf_fwhm_ns = 0.05\n[synthesize]\ndecay_rates_per_ns = [18.5, 0.39]\ndecay_amplitudes = [2000, 200]\n"
    );
    write_config(dir.path(), "exp.toml", &text);
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "syn", "synthesize"]).status.success());
    let o = run(dir.path(), &["--config", "exp.toml", "--out", "cmp", "compare-g", "--decay", "syn/decays/decay_000.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cmp/compare_g.json")).unwrap()).unwrap();
    assert_eq!(report["spectral"]["available"], false);
    assert_eq!(report["dynamical"]["verdict"], "weak");
    assert!(report["comparison"].is_null());
    assert!(fs::read_to_string(dir.path().join("cmp/compare_g.txt")).unwrap().contains("spectral: unavailable"));
}

#[test]
fn one_true_coupling_gives_a_unit_ratio() {
    // weak coupling keeps the decay close to a single exponential
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{}[instrument]\ntemporal_irf_fwhm_ns = 0.02\n[synthesize]\npeak_counts = 100000\ntime_step_ns = 0.002\ntime_window_ns = 8\n[fit]\ndecay_mode = \"single\"\ndecay_weights = \"model\"\ninversion = \"full\"\n",
        PC.replace("g_uev = 92.4", "g_uev = 10")
    );
    write_config(dir.path(), "exp.toml", &text);
    assert!(run(dir.path(), &["--config", "exp.toml", "--out", "syn", "synthesize"]).status.success());
    let o = run(
        dir.path(),
        &[
            "--config",
            "exp.toml",
            "--out",
            "cmp",
            "compare-g",
            "--spectrum",
            "syn/spectra/spectrum_000.txt",
            "--decay",
            "syn/decays/decay_000.txt",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cmp/compare_g.json")).unwrap()).unwrap();
    let ratio = report["comparison"]["ratio"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
}
