//! Experiment configuration: a TOML file with units embedded in the key names
//! (`_uev`, `_ns`, `_nm`, `_per_ns`). Errors point at the offending line.

use std::fmt;
use std::path::{Path, PathBuf};

use cqed_core::inference::{DecayMode, DecayWeights};
use cqed_core::model::{DecayWeighting, InversionMode, SystemParams};
use cqed_core::spectra::{background_fraction, DetectionCoefficients};
use num_complex::Complex64;
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    detection: RawDetection,
    #[serde(default)]
    instrument: RawInstrument,
    #[serde(default)]
    fit: RawFit,
    #[serde(default)]
    synthesize: RawSynthesize,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    g_uev: f64,
    kappa_uev: f64,
    gamma_uev: f64,
    gamma_dp_uev: f64,
    #[serde(default)]
    delta_uev: f64,
    #[serde(default = "default_wavelength")]
    wavelength_nm: f64,
}

fn default_wavelength() -> f64 {
    952.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    detunings_uev: Option<Vec<f64>>,
    start_uev: Option<f64>,
    stop_uev: Option<f64>,
    step_uev: Option<f64>,
    grid_points: Option<usize>,
    weighting: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    eta_ca_re: Option<f64>,
    eta_ca_im: Option<f64>,
    eta_qd_re: Option<f64>,
    eta_qd_im: Option<f64>,
    background_fraction: Option<f64>,
    g2_zero: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstrument {
    spectral_irf_fwhm_uev: Option<f64>,
    spectral_irf_file: Option<String>,
    temporal_irf_fwhm_ns: Option<f64>,
    temporal_irf_file: Option<String>,
    #[serde(default)]
    deconvolve: bool,
    band_limit_per_uev: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    spectra: Option<Vec<String>>,
    decays: Option<Vec<String>>,
    jc_spectrum: Option<String>,
    decay_mode: Option<String>,
    decay_weights: Option<String>,
    init_g_uev: Option<f64>,
    inversion: Option<String>,
    #[serde(default)]
    irf_aware: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthesize {
    peak_counts: Option<f64>,
    background_counts: Option<f64>,
    decay_rates_per_ns: Option<Vec<f64>>,
    decay_amplitudes: Option<Vec<f64>>,
    time_step_ns: Option<f64>,
    time_window_ns: Option<f64>,
    pre_trigger_ns: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    seed: Option<u64>,
    #[serde(default = "default_true")]
    svg: bool,
}

fn default_true() -> bool {
    true
}

impl Default for RawOutput {
    fn default() -> Self {
        Self { dir: None, seed: None, svg: true }
    }
}

/// Instrument response: measured file or a Gaussian of the given FWHM.
#[derive(Clone, Debug, PartialEq)]
pub enum IrfSpec {
    Gaussian { fwhm: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub source: PathBuf,
    pub system: SystemParams,
    pub wavelength_nm: f64,
    pub detunings: Vec<f64>,
    pub grid_points: usize,
    pub weighting: DecayWeighting,
    pub detection: DetectionCoefficients,
    pub spectral_irf: Option<IrfSpec>,
    pub temporal_irf: Option<IrfSpec>,
    pub deconvolve: bool,
    pub band_limit: Option<f64>,
    pub spectra: Vec<PathBuf>,
    pub decays: Vec<PathBuf>,
    pub jc_spectrum: Option<PathBuf>,
    pub decay_mode: DecayMode,
    pub decay_weights: DecayWeights,
    pub init_g: Option<f64>,
    pub inversion: InversionMode,
    pub irf_aware: bool,
    pub synth: SynthSpec,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub svg: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Mean counts at the brightest sample; `None` writes the noiseless model.
    pub peak_counts: Option<f64>,
    pub background_counts: f64,
    pub decay_rates: Option<Vec<f64>>,
    pub decay_amplitudes: Option<Vec<f64>>,
    pub time_step: f64,
    pub time_window: f64,
    pub pre_trigger: f64,
}

/// Line of `key` inside `[section]`, for error messages.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Checker<'a> {
    text: &'a str,
    path: &'a Path,
}

impl Checker<'_> {
    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_path_buf(),
            line: locate(self.text, section, key).or_else(|| locate(self.text, section, "")),
            message: format!("[{section}] {key}: {}", message.into()),
        }
    }

    fn finite(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(section, key, format!("{v} is not finite")))
        }
    }

    fn positive(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(self.err(section, key, format!("{v} must be positive")))
        }
    }

    fn non_negative(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(self.err(section, key, format!("{v} must be non-negative")))
        }
    }

    fn file(&self, base: &Path, section: &str, key: &str, rel: &str) -> Result<PathBuf, ConfigError> {
        let p = base.join(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(self.err(section, key, format!("file '{}' does not exist", p.display())))
        }
    }

    fn parse_enum<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        value: Option<&str>,
        choices: &str,
    ) -> Result<Option<T>, ConfigError> {
        match value {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| self.err(section, key, format!("'{s}' is not one of {choices}"))),
        }
    }
}

fn parse_weighting(s: &str) -> Result<DecayWeighting, ()> {
    match s {
        "emission" => Ok(DecayWeighting::Emission),
        "emitter" => Ok(DecayWeighting::Emitter),
        "cavity" => Ok(DecayWeighting::Cavity),
        _ => Err(()),
    }
}

fn parse_inversion(s: &str) -> Result<InversionMode, ()> {
    match s {
        "adiabatic" => Ok(InversionMode::Adiabatic),
        "full" => Ok(InversionMode::Full),
        _ => Err(()),
    }
}

fn parse_weights(s: &str) -> Result<DecayWeights, ()> {
    match s {
        "counts" => Ok(DecayWeights::Counts),
        "model" => Ok(DecayWeights::Model),
        _ => Err(()),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, path)
    }

    /// Parse config text; relative file paths resolve against the directory of `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        let c = Checker { text, path };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

        let s = &raw.system;
        let system = SystemParams {
            g: c.non_negative("system", "g_uev", s.g_uev)?,
            kappa: c.positive("system", "kappa_uev", s.kappa_uev)?,
            gamma: c.non_negative("system", "gamma_uev", s.gamma_uev)?,
            gamma_dp: c.non_negative("system", "gamma_dp_uev", s.gamma_dp_uev)?,
            delta: c.finite("system", "delta_uev", s.delta_uev)?,
            omega_qd: None,
        };
        let wavelength_nm = c.positive("system", "wavelength_nm", s.wavelength_nm)?;

        let w = &raw.sweep;
        let detunings = match (&w.detunings_uev, w.start_uev, w.stop_uev, w.step_uev) {
            (Some(list), None, None, None) => {
                for &d in list {
                    c.finite("sweep", "detunings_uev", d)?;
                }
                list.clone()
            }
            (None, Some(a), Some(b), Some(h)) => {
                c.finite("sweep", "start_uev", a)?;
                c.finite("sweep", "stop_uev", b)?;
                c.positive("sweep", "step_uev", h)?;
                if b < a {
                    return Err(c.err("sweep", "stop_uev", "must not be below start_uev"));
                }
                let n = ((b - a) / h + 1e-9).floor() as usize;
                (0..=n).map(|i| a + i as f64 * h).collect()
            }
            (None, None, None, None) => vec![system.delta],
            _ => {
                return Err(c.err(
                    "sweep",
                    "",
                    "give either detunings_uev or all of start_uev, stop_uev and step_uev",
                ))
            }
        };
        let grid_points = w.grid_points.unwrap_or(cqed_core::spectra::DEFAULT_GRID_POINTS);
        if grid_points < 16 {
            return Err(c.err("sweep", "grid_points", "needs at least 16 points"));
        }
        let weighting = w
            .weighting
            .as_deref()
            .map(|s| {
                parse_weighting(s)
                    .map_err(|_| c.err("sweep", "weighting", format!("'{s}' is not one of emission, emitter, cavity")))
            })
            .transpose()?
            .unwrap_or_default();

        let d = &raw.detection;
        let eta = |re: Option<f64>, im: Option<f64>, default_re: f64, key: &str| -> Result<Complex64, ConfigError> {
            let z = Complex64::new(re.unwrap_or(default_re), im.unwrap_or(0.0));
            c.finite("detection", key, z.re)?;
            c.finite("detection", key, z.im)?;
            Ok(z)
        };
        let bf = match (d.background_fraction, d.g2_zero) {
            (Some(_), Some(_)) => {
                return Err(c.err("detection", "g2_zero", "give background_fraction or g2_zero, not both"));
            }
            (Some(f), None) => c.non_negative("detection", "background_fraction", f)?,
            (None, Some(g2)) => background_fraction(g2).map_err(|e| c.err("detection", "g2_zero", e.to_string()))?,
            (None, None) => 0.0,
        };
        let detection = DetectionCoefficients {
            eta_ca: eta(d.eta_ca_re, d.eta_ca_im, 1.0, "eta_ca_re")?,
            eta_qd: eta(d.eta_qd_re, d.eta_qd_im, 0.0, "eta_qd_re")?,
            background_fraction: bf,
        };
        detection.validate().map_err(|e| c.err("detection", "", e.to_string()))?;

        let ins = &raw.instrument;
        let irf = |fwhm: Option<f64>, file: &Option<String>, fkey: &str, pkey: &str| -> Result<Option<IrfSpec>, ConfigError> {
            match (fwhm, file) {
                (Some(_), Some(_)) => Err(c.err("instrument", pkey, format!("give {fkey} or {pkey}, not both"))),
                (Some(w), None) => Ok(Some(IrfSpec::Gaussian { fwhm: c.positive("instrument", fkey, w)? })),
                (None, Some(f)) => Ok(Some(IrfSpec::File(c.file(&base, "instrument", pkey, f)?))),
                (None, None) => Ok(None),
            }
        };
        let spectral_irf = irf(ins.spectral_irf_fwhm_uev, &ins.spectral_irf_file, "spectral_irf_fwhm_uev", "spectral_irf_file")?;
        let temporal_irf = irf(ins.temporal_irf_fwhm_ns, &ins.temporal_irf_file, "temporal_irf_fwhm_ns", "temporal_irf_file")?;
        let band_limit = ins.band_limit_per_uev.map(|b| c.positive("instrument", "band_limit_per_uev", b)).transpose()?;
        if ins.deconvolve && spectral_irf.is_none() {
            return Err(c.err("instrument", "deconvolve", "needs a spectral IRF"));
        }

        let f = &raw.fit;
        let files = |list: &Option<Vec<String>>, key: &str| -> Result<Vec<PathBuf>, ConfigError> {
            list.iter().flatten().map(|p| c.file(&base, "fit", key, p)).collect()
        };
        let spectra = files(&f.spectra, "spectra")?;
        let decays = files(&f.decays, "decays")?;
        let jc_spectrum = f.jc_spectrum.as_deref().map(|p| c.file(&base, "fit", "jc_spectrum", p)).transpose()?;
        let decay_mode = c.parse_enum("fit", "decay_mode", f.decay_mode.as_deref(), "single, bi, multi")?.unwrap_or(DecayMode::Multi);
        let decay_weights = f
            .decay_weights
            .as_deref()
            .map(|s| parse_weights(s).map_err(|_| c.err("fit", "decay_weights", format!("'{s}' is not one of counts, model"))))
            .transpose()?
            .unwrap_or_default();
        let inversion = f
            .inversion
            .as_deref()
            .map(|s| parse_inversion(s).map_err(|_| c.err("fit", "inversion", format!("'{s}' is not one of adiabatic, full"))))
            .transpose()?
            .unwrap_or_default();
        let init_g = f.init_g_uev.map(|g| c.positive("fit", "init_g_uev", g)).transpose()?;
        if f.irf_aware && spectral_irf.is_none() {
            return Err(c.err("fit", "irf_aware", "needs a spectral IRF"));
        }
        if f.irf_aware && ins.deconvolve {
            return Err(c.err("fit", "irf_aware", "cannot be combined with [instrument] deconvolve"));
        }

        let y = &raw.synthesize;
        let synth = SynthSpec {
            peak_counts: y.peak_counts.map(|v| c.positive("synthesize", "peak_counts", v)).transpose()?,
            background_counts: c.non_negative("synthesize", "background_counts", y.background_counts.unwrap_or(0.0))?,
            decay_rates: y
                .decay_rates_per_ns
                .clone()
                .map(|v| {
                    v.iter().map(|&r| c.positive("synthesize", "decay_rates_per_ns", r)).collect::<Result<Vec<_>, _>>()
                })
                .transpose()?,
            decay_amplitudes: y
                .decay_amplitudes
                .clone()
                .map(|v| {
                    v.iter().map(|&a| c.non_negative("synthesize", "decay_amplitudes", a)).collect::<Result<Vec<_>, _>>()
                })
                .transpose()?,
            time_step: c.positive("synthesize", "time_step_ns", y.time_step_ns.unwrap_or(0.004))?,
            time_window: c.positive("synthesize", "time_window_ns", y.time_window_ns.unwrap_or(12.0))?,
            pre_trigger: c.non_negative("synthesize", "pre_trigger_ns", y.pre_trigger_ns.unwrap_or(1.0))?,
        };
        match (&synth.decay_rates, &synth.decay_amplitudes) {
            (Some(r), Some(a)) if r.len() != a.len() => {
                return Err(c.err("synthesize", "decay_amplitudes", "needs one amplitude per rate"));
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(c.err("synthesize", "decay_rates_per_ns", "rates and amplitudes go together"));
            }
            _ => {}
        }

        Ok(Self {
            source: path.to_path_buf(),
            system,
            wavelength_nm,
            detunings,
            grid_points,
            weighting,
            detection,
            spectral_irf,
            temporal_irf,
            deconvolve: ins.deconvolve,
            band_limit,
            spectra,
            decays,
            jc_spectrum,
            decay_mode,
            decay_weights,
            init_g,
            inversion,
            irf_aware: f.irf_aware,
            synth,
            output_dir: raw.output.dir.map(|d| base.join(d)),
            seed: raw.output.seed,
            svg: raw.output.svg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[system]\ng_uev = 22.6\nkappa_uev = 110\ngamma_uev = 1.3\ngamma_dp_uev = 6.3\n";

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text, Path::new("exp.toml"))
    }

    #[test]
    fn minimal_config() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.system, SystemParams::micropillar());
        assert_eq!(c.detunings, vec![0.0]);
        assert_eq!(c.wavelength_nm, 952.0);
        assert!(c.svg);
    }

    #[test]
    fn sweep_range() {
        let c = parse(&format!("{BASE}[sweep]\nstart_uev = -20\nstop_uev = 20\nstep_uev = 10\n")).unwrap();
        assert_eq!(c.detunings, vec![-20.0, -10.0, 0.0, 10.0, 20.0]);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse("[system]\ng_uev = 22.6\nkappa_uev = -110\ngamma_uev = 1.3\ngamma_dp_uev = 6.3\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("exp.toml:3:"), "{e}");

        let e = parse(&format!("{BASE}[sweep]\nstart_uev = 0\nstop_uev = 10\nstep_uev = 1\ndetunings_uev = [1.0]\n"))
            .unwrap_err();
        assert_eq!(e.line, Some(6));

        let e = parse(&format!("{BASE}[output]\nseeed = 3\n")).unwrap_err();
        assert_eq!(e.line, Some(7), "{e}");
    }

    #[test]
    fn missing_files_are_reported() {
        let e = parse(&format!("{BASE}[fit]\nspectra = [\"nope.txt\"]\n")).unwrap_err();
        assert_eq!(e.line, Some(7));
        assert!(e.message.contains("does not exist"));
    }

    #[test]
    fn background_from_autocorrelation() {
        let c = parse(&format!("{BASE}[detection]\ng2_zero = 0.345\n")).unwrap();
        assert!((c.detection.background_fraction - 0.2085).abs() < 5e-5);
    }
}
