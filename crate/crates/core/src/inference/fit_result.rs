use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lm::LmReport;

/// Outcome of a converged fit. Failed fits are reported as errors instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// One-sigma errors from the local curvature, scaled by the residual variance.
    pub std_errors: Vec<f64>,
    /// Sum of squared (weighted) residuals.
    pub residual_sum: f64,
    pub degrees_of_freedom: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Non-fatal conditions noticed during the fit.
    pub flags: Vec<String>,
}

impl FitResult {
    pub(crate) fn from_report(model: &str, names: &[&str], report: &LmReport, n_residuals: usize) -> Self {
        Self {
            model: model.to_string(),
            names: names.iter().map(|s| s.to_string()).collect(),
            estimates: report.params.clone(),
            std_errors: report.std_errors.clone(),
            residual_sum: report.cost,
            degrees_of_freedom: n_residuals.saturating_sub(names.len()),
            iterations: report.iterations,
            converged: true,
            flags: Vec::new(),
        }
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.estimates[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.std_errors[i])
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// `key = value` lines; estimates and their errors as `name` and `name_err`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model = {}", self.model);
        for ((n, v), e) in self.names.iter().zip(&self.estimates).zip(&self.std_errors) {
            let _ = writeln!(out, "{n} = {v:.12e}");
            let _ = writeln!(out, "{n}_err = {e:.6e}");
        }
        let _ = writeln!(out, "residual_sum = {:.12e}", self.residual_sum);
        let _ = writeln!(out, "degrees_of_freedom = {}", self.degrees_of_freedom);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "converged = {}", self.converged);
        let _ = writeln!(out, "flags = {}", self.flags.join(","));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit results serialize")
    }
}
