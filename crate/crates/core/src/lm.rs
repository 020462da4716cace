//! Levenberg-Marquardt least squares with Marquardt scaling and Nielsen's damping
//! update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A weighted least-squares problem. Residuals are already multiplied by the
/// square roots of the weights.
pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]) -> Result<()>;

    /// Jacobian `d r_i / d p_j`. Defaults to central differences.
    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        finite_difference_jacobian(self, params, FD_STEP, jac)
    }
}

/// Relative step of the finite-difference Jacobian.
pub const FD_STEP: f64 = 1e-6;

/// Central-difference Jacobian with step `rel * max(|p_j|, 1)`.
pub fn finite_difference_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    params: &[f64],
    rel: f64,
    jac: &mut DMatrix<f64>,
) -> Result<()> {
    let m = problem.n_residuals();
    let mut p = params.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..params.len() {
        let h = rel * params[j].abs().max(1.0);
        p[j] = params[j] + h;
        problem.residuals(&p, &mut plus)?;
        p[j] = params[j] - h;
        problem.residuals(&p, &mut minus)?;
        p[j] = params[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(())
}

/// Largest column-wise relative deviation between the problem's Jacobian and a
/// central-difference estimate.
pub fn jacobian_deviation<P: LeastSquaresProblem + ?Sized>(problem: &P, params: &[f64]) -> Result<f64> {
    let (m, n) = (problem.n_residuals(), problem.n_params());
    let mut analytic = DMatrix::zeros(m, n);
    let mut numeric = DMatrix::zeros(m, n);
    problem.jacobian(params, &mut analytic)?;
    finite_difference_jacobian(problem, params, FD_STEP, &mut numeric)?;
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let scale = numeric.column(j).amax().max(f64::MIN_POSITIVE);
        let diff = (analytic.column(j) - numeric.column(j)).amax();
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative parameter change below which the fit has converged.
    pub x_tol: f64,
    /// Scaled gradient norm below which the fit has converged.
    pub g_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iterations: 500, x_tol: 1e-8, g_tol: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    SmallStep,
    SmallGradient,
    ZeroResidual,
    /// Damping grew without finding a lower cost; the current point is a minimum to
    /// working precision.
    NoFurtherReduction,
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `s^2 (J^T J)^-1` with `s^2` the residual variance per degree of freedom.
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    /// Sum of squared weighted residuals.
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Smallest eigenvalue of the correlation-normalized `J^T J` below which the
/// curvature matrix counts as singular.
pub const SINGULAR_EIGENVALUE: f64 = 1e-12;

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    init: &[f64],
    config: &LmConfig,
) -> Result<LmReport> {
    let (m, n) = (problem.n_residuals(), problem.n_params());
    if init.len() != n {
        return Err(Error::InvalidParameter { name: "init", reason: format!("expected {n} parameters") });
    }
    if m < n {
        return Err(Error::InvalidParameter {
            name: "data",
            reason: format!("{m} residuals cannot determine {n} parameters"),
        });
    }
    if let Some(v) = init.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter { name: "init", reason: format!("non-finite start value {v}") });
    }

    let mut p = DVector::from_column_slice(init);
    let mut r = vec![0.0; m];
    problem.residuals(p.as_slice(), &mut r)?;
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::InvalidParameter { name: "init", reason: "model is not finite at the start point".into() });
    }
    let mut jac = DMatrix::zeros(m, n);
    problem.jacobian(p.as_slice(), &mut jac)?;

    let mut scale = DVector::<f64>::zeros(n);
    // damping is relative to the Marquardt scale diag(J^T J), so it is dimensionless
    let mut mu: f64 = 1e-3;
    let mut nu = 2.0;
    let mut r_new = vec![0.0; m];
    let mut termination = None;
    let mut iterations = 0;
    let dof = (m - n).max(1) as f64;

    while iterations < config.max_iterations {
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        for j in 0..n {
            scale[j] = scale[j].max(a[(j, j)]);
        }
        if cost == 0.0 {
            termination = Some(Termination::ZeroResidual);
            break;
        }
        let scaled_grad = (0..n)
            .map(|j| if a[(j, j)] > 0.0 { g[j].abs() / (a[(j, j)] * cost).sqrt() } else { 0.0 })
            .fold(0.0, f64::max);
        if scaled_grad < config.g_tol {
            termination = Some(Termination::SmallGradient);
            break;
        }

        // inner loop: raise the damping until a step lowers the cost
        loop {
            let mut lhs = a.clone();
            for j in 0..n {
                lhs[(j, j)] += mu * scale[j].max(f64::MIN_POSITIVE);
            }
            let Some(chol) = lhs.cholesky() else {
                mu *= nu;
                nu *= 2.0;
                if !mu.is_finite() {
                    return Err(Error::SingularCurvature("damped normal equations not positive definite".into()));
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            // per parameter, relative to its size or its statistical resolution,
            // so one large-valued parameter cannot mask the others
            let small = (0..n).all(|j| {
                let resolution = if a[(j, j)] > 0.0 { (cost / dof / a[(j, j)]).sqrt() } else { f64::INFINITY };
                delta[j].abs() <= config.x_tol * (p[j].abs() + resolution)
            });
            let trial = &p + &delta;
            let ok = problem.residuals(trial.as_slice(), &mut r_new).is_ok();
            let new_cost = if ok { cost_of(&r_new) } else { f64::INFINITY };
            let mut scaled_sq = 0.0;
            for j in 0..n {
                scaled_sq += scale[j] * delta[j] * delta[j];
            }
            let predicted = mu * scaled_sq - delta.dot(&g);
            let rho = if predicted > 0.0 { (cost - new_cost) / predicted } else { -1.0 };
            if new_cost.is_finite() && rho > 0.0 {
                p = trial;
                std::mem::swap(&mut r, &mut r_new);
                cost = new_cost;
                problem.jacobian(p.as_slice(), &mut jac)?;
                mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                if small {
                    termination = Some(Termination::SmallStep);
                }
                break;
            }
            mu *= nu;
            nu *= 2.0;
            if mu > 1e16 {
                termination = Some(Termination::NoFurtherReduction);
                break;
            }
        }
        if termination.is_some() {
            break;
        }
    }

    let Some(termination) = termination else {
        return Err(Error::NotConverged { iterations });
    };
    let (covariance, std_errors) = curvature(&jac, cost, m, n)?;
    Ok(LmReport { params: p.as_slice().to_vec(), covariance, std_errors, cost, iterations, termination })
}

fn curvature(jac: &DMatrix<f64>, cost: f64, m: usize, n: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let a = jac.transpose() * jac;
    let diag: Vec<f64> = (0..n).map(|j| a[(j, j)]).collect();
    if let Some(j) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::SingularCurvature(format!("parameter {j} does not affect the residuals")));
    }
    let corr = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (diag[i] * diag[j]).sqrt());
    let eig = SymmetricEigen::new(corr.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < SINGULAR_EIGENVALUE {
        return Err(Error::SingularCurvature(format!(
            "normalized curvature matrix has eigenvalue {min_eig:.3e}; parameters are degenerate"
        )));
    }
    let corr_inv = corr
        .try_inverse()
        .ok_or_else(|| Error::SingularCurvature("curvature matrix not invertible".into()))?;
    let dof = (m - n).max(1) as f64;
    let s2 = cost / dof;
    let cov = DMatrix::from_fn(n, n, |i, j| s2 * corr_inv[(i, j)] / (diag[i] * diag[j]).sqrt());
    let se = (0..n).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    Ok((cov, se))
}
