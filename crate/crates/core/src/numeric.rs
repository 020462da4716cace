//! Small scalar numerics shared across modules.

use crate::error::{Error, Result};

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite sign.
///
/// Stops when `|f(x)| <= f_tol` or the bracket is narrower than `x_tol`.
pub fn brent<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, f_tol: f64, x_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoBracket { g_max: b });
    }
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;

    for _ in 0..200 {
        if fb.abs() <= f_tol || (b - a).abs() <= x_tol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let outside = !((s > lo.min(b)) && (s < lo.max(b)));
        let slow = if bisected { (s - b).abs() >= (b - c).abs() / 2.0 } else { (s - b).abs() >= (c - d).abs() / 2.0 };
        let tiny = if bisected { (b - c).abs() < x_tol } else { (c - d).abs() < x_tol };
        if outside || slow || tiny {
            s = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s)?;
        d = c;
        c = b;
        fc = fb;
        if fa.signum() != fs.signum() {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Err(Error::NotConverged { iterations: 200 })
}

/// Smallest power of two that is at least `n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Check that `grid` is strictly increasing with relative step jitter at most `tol`;
/// returns the mean step.
pub fn uniform_step(grid: &[f64], tol: f64) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::NonUniformGrid(format!("need at least 2 points, got {}", grid.len())));
    }
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::NonUniformGrid("grid is not strictly increasing".into()));
    }
    for (i, w) in grid.windows(2).enumerate() {
        let h = w[1] - w[0];
        if !((h - step).abs() <= tol * step) {
            return Err(Error::NonUniformGrid(format!(
                "step {h} between points {i} and {} deviates from mean step {step}",
                i + 1
            )));
        }
    }
    Ok(step)
}
