//! Dormand-Prince 5(4) embedded Runge-Kutta integrator for small, fixed-size systems.

use crate::error::{Error, Result};

/// Absolute and relative local error tolerances.
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-9 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Adaptive integrator state. Keeps its step-size estimate between calls so that
/// integrating a long interval as a chain of short output intervals stays cheap.
#[derive(Clone, Debug)]
pub struct Dopri5<const N: usize> {
    tol: Tolerance,
    h: f64,
    max_steps: usize,
    /// Accepted steps so far.
    pub steps: usize,
}

impl<const N: usize> Dopri5<N> {
    pub fn new(tol: Tolerance, initial_step: f64) -> Self {
        Self { tol, h: initial_step, max_steps: 50_000_000, steps: 0 }
    }

    /// Advance `y` from `*t` to exactly `t_end`.
    pub fn integrate_to<F>(&mut self, f: &F, t: &mut f64, y: &mut [f64; N], t_end: f64) -> Result<()>
    where
        F: Fn(f64, &[f64; N], &mut [f64; N]),
    {
        let mut k1 = [0.0; N];
        f(*t, y, &mut k1);
        let mut k2 = [0.0; N];
        let mut k3 = [0.0; N];
        let mut k4 = [0.0; N];
        let mut k5 = [0.0; N];
        let mut k6 = [0.0; N];
        let mut k7 = [0.0; N];
        let mut stage = [0.0; N];
        let mut y_new = [0.0; N];

        while *t < t_end {
            if self.steps >= self.max_steps {
                return Err(Error::Integration { t: *t, reason: "step budget exhausted".into() });
            }
            let remaining = t_end - *t;
            if remaining <= 4.0 * f64::EPSILON * t_end.abs() {
                // rounding left a sliver; the state is already at t_end to working precision
                *t = t_end;
                break;
            }
            // stretch a step that would stop just short of t_end
            let last = self.h * (1.0 + 1e-8) >= remaining;
            let h = if last { remaining } else { self.h };
            if h <= f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::Integration { t: *t, reason: format!("step size underflow (h = {h:e})") });
            }

            for i in 0..N {
                stage[i] = y[i] + h * A21 * k1[i];
            }
            f(*t + C2 * h, &stage, &mut k2);
            for i in 0..N {
                stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(*t + C3 * h, &stage, &mut k3);
            for i in 0..N {
                stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(*t + C4 * h, &stage, &mut k4);
            for i in 0..N {
                stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(*t + C5 * h, &stage, &mut k5);
            for i in 0..N {
                stage[i] =
                    y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(*t + h, &stage, &mut k6);
            for i in 0..N {
                y_new[i] =
                    y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(*t + h, &y_new, &mut k7);

            let mut err_sq = 0.0;
            for i in 0..N {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let scale = self.tol.abs + self.tol.rel * y[i].abs().max(y_new[i].abs());
                err_sq += (e / scale).powi(2);
            }
            let err = (err_sq / N as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integration { t: *t, reason: "non-finite error estimate".into() });
            }

            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };

            if err <= 1.0 {
                *t = if last { t_end } else { *t + h };
                *y = y_new;
                k1 = k7;
                self.steps += 1;
                // a step clipped to hit t_end says nothing about the natural step size
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.h = h * factor.min(1.0);
            }
        }
        Ok(())
    }
}

/// Classic fixed-step 4th-order Runge-Kutta step. Kept as an independent reference.
pub fn rk4_step<const N: usize, F>(f: &F, t: f64, y: &mut [f64; N], h: f64)
where
    F: Fn(f64, &[f64; N], &mut [f64; N]),
{
    let mut k1 = [0.0; N];
    let mut k2 = [0.0; N];
    let mut k3 = [0.0; N];
    let mut k4 = [0.0; N];
    let mut s = [0.0; N];
    f(t, y, &mut k1);
    for i in 0..N {
        s[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &s, &mut k2);
    for i in 0..N {
        s[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &s, &mut k3);
    for i in 0..N {
        s[i] = y[i] + h * k3[i];
    }
    f(t + h, &s, &mut k4);
    for i in 0..N {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &[f64; 1], dy: &mut [f64; 1]| dy[0] = -3.0 * y[0];
        let mut solver = Dopri5::<1>::new(Tolerance::default(), 1e-3);
        let mut t = 0.0;
        let mut y = [1.0];
        solver.integrate_to(&f, &mut t, &mut y, 2.0).unwrap();
        assert_eq!(t, 2.0);
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_many_output_points() {
        let f = |_t: f64, y: &[f64; 2], dy: &mut [f64; 2]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let mut solver = Dopri5::<2>::new(Tolerance::default(), 1e-2);
        let mut t = 0.0;
        let mut y = [1.0, 0.0];
        let mut worst: f64 = 0.0;
        for k in 1..=1000 {
            let te = k as f64 * 0.02;
            solver.integrate_to(&f, &mut t, &mut y, te).unwrap();
            worst = worst.max((y[0] - te.cos()).abs());
        }
        assert!(worst < 1e-8, "worst = {worst}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = |_t: f64, y: &[f64; 1], dy: &mut [f64; 1]| dy[0] = -y[0];
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = [1.0];
            for i in 0..n {
                rk4_step(&f, i as f64 * h, &mut y, h);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = run(10) / run(20);
        assert!((ratio - 16.0).abs() < 1.0, "ratio = {ratio}");
    }
}
