//! Dormand–Prince 5(4) with local error control.
//!
//! The stepper is exposed at single-step granularity so callers can change
//! coordinates between accepted steps (chart switches restart FSAL).

use crate::error::{Error, Result};

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

// 5th minus 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub min_step: f64,
}

impl Dopri5 {
    pub fn new(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            max_step: f64::INFINITY,
            min_step: 1e-14,
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }
}

/// Result of one attempted step.
pub struct Attempt {
    pub y: Vec<f64>,
    /// Derivative at the end point (FSAL).
    pub dy: Vec<f64>,
    /// Scaled error norm; the step is acceptable when `err <= 1`.
    pub err: f64,
}

impl Dopri5 {
    /// Attempt a step of size `h` from `(t, y)` given `dy = f(t, y)`.
    pub fn attempt<F>(&self, f: &F, t: f64, y: &[f64], dy: &[f64], h: f64) -> Attempt
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let k1 = dy;

        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &tmp, &mut k6);
        let mut y_new = vec![0.0; n];
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &y_new, &mut k7);

        let mut acc = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
            acc += (e / sc).powi(2);
        }
        let err = (acc / n as f64).sqrt();
        Attempt {
            y: y_new,
            dy: k7,
            err,
        }
    }

    /// Next step size after an attempt with error `err`.
    pub fn next_step(&self, h: f64, err: f64) -> f64 {
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        (h * factor).min(self.max_step)
    }

    /// Initial step heuristic (Hairer–Wanner).
    pub fn initial_step<F>(&self, f: &F, t: f64, y: &[f64], dy: &[f64]) -> f64
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y.len() as f64;
        let sc = |v: f64| self.atol + self.rtol * v.abs();
        let d0 = (y.iter().map(|v| (v / sc(*v)).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (y
            .iter()
            .zip(dy)
            .map(|(v, d)| (d / sc(*v)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let y1: Vec<f64> = y.iter().zip(dy).map(|(v, d)| v + h0 * d).collect();
        let mut dy1 = vec![0.0; y.len()];
        f(t + h0, &y1, &mut dy1);
        let d2 = (y
            .iter()
            .zip(dy.iter().zip(&dy1))
            .map(|(v, (a, b))| ((b - a) / sc(*v)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.max_step)
    }

    /// Integrate a fixed right-hand side from `t0` to `t1` (`t1 >= t0`).
    pub fn integrate<F>(&self, f: F, t0: f64, y0: &[f64], t1: f64) -> Result<Vec<f64>>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let mut y = y0.to_vec();
        if t1 == t0 {
            return Ok(y);
        }
        assert!(t1 > t0, "integrate expects t1 > t0");
        let mut t = t0;
        let mut dy = vec![0.0; y.len()];
        f(t, &y, &mut dy);
        let mut h = self.initial_step(&f, t, &y, &dy).min(t1 - t0);
        let mut rejected = 0usize;
        while t < t1 {
            let last = t + h >= t1;
            let step = if last { t1 - t } else { h };
            let a = self.attempt(&f, t, &y, &dy, step);
            if a.err <= 1.0 || step <= self.min_step {
                if !a.err.is_finite() {
                    return Err(Error::Integration {
                        t,
                        reason: "non-finite state".into(),
                    });
                }
                t = if last { t1 } else { t + step };
                y = a.y;
                dy = a.dy;
                h = self.next_step(step, a.err);
                rejected = 0;
            } else {
                h = self.next_step(step, a.err);
                rejected += 1;
                if h < self.min_step || rejected > 200 {
                    return Err(Error::Integration {
                        t,
                        reason: format!("step size underflow (h = {h:e})"),
                    });
                }
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let s = Dopri5::new(1e-12);
        let y = s
            .integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                &[1.0, 0.0],
                2.0 * std::f64::consts::PI,
            )
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
        assert!(y[1].abs() < 1e-10);
    }

    #[test]
    fn exponential_growth() {
        let s = Dopri5::new(1e-11);
        let y = s.integrate(|_, y, dy| dy[0] = y[0], 0.0, &[1.0], 3.0).unwrap();
        assert!((y[0] / 3.0f64.exp() - 1.0).abs() < 1e-9);
    }
}
