//! Spherical harmonic transform on a Gauss–Legendre × uniform-longitude grid.
//!
//! Coefficients use `Y_l^m(θ, φ) = P̄_l^{|m|}(cos θ) e^{imφ}` (orthonormal on
//! the unit sphere) and are stored at index `l² + l + m`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::special::{assoc_legendre_column, gauss_legendre};

/// Storage index of `(l, m)`.
pub fn index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m) as usize
}

/// Quadrature grid exact for products of two fields of degree ≤ `band`.
#[derive(Debug, Clone)]
pub struct ShtGrid {
    band: usize,
    nlat: usize,
    nlon: usize,
    cos_theta: Vec<f64>,
    weights: Vec<f64>,
}

impl ShtGrid {
    pub fn new(band: usize) -> Self {
        let nlat = band + 1;
        let nlon = 2 * band + 2;
        let (x, w) = gauss_legendre(nlat);
        // north to south
        let cos_theta: Vec<f64> = x.iter().rev().cloned().collect();
        let weights: Vec<f64> = w.iter().rev().cloned().collect();
        Self {
            band,
            nlat,
            nlon,
            cos_theta,
            weights,
        }
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn nlat(&self) -> usize {
        self.nlat
    }

    pub fn nlon(&self) -> usize {
        self.nlon
    }

    pub fn len(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.cos_theta[i].acos()
    }

    pub fn cos_theta(&self, i: usize) -> f64 {
        self.cos_theta[i]
    }

    pub fn phi(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.nlon as f64
    }

    /// Area weight of grid node `(i, k)` on the unit sphere.
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i] * 2.0 * PI / self.nlon as f64
    }

    pub fn coeff_len(&self) -> usize {
        (self.band + 1) * (self.band + 1)
    }

    /// `∫|f|²` on the unit sphere by grid quadrature.
    pub fn norm_sq(&self, values: &[Complex64]) -> f64 {
        (0..self.nlat)
            .map(|i| {
                self.weight(i)
                    * values[i * self.nlon..(i + 1) * self.nlon]
                        .iter()
                        .map(|v| v.norm_sqr())
                        .sum::<f64>()
            })
            .sum()
    }

    /// Values (row-major, latitude-major) to coefficients.
    pub fn analysis(&self, values: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.len(), "grid size mismatch");
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(self.nlon);
        let scale = 2.0 * PI / self.nlon as f64;
        let rows: Vec<Vec<Complex64>> = values
            .par_chunks(self.nlon)
            .map(|row| {
                let mut r = row.to_vec();
                fft.process(&mut r);
                r.iter_mut().for_each(|v| *v *= scale);
                r
            })
            .collect();
        let l_max = self.band as i64;
        let per_m: Vec<(i64, Vec<Complex64>)> = (-l_max..=l_max)
            .into_par_iter()
            .map(|m| {
                let am = m.unsigned_abs() as usize;
                let col = (m.rem_euclid(self.nlon as i64)) as usize;
                let mut acc = vec![Complex64::new(0.0, 0.0); self.band + 1 - am];
                for i in 0..self.nlat {
                    let p = assoc_legendre_column(self.band, am, self.cos_theta[i]);
                    let a = rows[i][col] * self.weights[i];
                    for (j, pv) in p.iter().enumerate() {
                        acc[j] += a * *pv;
                    }
                }
                (m, acc)
            })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); self.coeff_len()];
        for (m, acc) in per_m {
            let am = m.unsigned_abs() as usize;
            for (j, v) in acc.into_iter().enumerate() {
                out[index(am + j, m)] = v;
            }
        }
        out
    }

    /// Coefficients to grid values.
    pub fn synthesis(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(coeffs.len(), self.coeff_len(), "coefficient count mismatch");
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(self.nlon);
        let l_max = self.band as i64;
        let rows: Vec<Vec<Complex64>> = (0..self.nlat)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![Complex64::new(0.0, 0.0); self.nlon];
                for m in -l_max..=l_max {
                    let am = m.unsigned_abs() as usize;
                    let p = assoc_legendre_column(self.band, am, self.cos_theta[i]);
                    let mut s = Complex64::new(0.0, 0.0);
                    for (j, pv) in p.iter().enumerate() {
                        s += coeffs[index(am + j, m)] * *pv;
                    }
                    row[m.rem_euclid(self.nlon as i64) as usize] += s;
                }
                ifft.process(&mut row);
                row
            })
            .collect();
        rows.concat()
    }

    /// Grid values of `f(θ, φ)`.
    pub fn sample<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(f64, f64) -> Complex64 + Sync,
    {
        (0..self.len())
            .into_par_iter()
            .map(|idx| {
                let (i, k) = (idx / self.nlon, idx % self.nlon);
                f(self.theta(i), self.phi(k))
            })
            .collect()
    }
}
