//! Quadrature grids on the unit fiber sphere `S^{n-1}` in normal coordinates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::gauss_legendre;

/// Directions with quadrature weights summing to `|S^{n-1}|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberGrid {
    dim: usize,
    directions: Vec<Vec<f64>>,
    weights: Vec<f64>,
    resolution: Vec<usize>,
}

impl FiberGrid {
    /// `count` directions on S¹ at angles `(k + ½)·2π/count`.
    pub fn circle(count: usize) -> Self {
        assert!(count > 0, "empty fiber grid");
        let step = 2.0 * PI / count as f64;
        let directions = (0..count)
            .map(|k| {
                let a = (k as f64 + 0.5) * step;
                vec![a.cos(), a.sin()]
            })
            .collect();
        Self {
            dim: 2,
            directions,
            weights: vec![step; count],
            resolution: vec![count],
        }
    }

    /// Gauss–Legendre in `cos θ` times a uniform azimuthal rule on S².
    pub fn sphere(n_polar: usize, n_azimuth: usize) -> Self {
        let (x, w) = gauss_legendre(n_polar);
        let step = 2.0 * PI / n_azimuth as f64;
        let mut directions = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (c, wc) in x.iter().zip(&w) {
            let s = (1.0 - c * c).sqrt();
            for k in 0..n_azimuth {
                let a = (k as f64 + 0.5) * step;
                directions.push(vec![s * a.cos(), s * a.sin(), *c]);
                weights.push(wc * step);
            }
        }
        Self {
            dim: 3,
            directions,
            weights,
            resolution: vec![n_polar, n_azimuth],
        }
    }

    /// Default grid for a manifold dimension with roughly `count` points per great circle.
    pub fn uniform(dim: usize, count: usize) -> Result<Self> {
        match dim {
            2 => Ok(Self::circle(count)),
            3 => Ok(Self::sphere(count.div_ceil(2).max(1), count)),
            _ => Err(Error::Invalid(format!(
                "fiber grids are implemented for n = 2, 3 (got n = {dim})"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i]
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    /// Angle of direction `i` on S¹ (or azimuth on S²).
    pub fn angle(&self, i: usize) -> f64 {
        let d = &self.directions[i];
        d[1].atan2(d[0]).rem_euclid(2.0 * PI)
    }

    pub fn total_volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len(), "sample count mismatch");
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Largest geodesic distance from a direction to its nearest neighbour.
    pub fn spacing(&self) -> f64 {
        match self.dim {
            2 => 2.0 * PI / self.len() as f64,
            _ => {
                let mut worst: f64 = 0.0;
                for (i, a) in self.directions.iter().enumerate() {
                    let mut best = f64::INFINITY;
                    for (j, b) in self.directions.iter().enumerate() {
                        if i != j {
                            best = best.min(angle_between(a, b));
                        }
                    }
                    worst = worst.max(best);
                }
                worst
            }
        }
    }

    /// Index of the nearest grid direction and the angle to it.
    pub fn nearest(&self, omega: &[f64]) -> (usize, f64) {
        if self.dim == 2 {
            let n = self.len();
            let step = 2.0 * PI / n as f64;
            let a = omega[1].atan2(omega[0]).rem_euclid(2.0 * PI);
            let k = ((a / step - 0.5).round() as i64).rem_euclid(n as i64) as usize;
            return (k, angle_between(omega, &self.directions[k]));
        }
        self.directions
            .iter()
            .enumerate()
            .map(|(i, d)| (i, angle_between(omega, d)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty grid")
    }
}

/// Angle between two (not necessarily unit) vectors.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    // |a/|a| − b/|b|| is accurate for small angles
    let chord = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / na - y / nb).powi(2))
        .sum::<f64>()
        .sqrt();
    if dot > 0.5 {
        2.0 * (0.5 * chord).asin()
    } else {
        dot.clamp(-1.0, 1.0).acos()
    }
}

/// Orthonormal basis of the tangent space `ω^⊥` of the unit sphere at `ω`.
pub fn tangent_basis(omega: &[f64]) -> Vec<Vec<f64>> {
    let n = omega.len();
    let norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w: Vec<f64> = omega.iter().map(|v| v / norm).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    let mut axes: Vec<usize> = (0..n).collect();
    // start from the coordinate axes least aligned with ω
    axes.sort_by(|a, b| w[*a].abs().total_cmp(&w[*b].abs()));
    for &k in &axes {
        if basis.len() == n - 1 {
            break;
        }
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for b in std::iter::once(&w).chain(basis.iter()) {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    if n == 2 {
        // keep the positive orientation (−ω₂, ω₁)
        basis[0] = vec![-w[1], w[0]];
    }
    basis
}
