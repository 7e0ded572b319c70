//! Model Riemannian manifolds with closed-form (or spline) diagonal metrics.
//!
//! Every model is written in coordinates where the metric is diagonal,
//! `g = diag(a_1(x), …, a_n(x))`, which keeps Hamiltonian derivatives cheap.
//! The round sphere uses two polar charts whose poles lie on orthogonal axes,
//! so one of them always has `sin θ ≥ 1/√2`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::Dopri5;

/// Chart identifiers. Tori and surfaces of revolution use a single periodic chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChartId {
    Global,
    /// Polar angle measured from `e_z`, azimuth in the x–y plane.
    PolarZ,
    /// Polar angle measured from `e_x`, azimuth in the y–z plane.
    PolarX,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: ChartId,
    pub coords: Vec<f64>,
}

impl ChartPoint {
    pub fn new(chart: ChartId, coords: Vec<f64>) -> Self {
        Self { chart, coords }
    }

    pub fn global(coords: Vec<f64>) -> Self {
        Self::new(ChartId::Global, coords)
    }

    /// Sphere point in the `PolarZ` chart.
    pub fn spherical(theta: f64, phi: f64) -> Self {
        Self::new(ChartId::PolarZ, vec![theta, phi])
    }
}

/// Periodic profile `ρ(s) > 0` for a surface of revolution `ds² + ρ(s)² dφ²`,
/// interpolated by a periodic cubic spline through uniform samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    length: f64,
    values: Vec<f64>,
    moments: Vec<f64>,
}

impl Profile {
    pub fn from_samples(length: f64, values: Vec<f64>) -> Result<Self> {
        if !(length > 0.0) || values.len() < 4 {
            return Err(Error::Invalid(
                "profile needs positive length and at least 4 samples".into(),
            ));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid("profile samples must be positive".into()));
        }
        let n = values.len();
        let step = length / n as f64;
        let rhs: Vec<f64> = (0..n)
            .map(|k| {
                6.0 * (values[(k + 1) % n] - 2.0 * values[k] + values[(k + n - 1) % n])
                    / (step * step)
            })
            .collect();
        // M_{k-1} + 4 M_k + M_{k+1} = rhs_k; strictly diagonally dominant, so
        // Jacobi converges with contraction factor 1/2.
        let mut m = vec![0.0; n];
        for _ in 0..200 {
            let next: Vec<f64> = (0..n)
                .map(|k| (rhs[k] - m[(k + n - 1) % n] - m[(k + 1) % n]) / 4.0)
                .collect();
            let delta = next
                .iter()
                .zip(&m)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            m = next;
            if delta < 1e-15 * (1.0 + m.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                break;
            }
        }
        Ok(Self {
            length,
            values,
            moments: m,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(length: f64, samples: usize, f: F) -> Result<Self> {
        let step = length / samples as f64;
        Self::from_samples(length, (0..samples).map(|k| f(k as f64 * step)).collect())
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn samples(&self) -> &[f64] {
        &self.values
    }

    /// `(ρ, ρ', ρ'')` at arclength `s` (any real, wrapped).
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        let n = self.values.len();
        let step = self.length / n as f64;
        let u = s.rem_euclid(self.length) / step;
        let k = (u.floor() as usize).min(n - 1);
        let t = u - k as f64;
        let (y0, y1) = (self.values[k], self.values[(k + 1) % n]);
        let (m0, m1) = (self.moments[k], self.moments[(k + 1) % n]);
        let omt = 1.0 - t;
        let v = omt * y0
            + t * y1
            + step * step / 6.0 * ((omt.powi(3) - omt) * m0 + (t.powi(3) - t) * m1);
        let d = (y1 - y0) / step + step / 6.0 * ((1.0 - 3.0 * omt * omt) * m0 + (3.0 * t * t - 1.0) * m1);
        let dd = omt * m0 + t * m1;
        (v, d, dd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    RoundSphere { radius: f64 },
    FlatTorus { periods: Vec<f64> },
    SurfaceOfRevolution { profile: Arc<Profile> },
}

/// Immutable model geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldModel {
    kind: ModelKind,
    dim: usize,
}

/// Diagonal metric `a_i`, first derivatives `da[k][i] = ∂_k a_i` and second
/// derivatives `dda[k][l][i] = ∂_k ∂_l a_i` at a point.
#[derive(Debug, Clone)]
pub struct DiagMetric {
    pub a: Vec<f64>,
    pub da: Vec<Vec<f64>>,
    pub dda: Vec<Vec<Vec<f64>>>,
}

/// Christoffel symbols `Γ^k_{ij}` stored densely.
#[derive(Debug, Clone)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Injectivity radius; `numerical` marks an estimate rather than a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectivityRadius {
    pub value: f64,
    pub numerical: bool,
}

/// Geodesic distance; `numerical` marks a path-minimization estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub value: f64,
    pub numerical: bool,
}

impl ManifoldModel {
    pub fn round_sphere(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Invalid(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Self {
            kind: ModelKind::RoundSphere { radius },
            dim: 2,
        })
    }

    pub fn flat_torus(periods: Vec<f64>) -> Result<Self> {
        if periods.len() < 2 {
            return Err(Error::Invalid("torus dimension must be at least 2".into()));
        }
        if periods.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Invalid("torus periods must be positive".into()));
        }
        let dim = periods.len();
        Ok(Self {
            kind: ModelKind::FlatTorus { periods },
            dim,
        })
    }

    pub fn surface_of_revolution(profile: Profile) -> Self {
        Self {
            kind: ModelKind::SurfaceOfRevolution {
                profile: Arc::new(profile),
            },
            dim: 2,
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, ModelKind::RoundSphere { .. })
    }

    pub fn sphere_radius(&self) -> Option<f64> {
        match self.kind {
            ModelKind::RoundSphere { radius } => Some(radius),
            _ => None,
        }
    }

    /// Coordinate periods of the single periodic chart (torus, surface of revolution).
    pub fn periods(&self) -> Option<Vec<f64>> {
        match &self.kind {
            ModelKind::RoundSphere { .. } => None,
            ModelKind::FlatTorus { periods } => Some(periods.clone()),
            ModelKind::SurfaceOfRevolution { profile } => Some(vec![profile.length(), 2.0 * PI]),
        }
    }

    pub fn check_point(&self, x: &ChartPoint) -> Result<()> {
        if x.coords.len() != self.dim {
            return Err(Error::Domain(format!(
                "expected {} coordinates, got {}",
                self.dim,
                x.coords.len()
            )));
        }
        if x.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        match (&self.kind, x.chart) {
            (ModelKind::RoundSphere { .. }, ChartId::PolarZ | ChartId::PolarX) => {
                let theta = x.coords[0];
                if theta <= 0.0 || theta >= PI {
                    return Err(Error::Domain(format!(
                        "polar angle {theta} outside the open chart (0, π)"
                    )));
                }
                Ok(())
            }
            (ModelKind::RoundSphere { .. }, ChartId::Global) => Err(Error::Domain(
                "sphere points must use a polar chart".into(),
            )),
            (_, ChartId::Global) => Ok(()),
            _ => Err(Error::Domain("polar charts exist only on the sphere".into())),
        }
    }

    /// Diagonal metric data at chart coordinates (no domain check).
    pub fn diag_metric(&self, x: &[f64]) -> DiagMetric {
        let n = self.dim;
        let mut da = vec![vec![0.0; n]; n];
        let mut dda = vec![vec![vec![0.0; n]; n]; n];
        let a = match &self.kind {
            ModelKind::RoundSphere { radius } => {
                let r2 = radius * radius;
                let (s, c) = x[0].sin_cos();
                da[0][1] = 2.0 * r2 * s * c;
                dda[0][0][1] = 2.0 * r2 * (c * c - s * s);
                vec![r2, r2 * s * s]
            }
            ModelKind::FlatTorus { .. } => vec![1.0; n],
            ModelKind::SurfaceOfRevolution { profile } => {
                let (r, d, dd) = profile.eval(x[0]);
                da[0][1] = 2.0 * r * d;
                dda[0][0][1] = 2.0 * (d * d + r * dd);
                vec![1.0, r * r]
            }
        };
        DiagMetric { a, da, dda }
    }

    pub fn metric_at(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let d = self.diag_metric(&x.coords);
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.a)))
    }

    pub fn christoffel_at(&self, x: &ChartPoint) -> Result<Christoffel> {
        self.check_point(x)?;
        let n = self.dim;
        let m = self.diag_metric(&x.coords);
        let mut data = vec![0.0; n * n * n];
        // Γ^k_{ij} = ½ a_k^{-1} (∂_i g_{jk} + ∂_j g_{ik} − ∂_k g_{ij}), g_{ij} = a_i δ_ij
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    if j == k {
                        s += m.da[i][k];
                    }
                    if i == k {
                        s += m.da[j][k];
                    }
                    if i == j {
                        s -= m.da[k][i];
                    }
                    data[(k * n + i) * n + j] = 0.5 * s / m.a[k];
                }
            }
        }
        Ok(Christoffel { n, data })
    }

    /// Unit vector in R³ for a sphere chart point.
    pub fn sphere_unit(&self, x: &ChartPoint) -> [f64; 3] {
        let (st, ct) = x.coords[0].sin_cos();
        let (sp, cp) = x.coords[1].sin_cos();
        match x.chart {
            ChartId::PolarX => [ct, st * cp, st * sp],
            _ => [st * cp, st * sp, ct],
        }
    }

    /// Chart coordinates of a unit vector in the requested sphere chart.
    pub fn sphere_coords(p: [f64; 3], chart: ChartId) -> Vec<f64> {
        match chart {
            ChartId::PolarX => {
                let rho = (p[1] * p[1] + p[2] * p[2]).sqrt();
                vec![rho.atan2(p[0]), p[2].atan2(p[1]).rem_euclid(2.0 * PI)]
            }
            _ => {
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
                vec![rho.atan2(p[2]), p[1].atan2(p[0]).rem_euclid(2.0 * PI)]
            }
        }
    }

    /// Sphere point from a unit vector, in whichever chart is well inside its domain.
    pub fn sphere_point(p: [f64; 3]) -> ChartPoint {
        let chart = if p[2].abs() < 0.8 {
            ChartId::PolarZ
        } else {
            ChartId::PolarX
        };
        ChartPoint::new(chart, Self::sphere_coords(p, chart))
    }

    /// Embedding Jacobian columns `∂X/∂θ, ∂X/∂φ` (unit radius).
    pub(crate) fn sphere_tangents(x: &ChartPoint) -> [[f64; 3]; 2] {
        let (st, ct) = x.coords[0].sin_cos();
        let (sp, cp) = x.coords[1].sin_cos();
        match x.chart {
            ChartId::PolarX => [[-st, ct * cp, ct * sp], [0.0, -st * sp, st * cp]],
            _ => [[ct * cp, ct * sp, -st], [-st * sp, st * cp, 0.0]],
        }
    }

    /// Chart in which the flow should continue: the sphere switches when
    /// `sin θ < 1/2` in the current chart.
    pub fn preferred_chart(&self, x: &ChartPoint) -> ChartId {
        if !self.is_sphere() {
            return ChartId::Global;
        }
        if x.coords[0].sin() < 0.5 {
            match x.chart {
                ChartId::PolarX => ChartId::PolarZ,
                _ => ChartId::PolarX,
            }
        } else {
            x.chart
        }
    }

    /// Re-express a point and covector in `target` chart coordinates.
    pub fn transfer(&self, x: &ChartPoint, xi: &[f64], target: ChartId) -> (ChartPoint, Vec<f64>) {
        if x.chart == target || !self.is_sphere() {
            return (x.clone(), xi.to_vec());
        }
        let p = self.sphere_unit(x);
        let e = Self::sphere_tangents(x);
        let st2 = x.coords[0].sin().powi(2);
        // ambient tangent vector dual to ξ (unit radius; R² factors cancel)
        let inv = [1.0, 1.0 / st2];
        let mut v = [0.0; 3];
        for i in 0..2 {
            for c in 0..3 {
                v[c] += e[i][c] * xi[i] * inv[i];
            }
        }
        let y = ChartPoint::new(target, Self::sphere_coords(p, target));
        let e2 = Self::sphere_tangents(&y);
        let eta = (0..2)
            .map(|j| (0..3).map(|c| e2[j][c] * v[c]).sum())
            .collect();
        (y, eta)
    }

    /// Reduce periodic coordinates to their fundamental domain.
    pub fn normalize(&self, x: &ChartPoint) -> ChartPoint {
        match &self.kind {
            ModelKind::RoundSphere { .. } => {
                ChartPoint::new(x.chart, vec![x.coords[0], x.coords[1].rem_euclid(2.0 * PI)])
            }
            _ => {
                let per = self.periods().unwrap();
                ChartPoint::new(
                    x.chart,
                    x.coords
                        .iter()
                        .zip(&per)
                        .map(|(c, p)| c.rem_euclid(*p))
                        .collect(),
                )
            }
        }
    }

    /// Minimal-image difference `y − x` in the periodic chart.
    pub fn wrapped_difference(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let per = self.periods().expect("periodic chart");
        x.iter()
            .zip(y)
            .zip(&per)
            .map(|((a, b), p)| {
                let d = (b - a).rem_euclid(*p);
                if d > 0.5 * p {
                    d - p
                } else {
                    d
                }
            })
            .collect()
    }

    pub fn distance(&self, x: &ChartPoint, y: &ChartPoint) -> Result<Distance> {
        self.check_point(x)?;
        self.check_point(y)?;
        match &self.kind {
            ModelKind::RoundSphere { radius } => {
                let p = self.sphere_unit(x);
                let q = self.sphere_unit(y);
                Ok(Distance {
                    value: radius * sphere_angle(p, q),
                    numerical: false,
                })
            }
            ModelKind::FlatTorus { .. } => {
                let w = self.wrapped_difference(&x.coords, &y.coords);
                Ok(Distance {
                    value: w.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    numerical: false,
                })
            }
            ModelKind::SurfaceOfRevolution { profile } => Ok(Distance {
                value: surface_distance(profile, &x.coords, &y.coords),
                numerical: true,
            }),
        }
    }

    pub fn injectivity_radius(&self) -> InjectivityRadius {
        match &self.kind {
            ModelKind::RoundSphere { radius } => InjectivityRadius {
                value: PI * radius,
                numerical: false,
            },
            ModelKind::FlatTorus { periods } => InjectivityRadius {
                value: 0.5 * periods.iter().cloned().fold(f64::INFINITY, f64::min),
                numerical: false,
            },
            ModelKind::SurfaceOfRevolution { profile } => InjectivityRadius {
                value: surface_injectivity_estimate(profile),
                numerical: true,
            },
        }
    }

    /// Length of the shortest geodesic loop through `x0` when known in closed form.
    pub fn shortest_loop_closed_form(&self, _x0: &ChartPoint) -> Option<f64> {
        match &self.kind {
            ModelKind::RoundSphere { radius } => Some(2.0 * PI * radius),
            ModelKind::FlatTorus { periods } => {
                Some(periods.iter().cloned().fold(f64::INFINITY, f64::min))
            }
            ModelKind::SurfaceOfRevolution { .. } => None,
        }
    }

    /// Riemannian volume of the manifold.
    pub fn volume(&self) -> f64 {
        match &self.kind {
            ModelKind::RoundSphere { radius } => 4.0 * PI * radius * radius,
            ModelKind::FlatTorus { periods } => periods.iter().product(),
            ModelKind::SurfaceOfRevolution { profile } => {
                let n = 4096;
                let step = profile.length() / n as f64;
                2.0 * PI * (0..n).map(|k| profile.eval(k as f64 * step).0).sum::<f64>() * step
            }
        }
    }

    /// Geodesic normal coordinates at `x0`, valid for `|y| < radius`.
    pub fn normal_coordinates(&self, x0: &ChartPoint, radius: f64) -> Result<NormalChart> {
        self.check_point(x0)?;
        let inj = self.injectivity_radius().value;
        if !(radius > 0.0) || radius > inj {
            return Err(Error::Domain(format!(
                "normal chart radius {radius} exceeds the injectivity radius {inj}"
            )));
        }
        let frame = match &self.kind {
            ModelKind::RoundSphere { .. } => {
                let p0 = self.sphere_unit(x0);
                // e1: projection of e_x (or e_y near ±e_x) onto the tangent plane
                let seed = if p0[0].abs() < 0.9 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                };
                let dot = dot3(seed, p0);
                let mut e1 = [seed[0] - dot * p0[0], seed[1] - dot * p0[1], seed[2] - dot * p0[2]];
                let nrm = norm3(e1);
                e1.iter_mut().for_each(|v| *v /= nrm);
                let e2 = cross3(p0, e1);
                NormalFrame::Sphere { p0, e1, e2 }
            }
            ModelKind::FlatTorus { .. } => NormalFrame::Torus,
            ModelKind::SurfaceOfRevolution { profile } => NormalFrame::Surface {
                scale: profile.eval(x0.coords[0]).0,
            },
        };
        Ok(NormalChart {
            model: self.clone(),
            origin: x0.clone(),
            radius,
            frame,
        })
    }
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Angle between unit vectors, accurate near 0 and π.
pub fn sphere_angle(p: [f64; 3], q: [f64; 3]) -> f64 {
    norm3(cross3(p, q)).atan2(dot3(p, q))
}

fn surface_injectivity_estimate(profile: &Profile) -> f64 {
    let n = 2048;
    let step = profile.length() / n as f64;
    let mut kmax: f64 = 0.0;
    let mut parallel = f64::INFINITY;
    let mut prev = profile.eval(0.0);
    for k in 1..=n {
        let cur = profile.eval(k as f64 * step);
        kmax = kmax.max(-cur.2 / cur.0);
        // closed parallels sit where ρ' changes sign
        if prev.1 * cur.1 <= 0.0 {
            parallel = parallel.min(PI * 0.5 * (prev.0 + cur.0));
        }
        prev = cur;
    }
    let conj = if kmax > 0.0 { PI / kmax.sqrt() } else { f64::INFINITY };
    conj.min(0.5 * profile.length()).min(parallel)
}

/// Discrete path-length minimization between two points of a surface of revolution.
fn surface_distance(profile: &Profile, x: &[f64], y: &[f64]) -> f64 {
    let period = [profile.length(), 2.0 * PI];
    let mut best = f64::INFINITY;
    for ks in -1i32..=1 {
        for kp in -1i32..=1 {
            let d = [
                (y[0] - x[0]).rem_euclid(period[0]) + ks as f64 * period[0],
                (y[1] - x[1]).rem_euclid(period[1]) + kp as f64 * period[1],
            ];
            let target = [x[0] + d[0], x[1] + d[1]];
            best = best.min(minimize_path(profile, [x[0], x[1]], target));
        }
    }
    best
}

fn path_length(profile: &Profile, pts: &[[f64; 2]]) -> f64 {
    pts.windows(2)
        .map(|w| {
            let ds = w[1][0] - w[0][0];
            let dp = w[1][1] - w[0][1];
            let r = profile.eval(0.5 * (w[0][0] + w[1][0])).0;
            (ds * ds + r * r * dp * dp).sqrt()
        })
        .sum()
}

fn minimize_path(profile: &Profile, a: [f64; 2], b: [f64; 2]) -> f64 {
    let m = 64;
    let mut pts: Vec<[f64; 2]> = (0..=m)
        .map(|k| {
            let t = k as f64 / m as f64;
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect();
    let mut len = path_length(profile, &pts);
    let mut step = 0.1 / m as f64;
    for _ in 0..2000 {
        let mut grad = vec![[0.0; 2]; m + 1];
        for i in 0..m {
            let (p, q) = (pts[i], pts[i + 1]);
            let ds = q[0] - p[0];
            let dp = q[1] - p[1];
            let (r, dr, _) = profile.eval(0.5 * (p[0] + q[0]));
            let l = (ds * ds + r * r * dp * dp).sqrt().max(1e-300);
            let half = 0.5 * r * dr * dp * dp / l;
            grad[i + 1][0] += ds / l + half;
            grad[i][0] += -ds / l + half;
            grad[i + 1][1] += r * r * dp / l;
            grad[i][1] -= r * r * dp / l;
        }
        let gn: f64 = grad[1..m]
            .iter()
            .map(|g| g[0] * g[0] + g[1] * g[1])
            .sum::<f64>()
            .sqrt();
        if gn < 1e-12 {
            break;
        }
        loop {
            let trial: Vec<[f64; 2]> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if i == 0 || i == m {
                        *p
                    } else {
                        [p[0] - step * grad[i][0], p[1] - step * grad[i][1]]
                    }
                })
                .collect();
            let tl = path_length(profile, &trial);
            if tl < len {
                pts = trial;
                len = tl;
                step *= 1.2;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                return len;
            }
        }
    }
    len
}

#[derive(Debug, Clone)]
enum NormalFrame {
    Sphere {
        p0: [f64; 3],
        e1: [f64; 3],
        e2: [f64; 3],
    },
    Torus,
    /// Orthonormal frame `(∂_s, ∂_φ / ρ(s0))`.
    Surface { scale: f64 },
}

/// Geodesic normal coordinates centred at a base point.
///
/// The frame at the origin is orthonormal, so covectors at the origin are
/// Euclidean in these coordinates.
#[derive(Debug, Clone)]
pub struct NormalChart {
    model: ManifoldModel,
    origin: ChartPoint,
    radius: f64,
    frame: NormalFrame,
}

impl NormalChart {
    pub fn origin(&self) -> &ChartPoint {
        &self.origin
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn model(&self) -> &ManifoldModel {
        &self.model
    }

    /// Embedded frame `(p0, e1, e2)` of a sphere chart: the unit origin and the
    /// directions of the first and second normal axes.
    pub fn sphere_frame(&self) -> Option<[[f64; 3]; 3]> {
        match &self.frame {
            NormalFrame::Sphere { p0, e1, e2 } => Some([*p0, *e1, *e2]),
            _ => None,
        }
    }

    /// Matrix `A` with `Aᵀ A = g(x0)`, mapping chart vectors at the origin to
    /// normal-coordinate vectors.
    pub fn origin_frame(&self) -> DMatrix<f64> {
        let n = self.model.dim();
        match &self.frame {
            NormalFrame::Sphere { e1, e2, .. } => {
                let r = self.model.sphere_radius().unwrap();
                let t = ManifoldModel::sphere_tangents(&self.origin);
                DMatrix::from_fn(2, 2, |a, i| {
                    let e = if a == 0 { *e1 } else { *e2 };
                    r * dot3(e, t[i])
                })
            }
            NormalFrame::Torus => DMatrix::identity(n, n),
            NormalFrame::Surface { scale } => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, *scale])),
        }
    }

    /// Chart covector at the origin for a normal-coordinate covector: `ξ = Aᵀ ω`.
    pub fn covector_at_origin(&self, omega: &[f64]) -> Vec<f64> {
        let a = self.origin_frame();
        let w = nalgebra::DVector::from_column_slice(omega);
        (a.transpose() * w).iter().cloned().collect()
    }

    /// Normal-coordinate covector at the origin for a chart covector: `ω = A⁻ᵀ ξ`.
    pub fn covector_to_origin_normal(&self, xi_at_origin: &[f64]) -> Vec<f64> {
        let a = self.origin_frame();
        let v = nalgebra::DVector::from_column_slice(xi_at_origin);
        let sol = a.transpose().lu().solve(&v).expect("non-degenerate frame");
        sol.iter().cloned().collect()
    }

    /// Normal coordinates of `x`.
    pub fn to_normal(&self, x: &ChartPoint) -> Result<Vec<f64>> {
        self.model.check_point(x)?;
        let y = match &self.frame {
            NormalFrame::Sphere { p0, e1, e2 } => {
                let r = self.model.sphere_radius().unwrap();
                let p = self.model.sphere_unit(x);
                let c = dot3(p, *p0);
                let w = [p[0] - c * p0[0], p[1] - c * p0[1], p[2] - c * p0[2]];
                let s = norm3(w);
                let d = s.atan2(c);
                let f = if s < 1e-8 { 1.0 + d * d / 6.0 } else { d / s };
                vec![r * f * dot3(w, *e1), r * f * dot3(w, *e2)]
            }
            NormalFrame::Torus => self
                .model
                .wrapped_difference(&self.origin.coords, &x.coords),
            NormalFrame::Surface { .. } => self.surface_log(&x.coords)?,
        };
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ny > self.radius * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "point at normal radius {ny} is outside the chart radius {}",
                self.radius
            )));
        }
        Ok(y)
    }

    /// Point with normal coordinates `y`.
    pub fn from_normal(&self, y: &[f64]) -> Result<ChartPoint> {
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ny > self.radius * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "normal radius {ny} is outside the chart radius {}",
                self.radius
            )));
        }
        match &self.frame {
            NormalFrame::Sphere { .. } => {
                let p = self.sphere_exp_unit(y);
                Ok(ManifoldModel::sphere_point(p))
            }
            NormalFrame::Torus => Ok(self.model.normalize(&ChartPoint::global(
                self.origin
                    .coords
                    .iter()
                    .zip(y)
                    .map(|(a, b)| a + b)
                    .collect(),
            ))),
            NormalFrame::Surface { .. } => {
                let c = self.surface_exp(y)?;
                Ok(self.model.normalize(&ChartPoint::global(c)))
            }
        }
    }

    fn sphere_exp_unit(&self, y: &[f64]) -> [f64; 3] {
        let NormalFrame::Sphere { p0, e1, e2 } = &self.frame else {
            unreachable!()
        };
        let r = self.model.sphere_radius().unwrap();
        let u = [y[0] / r, y[1] / r];
        let rr = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let sinc = if rr < 1e-8 { 1.0 - rr * rr / 6.0 } else { rr.sin() / rr };
        let c = rr.cos();
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = c * p0[k] + sinc * (u[0] * e1[k] + u[1] * e2[k]);
        }
        p
    }

    /// Pullback metric in normal coordinates at `y`.
    pub fn metric_in_normal(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.model.dim();
        match &self.frame {
            NormalFrame::Torus => Ok(DMatrix::identity(n, n)),
            NormalFrame::Sphere { p0, e1, e2 } => {
                let r = self.model.sphere_radius().unwrap();
                let u = [y[0] / r, y[1] / r];
                let rr = (u[0] * u[0] + u[1] * u[1]).sqrt();
                // derivatives of cos r and sin r / r with respect to u_a
                let (sinc, dsinc_over_r, sin_over_r) = if rr < 1e-4 {
                    (1.0 - rr * rr / 6.0, -1.0 / 3.0 + rr * rr / 30.0, 1.0 - rr * rr / 6.0)
                } else {
                    let s = rr.sin();
                    let c = rr.cos();
                    (s / rr, (rr * c - s) / rr.powi(3), s / rr)
                };
                let big_u = [
                    u[0] * e1[0] + u[1] * e2[0],
                    u[0] * e1[1] + u[1] * e2[1],
                    u[0] * e1[2] + u[1] * e2[2],
                ];
                let mut cols = [[0.0; 3]; 2];
                for a in 0..2 {
                    let ea = if a == 0 { *e1 } else { *e2 };
                    for k in 0..3 {
                        cols[a][k] = -sin_over_r * u[a] * p0[k]
                            + sinc * ea[k]
                            + dsinc_over_r * u[a] * big_u[k];
                    }
                }
                Ok(DMatrix::from_fn(2, 2, |a, b| dot3(cols[a], cols[b])))
            }
            NormalFrame::Surface { .. } => {
                let j = self.exp_jacobian(y)?;
                let x = self.surface_exp(y)?;
                let g = self.model.diag_metric(&x);
                let gm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(g.a));
                Ok(j.transpose() * gm * j)
            }
        }
    }

    /// Covector at `x` expressed in normal coordinates: `Dν(x)^{-T} ξ`.
    pub fn covector_to_normal(&self, x: &ChartPoint, xi: &[f64]) -> Result<Vec<f64>> {
        let dnu = self.normal_jacobian(x)?;
        let v = nalgebra::DVector::from_column_slice(xi);
        let sol = dnu
            .transpose()
            .lu()
            .solve(&v)
            .ok_or_else(|| Error::Domain("degenerate normal-coordinate Jacobian".into()))?;
        Ok(sol.iter().cloned().collect())
    }

    /// Point and chart covector for normal data `(y, η)`: `ξ = Dν(x)ᵀ η`.
    pub fn covector_from_normal(&self, y: &[f64], eta: &[f64]) -> Result<(ChartPoint, Vec<f64>)> {
        let x = self.from_normal(y)?;
        let dnu = self.normal_jacobian(&x)?;
        let e = nalgebra::DVector::from_column_slice(eta);
        let xi = dnu.transpose() * e;
        Ok((x, xi.iter().cloned().collect()))
    }

    /// `Dν(x)`: derivative of the normal coordinates in chart coordinates.
    pub fn normal_jacobian(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        self.model.check_point(x)?;
        let n = self.model.dim();
        match &self.frame {
            NormalFrame::Torus => Ok(DMatrix::identity(n, n)),
            NormalFrame::Surface { .. } => {
                let y = self.to_normal(x)?;
                let j = self.exp_jacobian(&y)?;
                j.try_inverse()
                    .ok_or_else(|| Error::Domain("singular exponential map".into()))
            }
            NormalFrame::Sphere { .. } => {
                let step = 1e-6;
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp.coords[i] += step;
                    xm.coords[i] -= step;
                    let yp = self.to_normal_unchecked(&xp);
                    let ym = self.to_normal_unchecked(&xm);
                    for a in 0..n {
                        m[(a, i)] = (yp[a] - ym[a]) / (2.0 * step);
                    }
                }
                Ok(m)
            }
        }
    }

    fn to_normal_unchecked(&self, x: &ChartPoint) -> Vec<f64> {
        let NormalFrame::Sphere { p0, e1, e2 } = &self.frame else {
            unreachable!()
        };
        let r = self.model.sphere_radius().unwrap();
        let p = self.model.sphere_unit(x);
        let c = dot3(p, *p0);
        let w = [p[0] - c * p0[0], p[1] - c * p0[1], p[2] - c * p0[2]];
        let s = norm3(w);
        let d = s.atan2(c);
        let f = if s < 1e-8 { 1.0 + d * d / 6.0 } else { d / s };
        vec![r * f * dot3(w, *e1), r * f * dot3(w, *e2)]
    }

    fn surface_exp(&self, y: &[f64]) -> Result<Vec<f64>> {
        let NormalFrame::Surface { scale } = self.frame else {
            unreachable!()
        };
        let ModelKind::SurfaceOfRevolution { profile } = self.model.kind() else {
            unreachable!()
        };
        let x0 = &self.origin.coords;
        let state = [x0[0], x0[1], y[0], y[1] / scale];
        let profile = profile.clone();
        let out = Dopri5::new(1e-13).integrate(
            move |_, s, d| {
                let (r, dr, _) = profile.eval(s[0]);
                d[0] = s[2];
                d[1] = s[3];
                d[2] = r * dr * s[3] * s[3];
                d[3] = -2.0 * dr / r * s[2] * s[3];
            },
            0.0,
            &state,
            1.0,
        )?;
        Ok(vec![out[0], out[1]])
    }

    fn exp_jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let step = 1e-6 * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let mut m = DMatrix::zeros(2, 2);
        for a in 0..2 {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[a] += step;
            ym[a] -= step;
            let xp = self.surface_exp(&yp)?;
            let xm = self.surface_exp(&ym)?;
            for i in 0..2 {
                m[(i, a)] = (xp[i] - xm[i]) / (2.0 * step);
            }
        }
        Ok(m)
    }

    fn surface_log(&self, x: &[f64]) -> Result<Vec<f64>> {
        let NormalFrame::Surface { scale } = self.frame else {
            unreachable!()
        };
        let d0 = self.model.wrapped_difference(&self.origin.coords, x);
        let mut y = vec![d0[0], d0[1] * scale];
        for _ in 0..50 {
            let cur = self.surface_exp(&y)?;
            let res = self.model.wrapped_difference(x, &cur);
            let err = res.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if err < 1e-13 {
                return Ok(y);
            }
            let j = self.exp_jacobian(&y)?;
            let r = nalgebra::DVector::from_vec(res);
            let dy = j
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::Domain("singular exponential map".into()))?;
            y[0] -= dy[0];
            y[1] -= dy[1];
        }
        let cur = self.surface_exp(&y)?;
        let res = self.model.wrapped_difference(x, &cur);
        if res.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-9 {
            Ok(y)
        } else {
            Err(Error::Domain("logarithm map did not converge".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bumpy_profile() -> Profile {
        Profile::from_fn(2.0 * PI, 256, |s| 1.0 + 0.3 * s.cos()).unwrap()
    }

    #[test]
    fn sphere_metric_values() {
        let s1 = ManifoldModel::round_sphere(1.0).unwrap();
        let g = s1.metric_at(&ChartPoint::spherical(PI / 2.0, 0.0)).unwrap();
        assert_relative_eq!(g, DMatrix::identity(2, 2), epsilon = 1e-15);
        let s2 = ManifoldModel::round_sphere(2.0).unwrap();
        let g = s2.metric_at(&ChartPoint::spherical(PI / 3.0, 1.0)).unwrap();
        assert_relative_eq!(g[(0, 0)], 4.0, epsilon = 1e-14);
        assert_relative_eq!(g[(1, 1)], 3.0, epsilon = 1e-14);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn out_of_chart_is_domain_error() {
        let s = ManifoldModel::round_sphere(1.0).unwrap();
        assert!(matches!(
            s.metric_at(&ChartPoint::spherical(0.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            s.metric_at(&ChartPoint::global(vec![1.0, 1.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sphere_christoffels() {
        let s = ManifoldModel::round_sphere(1.0).unwrap();
        let th: f64 = 0.7;
        let c = s.christoffel_at(&ChartPoint::spherical(th, 0.3)).unwrap();
        assert_relative_eq!(c.get(0, 1, 1), -th.sin() * th.cos(), epsilon = 1e-14);
        assert_relative_eq!(c.get(1, 0, 1), th.cos() / th.sin(), epsilon = 1e-14);
        assert_relative_eq!(c.get(1, 1, 0), th.cos() / th.sin(), epsilon = 1e-14);
        assert_eq!(c.get(0, 0, 0), 0.0);
    }

    #[test]
    fn torus_is_flat() {
        let t = ManifoldModel::flat_torus(vec![2.0 * PI; 3]).unwrap();
        let x = ChartPoint::global(vec![0.1, 0.2, 0.3]);
        assert_eq!(t.metric_at(&x).unwrap(), DMatrix::identity(3, 3));
        let c = t.christoffel_at(&x).unwrap();
        assert!(c.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn distances_and_injectivity() {
        let s = ManifoldModel::round_sphere(1.0).unwrap();
        let pole = ChartPoint::new(ChartId::PolarX, vec![PI / 2.0, PI / 2.0]);
        let eq = ChartPoint::spherical(PI / 2.0, 0.4);
        assert_relative_eq!(s.distance(&pole, &eq).unwrap().value, PI / 2.0, epsilon = 1e-14);
        let s2 = ManifoldModel::round_sphere(2.0).unwrap();
        let a = ChartPoint::spherical(0.4, 0.1);
        let b = ChartPoint::spherical(PI - 0.4, 0.1 + PI);
        assert_relative_eq!(s2.distance(&a, &b).unwrap().value, 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(s2.injectivity_radius().value, 2.0 * PI);
        assert_relative_eq!(s.injectivity_radius().value, PI);

        let t = ManifoldModel::flat_torus(vec![2.0 * PI, 4.0 * PI]).unwrap();
        assert_relative_eq!(t.injectivity_radius().value, PI);
        let t2 = ManifoldModel::flat_torus(vec![2.0 * PI, 2.0 * PI]).unwrap();
        let d = t2
            .distance(&ChartPoint::global(vec![0.0, 0.0]), &ChartPoint::global(vec![PI, 0.0]))
            .unwrap();
        assert_relative_eq!(d.value, PI, epsilon = 1e-15);
    }

    #[test]
    fn profile_spline_reproduces_smooth_profile() {
        let p = bumpy_profile();
        for &s in &[0.0, 0.37, 2.0, 5.9] {
            let (v, d, dd) = p.eval(s);
            assert_relative_eq!(v, 1.0 + 0.3 * s.cos(), epsilon = 1e-7);
            assert_relative_eq!(d, -0.3 * s.sin(), epsilon = 1e-5);
            assert_relative_eq!(dd, -0.3 * s.cos(), epsilon = 1e-3);
        }
    }

    #[test]
    fn surface_of_revolution_estimates() {
        let m = ManifoldModel::surface_of_revolution(bumpy_profile());
        let inj = m.injectivity_radius();
        assert!(inj.numerical);
        assert!(inj.value > 0.0 && inj.value <= PI);
        // along a meridian the distance is the arclength difference
        let d = m
            .distance(&ChartPoint::global(vec![0.2, 1.0]), &ChartPoint::global(vec![1.1, 1.0]))
            .unwrap();
        assert!(d.numerical);
        assert_relative_eq!(d.value, 0.9, epsilon = 1e-6);
    }

    #[test]
    fn sphere_normal_coordinates_at_pole() {
        let r = 2.0;
        let s = ManifoldModel::round_sphere(r).unwrap();
        let pole = ChartPoint::new(ChartId::PolarX, vec![PI / 2.0, PI / 2.0]);
        let nc = s.normal_coordinates(&pole, 0.5 * PI * r).unwrap();
        let (th, ph) = (0.4, 1.1);
        let y = nc.to_normal(&ChartPoint::spherical(th, ph)).unwrap();
        assert_relative_eq!(y[0], r * th * ph.cos(), epsilon = 1e-12);
        assert_relative_eq!(y[1], r * th * ph.sin(), epsilon = 1e-12);
        let g0 = nc.metric_in_normal(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(g0, DMatrix::identity(2, 2), epsilon = 1e-14);
        let a = nc.origin_frame();
        let gx = s.metric_at(&pole).unwrap();
        assert_relative_eq!(a.transpose() * a, gx, epsilon = 1e-12);
    }

    #[test]
    fn sphere_normal_metric_has_vanishing_first_derivatives() {
        let s = ManifoldModel::round_sphere(1.5).unwrap();
        let nc = s
            .normal_coordinates(&ChartPoint::spherical(1.0, 2.0), 1.0)
            .unwrap();
        let h = 1e-4;
        for a in 0..2 {
            let mut yp = [0.0; 2];
            let mut ym = [0.0; 2];
            yp[a] = h;
            ym[a] = -h;
            let d = (nc.metric_in_normal(&yp).unwrap() - nc.metric_in_normal(&ym).unwrap()) / (2.0 * h);
            assert!(d.amax() < 1e-8, "derivative {}", d.amax());
        }
    }

    #[test]
    fn normal_radius_beyond_injectivity_is_rejected() {
        let s = ManifoldModel::round_sphere(1.0).unwrap();
        assert!(matches!(
            s.normal_coordinates(&ChartPoint::spherical(1.0, 0.0), 4.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn surface_normal_coordinates_round_trip() {
        let m = ManifoldModel::surface_of_revolution(bumpy_profile());
        let x0 = ChartPoint::global(vec![0.5, 0.0]);
        let nc = m.normal_coordinates(&x0, 0.8).unwrap();
        let y = [0.3, -0.2];
        let x = nc.from_normal(&y).unwrap();
        let back = nc.to_normal(&x).unwrap();
        assert_relative_eq!(back[0], y[0], epsilon = 1e-9);
        assert_relative_eq!(back[1], y[1], epsilon = 1e-9);
        let g0 = nc.metric_in_normal(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(g0, DMatrix::identity(2, 2), epsilon = 1e-7);
    }

    #[test]
    fn chart_transfer_preserves_covector_norm() {
        let s = ManifoldModel::round_sphere(1.3).unwrap();
        let x = ChartPoint::spherical(0.3, 0.7);
        let xi = [0.4, -0.9];
        let (y, eta) = s.transfer(&x, &xi, ChartId::PolarX);
        let gx = s.diag_metric(&x.coords);
        let gy = s.diag_metric(&y.coords);
        let nx: f64 = (0..2).map(|i| xi[i] * xi[i] / gx.a[i]).sum();
        let ny: f64 = (0..2).map(|i| eta[i] * eta[i] / gy.a[i]).sum();
        assert_relative_eq!(nx, ny, epsilon = 1e-12);
        let (z, back) = s.transfer(&y, &eta, ChartId::PolarZ);
        assert_relative_eq!(z.coords[0], x.coords[0], epsilon = 1e-12);
        assert_relative_eq!(back[0], xi[0], epsilon = 1e-12);
        assert_relative_eq!(back[1], xi[1], epsilon = 1e-12);
    }

    fn any_sphere_point() -> impl Strategy<Value = ChartPoint> {
        (0.2f64..2.9, 0.0f64..std::f64::consts::TAU, prop::bool::ANY).prop_map(|(t, p, x)| {
            ChartPoint::new(if x { ChartId::PolarX } else { ChartId::PolarZ }, vec![t, p])
        })
    }

    proptest! {
        #[test]
        fn christoffels_match_metric_differences(x in any_sphere_point(), r in 0.5f64..3.0) {
            let s = ManifoldModel::round_sphere(r).unwrap();
            let c = s.christoffel_at(&x).unwrap();
            let h = 1e-5;
            let g = |c: &[f64]| s.diag_metric(c).a;
            let mut dg = [[0.0; 2]; 2];
            for k in 0..2 {
                let mut p = x.coords.clone();
                let mut m = x.coords.clone();
                p[k] += h;
                m[k] -= h;
                let (gp, gm) = (g(&p), g(&m));
                for i in 0..2 { dg[k][i] = (gp[i] - gm[i]) / (2.0 * h); }
            }
            let a = g(&x.coords);
            for k in 0..2 { for i in 0..2 { for j in 0..2 {
                let mut v = 0.0;
                if j == k { v += dg[i][k]; }
                if i == k { v += dg[j][k]; }
                if i == j { v -= dg[k][i]; }
                let fd = 0.5 * v / a[k];
                let an = c.get(k, i, j);
                prop_assert!((an - fd).abs() <= 1e-6 * (1.0 + an.abs()));
                prop_assert_eq!(c.get(k, i, j), c.get(k, j, i));
            }}}
            prop_assert!(a.iter().all(|v| *v > 0.0));
        }

        #[test]
        fn sphere_distance_matches_chordal_formula(a in any_sphere_point(), b in any_sphere_point()) {
            let s = ManifoldModel::round_sphere(1.0).unwrap();
            let d = s.distance(&a, &b).unwrap().value;
            let p = s.sphere_unit(&a);
            let q = s.sphere_unit(&b);
            let c = dot3(p, q).clamp(-1.0, 1.0);
            // arccos loses accuracy near 0 and π; compare there via the chord
            if c.abs() < 0.99 {
                prop_assert!((d - c.acos()).abs() < 1e-10);
            } else {
                let chord = ((p[0]-q[0]).powi(2) + (p[1]-q[1]).powi(2) + (p[2]-q[2]).powi(2)).sqrt();
                prop_assert!((d - 2.0 * (0.5 * chord).asin()).abs() < 1e-10);
            }
        }

        #[test]
        fn sphere_normal_chart_round_trip(
            base in any_sphere_point(),
            rho in 0.0f64..1.0,
            ang in 0.0f64..std::f64::consts::TAU,
            r in 0.5f64..4.0,
        ) {
            let s = ManifoldModel::round_sphere(r).unwrap();
            let nc = s.normal_coordinates(&base, 0.5 * PI * r).unwrap();
            let y = [rho * 0.5 * PI * r * ang.cos(), rho * 0.5 * PI * r * ang.sin()];
            let x = nc.from_normal(&y).unwrap();
            let back = nc.to_normal(&x).unwrap();
            prop_assert!((back[0] - y[0]).abs() < 1e-10 * r.max(1.0));
            prop_assert!((back[1] - y[1]).abs() < 1e-10 * r.max(1.0));
        }

        #[test]
        fn torus_normal_chart_round_trip(x0 in 0.0f64..6.0, y0 in 0.0f64..6.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let t = ManifoldModel::flat_torus(vec![2.0 * PI, 2.0 * PI]).unwrap();
            let nc = t.normal_coordinates(&ChartPoint::global(vec![x0, y0]), PI).unwrap();
            let y = [a * 0.5, b * 0.5];
            let back = nc.to_normal(&nc.from_normal(&y).unwrap()).unwrap();
            prop_assert!((back[0] - y[0]).abs() < 1e-12 && (back[1] - y[1]).abs() < 1e-12);
        }
    }
}
