//! Left semiclassical quantization on flat tori and on the polar chart of a
//! round sphere, defect-measure pairings, scans over symbol dictionaries and
//! the identities such pairings satisfy in the semiclassical limit.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::dynamics::{HamiltonianModel, PhasePoint, SymbolKind, TubeSpec};
use crate::error::{Error, Result};
use crate::manifold::{ChartPoint, ManifoldModel, ModelKind};
use crate::sht::{index, ShtGrid};
use crate::special::{assoc_legendre_column, smooth_plateau, smooth_step};

pub type PositionFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;
pub type MomentumFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;
pub type PhaseFn = Arc<dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync>;
pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Polar-angle clearance kept between sphere chart symbols and the poles.
pub const POLE_CLEARANCE: f64 = 0.02;

/// Relative spectral magnitude below which modes are skipped by direct sums.
const PRUNE: f64 = 1e-13;

/// One product term `b(x) c(ξ)`.
#[derive(Clone)]
pub struct SymbolTerm {
    pub position: PositionFn,
    pub momentum: MomentumFn,
}

#[derive(Clone)]
pub enum SymbolForm {
    /// `Σ b_j(x) c_j(ξ)`, applied by FFT multipliers.
    Separable(Vec<SymbolTerm>),
    /// `c(|ξ|_g)`, applied as a spectral multiplier.
    Radial(RadialFn),
    /// Arbitrary `a(x, ξ)`, applied by a direct sum over the active modes and
    /// taken to vanish outside the position box.
    General(PhaseFn),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothness {
    Smooth,
    /// Polynomial growth in `ξ`; no Nyquist check is possible.
    Polynomial,
    /// Smoothed indicator with the given transition width.
    Smoothed { width: f64 },
}

/// Phase-space symbol `a(x, ξ)` in chart coordinates.
#[derive(Clone)]
pub struct Symbol {
    id: String,
    form: SymbolForm,
    position_box: Option<Vec<(f64, f64)>>,
    momentum_bound: Option<f64>,
    class: Smoothness,
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let form = match &self.form {
            SymbolForm::Separable(t) => format!("separable({} terms)", t.len()),
            SymbolForm::Radial(_) => "radial".to_string(),
            SymbolForm::General(_) => "general".to_string(),
        };
        f.debug_struct("Symbol")
            .field("id", &self.id)
            .field("form", &form)
            .field("position_box", &self.position_box)
            .field("momentum_bound", &self.momentum_bound)
            .field("class", &self.class)
            .finish()
    }
}

impl Symbol {
    fn with_form(id: impl Into<String>, form: SymbolForm) -> Self {
        Self {
            id: id.into(),
            form,
            position_box: None,
            momentum_bound: None,
            class: Smoothness::Smooth,
        }
    }

    /// `a ≡ 1`.
    pub fn one() -> Self {
        Self::radial("1", |_| 1.0)
    }

    pub fn radial<F>(id: impl Into<String>, c: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::with_form(id, SymbolForm::Radial(Arc::new(c)))
    }

    pub fn separable(id: impl Into<String>, terms: Vec<SymbolTerm>) -> Self {
        Self::with_form(id, SymbolForm::Separable(terms))
    }

    pub fn product<B, C>(id: impl Into<String>, position: B, momentum: C) -> Self
    where
        B: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
        C: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::separable(
            id,
            vec![SymbolTerm {
                position: Arc::new(position),
                momentum: Arc::new(momentum),
            }],
        )
    }

    /// Multiplication by `b(x)`.
    pub fn position<B>(id: impl Into<String>, b: B) -> Self
    where
        B: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::product(id, b, |_| Complex64::new(1.0, 0.0))
    }

    /// Fourier multiplier `c(hD)`.
    pub fn momentum<C>(id: impl Into<String>, c: C) -> Self
    where
        C: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::product(id, |_| Complex64::new(1.0, 0.0), c)
    }

    pub fn general<F>(id: impl Into<String>, a: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self::with_form(id, SymbolForm::General(Arc::new(a)))
    }

    /// Smoothed indicator of the momentum box `|ξ_i − center_i| ≤ halfwidth`.
    pub fn momentum_box(id: impl Into<String>, center: Vec<f64>, halfwidth: f64, smoothing: f64) -> Self {
        let dim = center.len() as f64;
        let bound = center.iter().map(|c| c * c).sum::<f64>().sqrt() + (halfwidth + smoothing) * dim.sqrt();
        let c = center.clone();
        Self::momentum(id, move |xi: &[f64]| {
            let v: f64 = xi
                .iter()
                .zip(&c)
                .map(|(x, c)| smooth_plateau(x - c, halfwidth, smoothing))
                .product();
            Complex64::new(v, 0.0)
        })
        .with_momentum_bound(bound)
        .with_class(Smoothness::Smoothed { width: smoothing })
    }

    pub fn with_position_box(mut self, b: Vec<(f64, f64)>) -> Self {
        self.position_box = Some(b);
        self
    }

    /// Bound on `|ξ|_g` over the support.
    pub fn with_momentum_bound(mut self, bound: f64) -> Self {
        self.momentum_bound = Some(bound);
        self
    }

    pub fn with_class(mut self, class: Smoothness) -> Self {
        self.class = class;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn form(&self) -> &SymbolForm {
        &self.form
    }

    pub fn position_box(&self) -> Option<&[(f64, f64)]> {
        self.position_box.as_deref()
    }

    pub fn momentum_bound(&self) -> Option<f64> {
        self.momentum_bound
    }

    pub fn class(&self) -> Smoothness {
        self.class
    }

    pub fn eval(&self, model: &ManifoldModel, x: &[f64], xi: &[f64]) -> Complex64 {
        match &self.form {
            SymbolForm::Separable(terms) => terms.iter().map(|t| (t.position)(x) * (t.momentum)(xi)).sum(),
            SymbolForm::Radial(c) => Complex64::new(c(cometric_norm(model, x, xi)), 0.0),
            SymbolForm::General(a) => a(x, xi),
        }
    }

    /// Pointwise combination of symbols, as a general symbol.
    pub fn combine<F>(id: impl Into<String>, model: &ManifoldModel, parts: &[&Symbol], f: F) -> Self
    where
        F: Fn(&[Complex64]) -> Complex64 + Send + Sync + 'static,
    {
        let parts: Vec<Symbol> = parts.iter().map(|s| (*s).clone()).collect();
        let model = model.clone();
        let position_box = parts.iter().find_map(|p| p.position_box.clone());
        let bound = parts.iter().filter_map(|p| p.momentum_bound).reduce(f64::min);
        let mut out = Self::general(id, move |x: &[f64], xi: &[f64]| {
            let vals: Vec<Complex64> = parts.iter().map(|p| p.eval(&model, x, xi)).collect();
            f(&vals)
        });
        out.position_box = position_box;
        out.momentum_bound = bound;
        out
    }

    /// `a ∘ G_{−t}`, so that its pairing measures the flowed-forward measure.
    pub fn flowed(&self, ham: &HamiltonianModel, t: f64) -> Result<Symbol> {
        if t == 0.0 {
            return Ok(self.clone());
        }
        let scale = match ham.symbol() {
            SymbolKind::Laplace { scale } => Some(*scale),
            SymbolKind::General(_) => None,
        };
        if scale.is_some() {
            if let SymbolForm::Radial(_) = self.form {
                return Ok(self.clone().with_id(format!("{}∘G({})", self.id, -t)));
            }
        }
        let base = self.clone();
        let model = ham.manifold().clone();
        let id = format!("{}∘G({})", self.id, -t);
        let mut out = match (model.kind().clone(), scale) {
            (ModelKind::FlatTorus { periods }, Some(s)) => Symbol::general(id, move |x: &[f64], xi: &[f64]| {
                let y: Vec<f64> = x
                    .iter()
                    .zip(xi)
                    .zip(&periods)
                    .map(|((x, v), p)| (x - 2.0 * s * t * v).rem_euclid(*p))
                    .collect();
                base.eval(&model, &y, xi)
            }),
            (ModelKind::RoundSphere { radius }, Some(s)) => Symbol::general(id, move |x: &[f64], xi: &[f64]| {
                let (y, eta) = sphere_flow(radius, 2.0 * s, x, xi, -t);
                base.eval(&model, &y, &eta)
            }),
            _ => {
                let ham = ham.clone();
                Symbol::general(id, move |x: &[f64], xi: &[f64]| {
                    let q = PhasePoint::new(ChartPoint::global(x.to_vec()), xi.to_vec());
                    match ham.flow(&q, -t, 1e-10) {
                        Ok(e) => base.eval(&model, &e.base.coords, &e.covector),
                        Err(_) => Complex64::new(f64::NAN, f64::NAN),
                    }
                })
            }
        };
        out.momentum_bound = self.momentum_bound;
        out.class = self.class;
        out.position_box = match (ham.manifold().sphere_radius(), &self.position_box, self.momentum_bound, scale) {
            (Some(r), Some(b), Some(m), Some(s)) => {
                let reach = 2.0 * s.abs() * t.abs() * m / r;
                let lo = b[0].0 - reach;
                let hi = b[0].1 + reach;
                (lo > 0.0 && hi < PI).then(|| vec![(lo, hi), (0.0, 2.0 * PI)])
            }
            _ => None,
        };
        Ok(out)
    }

    /// Hamilton derivative `H_p a = ∂_ξ p · ∂_x a − ∂_x p · ∂_ξ a` by central differences.
    pub fn hamilton_derivative(&self, ham: &HamiltonianModel) -> Symbol {
        const STEP: f64 = 1e-5;
        let base = self.clone();
        let ham = ham.clone();
        let mut out = Symbol::general(format!("H_p({})", self.id), move |x: &[f64], xi: &[f64]| {
            let model = ham.manifold();
            let dxi_p = ham.dxi_p(x, xi);
            let dx_p = ham.dx_p(x, xi);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut y = x.to_vec();
            let mut eta = xi.to_vec();
            for k in 0..x.len() {
                y[k] = x[k] + STEP;
                let ap = base.eval(model, &y, xi);
                y[k] = x[k] - STEP;
                let am = base.eval(model, &y, xi);
                y[k] = x[k];
                eta[k] = xi[k] + STEP;
                let bp = base.eval(model, x, &eta);
                eta[k] = xi[k] - STEP;
                let bm = base.eval(model, x, &eta);
                eta[k] = xi[k];
                acc += dxi_p[k] * (ap - am) / (2.0 * STEP) - dx_p[k] * (bp - bm) / (2.0 * STEP);
            }
            acc
        });
        out.position_box = self.position_box.clone();
        out.momentum_bound = self.momentum_bound;
        out
    }
}

fn cometric_norm(model: &ManifoldModel, x: &[f64], xi: &[f64]) -> f64 {
    let a = model.diag_metric(x).a;
    xi.iter().zip(&a).map(|(v, ai)| v * v / ai).sum::<f64>().sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn polar_frame(theta: f64, phi: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    ([st * cp, st * sp, ct], [ct * cp, ct * sp, -st], [-sp, cp, 0.0])
}

/// Closed-form flow of `p = (rate/2)(|ξ|²_g − 1)` on a round sphere in polar
/// coordinates `(θ, φ)` about `e_z`.
pub fn sphere_flow(radius: f64, rate: f64, x: &[f64], xi: &[f64], t: f64) -> ([f64; 2], [f64; 2]) {
    let r2 = radius * radius;
    let (p, e_th, e_ph) = polar_frame(x[0], x[1]);
    let st = x[0].sin();
    let v_th = rate * xi[0] / r2;
    let v_ph = rate * xi[1] / (r2 * st);
    let v: [f64; 3] = std::array::from_fn(|i| v_th * e_th[i] + v_ph * e_ph[i]);
    let omega = dot3(v, v).sqrt();
    if omega == 0.0 {
        return ([x[0], x[1]], [xi[0], xi[1]]);
    }
    let (s, c) = (omega * t).sin_cos();
    let u: [f64; 3] = std::array::from_fn(|i| v[i] / omega);
    let q: [f64; 3] = std::array::from_fn(|i| c * p[i] + s * u[i]);
    let w: [f64; 3] = std::array::from_fn(|i| omega * (-s * p[i] + c * u[i]));
    let theta = q[2].clamp(-1.0, 1.0).acos();
    let phi = q[1].atan2(q[0]).rem_euclid(2.0 * PI);
    let (_, f_th, f_ph) = polar_frame(theta, phi);
    (
        [theta, phi],
        [r2 * dot3(w, f_th) / rate, r2 * theta.sin() * dot3(w, f_ph) / rate],
    )
}

/// Grid data of a wave field.
#[derive(Debug, Clone)]
pub enum FieldData {
    /// Values on a uniform grid of `[0, L_1) × … × [0, L_n)`, last axis fastest.
    Torus {
        periods: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<Complex64>,
    },
    /// Spherical-harmonic coefficients on a sphere of the given radius.
    Sphere {
        radius: f64,
        band: usize,
        coeffs: Vec<Complex64>,
    },
    /// Half-density values `ϕ u (R² sin θ)^{1/2}` on a uniform `(θ, φ)` grid of
    /// `[0, π) × [0, 2π)`.
    PolarChart {
        radius: f64,
        shape: [usize; 2],
        values: Vec<Complex64>,
    },
}

/// Wave field at semiclassical parameter `h`.
#[derive(Debug, Clone)]
pub struct WaveField {
    data: FieldData,
    h: f64,
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Invalid(format!("h must be positive, got {h}")));
    }
    Ok(())
}

impl WaveField {
    pub fn torus(periods: Vec<f64>, shape: Vec<usize>, values: Vec<Complex64>, h: f64) -> Result<Self> {
        check_h(h)?;
        if periods.len() != shape.len() || periods.is_empty() {
            return Err(Error::Invalid("periods and grid shape must have the same nonzero length".into()));
        }
        if periods.iter().any(|p| !(*p > 0.0)) || shape.contains(&0) {
            return Err(Error::Invalid("periods and grid sizes must be positive".into()));
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::Invalid("value count does not match the grid shape".into()));
        }
        for (p, n) in periods.iter().zip(&shape) {
            let nyquist = PI * *n as f64 / p;
            if nyquist * h < 1.0 {
                return Err(Error::Invalid(format!(
                    "grid of {n} points over {p} under-resolves h = {h} (Nyquist momentum {})",
                    nyquist * h
                )));
            }
        }
        Ok(Self {
            data: FieldData::Torus { periods, shape, values },
            h,
        })
    }

    pub fn torus_from_fn<F>(periods: Vec<f64>, shape: Vec<usize>, h: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64 + Sync,
    {
        let grid = BoxGrid::new(&periods, &shape);
        let values = (0..grid.len()).into_par_iter().map(|i| f(&grid.point(i))).collect();
        Self::torus(periods, shape, values, h)
    }

    /// L²-normalized combination `Σ c_j e^{i⟨k_j, x⟩}`, `k_j = 2π m_j / L`.
    pub fn torus_modes(periods: Vec<f64>, shape: Vec<usize>, h: f64, modes: &[(Vec<i64>, Complex64)]) -> Result<Self> {
        if modes.iter().any(|(m, _)| m.len() != periods.len()) {
            return Err(Error::Invalid("mode dimension does not match the torus".into()));
        }
        let p = periods.clone();
        let field = Self::torus_from_fn(periods, shape, h, |x| {
            modes
                .iter()
                .map(|(m, c)| {
                    let phase: f64 = p.iter().zip(m).zip(x).map(|((l, m), x)| 2.0 * PI * *m as f64 / l * x).sum();
                    c * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })?;
        field.normalized()
    }

    pub fn sphere(radius: f64, band: usize, coeffs: Vec<Complex64>, h: f64) -> Result<Self> {
        check_h(h)?;
        if !(radius > 0.0) {
            return Err(Error::Invalid("sphere radius must be positive".into()));
        }
        if coeffs.len() != (band + 1) * (band + 1) {
            return Err(Error::Invalid("coefficient count does not match the band".into()));
        }
        Ok(Self {
            data: FieldData::Sphere { radius, band, coeffs },
            h,
        })
    }

    /// Field given by grid values on the unit-sphere quadrature grid, scaled to `radius`.
    pub fn sphere_from_grid(radius: f64, grid: &ShtGrid, values: &[Complex64], h: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Invalid("value count does not match the quadrature grid".into()));
        }
        Self::sphere(radius, grid.band(), grid.analysis(values), h)
    }

    /// L²-normalized zonal harmonic of degree `l` about `e_z`.
    pub fn sphere_zonal(radius: f64, l: usize, h: f64) -> Result<Self> {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); (l + 1) * (l + 1)];
        coeffs[index(l, 0)] = Complex64::new(1.0 / radius, 0.0);
        Self::sphere(radius, l, coeffs, h)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn data(&self) -> &FieldData {
        &self.data
    }

    pub fn with_h(mut self, h: f64) -> Result<Self> {
        check_h(h)?;
        self.h = h;
        Ok(self)
    }

    pub fn norm_sq(&self) -> f64 {
        match &self.data {
            FieldData::Torus { periods, shape, values } => {
                let cell = BoxGrid::new(periods, shape).cell();
                cell * values.iter().map(|v| v.norm_sqr()).sum::<f64>()
            }
            FieldData::Sphere { radius, coeffs, .. } => radius * radius * coeffs.iter().map(|v| v.norm_sqr()).sum::<f64>(),
            FieldData::PolarChart { shape, values, .. } => {
                chart_box(*shape).cell() * values.iter().map(|v| v.norm_sqr()).sum::<f64>()
            }
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sq().sqrt();
        if !(n > 0.0) {
            return Err(Error::Invalid("cannot normalize a zero field".into()));
        }
        let mut out = self.clone();
        let scale = |v: &mut Vec<Complex64>| v.iter_mut().for_each(|z| *z /= n);
        match &mut out.data {
            FieldData::Torus { values, .. } => scale(values),
            FieldData::Sphere { coeffs, .. } => scale(coeffs),
            FieldData::PolarChart { values, .. } => scale(values),
        }
        Ok(out)
    }

    /// `‖(−h²Δ − 1)u‖_{L²}` from the spectral representation.
    pub fn residual_norm(&self) -> Result<f64> {
        self.spectral_norm(|k2| (self.h * self.h * k2 - 1.0).powi(2))
    }

    /// `‖Op_h(1 − 1_{|ξ| ≤ cutoff}) u‖`: spectral mass above the cutoff.
    pub fn tail_norm(&self, cutoff: f64) -> Result<f64> {
        self.spectral_norm(|k2| if self.h * k2.sqrt() > cutoff { 1.0 } else { 0.0 })
    }

    /// `(Σ w(|k|²)|û_k|²)^{1/2}` with `|k|²` the Laplace eigenvalue of the mode.
    fn spectral_norm<W: Fn(f64) -> f64>(&self, weight: W) -> Result<f64> {
        match &self.data {
            FieldData::Torus { periods, shape, values } => {
                let grid = BoxGrid::new(periods, shape);
                let hat = grid.forward(values);
                let s: f64 = hat
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let k2: f64 = grid.wave(i).iter().map(|k| k * k).sum();
                        weight(k2) * v.norm_sqr()
                    })
                    .sum();
                Ok((grid.volume() * s).sqrt())
            }
            FieldData::Sphere { radius, band, coeffs } => {
                let mut s = 0.0;
                for l in 0..=*band {
                    let k2 = (l * (l + 1)) as f64 / (radius * radius);
                    let w = weight(k2);
                    for m in -(l as i64)..=(l as i64) {
                        s += w * coeffs[index(l, m)].norm_sqr();
                    }
                }
                Ok(radius * s.sqrt())
            }
            FieldData::PolarChart { .. } => Err(Error::Invalid(
                "chart fields carry no global spectral representation".into(),
            )),
        }
    }
}

/// Uniform periodic grid on a box `[0, L_1) × … × [0, L_n)`.
struct BoxGrid {
    periods: Vec<f64>,
    shape: Vec<usize>,
}

fn chart_box(shape: [usize; 2]) -> BoxGrid {
    BoxGrid::new(&[PI, 2.0 * PI], &shape)
}

impl BoxGrid {
    fn new(periods: &[f64], shape: &[usize]) -> Self {
        Self {
            periods: periods.to_vec(),
            shape: shape.to_vec(),
        }
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }

    fn volume(&self) -> f64 {
        self.periods.iter().product()
    }

    fn cell(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    fn unravel(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for a in (0..self.shape.len()).rev() {
            idx[a] = i % self.shape[a];
            i /= self.shape[a];
        }
        idx
    }

    fn point(&self, i: usize) -> Vec<f64> {
        self.unravel(i)
            .iter()
            .zip(&self.periods)
            .zip(&self.shape)
            .map(|((j, p), n)| p * *j as f64 / *n as f64)
            .collect()
    }

    /// Angular wave vector of DFT index `i`.
    fn wave(&self, i: usize) -> Vec<f64> {
        self.unravel(i)
            .iter()
            .zip(&self.periods)
            .zip(&self.shape)
            .map(|((j, p), n)| {
                let s = if 2 * j < *n { *j as i64 } else { *j as i64 - *n as i64 };
                2.0 * PI * s as f64 / p
            })
            .collect()
    }

    /// Largest representable `|k_i|` per axis.
    fn nyquist(&self) -> Vec<f64> {
        self.periods
            .iter()
            .zip(&self.shape)
            .map(|(p, n)| 2.0 * PI * (*n / 2) as f64 / p)
            .collect()
    }

    fn fft(&self, values: &mut [Complex64], inverse: bool) {
        let mut planner = FftPlanner::<f64>::new();
        let total = self.len();
        for (axis, &n) in self.shape.iter().enumerate() {
            let plan = if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            };
            let stride: usize = self.shape[axis + 1..].iter().product();
            let outer = total / (n * stride);
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = values[base + j * stride];
                    }
                    plan.process(&mut line);
                    for (j, v) in line.iter().enumerate() {
                        values[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// Fourier coefficients `û_k` with `u = Σ û_k e^{i⟨k, x⟩}`.
    fn forward(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut out = values.to_vec();
        self.fft(&mut out, false);
        let n = self.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    fn inverse(&self, hat: &[Complex64]) -> Vec<Complex64> {
        let mut out = hat.to_vec();
        self.fft(&mut out, true);
        out
    }

    /// Left quantization `Σ_k a(x, hk) û_k e^{i⟨k, x⟩}` on the grid.
    /// `reach[i]` converts the symbol's `|ξ|_g` bound into a bound on `|ξ_i|`;
    /// axes with `None` are not checked.
    fn apply(
        &self,
        a: &Symbol,
        model: &ManifoldModel,
        values: &[Complex64],
        h: f64,
        reach: &[Option<f64>],
    ) -> Result<Vec<Complex64>> {
        if let Some(bound) = a.momentum_bound {
            for (k, r) in self.nyquist().iter().zip(reach) {
                if let Some(r) = r {
                    if h * k < r * bound {
                        return Err(Error::Nyquist(format!(
                            "symbol '{}' reaches |ξ_i| = {} but the grid resolves only {}",
                            a.id,
                            r * bound,
                            h * k
                        )));
                    }
                }
            }
        }
        let hat = self.forward(values);
        let out: Vec<Complex64> = match &a.form {
            SymbolForm::Radial(c) => {
                let scaled: Vec<Complex64> = hat
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let xi: Vec<f64> = self.wave(i).iter().map(|k| h * k).collect();
                        v * c(cometric_norm(model, &self.point(0), &xi))
                    })
                    .collect();
                self.inverse(&scaled)
            }
            SymbolForm::Separable(terms) => {
                let mut acc = vec![Complex64::new(0.0, 0.0); self.len()];
                for t in terms {
                    let scaled: Vec<Complex64> = hat
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            let xi: Vec<f64> = self.wave(i).iter().map(|k| h * k).collect();
                            v * (t.momentum)(&xi)
                        })
                        .collect();
                    let part = self.inverse(&scaled);
                    acc.par_iter_mut().enumerate().for_each(|(i, o)| {
                        *o += (t.position)(&self.point(i)) * part[i];
                    });
                }
                acc
            }
            SymbolForm::General(f) => {
                let peak = hat.iter().map(|v| v.norm()).fold(0.0, f64::max);
                let active: Vec<(Vec<f64>, Complex64)> = hat
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.norm() > PRUNE * peak)
                    .map(|(i, v)| (self.wave(i), *v))
                    .collect();
                let inside = |x: &[f64]| {
                    a.position_box
                        .as_ref()
                        .is_none_or(|b| x.iter().zip(b).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi))
                };
                (0..self.len())
                    .into_par_iter()
                    .map(|i| {
                        let x = self.point(i);
                        if !inside(&x) {
                            return Complex64::new(0.0, 0.0);
                        }
                        active
                            .iter()
                            .map(|(k, v)| {
                                let xi: Vec<f64> = k.iter().map(|k| h * k).collect();
                                let phase: f64 = k.iter().zip(&x).map(|(k, x)| k * x).sum();
                                f(&x, &xi) * v * Complex64::from_polar(1.0, phase)
                            })
                            .sum()
                    })
                    .collect()
            }
        };
        if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Invalid(format!("symbol '{}' produced non-finite values", a.id)));
        }
        Ok(out)
    }
}

/// Polar-angle window `[lo, hi]` plus the taper margin of the chart bump.
fn chart_window(a: &Symbol) -> Result<(f64, f64, f64)> {
    let b = a.position_box.as_ref().ok_or_else(|| {
        Error::Domain(format!(
            "symbol '{}' needs a position box inside the polar chart to be paired on a sphere",
            a.id
        ))
    })?;
    let (lo, hi) = b[0];
    if !(lo > 0.0) || !(hi < PI) || !(lo < hi) {
        return Err(Error::Domain(format!(
            "polar window [{lo}, {hi}] of symbol '{}' must lie inside (0, π)",
            a.id
        )));
    }
    let margin = 0.1_f64.min(0.5 * lo).min(0.5 * (PI - hi));
    Ok((lo, hi, margin))
}

fn round_up(n: usize, k: usize) -> usize {
    n.div_ceil(k) * k
}

/// Half-density chart samples of `ϕ u` with `ϕ ≡ 1` on `[lo, hi]`.
fn chart_samples(radius: f64, band: usize, coeffs: &[Complex64], window: (f64, f64, f64), min_rows: usize) -> ([usize; 2], Vec<Complex64>) {
    let (lo, hi, margin) = window;
    let peak = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mmax = (0..=band)
        .flat_map(|l| (-(l as i64)..=(l as i64)).map(move |m| (l, m)))
        .filter(|(l, m)| coeffs[index(*l, *m)].norm() > PRUNE * peak)
        .map(|(_, m)| m.unsigned_abs() as usize)
        .max()
        .unwrap_or(0);
    let nth = round_up((4 * band + 128).max(min_rows), 32);
    let nph = round_up(4 * mmax + 64, 16);
    let bump = |t: f64| smooth_step((t - lo + margin) / margin) * smooth_step((hi + margin - t) / margin);
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(nph);
    let rows: Vec<Vec<Complex64>> = (0..nth)
        .into_par_iter()
        .map(|j| {
            let theta = PI * j as f64 / nth as f64;
            let phi_w = bump(theta);
            let mut row = vec![Complex64::new(0.0, 0.0); nph];
            if phi_w == 0.0 {
                return row;
            }
            let x = theta.cos();
            for am in 0..=mmax {
                let p = assoc_legendre_column(band, am, x);
                let signs: &[i64] = if am == 0 { &[1] } else { &[1, -1] };
                for sign in signs {
                    let m = sign * am as i64;
                    let s: Complex64 = p.iter().enumerate().map(|(i, pv)| coeffs[index(am + i, m)] * *pv).sum();
                    row[m.rem_euclid(nph as i64) as usize] += s;
                }
            }
            ifft.process(&mut row);
            let f = phi_w * radius * theta.sin().sqrt();
            row.iter_mut().for_each(|v| *v *= f);
            row
        })
        .collect();
    ([nth, nph], rows.concat())
}

/// Polar rows needed to resolve the symbol's momentum reach `R·|ξ|_g / h`.
fn chart_rows(a: &Symbol, radius: f64, h: f64) -> usize {
    a.momentum_bound.map_or(0, |m| (radius * m / h).ceil() as usize + 64)
}

/// `Op_h(a) u`. Sphere fields become chart fields unless `a` is radial.
pub fn quantize_apply(a: &Symbol, u: &WaveField, model: &ManifoldModel) -> Result<WaveField> {
    let h = u.h;
    let data = match &u.data {
        FieldData::Torus { periods, shape, values } => {
            check_model_torus(model, periods)?;
            let grid = BoxGrid::new(periods, shape);
            FieldData::Torus {
                periods: periods.clone(),
                shape: shape.clone(),
                values: grid.apply(a, model, values, h, &vec![Some(1.0); periods.len()])?,
            }
        }
        FieldData::Sphere { radius, band, coeffs } => {
            check_model_sphere(model, *radius)?;
            match &a.form {
                SymbolForm::Radial(c) => {
                    let mut out = coeffs.clone();
                    for l in 0..=*band {
                        let w = c(h * ((l * (l + 1)) as f64).sqrt() / radius);
                        for m in -(l as i64)..=(l as i64) {
                            out[index(l, m)] *= w;
                        }
                    }
                    FieldData::Sphere {
                        radius: *radius,
                        band: *band,
                        coeffs: out,
                    }
                }
                _ => {
                    let (shape, w) = chart_samples(*radius, *band, coeffs, chart_window(a)?, chart_rows(a, *radius, h));
                    FieldData::PolarChart {
                        radius: *radius,
                        shape,
                        values: chart_box(shape).apply(a, model, &w, h, &[Some(*radius), None])?,
                    }
                }
            }
        }
        FieldData::PolarChart { radius, shape, values } => {
            check_model_sphere(model, *radius)?;
            FieldData::PolarChart {
                radius: *radius,
                shape: *shape,
                values: chart_box(*shape).apply(a, model, values, h, &[Some(*radius), None])?,
            }
        }
    };
    Ok(WaveField { data, h })
}

fn check_model_torus(model: &ManifoldModel, periods: &[f64]) -> Result<()> {
    match model.periods() {
        Some(p) if p.len() == periods.len() && p.iter().zip(periods).all(|(a, b)| (a - b).abs() <= 1e-12 * a) => Ok(()),
        _ => Err(Error::Invalid("torus field does not match the model periods".into())),
    }
}

fn check_model_sphere(model: &ManifoldModel, radius: f64) -> Result<()> {
    match model.sphere_radius() {
        Some(r) if (r - radius).abs() <= 1e-12 * r => Ok(()),
        _ => Err(Error::Invalid("sphere field does not match the model radius".into())),
    }
}

/// `⟨Op_h(a) u, u⟩_{L²}`.
pub fn defect_pairing(a: &Symbol, u: &WaveField, model: &ManifoldModel) -> Result<Complex64> {
    let h = u.h;
    match &u.data {
        FieldData::Torus { periods, shape, values } => {
            check_model_torus(model, periods)?;
            let grid = BoxGrid::new(periods, shape);
            let v = grid.apply(a, model, values, h, &vec![Some(1.0); periods.len()])?;
            Ok(grid.cell() * values.iter().zip(&v).map(|(u, v)| u.conj() * v).sum::<Complex64>())
        }
        FieldData::Sphere { radius, band, coeffs } => {
            check_model_sphere(model, *radius)?;
            if let SymbolForm::Radial(c) = &a.form {
                let mut s = Complex64::new(0.0, 0.0);
                for l in 0..=*band {
                    let w = c(h * ((l * (l + 1)) as f64).sqrt() / radius);
                    for m in -(l as i64)..=(l as i64) {
                        s += w * coeffs[index(l, m)].norm_sqr();
                    }
                }
                return Ok(radius * radius * s);
            }
            let (shape, w) = chart_samples(*radius, *band, coeffs, chart_window(a)?, chart_rows(a, *radius, h));
            chart_pairing(a, model, *radius, shape, &w, h)
        }
        FieldData::PolarChart { radius, shape, values } => {
            check_model_sphere(model, *radius)?;
            chart_pairing(a, model, *radius, *shape, values, h)
        }
    }
}

fn chart_pairing(a: &Symbol, model: &ManifoldModel, radius: f64, shape: [usize; 2], w: &[Complex64], h: f64) -> Result<Complex64> {
    let grid = chart_box(shape);
    let v = grid.apply(a, model, w, h, &[Some(radius), None])?;
    Ok(grid.cell() * w.iter().zip(&v).map(|(u, v)| u.conj() * v).sum::<Complex64>())
}

/// Smoothed tube indicator about the flowout of a fiber direction at the pole
/// `e_z` of a round sphere, in `PolarZ` coordinates. Smoothing width is `r/4`.
pub fn tube_symbol(model: &ManifoldModel, tube: &TubeSpec) -> Result<Symbol> {
    let radius = model
        .sphere_radius()
        .ok_or_else(|| Error::Domain("tube symbols are built on round spheres".into()))?;
    model.check_point(&tube.base)?;
    let p = model.sphere_unit(&tube.base);
    if (p[2] - 1.0).abs() > 1e-12 {
        return Err(Error::Domain("tube symbols are built about the pole e_z of the field frame".into()));
    }
    if tube.center.len() != 2 {
        return Err(Error::Invalid("tube center must be a direction in the 2-dimensional fiber".into()));
    }
    let chart = model.normal_coordinates(&tube.base, 0.5 * model.injectivity_radius().value)?;
    let [_, e1, e2] = chart
        .sphere_frame()
        .ok_or_else(|| Error::Domain("normal chart has no ambient frame".into()))?;
    let dir: [f64; 3] = std::array::from_fn(|i| tube.center[0] * e1[i] + tube.center[1] * e2[i]);
    let alpha = dir[1].atan2(dir[0]);
    let r = tube.radius.min(PI);
    let w = 0.25 * r;
    let top = (2.0 * tube.halfwidth / radius).min(PI - POLE_CLEARANCE);
    let lo = POLE_CLEARANCE;
    let hi = (top + w).min(PI - POLE_CLEARANCE);
    let polar = move |t: f64| smooth_step((t - lo) / w) * (1.0 - smooth_step((t - top) / w));
    let arc = move |phi: f64, center: f64| {
        let d = (phi - center + PI).rem_euclid(2.0 * PI) - PI;
        smooth_step((r - d.abs()) / w + 0.5)
    };
    let angular = move |xi: &[f64]| smooth_plateau(xi[1] / radius, w, w);
    let heaviside = move |s: f64| smooth_step(s / (radius * w) + 0.5);
    let terms = vec![
        SymbolTerm {
            position: Arc::new(move |x: &[f64]| Complex64::new(polar(x[0]) * arc(x[1], alpha), 0.0)),
            momentum: Arc::new(move |xi: &[f64]| Complex64::new(angular(xi) * heaviside(xi[0]), 0.0)),
        },
        SymbolTerm {
            position: Arc::new(move |x: &[f64]| Complex64::new(polar(x[0]) * arc(x[1], alpha + PI), 0.0)),
            momentum: Arc::new(move |xi: &[f64]| Complex64::new(angular(xi) * heaviside(-xi[0]), 0.0)),
        },
    ];
    Ok(Symbol::separable(format!("tube({alpha:.6},{r:.6})"), terms)
        .with_position_box(vec![(lo, hi), (0.0, 2.0 * PI)])
        .with_class(Smoothness::Smoothed { width: w }))
}

/// `count` tubes about equally spaced directions at the pole, forming a
/// partition of unity over the flowout.
pub fn pole_tube_dictionary(model: &ManifoldModel, count: usize, halfwidth: f64) -> Result<Vec<TubeSpec>> {
    if count == 0 {
        return Err(Error::Invalid("tube count must be positive".into()));
    }
    let base = ManifoldModel::sphere_point([0.0, 0.0, 1.0]);
    let chart = model.normal_coordinates(&base, 0.5 * model.injectivity_radius().value)?;
    let [_, e1, e2] = chart
        .sphere_frame()
        .ok_or_else(|| Error::Domain("pole tubes need a round sphere".into()))?;
    (0..count)
        .map(|j| {
            let alpha = 2.0 * PI * j as f64 / count as f64;
            let d = [alpha.cos(), alpha.sin(), 0.0];
            TubeSpec::new(base.clone(), vec![dot3(d, e1), dot3(d, e2)], PI / count as f64, halfwidth)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum DictionaryEntry {
    Symbol(Symbol),
    Tube(TubeSpec),
}

impl DictionaryEntry {
    fn resolve(&self, model: &ManifoldModel) -> Result<Symbol> {
        match self {
            Self::Symbol(s) => Ok(s.clone()),
            Self::Tube(t) => tube_symbol(model, t),
        }
    }
}

/// Linear fit `value ≈ limit + slope·h` over the three finest `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrapolation {
    pub limit: Complex64,
    pub fit_residual: f64,
    /// The fit residual stays within 10% of the limit.
    pub cauchy: bool,
}

pub fn extrapolate(samples: &[(f64, Complex64)]) -> Extrapolation {
    let mut s: Vec<(f64, Complex64)> = samples.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    s.truncate(3);
    let (limit, fit_residual) = match s.len() {
        0 => (Complex64::new(0.0, 0.0), 0.0),
        1 => (s[0].1, 0.0),
        _ => {
            let n = s.len() as f64;
            let mh = s.iter().map(|p| p.0).sum::<f64>() / n;
            let mv = s.iter().map(|p| p.1).sum::<Complex64>() / n;
            let sxx: f64 = s.iter().map(|p| (p.0 - mh).powi(2)).sum();
            let sxy: Complex64 = s.iter().map(|p| (p.1 - mv) * (p.0 - mh)).sum();
            let slope = if sxx > 0.0 { sxy / sxx } else { Complex64::new(0.0, 0.0) };
            let limit = mv - slope * mh;
            let res = s.iter().map(|p| (p.1 - limit - slope * p.0).norm()).fold(0.0, f64::max);
            (limit, res)
        }
    };
    Extrapolation {
        limit,
        fit_residual,
        cauchy: fit_residual <= 0.1 * limit.norm().max(1e-8),
    }
}

#[derive(Debug, Clone)]
pub struct DefectEntry {
    pub id: String,
    /// `(h, ⟨Op_h(a) u_h, u_h⟩)` in the order of the family.
    pub samples: Vec<(f64, Complex64)>,
    pub extrapolation: Extrapolation,
}

#[derive(Debug, Clone)]
pub struct DefectEstimate {
    pub entries: Vec<DefectEntry>,
}

impl DefectEstimate {
    pub fn entry(&self, id: &str) -> Option<&DefectEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Pairings of every dictionary symbol against every field of the family.
pub fn defect_scan(family: &[WaveField], dictionary: &[DictionaryEntry], model: &ManifoldModel) -> Result<DefectEstimate> {
    let symbols: Vec<Symbol> = dictionary.iter().map(|d| d.resolve(model)).collect::<Result<_>>()?;
    let entries = symbols
        .par_iter()
        .map(|a| {
            let samples = family
                .iter()
                .map(|u| Ok((u.h, defect_pairing(a, u, model)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(DefectEntry {
                id: a.id.clone(),
                extrapolation: extrapolate(&samples),
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DefectEstimate { entries })
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    /// Per dictionary entry: extrapolated `|⟨Op(a)u,u⟩ − ⟨Op(a∘G_{−t})u,u⟩|`.
    pub entries: Vec<(String, f64)>,
    /// Per `h`: largest raw discrepancy over the dictionary.
    pub per_h: Vec<(f64, f64)>,
    pub max_discrepancy: f64,
}

/// Compare pairings of each symbol with those of its flowed copy.
pub fn invariance_check(family: &[WaveField], dictionary: &[Symbol], ham: &HamiltonianModel, t: f64) -> Result<InvarianceReport> {
    let model = ham.manifold();
    let mut all: Vec<DictionaryEntry> = dictionary.iter().cloned().map(DictionaryEntry::Symbol).collect();
    for a in dictionary {
        all.push(DictionaryEntry::Symbol(a.flowed(ham, t)?));
    }
    let est = defect_scan(family, &all, model)?;
    let k = dictionary.len();
    let mut entries = Vec::with_capacity(k);
    let mut per_h: Vec<(f64, f64)> = family.iter().map(|u| (u.h, 0.0)).collect();
    for j in 0..k {
        let (a, b) = (&est.entries[j], &est.entries[j + k]);
        let diff: Vec<(f64, Complex64)> = a.samples.iter().zip(&b.samples).map(|(p, q)| (p.0, p.1 - q.1)).collect();
        for (slot, d) in per_h.iter_mut().zip(&diff) {
            slot.1 = slot.1.max(d.1.norm());
        }
        entries.push((a.id.clone(), extrapolate(&diff).limit.norm()));
    }
    let max_discrepancy = entries.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(InvarianceReport {
        entries,
        per_h,
        max_discrepancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingResiduals {
    /// `|‖Op(a)Op(q)u‖² − ⟨Op(|a|²|q|²)u, u⟩|`.
    pub product: f64,
    /// `|h^{-2}‖Op(a) P Op(q)u‖² − ⟨Op(|a|²|H_p q|²)u, u⟩|` with `P = −h²Δ − 1`.
    pub commutator: f64,
}

/// Both squared-norm identities for a torus field.
pub fn pairing_identities_check(a: &Symbol, q: &Symbol, u: &WaveField, ham: &HamiltonianModel) -> Result<PairingResiduals> {
    let model = ham.manifold();
    if !matches!(u.data, FieldData::Torus { .. }) || !matches!(model.kind(), ModelKind::FlatTorus { .. }) {
        return Err(Error::Domain("pairing identities are evaluated on flat tori".into()));
    }
    if !matches!(ham.symbol(), SymbolKind::Laplace { scale } if *scale == 1.0) {
        return Err(Error::Domain("pairing identities use p = |ξ|² − 1".into()));
    }
    let h = u.h;
    let qu = quantize_apply(q, u, model)?;
    let aqu = quantize_apply(a, &qu, model)?;
    let lhs1 = aqu.norm_sq();
    let weight1 = Symbol::combine("|a|²|q|²", model, &[a, q], |v| Complex64::new(v[0].norm_sqr() * v[1].norm_sqr(), 0.0));
    let rhs1 = defect_pairing(&weight1, u, model)?.re;
    let p = Symbol::radial("p", |r| r * r - 1.0).with_class(Smoothness::Polynomial);
    let pqu = quantize_apply(&p, &qu, model)?;
    let apqu = quantize_apply(a, &pqu, model)?;
    let lhs2 = apqu.norm_sq() / (h * h);
    let hq = q.hamilton_derivative(ham);
    let weight2 = Symbol::combine("|a|²|H_p q|²", model, &[a, &hq], |v| {
        Complex64::new(v[0].norm_sqr() * v[1].norm_sqr(), 0.0)
    });
    let rhs2 = defect_pairing(&weight2, u, model)?.re;
    Ok(PairingResiduals {
        product: (lhs1 - rhs1).abs(),
        commutator: (lhs2 - rhs2).abs(),
    })
}

/// `‖Op_h(1 − 1_{|ξ| ≤ cutoff}) u‖`.
pub fn compact_microlocalization_check(u: &WaveField, cutoff: f64) -> Result<f64> {
    u.tail_norm(cutoff)
}

/// Both sides of the one-dimensional band-limited sup-norm inequality
/// `‖v‖²_∞ ≤ C h^{-1}(ε‖v‖² + ε^{1−2l}‖(hD)^l v‖²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevMargin {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub constant: f64,
}

/// Calibrated constant `c_l/π`, `c_l = ∫_R ds/(1 + s^{2l})`.
pub fn sobolev_constant(l: usize) -> f64 {
    let c = (PI / l as f64) / (PI / (2.0 * l as f64)).sin();
    c / PI
}

/// `v` holds uniform samples of a band-limited field on `[0, length)`.
///
/// The calibrated constant is valid for `ε ≥ 2πh/(c_l · length)`, where the
/// lattice sum over frequencies is within a factor 2 of its integral.
pub fn sobolev_linfty_check(v: &[Complex64], length: f64, h: f64, eps: f64, l: usize) -> Result<SobolevMargin> {
    check_h(h)?;
    if l == 0 {
        return Err(Error::Domain("the derivative order must exceed (n − 1)/2 = 1/2".into()));
    }
    if !(eps > 0.0) || !(length > 0.0) || v.is_empty() {
        return Err(Error::Invalid("ε, the length and the sample count must be positive".into()));
    }
    let constant = sobolev_constant(l);
    let cl = constant * PI;
    if eps < 2.0 * PI * h / (cl * length) {
        return Err(Error::Domain(format!(
            "ε = {eps} is below the calibrated range 2πh/(c_l L) = {}",
            2.0 * PI * h / (cl * length)
        )));
    }
    let grid = BoxGrid::new(&[length], &[v.len()]);
    let hat = grid.forward(v);
    let mut norm = 0.0;
    let mut deriv = 0.0;
    for (i, c) in hat.iter().enumerate() {
        let k = grid.wave(i)[0];
        norm += c.norm_sqr();
        deriv += (h * k).abs().powi(2 * l as i32) * c.norm_sqr();
    }
    norm *= length;
    deriv *= length;
    // sup of the trigonometric interpolant, 8× oversampled
    let n = v.len();
    let fine = 8 * n;
    let mut padded = vec![Complex64::new(0.0, 0.0); fine];
    for (i, c) in hat.iter().enumerate() {
        let s = if 2 * i < n { i as i64 } else { i as i64 - n as i64 };
        padded[s.rem_euclid(fine as i64) as usize] = *c;
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(fine).process(&mut padded);
    let sup = padded.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lhs = sup * sup;
    let rhs = constant / h * (eps * norm + eps.powi(1 - 2 * l as i32) * deriv);
    Ok(SobolevMargin {
        lhs,
        rhs,
        margin: rhs - lhs,
        constant,
    })
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn torus2() -> ManifoldModel {
        ManifoldModel::flat_torus(vec![2.0 * PI, 2.0 * PI]).unwrap()
    }

    /// Three modes near frequency `k` with the given amplitudes.
    fn field(k: i64, amps: [(f64, f64); 3]) -> WaveField {
        let modes = [vec![k, 0], vec![0, k], vec![-(3 * k) / 5, (4 * k) / 5]];
        let terms: Vec<(Vec<i64>, Complex64)> =
            modes.iter().zip(amps).map(|(m, (re, im))| (m.clone(), Complex64::new(re, im))).collect();
        WaveField::torus_modes(vec![2.0 * PI; 2], vec![64, 64], 1.0 / k as f64, &terms).unwrap()
    }

    /// `(c₀ + c₁ e^{i(x₀ − x₁)}) e^{−|ξ − w|²}`.
    fn symbol(id: &str, c0: f64, c1: Complex64, w: [f64; 2]) -> Symbol {
        Symbol::product(
            id,
            move |x| c0 + c1 * Complex64::from_polar(1.0, x[0] - x[1]),
            move |xi| Complex64::new((-(xi[0] - w[0]).powi(2) - (xi[1] - w[1]).powi(2)).exp(), 0.0),
        )
    }

    fn amps() -> impl Strategy<Value = [(f64, f64); 3]> {
        prop::array::uniform3((-1.0..1.0f64, -1.0..1.0f64)).prop_filter("nonzero field", |a| {
            a.iter().map(|(r, i)| r * r + i * i).sum::<f64>() > 1e-2
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pairing_is_linear_in_the_symbol(
            k in 8i64..24, a in amps(), s in -2.0..2.0f64, t in -2.0..2.0f64,
            c1 in (-1.0..1.0f64, -1.0..1.0f64), w in (-1.0..1.0f64, -1.0..1.0f64),
        ) {
            let model = torus2();
            let u = field(k, a);
            let p = symbol("p", 1.0, Complex64::new(c1.0, c1.1), [w.0, w.1]);
            let q = symbol("q", 0.3, Complex64::new(0.0, 0.5), [w.1, -w.0]);
            let mix = Symbol::combine("mix", &model, &[&p, &q], move |v| s * v[0] + t * v[1]);
            let lhs = defect_pairing(&mix, &u, &model).unwrap();
            let rhs = s * defect_pairing(&p, &u, &model).unwrap() + t * defect_pairing(&q, &u, &model).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
        }

        #[test]
        fn adjoint_pairing_is_conjugate_up_to_h(
            k in 8i64..24, a in amps(),
            c1 in (-1.0..1.0f64, -1.0..1.0f64), w in (-1.0..1.0f64, -1.0..1.0f64),
        ) {
            let model = torus2();
            let u = field(k, a);
            let c1 = Complex64::new(c1.0, c1.1);
            let p = symbol("p", 0.5, c1, [w.0, w.1]);
            let conj = symbol("p̄", 0.5, c1.conj(), [w.0, w.1]);
            let h = u.h();
            let gap = (defect_pairing(&conj, &u, &model).unwrap() - defect_pairing(&p, &u, &model).unwrap().conj()).norm();
            // |∂ₓ∂_ξ a| ≤ 2|c₁|·sup|∇e^{−|ξ−w|²}| ≤ 2|c₁|
            prop_assert!(gap <= 4.0 * c1.norm() * h + 1e-12, "gap {gap} at h {h}");
        }

        #[test]
        fn nonnegative_symbols_pair_above_minus_ch(
            k in 8i64..24, a in amps(),
            c1 in (-1.0..1.0f64, -1.0..1.0f64), w in (-1.0..1.0f64, -1.0..1.0f64),
        ) {
            let model = torus2();
            let u = field(k, a);
            let c1 = Complex64::new(c1.0, c1.1);
            let w = [w.0, w.1];
            // |1 + c₁e^{iθ}|² e^{−|ξ−w|²} ≥ 0
            let a = Symbol::general("nonneg", move |x, xi| {
                let amp = (1.0 + c1 * Complex64::from_polar(1.0, x[0] - x[1])).norm_sqr();
                Complex64::new(amp * (-(xi[0] - w[0]).powi(2) - (xi[1] - w[1]).powi(2)).exp(), 0.0)
            });
            let v = defect_pairing(&a, &u, &model).unwrap();
            prop_assert!(v.re >= -8.0 * u.h(), "pairing {v} at h {}", u.h());
        }
    }
}
