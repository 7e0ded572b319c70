//! Maximal-growth quasimodes at a point whose geodesics all close, with the
//! zonal harmonics and plane waves used as exact references.
//!
//! The field is built from a fiber profile `g` on S¹ (in normal coordinates
//! at the center `z0`) as
//! `Φ(y) = (2πh)^{-1/2} ∫ e^{i⟨y, θ/|θ|⟩/h} g(θ/|θ|) χ_R(|θ|) dθ`.
//! On a round sphere each Fourier mode of `g` globalizes to an exact degree-`l`
//! spherical harmonic (the Bessel factor `J_m(|y|/h)` becomes the normalized
//! Legendre function `Z_{l,m}`), which is what [`Quasimode::value`] evaluates.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{HamiltonianModel, SymbolKind, DEFAULT_FIBER_TOL};
use crate::error::{Error, Result};
use crate::manifold::{sphere_angle, ChartPoint, ManifoldModel, NormalChart};
use crate::sht::{index, ShtGrid};
use crate::special::{
    assoc_legendre_column, gauss_legendre_on, integrate, legendre, ln_factorial_ratio, smooth_step,
};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Real function on S¹ sampled at the angles `2πk/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleFunction {
    samples: Vec<f64>,
}

impl CircleFunction {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("circle function needs at least one sample".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("circle function has non-finite samples".into()));
        }
        Ok(Self { samples })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(count: usize, f: F) -> Result<Self> {
        Self::new((0..count).map(|k| f(angle(k, count))).collect())
    }

    pub fn constant(count: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; count])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn angle(&self, k: usize) -> f64 {
        angle(k, self.samples.len())
    }

    /// Trapezoidal `∫ f dθ` over S¹.
    pub fn integral(&self) -> f64 {
        self.samples.iter().sum::<f64>() * 2.0 * PI / self.samples.len() as f64
    }

    /// Value at the nearest sample angle.
    pub fn nearest(&self, theta: f64) -> f64 {
        let n = self.samples.len();
        let k = (theta.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64).round() as usize % n;
        self.samples[k]
    }
}

fn angle(k: usize, n: usize) -> f64 {
    2.0 * PI * k as f64 / n as f64
}

/// Complex trigonometric polynomial `Σ_{|m| ≤ M} c_m e^{imθ}` on S¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    coeffs: Vec<Complex64>,
}

impl TrigPoly {
    pub fn zero() -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0)],
        }
    }

    /// Coefficients ordered `m = -M..=M`.
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len().is_multiple_of(2) {
            return Err(Error::Invalid("trigonometric coefficients need odd length".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            coeffs: vec![Complex64::new(c, 0.0)],
        }
    }

    /// Fourier coefficients of samples at `2πk/N`, truncated to `|m| ≤ band`.
    pub fn from_samples(samples: &[Complex64], band: usize) -> Self {
        let spectrum = fourier_coefficients(samples);
        let n = samples.len();
        let band = band.min((n - 1) / 2);
        let coeffs = (-(band as i64)..=band as i64)
            .map(|m| spectrum[m.rem_euclid(n as i64) as usize])
            .collect();
        Self { coeffs }
    }

    pub fn band(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    pub fn coeff(&self, m: i64) -> Complex64 {
        let b = self.band() as i64;
        if m.abs() > b {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(m + b) as usize]
        }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn eval(&self, theta: f64) -> Complex64 {
        let b = self.band() as i64;
        let step = Complex64::from_polar(1.0, theta);
        let mut e = Complex64::from_polar(1.0, -(b as f64) * theta);
        let mut s = Complex64::new(0.0, 0.0);
        for c in &self.coeffs {
            s += c * e;
            e *= step;
        }
        s
    }

    /// `∫ g dθ = 2π c_0`.
    pub fn integral(&self) -> Complex64 {
        self.coeff(0) * 2.0 * PI
    }

    /// `∫ |g|² dθ` by Parseval.
    pub fn norm_sq(&self) -> f64 {
        2.0 * PI * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    pub fn truncate(&self, band: usize) -> Self {
        if band >= self.band() {
            return self.clone();
        }
        let b = band as i64;
        Self {
            coeffs: (-b..=b).map(|m| self.coeff(m)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let b = self.band().max(other.band()) as i64;
        Self {
            coeffs: (-b..=b).map(|m| self.coeff(m) + other.coeff(m)).collect(),
        }
    }
}

/// DFT coefficients `c_m = N⁻¹ Σ_k f_k e^{-imθ_k}`, indexed by `m mod N`.
fn fourier_coefficients(samples: &[Complex64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    buf.iter_mut().for_each(|v| *v /= n as f64);
    buf
}

/// Radial cutoff `χ_R`: 1 on `[1, R]`, supported in `(0, 2R)`, with
/// `∫ χ_R(α) α^{n-1} dα = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialCutoff {
    r: f64,
    dim: usize,
    rise_start: f64,
    fall_end: f64,
}

impl RadialCutoff {
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Support `[a, b] ⊂ (0, 2R)`.
    pub fn support(&self) -> (f64, f64) {
        (self.rise_start, self.fall_end)
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        cutoff_value(alpha, self.rise_start, self.r, self.fall_end)
    }

    /// Gauss nodes and weights for `∫ · α^{n-1} dα` over the support,
    /// with panels aligned to the transition regions.
    pub fn quadrature(&self) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let pieces = [
            (self.rise_start, 1.0, 24),
            (1.0, self.r, 4),
            (self.r, self.fall_end, 24),
        ];
        for (a, b, panels) in pieces {
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let (x, w) = gauss_legendre_on(16, a + p as f64 * h, a + (p + 1) as f64 * h);
                nodes.extend(x);
                weights.extend(w);
            }
        }
        (nodes, weights)
    }

    /// `∫ χ_R(α) α^{n-1} dα` by the quadrature above.
    pub fn moment(&self) -> f64 {
        let (x, w) = self.quadrature();
        x.iter()
            .zip(&w)
            .map(|(a, wa)| wa * self.eval(*a) * a.powi(self.dim as i32 - 1))
            .sum()
    }

    /// Samples of `χ_R` on a uniform grid of `(0, 2R)`.
    pub fn samples(&self, count: usize) -> Vec<(f64, f64)> {
        (1..=count)
            .map(|k| {
                let a = 2.0 * self.r * k as f64 / (count + 1) as f64;
                (a, self.eval(a))
            })
            .collect()
    }
}

fn cutoff_value(alpha: f64, a: f64, r: f64, b: f64) -> f64 {
    if alpha <= a || alpha >= b {
        0.0
    } else if alpha < 1.0 {
        smooth_step((alpha - a) / (1.0 - a))
    } else if alpha <= r {
        1.0
    } else {
        1.0 - smooth_step((alpha - r) / (b - r))
    }
}

fn weighted_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, dim: usize) -> f64 {
    integrate(|x| f(x) * x.powi(dim as i32 - 1), a, b, 48, 16)
}

/// Build `χ_R` for dimension `n`. The plateau alone carries `(R^n − 1)/n`, so a
/// normalized cutoff exists only for `1 < R < (n+1)^{1/n}`; the remainder is
/// split between the rise on `(a, 1)` and the fall on `(R, b)`, each located by
/// bisection.
pub fn make_radial_cutoff(r: f64, dim: usize) -> Result<RadialCutoff> {
    if !(r > 1.0) {
        return Err(Error::Domain(format!("radial cutoff needs R > 1 (got {r})")));
    }
    if dim == 0 {
        return Err(Error::Invalid("dimension must be positive".into()));
    }
    let nf = dim as f64;
    let plateau = (r.powf(nf) - 1.0) / nf;
    let rest = 1.0 - plateau;
    if rest <= 0.0 {
        return Err(Error::Domain(format!(
            "R = {r} leaves no room for normalization: the plateau alone integrates to {plateau} (need R < {})",
            (nf + 1.0).powf(1.0 / nf)
        )));
    }
    let rise = |a: f64| weighted_integral(|x| smooth_step((x - a) / (1.0 - a)), a, 1.0, dim);
    let fall = |b: f64| {
        weighted_integral(|x| 1.0 - smooth_step((x - r) / (b - r)), r, b, dim)
    };
    let rise_max = rise(0.0);
    let fall_max = fall(2.0 * r);
    let rise_target = (0.5 * rest).min(0.9 * rise_max);
    let fall_target = rest - rise_target;
    if fall_target > 0.99 * fall_max {
        return Err(Error::Domain(format!(
            "R = {r} too close to 1: the transitions cannot carry the remaining mass {rest}"
        )));
    }
    // rise(a) decreases from rise_max to 0 on [0, 1]
    let a = bisect(|a| rise(a) - rise_target, 0.0, 1.0, false);
    // fall(b) increases from 0 to fall_max on [R, 2R]
    let b = bisect(|b| fall(b) - fall_target, r, 2.0 * r, true);
    let cutoff = RadialCutoff {
        r,
        dim,
        rise_start: a,
        fall_end: b,
    };
    let m = cutoff.moment();
    if (m - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!(
            "radial cutoff normalization failed: moment {m}"
        )));
    }
    Ok(cutoff)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, increasing: bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v > 0.0) == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Band-limited square root of a fiber density.
#[derive(Debug, Clone, PartialEq)]
pub struct Mollified {
    pub profile: TrigPoly,
    /// `‖g₁ − √f‖_{L²(S¹)}` by quadrature on the sample grid.
    pub l2_error: f64,
}

/// Smallest band `M ≤ max_band` whose truncation of `√f` is within `epsilon` in L².
pub fn mollify_g1(density: &CircleFunction, epsilon: f64, max_band: usize) -> Result<Mollified> {
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!("epsilon must be positive (got {epsilon})")));
    }
    if let Some(v) = density.samples().iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!("fiber density must be nonnegative (found {v})")));
    }
    let n = density.len();
    let root: Vec<Complex64> = density
        .samples()
        .iter()
        .map(|v| Complex64::new(v.sqrt(), 0.0))
        .collect();
    let spectrum = fourier_coefficients(&root);
    let total: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
    // energy of |m| ≤ M modes; the Nyquist bin of an even grid is never captured
    let available = (n - 1) / 2;
    let mut captured = spectrum[0].norm_sqr();
    let tail_at = |captured: f64| (2.0 * PI * (total - captured).max(0.0)).sqrt();
    let mut band = 0;
    while tail_at(captured) >= epsilon {
        if band >= max_band.min(available) {
            return Err(Error::MollifyUnreachable {
                target: epsilon,
                band: max_band,
                achieved: tail_at(captured),
            });
        }
        band += 1;
        captured += spectrum[band].norm_sqr() + spectrum[n - band].norm_sqr();
    }
    let profile = TrigPoly::from_samples(&root, band);
    let l2_error = (2.0 * PI / n as f64
        * (0..n)
            .map(|k| (profile.eval(density.angle(k)) - root[k]).norm_sqr())
            .sum::<f64>())
    .sqrt();
    Ok(Mollified { profile, l2_error })
}

/// Point mass of the singular part: a fiber direction (angle in normal
/// coordinates at the center) carrying `mass`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub angle: f64,
    pub mass: f64,
}

/// Sum of von Mises bumps `A_k exp(κ(cos(θ − θ_k) − 1))` with `κ = ε⁻²`, each
/// scaled to squared-L² mass `a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpSum {
    kappa: f64,
    bumps: Vec<(f64, f64)>,
}

impl BumpSum {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Bump width `w(ε) = ε`.
    pub fn width(&self) -> f64 {
        self.kappa.powf(-0.5)
    }

    /// `(center angle, amplitude)` pairs after merging coincident atoms.
    pub fn bumps(&self) -> &[(f64, f64)] {
        &self.bumps
    }

    pub fn is_empty(&self) -> bool {
        self.bumps.is_empty()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.bumps
            .iter()
            .map(|(c, a)| a * (self.kappa * ((theta - c).cos() - 1.0)).exp())
            .sum()
    }

    /// Grid size on which the trapezoid rule is exact to rounding for these bumps.
    pub fn resolving_count(&self, band: usize) -> usize {
        let spread = 32.0 * (2.0 * self.kappa).sqrt().ceil() + 64.0;
        (spread as usize).max(4 * band + 8).next_power_of_two()
    }

    /// `∫ φ |g₂|² dθ` by the trapezoid rule.
    pub fn pair<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        let n = self.resolving_count(0);
        (0..n)
            .map(|k| {
                let t = angle(k, n);
                phi(t) * self.eval(t).powi(2)
            })
            .sum::<f64>()
            * 2.0 * PI
            / n as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.pair(|_| 1.0)
    }

    /// Fourier truncation at `band`.
    pub fn to_trig(&self, band: usize) -> TrigPoly {
        if self.bumps.is_empty() {
            return TrigPoly::zero();
        }
        let n = self.resolving_count(band);
        let samples: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(self.eval(angle(k, n)), 0.0))
            .collect();
        TrigPoly::from_samples(&samples, band)
    }
}

/// Smooth approximation of the singular part with bumps of width `ε`.
pub fn approx_g2(atoms: &[Atom], epsilon: f64) -> Result<BumpSum> {
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!("epsilon must be positive (got {epsilon})")));
    }
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for atom in atoms {
        if !(atom.mass >= 0.0) || !atom.angle.is_finite() {
            return Err(Error::Invalid(format!("invalid atom {atom:?}")));
        }
        let c = atom.angle.rem_euclid(2.0 * PI);
        match merged.iter_mut().find(|(d, _)| {
            let diff = (c - *d).rem_euclid(2.0 * PI);
            diff.min(2.0 * PI - diff) < 1e-12
        }) {
            Some(entry) => entry.1 += atom.mass,
            None => merged.push((c, atom.mass)),
        }
    }
    let kappa = epsilon.powi(-2);
    let unit = BumpSum {
        kappa,
        bumps: vec![(0.0, 1.0)],
    };
    let unit_mass = unit.norm_sq();
    let bumps = merged
        .into_iter()
        .filter(|(_, m)| *m > 0.0)
        .map(|(c, m)| (c, (m / unit_mass).sqrt()))
        .collect();
    Ok(BumpSum { kappa, bumps })
}

/// Input of the construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasimodeSpec {
    pub center: ChartPoint,
    /// Absolutely continuous part on the fiber circle (normal-coordinate angle).
    pub density: CircleFunction,
    pub atoms: Vec<Atom>,
    /// Mollification parameter; `None` selects `h^{1/4}`.
    pub epsilon: Option<f64>,
    pub cutoff_r: f64,
    pub h: f64,
}

/// Default schedule `ε = h^{1/4}`.
pub fn default_epsilon(h: f64) -> f64 {
    h.powf(0.25)
}

/// Band limit allowed for the profile at a given `h`: derivatives of order `k`
/// then grow at most like `h^{-k/2}`.
pub fn band_cap(h: f64) -> usize {
    h.powf(-0.5).floor() as usize
}

/// `h = R/(l + ½)`, at which `h²l(l+1)/R² − 1 = −h²/(4R²)`.
pub fn admissible_h(l: usize, radius: f64) -> f64 {
    radius / (l as f64 + 0.5)
}

/// Degree `l` with `h = R/(l + ½)`.
pub fn admissible_level(h: f64, radius: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("h must be positive (got {h})")));
    }
    let x = radius / h - 0.5;
    let l = x.round().max(0.0);
    if (x - l).abs() > 1e-9 * x.abs().max(1.0) {
        return Err(Error::InadmissibleH {
            h,
            nearest: admissible_h(l as usize, radius),
        });
    }
    Ok(l as usize)
}

/// Flowout mass `T·|ν(H_p)|·∫f + Σ a_k` of a fiber decomposition.
pub fn flowout_mass(
    ham: &HamiltonianModel,
    center: &ChartPoint,
    density: &CircleFunction,
    atoms: &[Atom],
) -> Result<f64> {
    let chart = ham.fiber_chart(center)?;
    let xi = ham.shell_covector(&chart, &[1.0, 0.0])?;
    let speed = ham.base_speed(&center.coords, &xi);
    let inj = ham.manifold().injectivity_radius().value;
    let rec = ham.return_time(center, &xi, 8.0 * inj / speed + 1.0, DEFAULT_FIBER_TOL)?;
    let nu = crate::bounds::nu_hp(ham, center, &xi)?;
    Ok(rec.return_time * nu * density.integral() + atoms.iter().map(|a| a.mass).sum::<f64>())
}

/// Quadrature metadata of a local evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub radial_nodes: usize,
    pub angular_nodes: usize,
}

/// Constructed quasimode on a round sphere.
#[derive(Debug, Clone)]
pub struct Quasimode {
    chart: NormalChart,
    frame: [[f64; 3]; 3],
    radius: f64,
    h: f64,
    level: usize,
    epsilon: f64,
    profile: TrigPoly,
    cutoff: RadialCutoff,
    radial_moment: f64,
    g1_error: f64,
    g2_truncation: f64,
    legendre_scale: Vec<f64>,
}

impl Quasimode {
    pub fn build(ham: &HamiltonianModel, spec: &QuasimodeSpec) -> Result<Self> {
        let model = ham.manifold();
        let radius = model.sphere_radius().ok_or_else(|| {
            Error::Invalid(
                "the construction needs every geodesic through the center to close; only round spheres are supported".into(),
            )
        })?;
        if !matches!(ham.symbol(), SymbolKind::Laplace { scale } if *scale == 1.0) {
            return Err(Error::Invalid("the construction is for p = |ξ|²_g − 1".into()));
        }
        let level = admissible_level(spec.h, radius)?;
        let mass = flowout_mass(ham, &spec.center, &spec.density, &spec.atoms)?;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "flowout mass of the decomposition is {mass}, expected 1"
            )));
        }
        let h = spec.h;
        let epsilon = spec.epsilon.unwrap_or_else(|| default_epsilon(h));
        let cap = level.min(band_cap(h));
        let g1 = mollify_g1(&spec.density, epsilon, cap)?;
        let g2 = approx_g2(&spec.atoms, epsilon)?;
        let g2_trig = g2.to_trig(cap);
        let g2_truncation = (g2.norm_sq() - g2_trig.norm_sq()).max(0.0).sqrt();
        let profile = g1.profile.add(&g2_trig);
        let cutoff = make_radial_cutoff(spec.cutoff_r, 2)?;
        let inj = model.injectivity_radius().value;
        let chart = model.normal_coordinates(&spec.center, inj * (1.0 - 1e-9))?;
        let frame = chart.sphere_frame().expect("sphere chart");
        let lf = level as f64;
        let legendre_scale = (0..=profile.band())
            .map(|m| {
                (m as f64 * (lf + 0.5).ln() - 0.5 * ln_factorial_ratio(level, m)).exp()
                    * (4.0 * PI / (2.0 * lf + 1.0)).sqrt()
            })
            .collect();
        Ok(Self {
            chart,
            frame,
            radius,
            h,
            level,
            epsilon,
            profile,
            radial_moment: cutoff.moment(),
            cutoff,
            g1_error: g1.l2_error,
            g2_truncation,
            legendre_scale,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn profile(&self) -> &TrigPoly {
        &self.profile
    }

    pub fn cutoff(&self) -> &RadialCutoff {
        &self.cutoff
    }

    pub fn chart(&self) -> &NormalChart {
        &self.chart
    }

    pub fn g1_error(&self) -> f64 {
        self.g1_error
    }

    /// L² mass of the singular profile lost to the band cap.
    pub fn g2_truncation(&self) -> f64 {
        self.g2_truncation
    }

    fn prefactor(&self) -> f64 {
        2.0 * PI * (2.0 * PI * self.h).powf(-0.5)
    }

    /// `Φ(z0) = (2πh)^{-1/2} ∫ g dθ`.
    pub fn value_at_center(&self) -> Complex64 {
        (2.0 * PI * self.h).powf(-0.5) * self.profile.integral() * self.radial_moment
    }

    /// Value at polar position `(r, φ)` about the center (unit-sphere angle `r`).
    pub fn value_polar(&self, r: f64, phi: f64) -> Complex64 {
        let z = self.legendre_terms(r.cos());
        self.combine(&z, phi)
    }

    fn legendre_terms(&self, cos_r: f64) -> Vec<f64> {
        (0..=self.profile.band())
            .map(|m| {
                let col = assoc_legendre_column(self.level, m, cos_r);
                self.legendre_scale[m] * col.last().copied().unwrap_or(0.0)
            })
            .collect()
    }

    fn combine(&self, z: &[f64], phi: f64) -> Complex64 {
        let b = self.profile.band() as i64;
        let mut s = Complex64::new(0.0, 0.0);
        for m in -b..=b {
            let am = m.unsigned_abs() as usize;
            s += self.profile.coeff(m) * I.powu(am as u32) * z[am] * Complex64::from_polar(1.0, m as f64 * phi);
        }
        self.prefactor() * self.radial_moment * s
    }

    /// Globalized field at any point of the sphere.
    pub fn value(&self, x: &ChartPoint) -> Result<Complex64> {
        self.chart.model().check_point(x)?;
        let p = self.chart.model().sphere_unit(x);
        let [p0, e1, e2] = self.frame;
        let r = sphere_angle(p, p0);
        let phi = dot(p, e2).atan2(dot(p, e1));
        Ok(self.value_polar(r, phi))
    }

    /// Literal polar quadrature of the defining oscillatory integral at normal
    /// coordinates `y`.
    pub fn value_local(&self, y: &[f64]) -> Result<(Complex64, Resolution)> {
        let ny = (y[0] * y[0] + y[1] * y[1]).sqrt();
        let (rx, rw) = self.cutoff.quadrature();
        let radial: f64 = rx
            .iter()
            .zip(&rw)
            .map(|(a, w)| w * self.cutoff.eval(*a) * a)
            .sum();
        let base = 2.0 * (ny / self.h + self.profile.band() as f64) + 32.0;
        let n = (base.ceil() as usize).max(64).next_power_of_two();
        let coarse = self.angular_sum(y, n);
        let fine = self.angular_sum(y, 2 * n);
        let pref = (2.0 * PI * self.h).powf(-0.5) * radial;
        let scale = self.profile.coeffs().iter().map(|c| c.norm()).sum::<f64>() * 2.0 * PI;
        if (fine - coarse).norm() > 1e-3 * fine.norm().max(1e-9 * scale) {
            return Err(Error::UnderResolved {
                coarse: pref * coarse,
                fine: pref * fine,
            });
        }
        Ok((
            pref * fine,
            Resolution {
                radial_nodes: rx.len(),
                angular_nodes: 2 * n,
            },
        ))
    }

    fn angular_sum(&self, y: &[f64], n: usize) -> Complex64 {
        (0..n)
            .map(|k| {
                let t = angle(k, n);
                let phase = (y[0] * t.cos() + y[1] * t.sin()) / self.h;
                Complex64::from_polar(1.0, phase) * self.profile.eval(t)
            })
            .sum::<Complex64>()
            * 2.0 * PI
            / n as f64
    }

    /// Exact `‖Φ‖_{L²}` from the orthogonality of the spherical harmonics.
    pub fn l2_norm(&self) -> f64 {
        let b = self.profile.band() as i64;
        let s: f64 = (-b..=b)
            .map(|m| self.profile.coeff(m).norm_sqr() * self.legendre_scale[m.unsigned_abs() as usize].powi(2))
            .sum();
        (self.prefactor() * self.radial_moment).abs() * self.radius * s.sqrt()
    }

    /// `‖(−h²Δ − 1)Φ‖_{L²}`: the field is an exact eigenfunction of degree `l`.
    pub fn residual_norm(&self) -> f64 {
        let l = self.level as f64;
        (self.h * self.h * l * (l + 1.0) / (self.radius * self.radius) - 1.0).abs() * self.l2_norm()
    }

    /// Samples on a transform grid whose pole is the center.
    pub fn grid_values(&self, grid: &ShtGrid) -> Vec<Complex64> {
        let rows: Vec<Vec<Complex64>> = (0..grid.nlat())
            .into_par_iter()
            .map(|i| {
                let z = self.legendre_terms(grid.cos_theta(i));
                (0..grid.nlon()).map(|k| self.combine(&z, grid.phi(k))).collect()
            })
            .collect();
        rows.concat()
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// L²-normalized zonal harmonic of degree `l` about the +z pole of a round sphere.
pub fn zonal_harmonic(model: &ManifoldModel, l: usize, x: &ChartPoint) -> Result<f64> {
    zonal_harmonic_about(model, l, [0.0, 0.0, 1.0], x)
}

/// Zonal harmonic about an arbitrary unit axis.
pub fn zonal_harmonic_about(model: &ManifoldModel, l: usize, axis: [f64; 3], x: &ChartPoint) -> Result<f64> {
    let r = model
        .sphere_radius()
        .ok_or_else(|| Error::Invalid("zonal harmonics live on round spheres".into()))?;
    model.check_point(x)?;
    let p = model.sphere_unit(x);
    let c = dot(p, axis).clamp(-1.0, 1.0);
    Ok(((2 * l + 1) as f64 / (4.0 * PI)).sqrt() * legendre(l, c) / r)
}

/// Plane wave `e^{i⟨k, x⟩}` on a flat torus with `k_i = 2π m_i / L_i`.
pub fn plane_wave(periods: &[f64], modes: &[i64], x: &[f64]) -> Complex64 {
    let phase: f64 = periods
        .iter()
        .zip(modes)
        .zip(x)
        .map(|((l, m), xi)| 2.0 * PI * *m as f64 / l * xi)
        .sum();
    Complex64::from_polar(1.0, phase)
}

/// Spectral residual of grid samples on a round sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralResidual {
    pub residual: f64,
    pub norm: f64,
    /// Relative mass in the top degrees plus quadrature/coefficient mismatch.
    pub tail: f64,
}

/// `‖(−h²Δ − 1)u‖` for samples of `u` on a transform grid of a radius-`R` sphere.
pub fn residual_norm_sphere(
    grid: &ShtGrid,
    values: &[Complex64],
    h: f64,
    radius: f64,
    tail_tol: f64,
) -> Result<SpectralResidual> {
    let c = grid.analysis(values);
    let band = grid.band();
    let grid_norm = grid.norm_sq(values);
    let mut energy = 0.0;
    let mut top = 0.0;
    let mut res = 0.0;
    for l in 0..=band {
        let mult = h * h * (l * (l + 1)) as f64 / (radius * radius) - 1.0;
        let el: f64 = (-(l as i64)..=l as i64).map(|m| c[index(l, m)].norm_sqr()).sum();
        energy += el;
        res += mult * mult * el;
        if l + 4 > band {
            top += el;
        }
    }
    let tail = if grid_norm > 0.0 {
        ((grid_norm - energy).abs() + top) / grid_norm
    } else {
        0.0
    };
    if tail > tail_tol {
        return Err(Error::NotRepresentable { band, tail });
    }
    Ok(SpectralResidual {
        residual: radius * res.sqrt(),
        norm: radius * energy.sqrt(),
        tail,
    })
}

/// Result of a sup-norm search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupScan {
    pub max_abs: f64,
    /// Normal coordinates of the maximizer.
    pub argmax: Vec<f64>,
    /// `h^{(n-1)/2} · max |u|`.
    pub scaled: f64,
    pub nodes: usize,
}

/// Maximum of `|u|` over the normal-coordinate ball of `search_radius`: a grid
/// scan at spacing `h/4` followed by pattern-search refinement of the best nodes.
pub fn sup_norm_scan<F>(field: F, dim: usize, h: f64, search_radius: f64) -> Result<SupScan>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if dim != 2 {
        return Err(Error::Invalid("sup-norm scans are implemented for n = 2".into()));
    }
    let spacing = (0.25 * h).max(search_radius / 400.0);
    let steps = (search_radius / spacing).ceil() as i64;
    let mut nodes: Vec<[f64; 2]> = Vec::new();
    for i in -steps..=steps {
        for j in -steps..=steps {
            let y = [i as f64 * spacing, j as f64 * spacing];
            if y[0] * y[0] + y[1] * y[1] <= search_radius * search_radius {
                nodes.push(y);
            }
        }
    }
    let values: Vec<f64> = nodes
        .par_iter()
        .map(|y| field(y))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|a, b| values[*b].total_cmp(&values[*a]));
    let mut best = (values[order[0]], nodes[order[0]].to_vec());
    for &start in order.iter().take(4) {
        let (v, y) = refine(&field, nodes[start], values[start], spacing, search_radius)?;
        if v > best.0 {
            best = (v, y);
        }
    }
    Ok(SupScan {
        max_abs: best.0,
        argmax: best.1,
        scaled: h.powf(0.5 * (dim as f64 - 1.0)) * best.0,
        nodes: nodes.len(),
    })
}

fn refine<F>(field: &F, start: [f64; 2], value: f64, spacing: f64, radius: f64) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let (mut y, mut v) = (start, value);
    let mut step = 0.5 * spacing;
    while step > 1e-10 * spacing {
        let mut moved = false;
        for d in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
            let t = [y[0] + step * d[0], y[1] + step * d[1]];
            if t[0] * t[0] + t[1] * t[1] > radius * radius {
                continue;
            }
            let tv = field(&t)?;
            if tv > v {
                y = t;
                v = tv;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    Ok((v, y.to_vec()))
}
