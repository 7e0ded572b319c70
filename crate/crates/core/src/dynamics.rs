//! Bicharacteristic flow `exp(tH_p)` and the return dynamics at a base point.
//!
//! The flow is integrated in chart coordinates with an adaptive
//! Dormand–Prince scheme; energy is not projected back onto the shell, so
//! conservation of `p` is a genuine accuracy check. Returns to the fiber over
//! `x0` are located as sign changes (− to +) of the derivative of the squared
//! distance to `x0`, refined by Illinois regula falsi on single steps.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::{angle_between, tangent_basis, FiberGrid};
use crate::manifold::{ChartId, ChartPoint, ManifoldModel, NormalChart};
use crate::ode::Dopri5;

/// Fiber tolerance used when none is supplied.
pub const DEFAULT_FIBER_TOL: f64 = 1e-6;

/// A principal symbol `p(x, ξ)` in the single global chart of a model.
///
/// Derivatives default to centred finite differences.
pub trait PrincipalSymbol: Send + Sync + Debug {
    fn value(&self, x: &[f64], xi: &[f64]) -> f64;

    fn grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        central_gradient(|v| self.value(v, xi), x)
    }

    fn grad_xi(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        central_gradient(|v| self.value(x, v), xi)
    }
}

fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, at: &[f64]) -> Vec<f64> {
    let mut v = at.to_vec();
    (0..at.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + at[i].abs());
            v[i] = at[i] + h;
            let fp = f(&v);
            v[i] = at[i] - h;
            let fm = f(&v);
            v[i] = at[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum SymbolKind {
    /// `p = scale · (|ξ|²_g − 1)`.
    Laplace { scale: f64 },
    General(Arc<dyn PrincipalSymbol>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub base: ChartPoint,
    pub covector: Vec<f64>,
}

impl PhasePoint {
    pub fn new(base: ChartPoint, covector: Vec<f64>) -> Self {
        Self { base, covector }
    }
}

/// Manifold together with a principal symbol.
#[derive(Debug, Clone)]
pub struct HamiltonianModel {
    manifold: ManifoldModel,
    symbol: SymbolKind,
    tol: f64,
}

impl HamiltonianModel {
    pub fn laplace(manifold: ManifoldModel) -> Self {
        Self {
            manifold,
            symbol: SymbolKind::Laplace { scale: 1.0 },
            tol: 1e-12,
        }
    }

    pub fn scaled_laplace(manifold: ManifoldModel, scale: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Invalid("symbol scale must be finite and nonzero".into()));
        }
        Ok(Self {
            manifold,
            symbol: SymbolKind::Laplace { scale },
            tol: 1e-12,
        })
    }

    /// General symbols are supported on single-chart models.
    pub fn general(manifold: ManifoldModel, symbol: Arc<dyn PrincipalSymbol>) -> Result<Self> {
        if manifold.is_sphere() {
            return Err(Error::Invalid(
                "general symbols need a single global chart (torus or surface of revolution)"
                    .into(),
            ));
        }
        Ok(Self {
            manifold,
            symbol: SymbolKind::General(symbol),
            tol: 1e-12,
        })
    }

    /// Integrator tolerance used by the return-dynamics operations.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn manifold(&self) -> &ManifoldModel {
        &self.manifold
    }

    pub fn symbol(&self) -> &SymbolKind {
        &self.symbol
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn p(&self, x: &[f64], xi: &[f64]) -> f64 {
        match &self.symbol {
            SymbolKind::Laplace { scale } => {
                let a = self.manifold.diag_metric(x).a;
                scale * (xi.iter().zip(&a).map(|(v, ai)| v * v / ai).sum::<f64>() - 1.0)
            }
            SymbolKind::General(s) => s.value(x, xi),
        }
    }

    pub fn p_at(&self, q: &PhasePoint) -> Result<f64> {
        self.manifold.check_point(&q.base)?;
        Ok(self.p(&q.base.coords, &q.covector))
    }

    pub fn dxi_p(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        match &self.symbol {
            SymbolKind::Laplace { scale } => {
                let a = self.manifold.diag_metric(x).a;
                xi.iter().zip(&a).map(|(v, ai)| 2.0 * scale * v / ai).collect()
            }
            SymbolKind::General(s) => s.grad_xi(x, xi),
        }
    }

    pub fn dx_p(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        match &self.symbol {
            SymbolKind::Laplace { scale } => {
                let m = self.manifold.diag_metric(x);
                (0..x.len())
                    .map(|k| {
                        -scale
                            * xi
                                .iter()
                                .zip(&m.a)
                                .enumerate()
                                .map(|(i, (v, ai))| v * v * m.da[k][i] / (ai * ai))
                                .sum::<f64>()
                    })
                    .collect()
            }
            SymbolKind::General(s) => s.grad_x(x, xi),
        }
    }

    /// `|∂_ξ p · ∂_x|_g`, the base speed of the flow.
    pub fn base_speed(&self, x: &[f64], xi: &[f64]) -> f64 {
        let v = self.dxi_p(x, xi);
        let a = self.manifold.diag_metric(x).a;
        v.iter().zip(&a).map(|(vi, ai)| vi * vi * ai).sum::<f64>().sqrt()
    }

    /// Hamiltonian vector field `(∂_ξ p, −∂_x p)`.
    pub fn vector_field(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let (x, xi) = z.split_at(n);
        let dx = self.dxi_p(x, &xi[..n]);
        let dxi = self.dx_p(x, &xi[..n]);
        for i in 0..n {
            out[i] = dx[i];
            out[n + i] = -dxi[i];
        }
    }

    /// Jacobian of the Hamiltonian vector field.
    pub fn field_jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        match &self.symbol {
            SymbolKind::Laplace { scale } => {
                let s = *scale;
                let (x, xi) = z.split_at(n);
                let m = self.manifold.diag_metric(x);
                let mut j = DMatrix::zeros(2 * n, 2 * n);
                for i in 0..n {
                    let ai = m.a[i];
                    j[(i, n + i)] = 2.0 * s / ai;
                    for k in 0..n {
                        j[(i, k)] = -2.0 * s * xi[i] * m.da[k][i] / (ai * ai);
                    }
                }
                for k in 0..n {
                    for jj in 0..n {
                        let aj = m.a[jj];
                        j[(n + k, n + jj)] = 2.0 * s * xi[jj] * m.da[k][jj] / (aj * aj);
                    }
                    for l in 0..n {
                        let mut acc = 0.0;
                        for i in 0..n {
                            let ai = m.a[i];
                            acc += xi[i]
                                * xi[i]
                                * (m.dda[k][l][i] / (ai * ai)
                                    - 2.0 * m.da[k][i] * m.da[l][i] / (ai * ai * ai));
                        }
                        j[(n + k, l)] = s * acc;
                    }
                }
                j
            }
            SymbolKind::General(_) => {
                let mut j = DMatrix::zeros(2 * n, 2 * n);
                let mut zp = z[..2 * n].to_vec();
                let mut fp = vec![0.0; 2 * n];
                let mut fm = vec![0.0; 2 * n];
                for c in 0..2 * n {
                    let h = 1e-5 * (1.0 + z[c].abs());
                    zp[c] = z[c] + h;
                    self.vector_field(&zp, &mut fp);
                    zp[c] = z[c] - h;
                    self.vector_field(&zp, &mut fm);
                    zp[c] = z[c];
                    for r in 0..2 * n {
                        j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
                    }
                }
                j
            }
        }
    }

    /// Chart covector on `Σ` over the origin of `chart` in normal direction `omega`.
    pub fn shell_covector(&self, chart: &NormalChart, omega: &[f64]) -> Result<Vec<f64>> {
        let norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Invalid("zero fiber direction".into()));
        }
        let unit: Vec<f64> = omega.iter().map(|v| v / norm).collect();
        let dir = chart.covector_at_origin(&unit);
        let x0 = &chart.origin().coords;
        match &self.symbol {
            SymbolKind::Laplace { .. } => Ok(dir),
            SymbolKind::General(_) => {
                let f = |r: f64| {
                    let xi: Vec<f64> = dir.iter().map(|v| r * v).collect();
                    self.p(x0, &xi)
                };
                let (mut lo, mut hi) = (1e-6, 1e-6);
                let f0 = f(lo);
                let mut found = false;
                for _ in 0..80 {
                    hi *= 1.5;
                    if f(hi).signum() != f0.signum() {
                        found = true;
                        break;
                    }
                    lo = hi;
                }
                if !found {
                    return Err(Error::Domain(
                        "no point of the characteristic set in this fiber direction".into(),
                    ));
                }
                let flo = f(lo);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid).signum() == flo.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-15 * hi {
                        break;
                    }
                }
                let r = 0.5 * (lo + hi);
                Ok(dir.iter().map(|v| r * v).collect())
            }
        }
    }

    /// Normal chart at `x0` used for fiber data.
    pub fn fiber_chart(&self, x0: &ChartPoint) -> Result<NormalChart> {
        let inj = self.manifold.injectivity_radius().value;
        self.manifold.normal_coordinates(x0, 0.5 * inj)
    }

    fn max_step(&self, x: &[f64], xi: &[f64]) -> f64 {
        let speed = self.base_speed(x, xi).max(1e-12);
        0.25 * self.manifold.injectivity_radius().value / speed
    }
}

/// Jacobian of the phase-space chart transition `(x, ξ) ↦ (x', ξ')`.
fn transition_jacobian(model: &ManifoldModel, x: &ChartPoint, xi: &[f64], target: ChartId) -> DMatrix<f64> {
    let n = model.dim();
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    if !model.is_sphere() || x.chart == target {
        return DMatrix::identity(2 * n, 2 * n);
    }
    let p = model.sphere_unit(x);
    let y = ChartPoint::new(target, ManifoldModel::sphere_coords(p, target));
    let e = ManifoldModel::sphere_tangents(x);
    let e2 = ManifoldModel::sphere_tangents(&y);
    let a = [1.0, x.coords[0].sin().powi(2)];
    let b = [1.0, y.coords[0].sin().powi(2)];
    for j in 0..2 {
        for i in 0..2 {
            let dot: f64 = (0..3).map(|c| e2[j][c] * e[i][c]).sum();
            d[(j, i)] = dot / b[j];
            d[(2 + j, 2 + i)] = dot / a[i];
        }
    }
    for i in 0..2 {
        let h = 1e-6;
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.coords[i] += h;
        xm.coords[i] -= h;
        let (_, ep) = model.transfer(&xp, xi, target);
        let (_, em) = model.transfer(&xm, xi, target);
        for j in 0..2 {
            d[(2 + j, i)] = (ep[j] - em[j]) / (2.0 * h);
        }
    }
    d
}

#[derive(Debug, Clone)]
struct Cursor {
    t: f64,
    chart: ChartId,
    z: Vec<f64>,
    dz: Vec<f64>,
}

struct Engine<'a> {
    ham: &'a HamiltonianModel,
    stepper: Dopri5,
    sign: f64,
    variational: bool,
    n: usize,
}

impl<'a> Engine<'a> {
    fn new(ham: &'a HamiltonianModel, tol: f64, sign: f64, variational: bool, max_step: f64) -> Self {
        let mut stepper = Dopri5::new(tol).with_max_step(max_step);
        stepper.min_step = 1e-15;
        Self {
            ham,
            stepper,
            sign,
            variational,
            n: ham.dim(),
        }
    }

    fn rhs(&self, z: &[f64], out: &mut [f64]) {
        let m = 2 * self.n;
        self.ham.vector_field(&z[..m], &mut out[..m]);
        for v in out[..m].iter_mut() {
            *v *= self.sign;
        }
        if self.variational {
            let j = self.ham.field_jacobian(&z[..m]);
            let mm = &z[m..];
            for r in 0..m {
                for c in 0..m {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += j[(r, k)] * mm[k * m + c];
                    }
                    out[m + r * m + c] = self.sign * acc;
                }
            }
        }
    }

    fn len(&self) -> usize {
        let m = 2 * self.n;
        if self.variational {
            m + m * m
        } else {
            m
        }
    }

    fn start(&self, q: &PhasePoint) -> Result<Cursor> {
        let model = self.ham.manifold();
        model.check_point(&q.base)?;
        if q.covector.len() != self.n {
            return Err(Error::Invalid("covector dimension mismatch".into()));
        }
        let m = 2 * self.n;
        let mut z = vec![0.0; self.len()];
        z[..self.n].copy_from_slice(&q.base.coords);
        z[self.n..m].copy_from_slice(&q.covector);
        if self.variational {
            for i in 0..m {
                z[m + i * m + i] = 1.0;
            }
        }
        let mut cur = Cursor {
            t: 0.0,
            chart: q.base.chart,
            dz: vec![0.0; z.len()],
            z,
        };
        cur = self.switch_if_needed(cur);
        self.refresh(&mut cur);
        Ok(cur)
    }

    fn refresh(&self, cur: &mut Cursor) {
        let mut dz = vec![0.0; cur.z.len()];
        self.rhs(&cur.z, &mut dz);
        cur.dz = dz;
    }

    fn switch_if_needed(&self, cur: Cursor) -> Cursor {
        let model = self.ham.manifold();
        let x = ChartPoint::new(cur.chart, cur.z[..self.n].to_vec());
        let target = model.preferred_chart(&x);
        if target == cur.chart {
            return cur;
        }
        self.to_chart(cur, target)
    }

    fn to_chart(&self, cur: Cursor, target: ChartId) -> Cursor {
        let model = self.ham.manifold();
        let n = self.n;
        let m = 2 * n;
        let x = ChartPoint::new(cur.chart, cur.z[..n].to_vec());
        let xi = &cur.z[n..m];
        let (y, eta) = model.transfer(&x, xi, target);
        let mut z = cur.z.clone();
        z[..n].copy_from_slice(&y.coords);
        z[n..m].copy_from_slice(&eta);
        if self.variational {
            let d = transition_jacobian(model, &x, xi, target);
            let old = DMatrix::from_row_slice(m, m, &cur.z[m..]);
            let new = d * old;
            for r in 0..m {
                for c in 0..m {
                    z[m + r * m + c] = new[(r, c)];
                }
            }
        }
        let mut out = Cursor {
            t: cur.t,
            chart: target,
            dz: vec![0.0; z.len()],
            z,
        };
        self.refresh(&mut out);
        out
    }

    /// One step of size `tau` from `from`, without error control.
    fn substep(&self, from: &Cursor, tau: f64) -> Cursor {
        if tau == 0.0 {
            return from.clone();
        }
        let f = |_: f64, y: &[f64], d: &mut [f64]| self.rhs(y, d);
        let a = self.stepper.attempt(&f, from.t, &from.z, &from.dz, tau);
        Cursor {
            t: from.t + tau,
            chart: from.chart,
            z: a.y,
            dz: a.dy,
        }
    }

    /// Integrate for `duration ≥ 0`; `on_step(before, after)` may stop early.
    fn advance<F>(&self, mut cur: Cursor, duration: f64, mut on_step: F) -> Result<Cursor>
    where
        F: FnMut(&Cursor, &Cursor) -> Result<bool>,
    {
        let t_end = cur.t + duration;
        if duration <= 0.0 {
            return Ok(cur);
        }
        let f = |_: f64, y: &[f64], d: &mut [f64]| self.rhs(y, d);
        let mut h = self
            .stepper
            .initial_step(&f, cur.t, &cur.z, &cur.dz)
            .min(duration);
        let mut rejected = 0usize;
        while cur.t < t_end {
            let last = cur.t + h >= t_end;
            let step = if last { t_end - cur.t } else { h };
            let a = self.stepper.attempt(&f, cur.t, &cur.z, &cur.dz, step);
            if !a.err.is_finite() {
                return Err(Error::Integration {
                    t: cur.t,
                    reason: "non-finite state".into(),
                });
            }
            if a.err <= 1.0 {
                let next = Cursor {
                    t: if last { t_end } else { cur.t + step },
                    chart: cur.chart,
                    z: a.y,
                    dz: a.dy,
                };
                h = self.stepper.next_step(step, a.err);
                rejected = 0;
                let stop = on_step(&cur, &next)?;
                cur = self.switch_if_needed(next);
                if stop {
                    return Ok(cur);
                }
            } else {
                h = self.stepper.next_step(step, a.err);
                rejected += 1;
                if h < self.stepper.min_step || rejected > 100 {
                    return Err(Error::Integration {
                        t: cur.t,
                        reason: format!("step size underflow (h = {h:e}, error {:e})", a.err),
                    });
                }
            }
        }
        Ok(cur)
    }

    fn point(&self, cur: &Cursor) -> PhasePoint {
        let n = self.n;
        PhasePoint {
            base: self
                .ham
                .manifold()
                .normalize(&ChartPoint::new(cur.chart, cur.z[..n].to_vec())),
            covector: cur.z[n..2 * n].to_vec(),
        }
    }

    fn matrix(&self, cur: &Cursor) -> DMatrix<f64> {
        let m = 2 * self.n;
        DMatrix::from_row_slice(m, m, &cur.z[m..m + m * m])
    }
}

/// Distance-to-`x0` bookkeeping for return detection.
struct Target {
    sphere: Option<[f64; 3]>,
    x0: ChartPoint,
    g0: Vec<f64>,
    radius: f64,
}

impl Target {
    fn new(model: &ManifoldModel, x0: &ChartPoint) -> Self {
        let sphere = model.is_sphere().then(|| model.sphere_unit(x0));
        Self {
            sphere,
            x0: x0.clone(),
            g0: model.diag_metric(&x0.coords).a,
            radius: model.sphere_radius().unwrap_or(1.0),
        }
    }

    /// Has the sign of `d/dt dist²(x(t), x0)`.
    fn monitor(&self, model: &ManifoldModel, chart: ChartId, z: &[f64], dz: &[f64]) -> f64 {
        let n = model.dim();
        match self.sphere {
            Some(p0) => {
                let x = ChartPoint::new(chart, z[..2].to_vec());
                let e = ManifoldModel::sphere_tangents(&x);
                let mut dot = 0.0;
                for i in 0..2 {
                    for c in 0..3 {
                        dot += e[i][c] * dz[i] * p0[c];
                    }
                }
                -dot
            }
            None => {
                let w = model.wrapped_difference(&self.x0.coords, &z[..n]);
                (0..n).map(|i| self.g0[i] * w[i] * dz[i]).sum()
            }
        }
    }

    fn gap(&self, model: &ManifoldModel, chart: ChartId, z: &[f64]) -> f64 {
        let n = model.dim();
        match self.sphere {
            Some(p0) => {
                let p = model.sphere_unit(&ChartPoint::new(chart, z[..2].to_vec()));
                self.radius * crate::manifold::sphere_angle(p, p0)
            }
            None => {
                let w = model.wrapped_difference(&self.x0.coords, &z[..n]);
                (0..n).map(|i| self.g0[i] * w[i] * w[i]).sum::<f64>().sqrt()
            }
        }
    }
}

/// Local minimum of the distance to the base point along a trajectory.
#[derive(Debug, Clone)]
struct Approach {
    t: f64,
    gap: f64,
    cursor: Cursor,
}

impl<'a> Engine<'a> {
    /// Visit every local minimum of the distance to `target` in `(t_skip, duration]`.
    fn scan_approaches<F>(
        &self,
        start: Cursor,
        duration: f64,
        target: &Target,
        t_skip: f64,
        mut visit: F,
    ) -> Result<Cursor>
    where
        F: FnMut(&Approach) -> Result<bool>,
    {
        let model = self.ham.manifold();
        self.advance(start, duration, |before, after| {
            let m0 = target.monitor(model, before.chart, &before.z, &before.dz);
            let m1 = target.monitor(model, after.chart, &after.z, &after.dz);
            if !(m0 < 0.0 && m1 >= 0.0) {
                return Ok(false);
            }
            let h = after.t - before.t;
            let (mut a, mut b) = (0.0, h);
            let (mut fa, mut fb) = (m0, m1);
            let mut side = 0i32;
            let mut root = after.clone();
            for _ in 0..100 {
                let tau = if fb == fa { 0.5 * (a + b) } else { (a * fb - b * fa) / (fb - fa) };
                let tau = if tau > a && tau < b { tau } else { 0.5 * (a + b) };
                let c = self.substep(before, tau);
                let fc = target.monitor(model, c.chart, &c.z, &c.dz);
                root = c;
                if fc == 0.0 || (b - a) < 1e-15 * (1.0 + before.t.abs()) {
                    break;
                }
                if fc < 0.0 {
                    a = tau;
                    fa = fc;
                    if side == -1 {
                        fb *= 0.5;
                    }
                    side = -1;
                } else {
                    b = tau;
                    fb = fc;
                    if side == 1 {
                        fa *= 0.5;
                    }
                    side = 1;
                }
                if (b - a) < 1e-14 * (1.0 + before.t.abs()) {
                    break;
                }
            }
            if root.t <= t_skip {
                return Ok(false);
            }
            let gap = target.gap(model, root.chart, &root.z);
            visit(&Approach {
                t: root.t,
                gap,
                cursor: root,
            })
        })
    }
}

/// End point and variational matrix of the flow.
#[derive(Debug, Clone)]
pub struct LinearizedFlow {
    pub end: PhasePoint,
    /// `∂(x(t), ξ(t)) / ∂(x(0), ξ(0))`, from the start chart to the end chart.
    pub matrix: DMatrix<f64>,
}

/// First return of one fiber direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub direction: Vec<f64>,
    pub return_time: f64,
    /// Returned direction `η` (unit, normal coordinates at `x0`).
    pub returned_direction: Vec<f64>,
    pub jacobian: f64,
    pub converged: bool,
    /// Base distance to `x0` at the refined return.
    pub gap: f64,
    /// A near miss (between the fiber tolerance and ten times it) preceded the return.
    pub grazing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeSpec {
    pub base: ChartPoint,
    /// Unit covector in normal coordinates at `base`.
    pub center: Vec<f64>,
    pub radius: f64,
    pub halfwidth: f64,
}

impl TubeSpec {
    pub fn new(base: ChartPoint, center: Vec<f64>, radius: f64, halfwidth: f64) -> Result<Self> {
        if !(radius > 0.0) || !(halfwidth > 0.0) {
            return Err(Error::Invalid("tube radius and half-width must be positive".into()));
        }
        let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Invalid("tube center must be a nonzero direction".into()));
        }
        Ok(Self {
            base,
            center: center.iter().map(|v| v / norm).collect(),
            radius,
            halfwidth,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecurrenceSample {
    pub direction: Vec<f64>,
    pub recurrent: bool,
    pub forward_late: bool,
    pub backward_late: bool,
    /// First time the forward orbit enters the `eps_return` neighbourhood.
    pub first_return: Option<f64>,
    /// Closest late-time approach (forward and backward).
    pub closest_late: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecurrenceEstimate {
    pub base: ChartPoint,
    pub grid: FiberGrid,
    pub samples: Vec<RecurrenceSample>,
    pub volume: f64,
    pub t_max: f64,
    pub eps_return: f64,
    /// Base speed of the flow on the fiber (used for time uncertainties).
    pub speed: f64,
}

impl RecurrenceEstimate {
    pub fn indicator(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.recurrent).collect()
    }

    pub fn fraction(&self) -> f64 {
        self.volume / self.grid.total_volume()
    }

    /// Infimum of the first-return times over the recurrent directions, with
    /// an uncertainty from the return tolerance.
    pub fn inf_return_time(&self) -> Option<(f64, f64)> {
        self.samples
            .iter()
            .filter(|s| s.recurrent)
            .filter_map(|s| s.first_return)
            .min_by(|a, b| a.total_cmp(b))
            .map(|t| (t, 2.0 * self.eps_return / self.speed))
    }
}

/// Discrete Perron–Frobenius operator on a fiber grid.
#[derive(Debug, Clone)]
pub struct PerronFrobenius {
    grid: FiberGrid,
    support: Vec<bool>,
    records: Vec<Option<ReturnRecord>>,
    nearest: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct PfOutput {
    pub values: Vec<f64>,
    /// L² bound on the nearest-neighbour interpolation error.
    pub interpolation_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DissipativeReason {
    /// Recurrent volume at or below the resolution floor: `L²` of the
    /// recurrent set is treated as `{0}`.
    NegligibleRecurrence { volume: f64, floor: f64 },
    /// Cesàro averages of `U^k` decay below the tolerance.
    AveragesDecay { relative_norm: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Dissipativity {
    Dissipative(DissipativeReason),
    NonDissipative {
        witness: Vec<f64>,
        relative_norm: f64,
    },
}

impl Dissipativity {
    pub fn is_dissipative(&self) -> bool {
        matches!(self, Dissipativity::Dissipative(_))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DissipativityOptions {
    pub iterations: usize,
    pub tol: f64,
    /// Recurrent volumes at or below this fraction of `|S^{n-1}|` count as zero.
    pub volume_floor_fraction: f64,
}

impl Default for DissipativityOptions {
    fn default() -> Self {
        Self {
            iterations: 32,
            tol: 0.1,
            volume_floor_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpreadingReport {
    pub initial_distance: f64,
    pub final_distance: f64,
    pub ratio: f64,
    pub lower: f64,
    pub upper: f64,
    pub base_distance: f64,
    pub base_bound: f64,
    pub c1: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpreadingCalibration {
    /// Time window `δ` over which spreading is controlled.
    pub delta: f64,
    pub c1: f64,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

impl HamiltonianModel {
    fn engine_tol(tol: f64) -> f64 {
        (0.01 * tol).clamp(1e-14, 1e-6)
    }

    /// `G_t(q0)`; negative `t` flows backward.
    pub fn flow(&self, q0: &PhasePoint, t: f64, tol: f64) -> Result<PhasePoint> {
        if !(tol > 0.0) {
            return Err(Error::Invalid("tolerance must be positive".into()));
        }
        self.manifold.check_point(&q0.base)?;
        if t == 0.0 {
            return Ok(q0.clone());
        }
        let eng = Engine::new(
            self,
            Self::engine_tol(tol),
            t.signum(),
            false,
            self.max_step(&q0.base.coords, &q0.covector),
        );
        let cur = eng.start(q0)?;
        let end = eng.advance(cur, t.abs(), |_, _| Ok(false))?;
        Ok(eng.point(&end))
    }

    /// Samples of the trajectory at `count + 1` equally spaced times in `[0, t]`.
    pub fn trajectory(&self, q0: &PhasePoint, t: f64, count: usize, tol: f64) -> Result<Vec<(f64, PhasePoint)>> {
        let mut out = vec![(0.0, q0.clone())];
        let mut q = q0.clone();
        for k in 1..=count {
            let dt = t / count as f64;
            q = self.flow(&q, dt, tol)?;
            out.push((k as f64 * dt, q.clone()));
        }
        Ok(out)
    }

    /// Flow together with its variational matrix.
    pub fn linearized_flow(&self, q0: &PhasePoint, t: f64) -> Result<LinearizedFlow> {
        self.manifold.check_point(&q0.base)?;
        let m = 2 * self.dim();
        if t == 0.0 {
            return Ok(LinearizedFlow {
                end: q0.clone(),
                matrix: DMatrix::identity(m, m),
            });
        }
        let eng = Engine::new(
            self,
            self.tol,
            t.signum(),
            true,
            self.max_step(&q0.base.coords, &q0.covector),
        );
        let cur = eng.start(q0)?;
        let start_chart = cur.chart;
        let end = eng.advance(cur, t.abs(), |_, _| Ok(false))?;
        // Express the initial variation in the chart of q0.
        let mut mat = eng.matrix(&end);
        if start_chart != q0.base.chart {
            let d = transition_jacobian(&self.manifold, &q0.base, &q0.covector, start_chart);
            mat *= d;
        }
        Ok(LinearizedFlow {
            end: eng.point(&end),
            matrix: mat,
        })
    }

    /// First return of direction `xi` (unit covector in normal coordinates at `x0`).
    pub fn return_time(&self, x0: &ChartPoint, xi: &[f64], t_max: f64, fiber_tol: f64) -> Result<ReturnRecord> {
        if !(t_max > 0.0) || !(fiber_tol > 0.0) {
            return Err(Error::Invalid("t_max and fiber_tol must be positive".into()));
        }
        let chart = self.fiber_chart(x0)?;
        let omega = normalized(xi);
        let covector = self.shell_covector(&chart, &omega)?;
        let q0 = PhasePoint::new(x0.clone(), covector.clone());
        let eng = Engine::new(self, self.tol, 1.0, true, self.max_step(&x0.coords, &covector));
        let start = eng.start(&q0)?;
        let start_chart = start.chart;
        let target = Target::new(&self.manifold, x0);
        let speed = self.base_speed(&x0.coords, &covector);
        let t_skip = 1e-3 * self.manifold.injectivity_radius().value / speed;
        let mut found: Option<Approach> = None;
        let mut closest = f64::INFINITY;
        let mut grazing = false;
        eng.scan_approaches(start, t_max, &target, t_skip, |a| {
            closest = closest.min(a.gap);
            if a.gap <= fiber_tol {
                found = Some(a.clone());
                return Ok(true);
            }
            if a.gap <= 10.0 * fiber_tol {
                grazing = true;
            }
            Ok(false)
        })?;
        let Some(hit) = found else {
            return Err(Error::NotReturned { t_max, closest });
        };
        let mut cur = hit.cursor;
        if cur.chart != x0.chart {
            cur = eng.to_chart(cur, x0.chart);
        }
        let n = self.dim();
        let x_t = ChartPoint::new(cur.chart, cur.z[..n].to_vec());
        let xi_t = cur.z[n..2 * n].to_vec();
        let eta = normalized(&chart.covector_to_normal(&x_t, &xi_t)?);
        let mut mat = eng.matrix(&cur);
        if start_chart != x0.chart {
            mat *= transition_jacobian(&self.manifold, x0, &covector, start_chart);
        }
        let jacobian = fiber_jacobian(&chart, &mat, &omega, &eta);
        Ok(ReturnRecord {
            direction: omega,
            return_time: hit.t,
            returned_direction: eta,
            jacobian,
            converged: hit.gap <= fiber_tol,
            gap: hit.gap,
            grazing,
        })
    }

    /// `(η, J)` of the first return map.
    pub fn first_return_map(&self, x0: &ChartPoint, xi: &[f64], t_max: f64) -> Result<(Vec<f64>, f64)> {
        let r = self.return_time(x0, xi, t_max, DEFAULT_FIBER_TOL)?;
        Ok((r.returned_direction, r.jacobian))
    }

    /// Scan every grid direction for late re-entries into the `eps_return`
    /// neighbourhood of `x0`, forward and backward in time.
    pub fn recurrent_set_estimate(
        &self,
        x0: &ChartPoint,
        grid: &FiberGrid,
        t_max: f64,
        eps_return: f64,
    ) -> Result<RecurrenceEstimate> {
        if grid.dim() != self.dim() {
            return Err(Error::Invalid("fiber grid dimension does not match the manifold".into()));
        }
        if !(t_max > 0.0) || !(eps_return > 0.0) {
            return Err(Error::Invalid("t_max and eps_return must be positive".into()));
        }
        let chart = self.fiber_chart(x0)?;
        let target = Target::new(&self.manifold, x0);
        let late = 2.0 * t_max / 3.0;
        let samples: Result<Vec<RecurrenceSample>> = grid
            .directions()
            .par_iter()
            .map(|omega| {
                let covector = self.shell_covector(&chart, omega)?;
                let speed = self.base_speed(&x0.coords, &covector);
                let t_skip = 1e-3 * self.manifold.injectivity_radius().value / speed;
                let q0 = PhasePoint::new(x0.clone(), covector.clone());
                let mut first_return = None;
                let mut closest_late = f64::INFINITY;
                let mut late_hit = [false; 2];
                for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let eng = Engine::new(self, self.tol.max(1e-11), sign, false, self.max_step(&x0.coords, &covector));
                    let start = eng.start(&q0)?;
                    eng.scan_approaches(start, t_max, &target, t_skip, |a| {
                        if a.gap <= eps_return && sign > 0.0 && first_return.is_none() {
                            first_return = Some(a.t);
                        }
                        if a.t >= late {
                            closest_late = closest_late.min(a.gap);
                            if a.gap <= eps_return {
                                late_hit[k] = true;
                                return Ok(sign < 0.0 || first_return.is_some());
                            }
                        }
                        Ok(false)
                    })?;
                }
                Ok(RecurrenceSample {
                    direction: omega.clone(),
                    recurrent: late_hit[0] && late_hit[1],
                    forward_late: late_hit[0],
                    backward_late: late_hit[1],
                    first_return,
                    closest_late,
                })
            })
            .collect();
        let samples = samples?;
        let volume = samples
            .iter()
            .zip(grid.weights())
            .filter(|(s, _)| s.recurrent)
            .map(|(_, w)| w)
            .sum();
        let c0 = self.shell_covector(&chart, grid.direction(0))?;
        Ok(RecurrenceEstimate {
            base: x0.clone(),
            grid: grid.clone(),
            samples,
            volume,
            t_max,
            eps_return,
            speed: self.base_speed(&x0.coords, &c0),
        })
    }

    /// Return-map table over the directions in `support`.
    pub fn perron_frobenius(
        &self,
        x0: &ChartPoint,
        grid: &FiberGrid,
        support: &[bool],
        t_max: f64,
        fiber_tol: f64,
    ) -> Result<PerronFrobenius> {
        if support.len() != grid.len() {
            return Err(Error::Invalid("support mask length does not match the grid".into()));
        }
        let records: Result<Vec<Option<ReturnRecord>>> = grid
            .directions()
            .par_iter()
            .zip(support.par_iter())
            .map(|(omega, inside)| {
                if !*inside {
                    return Ok(None);
                }
                self.return_time(x0, omega, t_max, fiber_tol).map(Some)
            })
            .collect();
        let records = records?;
        let nearest = records
            .iter()
            .map(|r| match r {
                Some(r) => grid.nearest(&r.returned_direction),
                None => (0, 0.0),
            })
            .collect();
        Ok(PerronFrobenius {
            grid: grid.clone(),
            support: support.to_vec(),
            records,
            nearest,
        })
    }

    /// `U f(ξ) = √J(ξ) f(η(ξ))` on the support, zero elsewhere.
    pub fn perron_frobenius_apply(
        &self,
        x0: &ChartPoint,
        grid: &FiberGrid,
        support: &[bool],
        f: &[f64],
        t_max: f64,
    ) -> Result<PfOutput> {
        self.perron_frobenius(x0, grid, support, t_max, DEFAULT_FIBER_TOL)?
            .apply(f)
    }

    /// Cesàro averages of `U^k` applied to the indicator of the recurrent set.
    pub fn dissipativity_test(
        &self,
        recurrence: &RecurrenceEstimate,
        opts: &DissipativityOptions,
    ) -> Result<Dissipativity> {
        let floor = opts.volume_floor_fraction * recurrence.grid.total_volume();
        if recurrence.volume <= floor {
            return Ok(Dissipativity::Dissipative(DissipativeReason::NegligibleRecurrence {
                volume: recurrence.volume,
                floor,
            }));
        }
        let support = recurrence.indicator();
        let pf = self.perron_frobenius(
            &recurrence.base,
            &recurrence.grid,
            &support,
            recurrence.t_max,
            recurrence.eps_return.max(DEFAULT_FIBER_TOL),
        )?;
        let f0: Vec<f64> = support.iter().map(|s| if *s { 1.0 } else { 0.0 }).collect();
        let w = recurrence.grid.weights();
        let l2 = |v: &[f64]| v.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
        let norm0 = l2(&f0);
        let mut acc = vec![0.0; f0.len()];
        let mut cur = f0.clone();
        let iters = opts.iterations.max(1);
        for _ in 0..iters {
            acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += c);
            cur = pf.apply(&cur)?.values;
        }
        acc.iter_mut().for_each(|a| *a /= iters as f64);
        let rel = l2(&acc) / norm0;
        if rel >= opts.tol {
            Ok(Dissipativity::NonDissipative {
                witness: acc,
                relative_norm: rel,
            })
        } else {
            Ok(Dissipativity::Dissipative(DissipativeReason::AveragesDecay {
                relative_norm: rel,
            }))
        }
    }

    /// Does `q` lie on `G_t(x0, ξ0)` with `|t| ≤ δ` and `ξ0` within the tube radius of its center?
    pub fn tube_contains(&self, tube: &TubeSpec, q: &PhasePoint) -> Result<bool> {
        self.manifold.check_point(&q.base)?;
        let chart = self.fiber_chart(&tube.base)?;
        let target = Target::new(&self.manifold, &tube.base);
        let tol = 1e-7 * self.manifold.injectivity_radius().value.max(1.0);
        let in_ball = |x: &ChartPoint, xi: &[f64]| -> Result<bool> {
            let omega = normalized(&chart.covector_to_normal(x, xi)?);
            let d = omega
                .iter()
                .zip(&tube.center)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(d <= tube.radius)
        };
        let n = self.dim();
        if target.gap(&self.manifold, q.base.chart, &q.base.coords) <= tol && in_ball(&q.base, &q.covector)? {
            return Ok(true);
        }
        for sign in [-1.0, 1.0] {
            let eng = Engine::new(self, self.tol.max(1e-12), sign, false, self.max_step(&q.base.coords, &q.covector));
            let start = eng.start(q)?;
            let mut hit = false;
            let mut err = None;
            let end = eng.scan_approaches(start, tube.halfwidth, &target, 0.0, |a| {
                if a.gap <= tol {
                    let x = ChartPoint::new(a.cursor.chart, a.cursor.z[..n].to_vec());
                    match in_ball(&x, &a.cursor.z[n..2 * n]) {
                        Ok(true) => {
                            hit = true;
                            return Ok(true);
                        }
                        Ok(false) => {}
                        Err(e) => err = Some(e),
                    }
                }
                Ok(false)
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            if hit {
                return Ok(true);
            }
            if target.gap(&self.manifold, end.chart, &end.z) <= tol {
                let x = ChartPoint::new(end.chart, end.z[..n].to_vec());
                if in_ball(&x, &end.z[n..2 * n])? {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Phase-space distance in normal coordinates centred at the first base point.
    pub fn phase_distance(&self, q1: &PhasePoint, q2: &PhasePoint) -> Result<f64> {
        let chart = self.fiber_chart(&q1.base)?;
        let y2 = chart.to_normal(&q2.base)?;
        let e1 = chart.covector_to_normal(&q1.base, &q1.covector)?;
        let e2 = chart.covector_to_normal(&q2.base, &q2.covector)?;
        let base: f64 = y2.iter().map(|v| v * v).sum();
        let fib: f64 = e1.iter().zip(&e2).map(|(a, b)| (a - b).powi(2)).sum();
        Ok((base + fib).sqrt())
    }

    /// Default spreading window: a quarter of the injectivity radius in flow time.
    pub fn spreading_window(&self, x0: &ChartPoint) -> Result<f64> {
        let chart = self.fiber_chart(x0)?;
        let xi = self.shell_covector(&chart, &vec_unit(self.dim()))?;
        Ok(0.25 * self.manifold.injectivity_radius().value / self.base_speed(&x0.coords, &xi))
    }

    /// Compare the spread of two fiber directions after time `t` with the
    /// two-sided bound `[d/2 − C₁d², 2d + C₁d²]` and the base bound `C₁ d |t|`.
    pub fn flow_spreading_check(
        &self,
        x0: &ChartPoint,
        xi1: &[f64],
        xi2: &[f64],
        t: f64,
        c1: f64,
    ) -> Result<SpreadingReport> {
        let chart = self.fiber_chart(x0)?;
        let q1 = PhasePoint::new(x0.clone(), self.shell_covector(&chart, xi1)?);
        let q2 = PhasePoint::new(x0.clone(), self.shell_covector(&chart, xi2)?);
        let d0 = self.phase_distance(&q1, &q2)?;
        let tol = self.tol.max(1e-12);
        let p1 = self.flow(&q1, t, tol)?;
        let p2 = self.flow(&q2, t, tol)?;
        let dt = self.phase_distance(&p1, &p2)?;
        let base_distance = self.manifold.distance(&p1.base, &p2.base)?.value;
        let lower = 0.5 * d0 - c1 * d0 * d0;
        let upper = 2.0 * d0 + c1 * d0 * d0;
        let base_bound = c1 * d0 * t.abs();
        let ratio = if d0 > 0.0 { dt / d0 } else { 1.0 };
        let slack = 1e-12;
        Ok(SpreadingReport {
            initial_distance: d0,
            final_distance: dt,
            ratio,
            lower,
            upper,
            base_distance,
            base_bound,
            c1,
            within: dt >= lower - slack && dt <= upper + slack && base_distance <= base_bound + slack,
        })
    }

    /// Smallest `C₁` (times a 10% margin) consistent with sampled pairs of
    /// nearby directions over `|t| ≤ delta`.
    pub fn calibrate_spreading(&self, x0: &ChartPoint, delta: f64) -> Result<SpreadingCalibration> {
        if self.dim() != 2 {
            return Err(Error::Invalid("spreading calibration is implemented for n = 2".into()));
        }
        let mut need: f64 = 0.0;
        for k in 0..12 {
            let a = (k as f64 + 0.5) * std::f64::consts::TAU / 12.0;
            for &d in &[1e-3, 1e-2, 5e-2] {
                let b = a + d;
                for &frac in &[0.25, 0.5, 1.0, -0.5] {
                    let t = frac * delta;
                    let r = self.flow_spreading_check(x0, &[a.cos(), a.sin()], &[b.cos(), b.sin()], t, 0.0)?;
                    let d0 = r.initial_distance;
                    need = need
                        .max((0.5 * d0 - r.final_distance) / (d0 * d0))
                        .max((r.final_distance - 2.0 * d0) / (d0 * d0))
                        .max(r.base_distance / (d0 * t.abs()));
                }
            }
        }
        Ok(SpreadingCalibration {
            delta,
            c1: 1.1 * need.max(1e-3),
        })
    }
}

fn vec_unit(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    v
}

/// `|det|` of the fiber block of the variational matrix, restricted to the
/// tangent spaces of the unit fiber sphere at `omega` and `eta`.
fn fiber_jacobian(chart: &NormalChart, mat: &DMatrix<f64>, omega: &[f64], eta: &[f64]) -> f64 {
    let n = omega.len();
    let a = chart.origin_frame();
    let block = mat.view((n, n), (n, n)).into_owned();
    let a_inv_t = a
        .transpose()
        .try_inverse()
        .expect("non-degenerate normal frame");
    let b = a_inv_t * block * a.transpose();
    let qo = tangent_basis(omega);
    let qe = tangent_basis(eta);
    let k = n - 1;
    let m = DMatrix::from_fn(k, k, |r, c| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += qe[r][i] * b[(i, j)] * qo[c][j];
            }
        }
        acc
    });
    m.determinant().abs()
}

impl PerronFrobenius {
    pub fn grid(&self) -> &FiberGrid {
        &self.grid
    }

    pub fn records(&self) -> &[Option<ReturnRecord>] {
        &self.records
    }

    pub fn apply(&self, f: &[f64]) -> Result<PfOutput> {
        if f.len() != self.grid.len() {
            return Err(Error::Invalid("sample count does not match the grid".into()));
        }
        let lip = self.lipschitz(f);
        let mut values = vec![0.0; f.len()];
        let mut err2 = 0.0;
        for i in 0..f.len() {
            if !self.support[i] {
                continue;
            }
            let r = self.records[i]
                .as_ref()
                .ok_or(Error::NotReturned { t_max: f64::NAN, closest: f64::NAN })?;
            let (k, off) = self.nearest[i];
            let s = r.jacobian.sqrt();
            values[i] = s * f[k];
            err2 += (s * lip * off).powi(2) * self.grid.weights()[i];
        }
        Ok(PfOutput {
            values,
            interpolation_bound: err2.sqrt(),
        })
    }

    fn lipschitz(&self, f: &[f64]) -> f64 {
        let dirs = self.grid.directions();
        let mut lip: f64 = 0.0;
        if self.grid.dim() == 2 {
            let n = f.len();
            let step = 2.0 * std::f64::consts::PI / n as f64;
            for i in 0..n {
                lip = lip.max((f[(i + 1) % n] - f[i]).abs() / step);
            }
            return lip;
        }
        for i in 0..f.len() {
            for j in (i + 1)..f.len() {
                let d = angle_between(&dirs[i], &dirs[j]);
                if d < 2.0 * self.grid.spacing() {
                    lip = lip.max((f[i] - f[j]).abs() / d);
                }
            }
        }
        lip
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sphere(r: f64) -> HamiltonianModel {
        HamiltonianModel::laplace(ManifoldModel::round_sphere(r).unwrap())
    }

    fn torus() -> HamiltonianModel {
        HamiltonianModel::laplace(ManifoldModel::flat_torus(vec![2.0 * PI, 2.0 * PI]).unwrap())
    }

    fn north() -> ChartPoint {
        ChartPoint::new(ChartId::PolarX, vec![PI / 2.0, PI / 2.0])
    }

    #[test]
    fn speed_two_great_circles() {
        let h = sphere(1.0);
        // unit covector at the north pole pointing along e_x
        let chart = h.fiber_chart(&north()).unwrap();
        let q0 = PhasePoint::new(north(), h.shell_covector(&chart, &[1.0, 0.0]).unwrap());
        let q = h.flow(&q0, PI / 4.0, 1e-10).unwrap();
        let p = h.manifold().sphere_unit(&q.base);
        assert!((p[0] - 1.0).abs() < 1e-9 && p[2].abs() < 1e-9, "ended at {p:?}");
        let q = h.flow(&q0, PI / 2.0, 1e-10).unwrap();
        let p = h.manifold().sphere_unit(&q.base);
        assert!((p[2] + 1.0).abs() < 1e-9, "ended at {p:?}");
    }

    #[test]
    fn zero_time_is_identity() {
        let h = sphere(1.0);
        let q = PhasePoint::new(ChartPoint::spherical(1.0, 2.0), vec![0.3, 0.1]);
        assert_eq!(h.flow(&q, 0.0, 1e-8).unwrap(), q);
        let lf = h.linearized_flow(&q, 0.0).unwrap();
        assert_eq!(lf.matrix, DMatrix::identity(4, 4));
    }

    #[test]
    fn torus_straight_lines() {
        let h = torus();
        let q = PhasePoint::new(ChartPoint::global(vec![0.0, 0.0]), vec![1.0, 0.0]);
        let e = h.flow(&q, 1.0, 1e-10).unwrap();
        assert_relative_eq!(e.base.coords[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(e.base.coords[1], 0.0, epsilon = 1e-10);
        assert_eq!(e.covector, vec![1.0, 0.0]);
        let lf = h.linearized_flow(&q, 1.5).unwrap();
        let mut expect = DMatrix::identity(4, 4);
        expect[(0, 2)] = 3.0;
        expect[(1, 3)] = 3.0;
        assert_relative_eq!(lf.matrix, expect, epsilon = 1e-10);
    }

    #[test]
    fn sphere_variational_matrix_is_symplectic() {
        let h = sphere(1.7);
        let q = PhasePoint::new(ChartPoint::spherical(0.9, 0.4), vec![0.8, 1.1]);
        for &t in &[0.7, 3.0, -2.2] {
            let lf = h.linearized_flow(&q, t).unwrap();
            assert_relative_eq!(lf.matrix.determinant(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn sphere_returns_at_pi() {
        let h = sphere(1.0);
        for k in 0..8 {
            let a = (k as f64 + 0.5) * PI / 4.0;
            let r = h.return_time(&north(), &[a.cos(), a.sin()], 10.0, 1e-6).unwrap();
            assert!((r.return_time - PI).abs() < 1e-6);
            assert!((r.returned_direction[0] - a.cos()).abs() < 1e-6);
            assert!((r.returned_direction[1] - a.sin()).abs() < 1e-6);
            assert!((r.jacobian - 1.0).abs() < 1e-4);
            assert!(r.converged);
        }
    }

    #[test]
    fn radius_scales_return_time() {
        let h = sphere(2.0);
        let r = h
            .return_time(&ChartPoint::spherical(1.0, 0.5), &[0.6, 0.8], 20.0, 1e-6)
            .unwrap();
        assert!((r.return_time - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn torus_rational_and_irrational_directions() {
        let h = torus();
        let x0 = ChartPoint::global(vec![0.3, 0.2]);
        let r = h.return_time(&x0, &[1.0, 0.0], 10.0, 1e-6).unwrap();
        assert!((r.return_time - PI).abs() < 1e-8);
        assert!((r.jacobian - 1.0).abs() < 1e-8);
        let s = 3.0f64.sqrt();
        let r = h.return_time(&x0, &[1.0 / s, 2.0f64.sqrt() / s], 50.0, 1e-6);
        assert!(matches!(r, Err(Error::NotReturned { .. })));
    }

    #[test]
    fn sphere_everything_recurrent_torus_almost_nothing() {
        let h = sphere(1.0);
        let grid = FiberGrid::circle(16);
        let est = h.recurrent_set_estimate(&north(), &grid, 12.0, 1e-3).unwrap();
        assert!(est.samples.iter().all(|s| s.recurrent));
        assert_relative_eq!(est.volume, 2.0 * PI, epsilon = 1e-12);
        let (t, _) = est.inf_return_time().unwrap();
        assert!((t - PI).abs() < 1e-6);

        let t = torus();
        let est = t
            .recurrent_set_estimate(&ChartPoint::global(vec![1.0, 1.0]), &FiberGrid::circle(64), 100.0, 1e-3)
            .unwrap();
        assert!(est.fraction() <= 0.05);
    }

    #[test]
    fn perron_frobenius_on_sphere_is_identity() {
        let h = sphere(1.0);
        let grid = FiberGrid::circle(24);
        let support = vec![true; 24];
        let f: Vec<f64> = (0..24).map(|i| (i as f64 * 0.3).sin() + 2.0).collect();
        let out = h.perron_frobenius_apply(&north(), &grid, &support, &f, 10.0).unwrap();
        for (a, b) in out.values.iter().zip(&f) {
            assert_relative_eq!(a, b, epsilon = 1e-4);
        }
        let n0 = grid.integrate(&f.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
        let n1 = grid
            .integrate(&out.values.iter().map(|v| v * v).collect::<Vec<_>>())
            .sqrt();
        assert!((n1 - n0).abs() <= out.interpolation_bound + 1e-4 * n0);
    }

    #[test]
    fn non_returning_support_is_an_error() {
        let h = torus();
        let grid = FiberGrid::circle(7);
        let support = vec![true; 7];
        let r = h.perron_frobenius_apply(&ChartPoint::global(vec![0.0, 0.0]), &grid, &support, &[1.0; 7], 5.0);
        assert!(matches!(r, Err(Error::NotReturned { .. })));
    }

    #[test]
    fn dissipativity_verdicts() {
        let h = sphere(1.0);
        let est = h
            .recurrent_set_estimate(&north(), &FiberGrid::circle(16), 12.0, 1e-3)
            .unwrap();
        match h.dissipativity_test(&est, &DissipativityOptions::default()).unwrap() {
            Dissipativity::NonDissipative { witness, .. } => {
                let m = witness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let l = witness.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(m - l < 1e-3);
            }
            other => panic!("unexpected verdict {other:?}"),
        }
        let t = torus();
        let est = t
            .recurrent_set_estimate(&ChartPoint::global(vec![0.0, 0.0]), &FiberGrid::circle(32), 100.0, 1e-3)
            .unwrap();
        assert!(t
            .dissipativity_test(&est, &DissipativityOptions::default())
            .unwrap()
            .is_dissipative());
    }

    #[test]
    fn tube_membership() {
        let h = sphere(1.0);
        let tube = TubeSpec::new(north(), vec![1.0, 0.0], 0.1, 0.5).unwrap();
        let chart = h.fiber_chart(&north()).unwrap();
        let center = PhasePoint::new(north(), h.shell_covector(&chart, &[1.0, 0.0]).unwrap());
        assert!(h.tube_contains(&tube, &center).unwrap());
        let mid = h.flow(&center, 0.25, 1e-10).unwrap();
        assert!(h.tube_contains(&tube, &mid).unwrap());
        let back = h.flow(&center, -0.4, 1e-10).unwrap();
        assert!(h.tube_contains(&tube, &back).unwrap());
        // the antipodal fiber is reached only at |t| = π/2
        let anti = h.flow(&center, PI / 2.0, 1e-10).unwrap();
        let narrow = TubeSpec::new(north(), vec![1.0, 0.0], 0.1, PI / 4.0 - 0.01).unwrap();
        assert!(!h.tube_contains(&narrow, &anti).unwrap());
        let off = PhasePoint::new(north(), h.shell_covector(&chart, &[0.0, 1.0]).unwrap());
        assert!(!h.tube_contains(&tube, &off).unwrap());
    }

    #[test]
    fn spreading_on_the_sphere() {
        let h = sphere(1.0);
        let a: f64 = 0.3;
        let b = a + 1e-2;
        let r0 = h
            .flow_spreading_check(&north(), &[a.cos(), a.sin()], &[b.cos(), b.sin()], 0.0, 1.0)
            .unwrap();
        assert_eq!(r0.ratio, 1.0);
        let cal = h.calibrate_spreading(&north(), 0.2).unwrap();
        let r = h
            .flow_spreading_check(&north(), &[a.cos(), a.sin()], &[b.cos(), b.sin()], 0.1, cal.c1)
            .unwrap();
        assert!(r.within);
        assert!(r.ratio >= 0.45 && r.ratio <= 2.05);
        let same = h
            .flow_spreading_check(&north(), &[a.cos(), a.sin()], &[a.cos(), a.sin()], 0.1, cal.c1)
            .unwrap();
        assert_eq!(same.final_distance, 0.0);
    }

    #[derive(Debug)]
    struct Anisotropic;

    impl PrincipalSymbol for Anisotropic {
        fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
            (2.0 + x[1].cos()) * xi[0] * xi[0] + xi[1] * xi[1] - 1.0
        }
    }

    #[test]
    fn general_symbols_conserve_energy() {
        let m = ManifoldModel::flat_torus(vec![2.0 * PI, 2.0 * PI]).unwrap();
        let h = HamiltonianModel::general(m, Arc::new(Anisotropic)).unwrap();
        let chart = h.fiber_chart(&ChartPoint::global(vec![0.0, 0.0])).unwrap();
        let xi = h.shell_covector(&chart, &[0.6, 0.8]).unwrap();
        assert!(h.p(&[0.0, 0.0], &xi).abs() < 1e-12);
        let q = h.flow(&PhasePoint::new(ChartPoint::global(vec![0.0, 0.0]), xi), 5.0, 1e-9).unwrap();
        assert!(h.p_at(&q).unwrap().abs() < 1e-8);
        assert!(HamiltonianModel::general(ManifoldModel::round_sphere(1.0).unwrap(), Arc::new(Anisotropic)).is_err());
    }

    fn sphere_phase_point() -> impl Strategy<Value = PhasePoint> {
        (0.3f64..2.8, 0.0f64..6.2, 0.0f64..std::f64::consts::TAU, prop::bool::ANY).prop_map(|(t, p, a, x)| {
            let chart = if x { ChartId::PolarX } else { ChartId::PolarZ };
            let s = t.sin();
            PhasePoint::new(ChartPoint::new(chart, vec![t, p]), vec![a.cos(), s * a.sin()])
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn energy_is_conserved(q in sphere_phase_point(), t in -10.0f64..10.0) {
            let h = sphere(1.0);
            let e = h.flow(&q, t, 1e-9).unwrap();
            prop_assert!((h.p_at(&e).unwrap() - h.p_at(&q).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn group_law(q in sphere_phase_point(), s in -3.0f64..3.0, t in -3.0f64..3.0) {
            let h = sphere(1.0);
            let tol = 1e-8;
            let a = h.flow(&h.flow(&q, s, tol).unwrap(), t, tol).unwrap();
            let b = h.flow(&q, s + t, tol).unwrap();
            prop_assert!(h.phase_distance(&a, &b).unwrap() <= 10.0 * tol);
        }

        #[test]
        fn variational_determinant_is_one(q in sphere_phase_point(), t in -4.0f64..4.0) {
            let h = sphere(1.0);
            let lf = h.linearized_flow(&q, t).unwrap();
            prop_assert!((lf.matrix.determinant() - 1.0).abs() <= 1e-8);
        }
    }
}
