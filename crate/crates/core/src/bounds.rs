//! Sup-norm bounds and constants at a point, and checks on fiber decompositions
//! `μ = ρ + f dH` of defect measures.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    DissipativeReason, Dissipativity, HamiltonianModel, PhasePoint, RecurrenceEstimate, TubeSpec,
    DEFAULT_FIBER_TOL,
};
use crate::error::{Error, Result};
use crate::fiber::{angle_between, tangent_basis, FiberGrid};
use crate::manifold::{ChartPoint, ManifoldModel, NormalChart};
use crate::special::{assoc_legendre_column, unit_sphere_area};

const SHELL_TOL: f64 = 1e-6;

fn check_shell(ham: &HamiltonianModel, x0: &ChartPoint, xi: &[f64]) -> Result<()> {
    ham.manifold().check_point(x0)?;
    let p = ham.p(&x0.coords, xi);
    if p.abs() > SHELL_TOL {
        return Err(Error::Domain(format!("covector is off the characteristic set: p = {p}")));
    }
    Ok(())
}

fn g_norm(model: &ManifoldModel, x: &[f64], v: &[f64]) -> f64 {
    let a = model.diag_metric(x).a;
    v.iter().zip(&a).map(|(vi, ai)| vi * vi * ai).sum::<f64>().sqrt()
}

/// Sasaki norm of the part of `H_p` at `(x0, ξ)` normal to the fiber `Σ_{x0}`
/// inside the flowout. In normal coordinates at `x0` this is the base velocity
/// together with the component of the horizontal momentum change along it.
pub fn nu_hp(ham: &HamiltonianModel, x0: &ChartPoint, xi: &[f64]) -> Result<f64> {
    check_shell(ham, x0, xi)?;
    let model = ham.manifold();
    let x = &x0.coords;
    let v = ham.dxi_p(x, xi);
    let dx = ham.dx_p(x, xi);
    let gamma = model.christoffel_at(x0)?;
    let n = x.len();
    // horizontal derivative ∂_k p + Γ^j_{ki} ξ_j ∂_{ξ_i} p
    let horizontal: Vec<f64> = (0..n)
        .map(|k| {
            let mut s = dx[k];
            for i in 0..n {
                for j in 0..n {
                    s += gamma.get(j, k, i) * xi[j] * v[i];
                }
            }
            s
        })
        .collect();
    let speed = g_norm(model, x, &v);
    if !(speed > 0.0) {
        return Err(Error::Domain("∂_ξ p vanishes on the characteristic set".into()));
    }
    let along: f64 = horizontal.iter().zip(&v).map(|(h, vi)| h * vi).sum::<f64>() / speed;
    Ok((speed * speed + along * along).sqrt())
}

/// `|∂_ξ p · ∂_x|_g`.
pub fn dxi_p_norm(ham: &HamiltonianModel, x0: &ChartPoint, xi: &[f64]) -> Result<f64> {
    check_shell(ham, x0, xi)?;
    let v = ham.dxi_p(&x0.coords, xi);
    let s = g_norm(ham.manifold(), &x0.coords, &v);
    if !(s > 0.0) {
        return Err(Error::Domain("∂_ξ p vanishes on the characteristic set".into()));
    }
    Ok(s)
}

/// Point mass of the singular part in a fiber direction (unit, normal coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberAtom {
    pub direction: Vec<f64>,
    pub mass: f64,
}

/// Density on phase space restricted to the flowout, for invariance checks.
pub type PhaseDensity = Arc<dyn Fn(&ManifoldModel, &PhasePoint) -> f64 + Send + Sync>;

/// Extension of the fiber density to the flowout.
#[derive(Clone)]
pub enum FlowoutDensity {
    /// Extended by invariance: constant along each orbit.
    Invariant,
    /// A density given directly on phase space.
    Phase(PhaseDensity),
}

impl fmt::Debug for FlowoutDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowoutDensity::Invariant => write!(f, "Invariant"),
            FlowoutDensity::Phase(_) => write!(f, "Phase(..)"),
        }
    }
}

/// `μ_{x0} = ρ + f dH` with `f` sampled on a fiber grid.
#[derive(Debug, Clone)]
pub struct MeasureDecomposition {
    pub x0: ChartPoint,
    pub grid: FiberGrid,
    pub density: Vec<f64>,
    pub atoms: Vec<FiberAtom>,
    pub flowout: FlowoutDensity,
}

impl MeasureDecomposition {
    pub fn new(x0: ChartPoint, grid: FiberGrid, density: Vec<f64>, atoms: Vec<FiberAtom>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::Invalid("density length does not match the fiber grid".into()));
        }
        if atoms.iter().any(|a| a.direction.len() != grid.dim() || !(a.mass >= 0.0)) {
            return Err(Error::Invalid("atoms need nonnegative mass and a direction of the fiber dimension".into()));
        }
        Ok(Self {
            x0,
            grid,
            density,
            atoms,
            flowout: FlowoutDensity::Invariant,
        })
    }

    pub fn with_flowout(mut self, flowout: FlowoutDensity) -> Self {
        self.flowout = flowout;
        self
    }

    fn check_density(&self) -> Result<()> {
        match self.density.iter().find(|v| !(**v >= 0.0)) {
            Some(v) => Err(Error::Domain(format!("fiber density must be nonnegative (found {v})"))),
            None => Ok(()),
        }
    }

    /// `T·∫ f |ν(H_p)| dVol + Σ a_k` for a common return time `period`.
    pub fn total_mass(&self, ham: &HamiltonianModel, period: f64) -> Result<f64> {
        let data = FiberData::compute(ham, &self.x0, &self.grid)?;
        let ac: f64 = (0..self.grid.len())
            .map(|j| self.density[j] * data.nu[j] * data.element[j] * self.grid.weights()[j])
            .sum();
        Ok(period * ac + self.atoms.iter().map(|a| a.mass).sum::<f64>())
    }
}

/// Shell covectors and geometric factors at each fiber grid direction.
struct FiberData {
    nu: Vec<f64>,
    dxi: Vec<f64>,
    /// Sasaki volume element of `Σ_{x0}` relative to the unit-sphere measure.
    element: Vec<f64>,
}

impl FiberData {
    fn compute(ham: &HamiltonianModel, x0: &ChartPoint, grid: &FiberGrid) -> Result<Self> {
        if grid.dim() != ham.dim() {
            return Err(Error::Invalid("fiber grid dimension does not match the manifold".into()));
        }
        let chart = ham.fiber_chart(x0)?;
        let rows: Result<Vec<(f64, f64, f64)>> = grid
            .directions()
            .par_iter()
            .map(|omega| {
                let xi = ham.shell_covector(&chart, omega)?;
                Ok((
                    nu_hp(ham, x0, &xi)?,
                    dxi_p_norm(ham, x0, &xi)?,
                    shell_element(ham, &chart, omega)?,
                ))
            })
            .collect();
        let rows = rows?;
        Ok(Self {
            nu: rows.iter().map(|r| r.0).collect(),
            dxi: rows.iter().map(|r| r.1).collect(),
            element: rows.iter().map(|r| r.2).collect(),
        })
    }
}

/// `r^{n-2} √(r² + |∇r|²)` for the shell written as `r(ω)ω` in normal coordinates.
fn shell_element(ham: &HamiltonianModel, chart: &NormalChart, omega: &[f64]) -> Result<f64> {
    if matches!(ham.symbol(), crate::dynamics::SymbolKind::Laplace { .. }) {
        let xi = ham.shell_covector(chart, omega)?;
        let w = chart.covector_to_origin_normal(&xi);
        return Ok(w.iter().map(|v| v * v).sum::<f64>().sqrt().powi(ham.dim() as i32 - 1));
    }
    let radius = |o: &[f64]| -> Result<f64> {
        let xi = ham.shell_covector(chart, o)?;
        Ok(chart.covector_to_origin_normal(&xi).iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    let r = radius(omega)?;
    let h = 1e-5;
    let mut grad_sq = 0.0;
    for t in tangent_basis(omega) {
        let shift = |s: f64| -> Vec<f64> { omega.iter().zip(&t).map(|(o, v)| o + s * v).collect() };
        let d = (radius(&shift(h))? - radius(&shift(-h))?) / (2.0 * h);
        grad_sq += d * d;
    }
    Ok(r.powi(ham.dim() as i32 - 2) * (r * r + grad_sq).sqrt())
}

/// Growth verdict attached to a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthVerdict {
    /// `f ≡ 0`: sup norms are `o(h^{(1-n)/2})`.
    LittleO,
    /// Nonzero absolutely continuous part: the bound is of saturating order.
    Saturating,
}

/// Bound value with all of its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `∫ √f √(|ν(H_p)| / |∂_ξ p|_g) dVol`.
    pub raw_integral: f64,
    /// `C_n · raw_integral` when `C_n` is configured.
    pub bound: Option<f64>,
    pub c_n: Option<f64>,
    pub verdict: GrowthVerdict,
    pub f_integral: f64,
    pub support_volume: f64,
    pub fiber_volume: f64,
    pub nu_range: (f64, f64),
    pub dxi_range: (f64, f64),
    pub grid_resolution: Vec<usize>,
}

/// Defect-measure sup-norm bound at `x0`.
pub fn thm_local_bound(dec: &MeasureDecomposition, ham: &HamiltonianModel, c_n: Option<f64>) -> Result<BoundReport> {
    dec.check_density()?;
    let data = FiberData::compute(ham, &dec.x0, &dec.grid)?;
    let w = dec.grid.weights();
    let mut raw = 0.0;
    let mut f_int = 0.0;
    let mut supp = 0.0;
    let mut vol = 0.0;
    for j in 0..dec.grid.len() {
        let dv = data.element[j] * w[j];
        let f = dec.density[j];
        raw += f.sqrt() * (data.nu[j] / data.dxi[j]).sqrt() * dv;
        f_int += f * dv;
        vol += dv;
        if f > 0.0 {
            supp += dv;
        }
    }
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
    };
    Ok(BoundReport {
        raw_integral: raw,
        bound: c_n.map(|c| c * raw),
        c_n,
        verdict: if dec.density.iter().all(|v| *v == 0.0) {
            GrowthVerdict::LittleO
        } else {
            GrowthVerdict::Saturating
        },
        f_integral: f_int,
        support_volume: supp,
        fiber_volume: vol,
        nu_range: range(&data.nu),
        dxi_range: range(&data.dxi),
        grid_resolution: dec.grid.resolution().to_vec(),
    })
}

/// Lower bound `(2π)^{(1-n)/2} ∫ √f dVol` attained by the quasimode construction.
pub fn modes_lower_bound(dec: &MeasureDecomposition, ham: &HamiltonianModel) -> Result<f64> {
    dec.check_density()?;
    let n = ham.dim() as f64;
    let data = FiberData::compute(ham, &dec.x0, &dec.grid)?;
    let s: f64 = (0..dec.grid.len())
        .map(|j| dec.density[j].sqrt() * data.element[j] * dec.grid.weights()[j])
        .sum();
    Ok((2.0 * PI).powf(0.5 * (1.0 - n)) * s)
}

/// `A`, `A′`, `A″` at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c_n: f64,
    pub a: f64,
    pub a_prime: f64,
    pub a_double_prime: f64,
    pub recurrent_volume: f64,
    /// Infimum of return times over the recurrent set and its uncertainty.
    pub inf_return_time: Option<(f64, f64)>,
    pub loop_length: f64,
    pub loop_numerical: bool,
    pub injectivity_radius: f64,
    pub injectivity_numerical: bool,
    /// `A ≤ A′ ≤ A″` within the return-time uncertainty.
    pub chain_holds: bool,
}

/// Spectral-cluster constants from a recurrence estimate. The return-time
/// infimum is refined by locating the exact first return of the
/// best-candidate directions.
pub fn growth_constants(
    ham: &HamiltonianModel,
    recurrence: &RecurrenceEstimate,
    c_n: f64,
) -> Result<GrowthConstants> {
    let model = ham.manifold();
    let x0 = &recurrence.base;
    let inj = model.injectivity_radius();
    let vol = recurrence.volume;
    let coarse = recurrence.inf_return_time();
    let inf_t = match coarse {
        None => None,
        Some((t_min, unc)) => {
            let mut best = f64::INFINITY;
            for s in recurrence.samples.iter().filter(|s| s.recurrent) {
                if s.first_return.is_some_and(|t| t <= t_min + 2.0 * unc) {
                    let rec = ham.return_time(x0, &s.direction, t_min + 4.0 * unc + 1.0, recurrence.eps_return)?;
                    best = best.min(rec.return_time);
                }
            }
            Some((best.min(t_min + unc), unc))
        }
    };
    let (loop_length, loop_numerical) = match model.shortest_loop_closed_form(x0) {
        Some(l) => (l, false),
        None => (estimate_loop_length(ham, x0, &recurrence.grid)?, true),
    };
    let (a, unc) = match inf_t {
        Some((t, u)) if vol > 0.0 => (c_n * (vol / (4.0 * t)).sqrt(), u / t),
        _ => (0.0, 0.0),
    };
    let a_prime = c_n * (vol / (2.0 * loop_length)).sqrt();
    let a_double_prime = c_n * (vol / (4.0 * inj.value)).sqrt();
    let slack = 1e-9 + unc;
    Ok(GrowthConstants {
        c_n,
        a,
        a_prime,
        a_double_prime,
        recurrent_volume: vol,
        inf_return_time: inf_t,
        loop_length,
        loop_numerical,
        injectivity_radius: inj.value,
        injectivity_numerical: inj.numerical,
        chain_holds: a <= a_prime * (1.0 + slack) && a_prime <= a_double_prime * (1.0 + slack),
    })
}

/// Shortest sampled geodesic loop: smallest first-return length over the grid
/// and the chart axes.
fn estimate_loop_length(ham: &HamiltonianModel, x0: &ChartPoint, grid: &FiberGrid) -> Result<f64> {
    let chart = ham.fiber_chart(x0)?;
    let inj = ham.manifold().injectivity_radius().value;
    // coordinate axes catch meridians, which an offset grid can miss
    let mut candidates = grid.directions().to_vec();
    if grid.dim() == 2 {
        candidates.extend([vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]);
    }
    let lengths: Vec<f64> = candidates
        .par_iter()
        .filter_map(|omega| {
            let xi = ham.shell_covector(&chart, omega).ok()?;
            let speed = ham.base_speed(&x0.coords, &xi);
            let rec = ham.return_time(x0, omega, 20.0 * inj / speed, DEFAULT_FIBER_TOL).ok()?;
            Some(rec.return_time * speed)
        })
        .collect();
    lengths
        .into_iter()
        .min_by(|a, b| a.total_cmp(b))
        .ok_or_else(|| Error::Domain("no sampled direction returns to the base point".into()))
}

/// Injectivity-radius form of the Hörmander constant, `C̃_n / inj^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HormanderConstant {
    pub value: f64,
    pub numerical: bool,
}

pub fn hormander_constant(model: &ManifoldModel, c_tilde_n: f64) -> HormanderConstant {
    let inj = model.injectivity_radius();
    HormanderConstant {
        value: c_tilde_n / inj.value.sqrt(),
        numerical: inj.numerical,
    }
}

/// Tubes around the atom directions with `count · r^{n-1} < ε`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeCover {
    pub tubes: Vec<TubeSpec>,
    pub radius: f64,
    /// `Σ r_j^{n-1}`.
    pub radius_sum: f64,
}

pub fn singular_tube_cover(x0: &ChartPoint, atoms: &[FiberAtom], epsilon: f64, delta: f64) -> Result<TubeCover> {
    if !(epsilon > 0.0) || !(delta > 0.0) {
        return Err(Error::Invalid("tube cover needs positive ε and δ".into()));
    }
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for a in atoms {
        if !centers.iter().any(|c| angle_between(c, &a.direction) < 1e-12) {
            centers.push(a.direction.clone());
        }
    }
    let Some(dim) = centers.first().map(|c| c.len()) else {
        return Ok(TubeCover {
            tubes: Vec::new(),
            radius: 0.0,
            radius_sum: 0.0,
        });
    };
    let k = centers.len() as f64;
    let radius = 0.5 * (epsilon / k).powf(1.0 / (dim as f64 - 1.0));
    let tubes = centers
        .into_iter()
        .map(|c| TubeSpec::new(x0.clone(), c, radius, delta))
        .collect::<Result<Vec<_>>>()?;
    Ok(TubeCover {
        radius_sum: k * radius.powi(dim as i32 - 1),
        tubes,
        radius,
    })
}

/// Atom mass found inside the cover.
pub fn covered_mass(ham: &HamiltonianModel, cover: &TubeCover, x0: &ChartPoint, atoms: &[FiberAtom]) -> Result<f64> {
    let chart = ham.fiber_chart(x0)?;
    let mut mass = 0.0;
    for a in atoms {
        let q = PhasePoint::new(x0.clone(), ham.shell_covector(&chart, &a.direction)?);
        for t in &cover.tubes {
            if ham.tube_contains(t, &q)? {
                mass += a.mass;
                break;
            }
        }
    }
    Ok(mass)
}

/// Invariance defects of the two parts of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// Atom mass not matched by an atom of equal mass at its returned direction.
    pub atoms: f64,
    /// Relative defect of the absolutely continuous part.
    pub density: f64,
}

/// Invariance of `ρ` and `f dH` under the flow. Atoms must be permuted by the
/// first return map with equal masses. An invariant extension of `f` is checked
/// through the return map (`f(η)J = f`); a phase-space density is compared with
/// its pull-back by `G_t` at sampled flowout points.
pub fn decomposition_invariance_check(dec: &MeasureDecomposition, ham: &HamiltonianModel, t: f64) -> Result<InvarianceReport> {
    let x0 = &dec.x0;
    let chart = ham.fiber_chart(x0)?;
    let inj = ham.manifold().injectivity_radius().value;
    let t_max = |omega: &[f64]| -> Result<f64> {
        let xi = ham.shell_covector(&chart, omega)?;
        Ok(20.0 * inj / ham.base_speed(&x0.coords, &xi))
    };
    let mut atom_defect = 0.0;
    for a in &dec.atoms {
        match ham.return_time(x0, &a.direction, t_max(&a.direction)?, DEFAULT_FIBER_TOL) {
            Ok(rec) => {
                let image: f64 = dec
                    .atoms
                    .iter()
                    .filter(|b| angle_between(&b.direction, &rec.returned_direction) < 1e-5)
                    .map(|b| b.mass)
                    .sum();
                atom_defect += (image - a.mass).abs();
            }
            Err(Error::NotReturned { .. }) => atom_defect += a.mass,
            Err(e) => return Err(e),
        }
    }
    let density = match &dec.flowout {
        FlowoutDensity::Invariant => {
            let support: Vec<bool> = dec.density.iter().map(|v| *v > 0.0).collect();
            if !support.iter().any(|s| *s) {
                0.0
            } else {
                let tm = t_max(dec.grid.direction(0))?;
                let pf = ham.perron_frobenius(x0, &dec.grid, &support, tm, DEFAULT_FIBER_TOL)?;
                let w = dec.grid.weights();
                let mut diff = 0.0;
                let mut norm = 0.0;
                for (j, rec) in pf.records().iter().enumerate() {
                    let f = dec.density[j];
                    norm += f * f * w[j];
                    let pulled = match rec {
                        Some(r) => dec.density[dec.grid.nearest(&r.returned_direction).0] * r.jacobian,
                        None => 0.0,
                    };
                    diff += (pulled - f).powi(2) * w[j];
                }
                (diff / norm).sqrt()
            }
        }
        FlowoutDensity::Phase(rho) => {
            let model = ham.manifold();
            let tol = ham.tolerance().max(1e-10);
            let span = 2.0 * inj;
            let samples: Vec<(usize, f64)> = (0..dec.grid.len())
                .flat_map(|j| (0..8).map(move |k| (j, k as f64)))
                .collect();
            let pairs: Result<Vec<(f64, f64)>> = samples
                .par_iter()
                .map(|(j, k)| {
                    let omega = dec.grid.direction(*j);
                    let xi = ham.shell_covector(&chart, omega)?;
                    let speed = ham.base_speed(&x0.coords, &xi);
                    let q0 = PhasePoint::new(x0.clone(), xi);
                    let q = ham.flow(&q0, k / 8.0 * span / speed, tol)?;
                    let qt = ham.flow(&q, t, tol)?;
                    Ok((rho(model, &q), rho(model, &qt)))
                })
                .collect();
            let pairs = pairs?;
            let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
            if scale == 0.0 {
                0.0
            } else {
                pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
            }
        }
    };
    Ok(InvarianceReport {
        atoms: atom_defect,
        density,
    })
}

/// Mass of `f` outside the recurrent set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportCheck {
    pub violating_mass: f64,
    pub flagged: bool,
}

pub fn recurrence_support_check(dec: &MeasureDecomposition, recurrence: &RecurrenceEstimate, tol: f64) -> Result<SupportCheck> {
    if dec.grid != recurrence.grid {
        return Err(Error::Invalid("decomposition and recurrence estimate use different fiber grids".into()));
    }
    let ind = recurrence.indicator();
    let violating_mass: f64 = (0..dec.grid.len())
        .filter(|j| !ind[*j])
        .map(|j| dec.density[j] * dec.grid.weights()[j])
        .sum();
    Ok(SupportCheck {
        violating_mass,
        flagged: violating_mass > tol,
    })
}

/// Growth classification of a point from its return dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointVerdict {
    /// The recurrent set has (numerically) zero volume.
    SubsaturatingNoRecurrence,
    /// The return dynamics is dissipative.
    SubsaturatingDissipative,
    MaximalGrowthNotExcluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: PointVerdict,
    pub recurrent_fraction: f64,
    pub volume_floor_fraction: f64,
}

/// Apply the rule table: negligible recurrent volume, then dissipativity.
pub fn classify_point(recurrence: &RecurrenceEstimate, dissipativity: &Dissipativity, volume_floor_fraction: f64) -> Classification {
    let fraction = recurrence.fraction();
    let verdict = if fraction <= volume_floor_fraction
        || matches!(dissipativity, Dissipativity::Dissipative(DissipativeReason::NegligibleRecurrence { .. }))
    {
        PointVerdict::SubsaturatingNoRecurrence
    } else if dissipativity.is_dissipative() {
        PointVerdict::SubsaturatingDissipative
    } else {
        PointVerdict::MaximalGrowthNotExcluded
    };
    Classification {
        verdict,
        recurrent_fraction: fraction,
        volume_floor_fraction,
    }
}

/// Sup over the sphere of the spectral cluster `Σ |u_j(y)|²` with `λ_j ∈ [λ_l, λ_l + δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSup {
    pub value: f64,
    pub lambda: f64,
    /// `value / λ^{n-1}`.
    pub ratio: f64,
    pub degrees: Vec<usize>,
}

/// Cluster sums by explicit summation over `m` at sample latitudes (the sum is
/// latitude-independent by the addition theorem).
pub fn cluster_sup_sphere(model: &ManifoldModel, l: usize, delta: f64) -> Result<ClusterSup> {
    let r = model
        .sphere_radius()
        .ok_or_else(|| Error::Invalid("cluster sums are available on round spheres".into()))?;
    if !(delta >= 0.0) {
        return Err(Error::Invalid("cluster window must be nonnegative".into()));
    }
    let lam = |k: usize| ((k * (k + 1)) as f64).sqrt() / r;
    let lambda = lam(l);
    let mut degrees = vec![l];
    let mut k = l + 1;
    while lam(k) <= lambda + delta {
        degrees.push(k);
        k += 1;
    }
    let top = *degrees.last().unwrap();
    let mut value: f64 = 0.0;
    for theta in [0.0, 0.4, 1.1, PI / 2.0, 2.5] {
        let x = f64::cos(theta);
        let mut s = 0.0;
        for m in 0..=top {
            let col = assoc_legendre_column(top, m, x);
            for d in &degrees {
                if *d >= m {
                    let p = col[d - m];
                    s += if m == 0 { p * p } else { 2.0 * p * p };
                }
            }
        }
        value = value.max(s / (r * r));
    }
    Ok(ClusterSup {
        value,
        lambda,
        ratio: value / lambda.powi(model.dim() as i32 - 1),
        degrees,
    })
}

/// `|S^{n-1}|`.
pub fn fiber_volume(dim: usize) -> f64 {
    unit_sphere_area(dim - 1)
}
