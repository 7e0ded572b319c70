use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use eigengrowth::bounds::{classify_point, cluster_sup_sphere, dxi_p_norm, growth_constants, modes_lower_bound, nu_hp, thm_local_bound};
use eigengrowth::microlocal::{defect_pairing, invariance_check};
use eigengrowth::quasimode::{admissible_h, residual_norm_sphere, sup_norm_scan, zonal_harmonic};
use eigengrowth::special::gauss_legendre_on;
use eigengrowth::{
    Atom, ChartPoint, CircleFunction, Dissipativity, DissipativityOptions, FiberAtom, FiberGrid,
    MeasureDecomposition, PhasePoint, PointVerdict, Quasimode, QuasimodeSpec, ShtGrid, Symbol, WaveField,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bundle::{num, ExperimentResult, Table};
use crate::config::{ModelConfig, RunConfig};

/// Uniform fiber densities are scaled so `uniform_mass` is their flowout mass on the unit sphere.
const UNIFORM_SCALE: f64 = 1.0 / (4.0 * PI * PI);
const FLOW_TOL: f64 = 1e-10;

struct Output {
    schema: u32,
    tables: Vec<Table>,
    provenance: Vec<&'static str>,
    resolution: BTreeMap<String, Value>,
    calibrated: BTreeMap<String, f64>,
}

impl Output {
    fn new(schema: u32, tables: Vec<Table>, provenance: &[&'static str]) -> Self {
        Self {
            schema,
            tables,
            provenance: provenance.to_vec(),
            resolution: BTreeMap::new(),
            calibrated: BTreeMap::new(),
        }
    }

    fn resolution(mut self, key: &str, v: Value) -> Self {
        self.resolution.insert(key.into(), v);
        self
    }

    fn calibrated(mut self, key: &str, v: f64) -> Self {
        self.calibrated.insert(key.into(), v);
        self
    }
}

pub fn run(name: &str, config: &RunConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    let out = match name {
        "flow" => flow(config),
        "return-map" => return_map(config),
        "recurrence" => recurrence(config),
        "quasimode" => quasimode(config),
        "defect" => defect(config),
        "bounds" => bounds(config),
        "scaling" => scaling(config),
        "cluster" => cluster(config),
        other => bail!("unknown experiment `{other}`"),
    }
    .with_context(|| format!("experiment `{name}`"))?;
    Ok(ExperimentResult {
        name: name.into(),
        schema: out.schema,
        tables: out.tables,
        provenance: out.provenance,
        resolution: out.resolution,
        calibrated: out.calibrated,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn sphere_radius(config: &RunConfig) -> Result<f64> {
    match config.model {
        ModelConfig::Sphere { radius } => Ok(radius),
        _ => bail!("this experiment needs a sphere model"),
    }
}

fn flow(config: &RunConfig) -> Result<Output> {
    let ham = config.hamiltonian()?;
    let x0 = config.base_point();
    let p = &config.params;
    let grid = FiberGrid::circle(p.directions);
    let chart = ham.fiber_chart(&x0)?;
    let rows: Vec<Vec<Vec<String>>> = (0..p.directions)
        .into_par_iter()
        .map(|i| {
            let q0 = PhasePoint::new(x0.clone(), ham.shell_covector(&chart, grid.direction(i))?);
            let e0 = ham.p_at(&q0)?;
            ham.trajectory(&q0, p.t_max, p.samples, FLOW_TOL)?
                .into_iter()
                .map(|(t, q)| {
                    Ok(vec![
                        i.to_string(),
                        num(grid.angle(i)),
                        num(t),
                        num(q.base.coords[0]),
                        num(q.base.coords[1]),
                        num((ham.p_at(&q)? - e0).abs()),
                    ])
                })
                .collect::<eigengrowth::Result<_>>()
        })
        .collect::<eigengrowth::Result<_>>()?;
    let mut t = Table::new("flow", &["direction", "angle", "t", "x0", "x1", "energy_drift"]);
    rows.into_iter().flatten().for_each(|r| t.push(r));
    Ok(Output::new(1, vec![t], &["dynamics::trajectory", "dynamics::p_at"])
        .resolution("directions", json!(p.directions))
        .resolution("samples", json!(p.samples))
        .resolution("flow_tolerance", json!(FLOW_TOL)))
}

fn return_map(config: &RunConfig) -> Result<Output> {
    let ham = config.hamiltonian()?;
    let x0 = config.base_point();
    let p = &config.params;
    let grid = FiberGrid::circle(p.directions);
    let rows: Vec<Vec<String>> = (0..p.directions)
        .into_par_iter()
        .map(|i| {
            let omega = grid.direction(i);
            let head = vec![i.to_string(), num(grid.angle(i))];
            let tail = match ham.return_time(&x0, omega, p.t_max, p.fiber_tol) {
                Ok(r) => {
                    let err = omega
                        .iter()
                        .zip(&r.returned_direction)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    vec![
                        "returned".into(),
                        num(r.return_time),
                        num(r.returned_direction[0]),
                        num(r.returned_direction[1]),
                        num(err),
                        num(r.jacobian),
                        r.converged.to_string(),
                        num(r.gap),
                    ]
                }
                Err(_) => {
                    let nan = num(f64::NAN);
                    vec!["not-returned".into(), nan.clone(), nan.clone(), nan.clone(), nan.clone(), nan.clone(), "false".into(), nan]
                }
            };
            [head, tail].concat()
        })
        .collect();
    let mut t = Table::new(
        "return_map",
        &["direction", "angle", "status", "return_time", "eta0", "eta1", "direction_error", "jacobian", "converged", "gap"],
    );
    rows.into_iter().for_each(|r| t.push(r));
    Ok(Output::new(1, vec![t], &["dynamics::return_time"])
        .resolution("directions", json!(p.directions))
        .resolution("fiber_tol", json!(p.fiber_tol))
        .resolution("t_max", json!(p.t_max)))
}

fn verdict_name(v: PointVerdict) -> &'static str {
    match v {
        PointVerdict::SubsaturatingNoRecurrence => "subsaturating-no-recurrence",
        PointVerdict::SubsaturatingDissipative => "subsaturating-dissipative",
        PointVerdict::MaximalGrowthNotExcluded => "maximal-growth-not-excluded",
    }
}

fn recurrence(config: &RunConfig) -> Result<Output> {
    let ham = config.hamiltonian()?;
    let x0 = config.base_point();
    let p = &config.params;
    let grid = FiberGrid::circle(p.directions);
    let rec = ham.recurrent_set_estimate(&x0, &grid, p.t_max, p.eps_return)?;
    let opts = DissipativityOptions::default();
    let dis = ham.dissipativity_test(&rec, &opts)?;
    let class = classify_point(&rec, &dis, opts.volume_floor_fraction);
    let mut samples = Table::new("recurrence", &["direction", "angle", "recurrent", "first_return", "closest_late"]);
    for (i, s) in rec.samples.iter().enumerate() {
        samples.push(vec![
            i.to_string(),
            num(grid.angle(i)),
            s.recurrent.to_string(),
            num(s.first_return.unwrap_or(f64::NAN)),
            num(s.closest_late),
        ]);
    }
    let spread = match &dis {
        Dissipativity::NonDissipative { witness, .. } => {
            let hi = witness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = witness.iter().cloned().fold(f64::INFINITY, f64::min);
            (hi - lo) / hi.abs().max(lo.abs())
        }
        Dissipativity::Dissipative(_) => f64::NAN,
    };
    let fraction = rec.fraction() + 0.0;
    let summary = Table::new("recurrence_summary", &["fraction", "volume", "dissipative", "witness_spread", "verdict"]).row(vec![
        num(fraction),
        num(rec.volume + 0.0),
        dis.is_dissipative().to_string(),
        num(spread),
        verdict_name(class.verdict).into(),
    ]);
    Ok(Output::new(
        1,
        vec![samples, summary],
        &["dynamics::recurrent_set_estimate", "dynamics::dissipativity_test", "bounds::classify_point"],
    )
    .resolution("directions", json!(p.directions))
    .resolution("t_max", json!(p.t_max))
    .resolution("eps_return", json!(p.eps_return))
    .resolution("pf_iterations", json!(opts.iterations))
    .calibrated("volume_floor_fraction", opts.volume_floor_fraction))
}

fn decomposition(config: &RunConfig, x0: &ChartPoint) -> Result<MeasureDecomposition> {
    let p = &config.params;
    let count = 64;
    let atoms = p
        .atoms
        .iter()
        .map(|[a, m]| FiberAtom { direction: vec![a.cos(), a.sin()], mass: *m })
        .collect();
    Ok(MeasureDecomposition::new(
        x0.clone(),
        FiberGrid::circle(count),
        vec![p.uniform_mass * UNIFORM_SCALE; count],
        atoms,
    )?)
}

/// Degrees from `h` (nearest admissible level) or the configured degree list.
fn levels(config: &RunConfig, radius: f64) -> Vec<usize> {
    let p = &config.params;
    if p.h.is_empty() {
        p.degrees.clone()
    } else {
        p.h.iter().map(|h| ((radius / h - 0.5).round() as usize).max(1)).collect()
    }
}

fn quasimode(config: &RunConfig) -> Result<Output> {
    let radius = sphere_radius(config)?;
    let ham = config.hamiltonian()?;
    let x0 = config.base_point();
    let p = &config.params;
    let lower = modes_lower_bound(&decomposition(config, &x0)?, &ham)?;
    let eps: Vec<Option<f64>> = if p.epsilons.is_empty() { vec![None] } else { p.epsilons.iter().map(|e| Some(*e)).collect() };
    let jobs: Vec<(usize, Option<f64>)> = levels(config, radius).into_iter().flat_map(|l| eps.iter().map(move |e| (l, *e))).collect();
    let rows: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|(l, e)| {
            let h = admissible_h(*l, radius);
            let spec = QuasimodeSpec {
                center: x0.clone(),
                density: CircleFunction::constant(64, p.uniform_mass * UNIFORM_SCALE)?,
                atoms: p.atoms.iter().map(|[a, m]| Atom { angle: *a, mass: *m }).collect(),
                epsilon: *e,
                cutoff_r: 1.25,
                h,
            };
            let q = Quasimode::build(&ham, &spec)?;
            let grid = ShtGrid::new(l + 8);
            let values = q.grid_values(&grid);
            let spectral = residual_norm_sphere(&grid, &values, h, radius, 1e-6)?;
            let center = h.sqrt() * q.value_at_center().norm();
            Ok(vec![
                l.to_string(),
                num(h),
                num(q.epsilon()),
                num(center),
                num(center / spectral.norm),
                num(lower),
                num(spectral.residual / spectral.norm / h),
            ])
        })
        .collect::<eigengrowth::Result<_>>()?;
    let mut t = Table::new(
        "quasimode",
        &["l", "h", "epsilon", "scaled_center", "normalized_center", "lower_bound", "residual_over_h"],
    );
    rows.into_iter().for_each(|r| t.push(r));
    Ok(Output::new(1, vec![t], &["quasimode::build", "quasimode::residual_norm_sphere", "bounds::modes_lower_bound"])
        .resolution("requested_h", json!(p.h))
        .resolution("transform_band", json!("l + 8"))
        .resolution("cutoff_r", json!(1.25))
        .calibrated("modes_lower_bound", lower))
}

/// Seeded smooth symbol `(α₀ + α₁cos(⟨k₁,x⟩+β₁) + α₂sin(⟨k₂,x⟩+β₂)) e^{−|ξ−c|²/σ²}`.
fn random_symbol(rng: &mut ChaCha8Rng, id: usize) -> Symbol {
    let a: [f64; 3] = [rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    let b: [f64; 2] = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
    let k1 = [rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64];
    let k2 = [rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64];
    let t = rng.gen_range(0.0..2.0 * PI);
    let c = [0.8 * t.cos(), 0.8 * t.sin()];
    let s2 = rng.gen_range(0.3f64..1.0).powi(2);
    Symbol::general(format!("s{id}"), move |x, xi| {
        let px = a[0] + a[1] * (k1[0] * x[0] + k1[1] * x[1] + b[0]).cos() + a[2] * (k2[0] * x[0] + k2[1] * x[1] + b[1]).sin();
        let d2 = (xi[0] - c[0]).powi(2) + (xi[1] - c[1]).powi(2);
        Complex64::new(px * (-d2 / s2).exp(), 0.0)
    })
}

fn defect(config: &RunConfig) -> Result<Output> {
    let periods = match &config.model {
        ModelConfig::Torus { periods } if periods.iter().all(|p| (p - 2.0 * PI).abs() < 1e-12) => periods.clone(),
        _ => bail!("the defect experiment needs the 2π-periodic torus"),
    };
    let ham = config.hamiltonian()?;
    let model = ham.manifold();
    let p = &config.params;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let symbols: Vec<Symbol> = (0..p.symbols).map(|i| random_symbol(&mut rng, i)).collect();
    let max_mode = (p.grid as i64 / 2 - 4).min(60);
    if max_mode < 20 {
        bail!("params.grid: need at least 48 points per axis");
    }
    let modes: Vec<[i64; 2]> = (0..p.symbols)
        .map(|_| loop {
            let m = [rng.gen_range(-max_mode..=max_mode), rng.gen_range(-max_mode..=max_mode)];
            let n = ((m[0] * m[0] + m[1] * m[1]) as f64).sqrt();
            if n >= 20.0 && n <= max_mode as f64 {
                break m;
            }
        })
        .collect();
    let (nodes, weights) = gauss_legendre_on(48, 0.0, 2.0 * PI);
    let rows: Vec<Vec<String>> = symbols
        .par_iter()
        .zip(&modes)
        .map(|(a, m)| {
            let norm = ((m[0] * m[0] + m[1] * m[1]) as f64).sqrt();
            let h = 1.0 / norm;
            let u = WaveField::torus_modes(periods.clone(), vec![p.grid; 2], h, &[(m.to_vec(), Complex64::new(1.0, 0.0))])?;
            let pairing = defect_pairing(a, &u, model)?;
            let unit = (defect_pairing(&Symbol::one(), &u, model)? - 1.0).norm();
            let omega = [m[0] as f64 / norm, m[1] as f64 / norm];
            let mut avg = 0.0;
            for (x, wx) in nodes.iter().zip(&weights) {
                for (y, wy) in nodes.iter().zip(&weights) {
                    avg += wx * wy * a.eval(model, &[*x, *y], &omega).re;
                }
            }
            avg /= 4.0 * PI * PI;
            Ok(vec![
                a.id().to_string(),
                m[0].to_string(),
                m[1].to_string(),
                num(h),
                num(pairing.re),
                num(pairing.im),
                num(avg),
                num((pairing - avg).norm()),
                num(1e-3_f64.max(5.0 * h)),
                num(unit),
            ])
        })
        .collect::<eigengrowth::Result<_>>()?;
    let mut table = Table::new(
        "defect",
        &["symbol", "m0", "m1", "h", "pairing_re", "pairing_im", "average", "error", "tolerance", "unit_error"],
    );
    rows.into_iter().for_each(|r| table.push(r));
    let family: Vec<WaveField> = [2i64, 4, 8]
        .iter()
        .map(|k| {
            let modes = vec![
                (vec![3 * k, 4 * k], Complex64::new(1.0, 0.5)),
                (vec![5 * k, 0], Complex64::new(0.7, 0.0)),
                (vec![-4 * k, 3 * k], Complex64::new(0.0, -0.4)),
            ];
            WaveField::torus_modes(periods.clone(), vec![p.grid; 2], 1.0 / (5 * k) as f64, &modes)
        })
        .collect::<eigengrowth::Result<_>>()?;
    let inv = invariance_check(&family, &symbols, &ham, 0.7)?;
    let mut invariance = Table::new("defect_invariance", &["symbol", "discrepancy"]);
    for (id, d) in &inv.entries {
        invariance.push(vec![id.clone(), num(*d)]);
    }
    Ok(Output::new(
        1,
        vec![table, invariance],
        &["microlocal::defect_pairing", "microlocal::invariance_check", "special::gauss_legendre_on"],
    )
    .resolution("grid", json!([p.grid, p.grid]))
    .resolution("average_nodes", json!(48))
    .resolution("invariance_family_h", json!([0.1, 0.05, 0.025]))
    .calibrated("max_invariance_discrepancy", inv.max_discrepancy))
}

fn bounds(config: &RunConfig) -> Result<Output> {
    let ham = config.hamiltonian()?;
    let x0 = config.base_point();
    let p = &config.params;
    let dec = decomposition(config, &x0)?;
    let report = thm_local_bound(&dec, &ham, Some(p.c_n))?;
    let lower = modes_lower_bound(&dec, &ham)?;
    let rec = ham.recurrent_set_estimate(&x0, &FiberGrid::circle(p.directions), p.t_max, p.eps_return)?;
    let g = growth_constants(&ham, &rec, p.c_n)?;
    let chart = ham.fiber_chart(&x0)?;
    let mut factor_err: f64 = 0.0;
    for omega in FiberGrid::circle(p.directions).directions() {
        let xi = ham.shell_covector(&chart, omega)?;
        factor_err = factor_err.max((nu_hp(&ham, &x0, &xi)? - 2.0).abs()).max((dxi_p_norm(&ham, &x0, &xi)? - 2.0).abs());
    }
    let t = Table::new(
        "bounds",
        &[
            "raw_integral", "bound", "lower_bound", "verdict", "factor_error", "recurrent_fraction", "a", "a_prime",
            "a_double_prime", "chain_holds",
        ],
    )
    .row(vec![
        num(report.raw_integral),
        num(report.bound.unwrap_or(f64::NAN)),
        num(lower),
        format!("{:?}", report.verdict),
        num(factor_err),
        num(rec.fraction() + 0.0),
        num(g.a + 0.0),
        num(g.a_prime + 0.0),
        num(g.a_double_prime + 0.0),
        g.chain_holds.to_string(),
    ]);
    Ok(Output::new(
        1,
        vec![t],
        &["bounds::thm_local_bound", "bounds::modes_lower_bound", "bounds::growth_constants", "bounds::nu_hp", "bounds::dxi_p_norm"],
    )
    .resolution("fiber_grid", json!(report.grid_resolution))
    .resolution("directions", json!(p.directions))
    .resolution("loop_length_numerical", json!(g.loop_numerical))
    .resolution("injectivity_numerical", json!(g.injectivity_numerical))
    .calibrated("c_n", p.c_n)
    .calibrated("injectivity_radius", g.injectivity_radius)
    .calibrated("loop_length", g.loop_length))
}

fn scaling(config: &RunConfig) -> Result<Output> {
    let radius = sphere_radius(config)?;
    let model = config.manifold()?;
    let center = config.base_point();
    let chart = model.normal_coordinates(&center, 0.5 * radius)?;
    let rows: Vec<Vec<String>> = config
        .params
        .degrees
        .par_iter()
        .map(|l| {
            let h = radius / ((l * (l + 1)) as f64).sqrt();
            let scan = sup_norm_scan(
                |y| zonal_harmonic(&model, *l, &chart.from_normal(y)?).map(f64::abs),
                2,
                h,
                0.25 * radius,
            )?;
            Ok(vec![l.to_string(), num(h), num(scan.max_abs), num(scan.scaled)])
        })
        .collect::<eigengrowth::Result<_>>()?;
    let mut t = Table::new("scaling", &["l", "h", "sup", "scaled_sup"]);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(Output::new(1, vec![t], &["quasimode::zonal_harmonic", "quasimode::sup_norm_scan"])
        .resolution("search_radius", json!(0.25 * radius))
        .resolution("scan_spacing", json!("max(h/4, search_radius/400)")))
}

fn cluster(config: &RunConfig) -> Result<Output> {
    sphere_radius(config)?;
    let model = config.manifold()?;
    let w = config.params.cluster_width;
    let rows: Vec<Vec<String>> = config
        .params
        .degrees
        .par_iter()
        .map(|l| {
            let c = cluster_sup_sphere(&model, *l, w)?;
            Ok(vec![
                l.to_string(),
                num(c.lambda),
                num(c.value),
                num(c.ratio),
                num(c.ratio * 2.0 * PI),
                c.degrees.len().to_string(),
            ])
        })
        .collect::<eigengrowth::Result<_>>()?;
    let mut t = Table::new("cluster", &["l", "lambda", "value", "ratio", "ratio_2pi", "degrees"]);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(Output::new(1, vec![t], &["bounds::cluster_sup_sphere"]).resolution("cluster_width", json!(w)))
}

/// Runs every configured experiment in order.
pub fn run_all(config: &RunConfig) -> Result<Vec<ExperimentResult>> {
    config.experiments.iter().map(|name| run(name, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_config(experiments: &[&str]) -> RunConfig {
        let mut c: RunConfig = toml::from_str("[model]\nkind = \"sphere\"\n").unwrap();
        c.experiments = experiments.iter().map(|s| s.to_string()).collect();
        c
    }

    #[test]
    fn sphere_returns_at_half_period() {
        let mut c = sphere_config(&["return-map"]);
        c.params.directions = 8;
        let r = run("return-map", &c).unwrap();
        let times = r.tables[0].numbers("return_time").unwrap();
        assert_eq!(times.len(), 8);
        assert!(times.iter().all(|t| (t - PI).abs() < 1e-6));
    }

    #[test]
    fn nearest_admissible_levels() {
        let mut c = sphere_config(&[]);
        c.params.h = vec![0.01, 0.005];
        assert_eq!(levels(&c, 1.0), vec![100, 200]);
    }

    #[test]
    fn sphere_only_experiments_reject_the_torus() {
        let c: RunConfig = toml::from_str("[model]\nkind = \"torus\"\nperiods = [1.0, 1.0]\n").unwrap();
        assert!(run("scaling", &c).is_err());
        assert!(run("defect", &c).is_err());
    }
}
