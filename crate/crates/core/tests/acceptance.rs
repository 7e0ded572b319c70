//! Acceptance suite: nine criteria, each printed as one PASS/FAIL line.
//! Runs as a plain binary so the report is always visible.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use eigengrowth::bounds::{
    covered_mass, cluster_sup_sphere, dxi_p_norm, growth_constants, modes_lower_bound, nu_hp, singular_tube_cover,
    thm_local_bound, classify_point, PointVerdict,
};
use eigengrowth::dynamics::{Dissipativity, DissipativityOptions};
use eigengrowth::microlocal::{
    defect_pairing, invariance_check, pairing_identities_check, sobolev_linfty_check, PairingResiduals,
};
use eigengrowth::quasimode::{admissible_h, residual_norm_sphere, sup_norm_scan, zonal_harmonic};
use eigengrowth::{
    Atom, ChartPoint, CircleFunction, FiberAtom, FiberGrid, HamiltonianModel, ManifoldModel, MeasureDecomposition,
    PhasePoint, Profile, Quasimode, QuasimodeSpec, Result, ShtGrid, Symbol, WaveField,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn pole() -> ChartPoint {
    ManifoldModel::sphere_point([0.0, 0.0, 1.0])
}

fn sphere(radius: f64) -> HamiltonianModel {
    HamiltonianModel::laplace(ManifoldModel::round_sphere(radius).unwrap())
}

fn torus() -> HamiltonianModel {
    HamiltonianModel::laplace(ManifoldModel::flat_torus(vec![2.0 * PI, 2.0 * PI]).unwrap())
}

fn surface() -> HamiltonianModel {
    let profile = Profile::from_fn(2.0 * PI, 256, |s| 1.0 + 0.3 * s.cos()).unwrap();
    HamiltonianModel::laplace(ManifoldModel::surface_of_revolution(profile))
}

/// `h^{1/2} max|Y_l|` on a radius-`R` sphere with `h = R (l(l+1))^{-1/2}`:
/// a scan around the pole, cross-checked against every node of a transform grid.
fn zonal_scaled_sup(radius: f64, l: usize) -> Result<f64> {
    let model = ManifoldModel::round_sphere(radius)?;
    let h = radius / ((l * (l + 1)) as f64).sqrt();
    let chart = model.normal_coordinates(&pole(), 0.5 * radius)?;
    let scan = sup_norm_scan(
        |y| zonal_harmonic(&model, l, &chart.from_normal(y)?).map(f64::abs),
        2,
        h,
        0.25 * radius,
    )?;
    let grid = ShtGrid::new(2 * l);
    let mut grid_max: f64 = 0.0;
    for i in 0..grid.nlat() {
        grid_max = grid_max.max(zonal_harmonic(&model, l, &ChartPoint::spherical(grid.theta(i), 0.0))?.abs());
    }
    if grid_max > scan.max_abs * (1.0 + 1e-12) {
        return Ok(f64::NAN);
    }
    Ok(scan.scaled)
}

fn criterion_1() -> Result<Outcome> {
    let target = (2.0 * PI).powf(-0.5);
    let vals: Vec<f64> = [50, 100, 200].iter().map(|l| zonal_scaled_sup(1.0, *l)).collect::<Result<_>>()?;
    let gaps: Vec<f64> = vals.iter().map(|v| (v - target).abs()).collect();
    let pass = (0.387..=0.411).contains(&vals[2]) && gaps[0] > gaps[1] && gaps[1] > gaps[2];
    outcome(pass, format!("scaled sup l=50,100,200: {:.6} {:.6} {:.6} (target {target:.6})", vals[0], vals[1], vals[2]))
}

fn uniform_spec(h: f64) -> QuasimodeSpec {
    QuasimodeSpec {
        center: pole(),
        density: CircleFunction::constant(64, 1.0 / (4.0 * PI * PI)).unwrap(),
        atoms: vec![],
        epsilon: None,
        cutoff_r: 1.25,
        h,
    }
}

fn criterion_2() -> Result<Outcome> {
    let ham = sphere(1.0);
    let dec = MeasureDecomposition::new(pole(), FiberGrid::circle(64), vec![1.0 / (4.0 * PI * PI); 64], vec![])?;
    let lower = modes_lower_bound(&dec, &ham)?;
    let mut ratios = Vec::new();
    let mut residuals = Vec::new();
    let mut hs = Vec::new();
    // nearest admissible h = 1/(l + 1/2) to the nominal 1/l
    for l in [100, 200, 400] {
        let h = admissible_h(l, 1.0);
        let q = Quasimode::build(&ham, &uniform_spec(h))?;
        let grid = ShtGrid::new(l + 8);
        let values = q.grid_values(&grid);
        let spectral = residual_norm_sphere(&grid, &values, h, 1.0, 1e-6)?;
        let norm = grid.norm_sq(&values).sqrt();
        let center = q.value(&pole())?.norm();
        ratios.push(h.sqrt() * center / norm);
        residuals.push(spectral.residual / spectral.norm / h);
        hs.push(h);
    }
    let slope = log_slope(&hs, &residuals);
    let pass = ratios.iter().all(|r| *r >= 0.95 * lower) && (slope - 1.0).abs() <= 0.2 && residuals[2] < residuals[0];
    outcome(
        pass,
        format!(
            "ratios {:.6} {:.6} {:.6} vs 0.95·{lower:.6}; residual/h {:.3e} {:.3e} {:.3e}, slope {slope:.4}",
            ratios[0], ratios[1], ratios[2], residuals[0], residuals[1], residuals[2]
        ),
    )
}

/// Least-squares slope of `log y` against `log x`.
fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_3() -> Result<Outcome> {
    let ham = sphere(1.0);
    let h = admissible_h(200, 1.0);
    let vals: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|e| {
            let spec = QuasimodeSpec {
                center: pole(),
                density: CircleFunction::constant(16, 0.0)?,
                atoms: vec![Atom { angle: 0.7, mass: 1.0 }],
                epsilon: Some(*e),
                cutoff_r: 1.25,
                h,
            };
            Ok(h.sqrt() * Quasimode::build(&ham, &spec)?.value_at_center().norm())
        })
        .collect::<Result<_>>()?;
    outcome(
        vals[0] > vals[1] && vals[1] > vals[2],
        format!("h^1/2|Φ(z0)| at ε=0.2,0.1,0.05: {:.5} {:.5} {:.5}", vals[0], vals[1], vals[2]),
    )
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
    Symbol::general(format!("r{id}"), move |x, xi| {
        let px = a[0] + a[1] * (k1[0] * x[0] + k1[1] * x[1] + b[0]).cos() + a[2] * (k2[0] * x[0] + k2[1] * x[1] + b[1]).sin();
        let d2 = (xi[0] - c[0]).powi(2) + (xi[1] - c[1]).powi(2);
        Complex64::new(px * (-d2 / s2).exp(), 0.0)
    })
}

fn criterion_4() -> Result<Outcome> {
    let ham = torus();
    let model = ham.manifold();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let symbols: Vec<Symbol> = (0..10).map(|i| random_symbol(&mut rng, i)).collect();
    let (nodes, weights) = eigengrowth::special::gauss_legendre_on(48, 0.0, 2.0 * PI);
    let mut worst: f64 = 0.0;
    let mut worst_one: f64 = 0.0;
    let mut within = true;
    for a in &symbols {
        let m = loop {
            let m = [rng.gen_range(-60i64..=60), rng.gen_range(-60i64..=60)];
            let n = ((m[0] * m[0] + m[1] * m[1]) as f64).sqrt();
            if (20.0..=60.0).contains(&n) {
                break m;
            }
        };
        let norm = ((m[0] * m[0] + m[1] * m[1]) as f64).sqrt();
        let h = 1.0 / norm;
        let u = WaveField::torus_modes(vec![2.0 * PI; 2], vec![128, 128], h, &[(m.to_vec(), Complex64::new(1.0, 0.0))])?;
        let p = defect_pairing(a, &u, model)?;
        let omega = [m[0] as f64 / norm, m[1] as f64 / norm];
        let mut avg = 0.0;
        for (x, wx) in nodes.iter().zip(&weights) {
            for (y, wy) in nodes.iter().zip(&weights) {
                avg += wx * wy * a.eval(model, &[*x, *y], &omega).re;
            }
        }
        avg /= 4.0 * PI * PI;
        let err = (p - avg).norm();
        within &= err <= 1e-3_f64.max(5.0 * h);
        worst = worst.max(err);
        worst_one = worst_one.max((defect_pairing(&Symbol::one(), &u, model)? - 1.0).norm());
    }
    let family: Vec<WaveField> = [2i64, 4, 8]
        .iter()
        .map(|k| {
            let modes = vec![
                (vec![3 * k, 4 * k], Complex64::new(1.0, 0.5)),
                (vec![5 * k, 0], Complex64::new(0.7, 0.0)),
                (vec![-4 * k, 3 * k], Complex64::new(0.0, -0.4)),
            ];
            WaveField::torus_modes(vec![2.0 * PI; 2], vec![128, 128], 1.0 / (5 * k) as f64, &modes)
        })
        .collect::<Result<_>>()?;
    let inv = invariance_check(&family, &symbols, &ham, 0.7)?;
    let pass = within && worst_one <= 1e-10 && inv.max_discrepancy <= 1e-3;
    outcome(
        pass,
        format!(
            "max |pairing − average| {worst:.2e}, max |pairing(1) − 1| {worst_one:.2e}, invariance {:.2e}",
            inv.max_discrepancy
        ),
    )
}

fn criterion_5() -> Result<Outcome> {
    let s = sphere(1.0);
    let grid = FiberGrid::circle(64);
    let (mut dt, mut deta, mut dj): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for x0 in [pole(), ChartPoint::spherical(1.0, 0.5)] {
        for omega in grid.directions() {
            let r = s.return_time(&x0, omega, 10.0, 1e-6)?;
            dt = dt.max((r.return_time - PI).abs());
            deta = deta.max(
                omega
                    .iter()
                    .zip(&r.returned_direction)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
            dj = dj.max((r.jacobian - 1.0).abs());
        }
    }
    let t = torus();
    let x0 = ChartPoint::global(vec![0.3, 0.2]);
    let mut torus_err: f64 = 0.0;
    for (p, q) in [(1i64, 0i64), (0, 1), (1, 1), (1, 2), (2, -3), (3, 1)] {
        let n = ((p * p + q * q) as f64).sqrt();
        let omega = [p as f64 / n, q as f64 / n];
        let r = t.return_time(&x0, &omega, 40.0, 1e-9)?;
        torus_err = torus_err
            .max((r.return_time - PI * n).abs())
            .max((r.returned_direction[0] - omega[0]).abs())
            .max((r.returned_direction[1] - omega[1]).abs())
            .max((r.jacobian - 1.0).abs());
    }
    let mut drift: f64 = 0.0;
    for (ham, x0) in [
        (sphere(1.3), ChartPoint::spherical(1.0, 0.4)),
        (torus(), ChartPoint::global(vec![0.1, 0.2])),
        (surface(), ChartPoint::global(vec![0.5, 1.0])),
    ] {
        let chart = ham.fiber_chart(&x0)?;
        let q0 = PhasePoint::new(x0, ham.shell_covector(&chart, &[0.6, 0.8])?);
        let e0 = ham.p_at(&q0)?;
        for (_, q) in ham.trajectory(&q0, 10.0, 20, 1e-10)? {
            drift = drift.max((ham.p_at(&q)? - e0).abs());
        }
    }
    let pass = dt <= 1e-6 && deta <= 1e-6 && dj <= 1e-4 && torus_err <= 1e-8 && drift <= 1e-8;
    outcome(
        pass,
        format!("sphere |T−π| {dt:.1e}, |η−ξ| {deta:.1e}, |J−1| {dj:.1e}; torus {torus_err:.1e}; energy drift {drift:.1e}"),
    )
}

fn criterion_6() -> Result<Outcome> {
    let opts = DissipativityOptions::default();
    let t = torus();
    let trec = t.recurrent_set_estimate(&ChartPoint::global(vec![1.0, 1.0]), &FiberGrid::circle(64), 100.0, 1e-3)?;
    let tdis = t.dissipativity_test(&trec, &opts)?;
    let tverdict = classify_point(&trec, &tdis, opts.volume_floor_fraction).verdict;
    let s = sphere(1.0);
    let srec = s.recurrent_set_estimate(&pole(), &FiberGrid::circle(32), 12.0, 1e-3)?;
    let sdis = s.dissipativity_test(&srec, &opts)?;
    let witness_flat = match &sdis {
        Dissipativity::NonDissipative { witness, .. } => {
            let hi = witness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = witness.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo <= 1e-3 * hi.abs().max(lo.abs())
        }
        Dissipativity::Dissipative(_) => false,
    };
    let sverdict = classify_point(&srec, &sdis, opts.volume_floor_fraction).verdict;
    let pass = trec.fraction() <= 0.05
        && tverdict != PointVerdict::MaximalGrowthNotExcluded
        && witness_flat
        && sverdict == PointVerdict::MaximalGrowthNotExcluded;
    outcome(
        pass,
        format!(
            "torus recurrent fraction {:.4} → {tverdict:?}; sphere constant witness {witness_flat} → {sverdict:?}",
            trec.fraction() + 0.0
        ),
    )
}

fn criterion_7() -> Result<Outcome> {
    let radii = [1.0, 2.0, 4.0];
    // same h = 1/100 (up to the admissible spectrum) on every sphere
    let vals: Vec<f64> = radii
        .iter()
        .map(|r| zonal_scaled_sup(*r, (100.0 * r) as usize))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let predicted = (radii[j] / radii[i]).sqrt();
            worst = worst.max((vals[i] / vals[j] / predicted - 1.0).abs());
        }
    }
    outcome(
        worst <= 0.05,
        format!("scaled sup R=1,2,4: {:.5} {:.5} {:.5}; worst pairwise deviation {worst:.2e}", vals[0], vals[1], vals[2]),
    )
}

fn criterion_8() -> Result<Outcome> {
    let mut factor_err: f64 = 0.0;
    for (ham, x0) in [
        (sphere(1.0), pole()),
        (sphere(2.0), ChartPoint::spherical(0.8, 1.0)),
        (torus(), ChartPoint::global(vec![0.3, 0.4])),
        (surface(), ChartPoint::global(vec![1.0, 2.0])),
    ] {
        let chart = ham.fiber_chart(&x0)?;
        for a in [0.0, 0.9, 2.0, 4.0] {
            let xi = ham.shell_covector(&chart, &[f64::cos(a), f64::sin(a)])?;
            factor_err = factor_err
                .max((nu_hp(&ham, &x0, &xi)? - 2.0).abs())
                .max((dxi_p_norm(&ham, &x0, &xi)? - 2.0).abs());
        }
    }
    let mut chains = Vec::new();
    for (ham, x0, t_max) in [
        (sphere(1.0), pole(), 10.0),
        (torus(), ChartPoint::global(vec![0.3, 0.1]), 30.0),
        (surface(), ChartPoint::global(vec![0.0, 0.0]), 30.0),
    ] {
        let rec = ham.recurrent_set_estimate(&x0, &FiberGrid::circle(16), t_max, 1e-3)?;
        let g = growth_constants(&ham, &rec, 1.0)?;
        chains.push((g.a, g.a_prime, g.a_double_prime, g.chain_holds));
    }
    let cluster = cluster_sup_sphere(&ManifoldModel::round_sphere(1.0)?, 200, 0.5)?;
    let cluster_dev = (cluster.ratio * 2.0 * PI - 1.0).abs();
    let pass = factor_err <= 1e-8 && chains.iter().all(|c| c.3) && cluster_dev <= 0.02;
    let chain_text: Vec<String> = chains.iter().map(|c| format!("{:.3}≤{:.3}≤{:.3}", c.0 + 0.0, c.1 + 0.0, c.2 + 0.0)).collect();
    outcome(
        pass,
        format!(
            "|ν−2|,|∂ξp−2| ≤ {factor_err:.1e}; A chains [{}]; cluster ratio·2π − 1 = {cluster_dev:.2e}",
            chain_text.join(", ")
        ),
    )
}

fn criterion_9() -> Result<Outcome> {
    // squared-norm identities along h = 1/32, 1/64, 1/128
    let ham = torus();
    let a = Symbol::product(
        "a",
        |x| Complex64::new(1.0 + 0.5 * x[0].cos(), 0.0),
        |xi| Complex64::new((-(xi[0] - 1.0).powi(2) - xi[1] * xi[1]).exp(), 0.0),
    );
    let q = Symbol::product(
        "q",
        |x| Complex64::new((x[0] + x[1]).sin(), 0.0),
        |xi| Complex64::new(1.0 + xi[0] * xi[1], 0.0),
    );
    let res: Vec<PairingResiduals> = [32i64, 64, 128]
        .iter()
        .map(|k| {
            let n = 4 * *k as usize;
            let u = WaveField::torus_modes(
                vec![2.0 * PI; 2],
                vec![n, n],
                1.0 / *k as f64,
                &[(vec![*k, 0], Complex64::new(1.0, 0.0)), (vec![0, *k], Complex64::new(0.5, 0.0))],
            )?;
            pairing_identities_check(&a, &q, &u, &ham)
        })
        .collect::<Result<_>>()?;
    let decreasing = res
        .windows(2)
        .all(|w| w[1].product < w[0].product && w[1].commutator < w[0].commutator);

    // band-limited sup-norm inequality on random samples
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 256;
    let mut min_margin = f64::INFINITY;
    for _ in 0..100 {
        let band = rng.gen_range(1..=100i64);
        let h = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0][rng.gen_range(0..3)];
        let l = rng.gen_range(1..=3usize);
        let coeffs: Vec<(i64, Complex64)> = (-band..=band)
            .map(|k| (k, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
            .collect();
        let v: Vec<Complex64> = (0..n)
            .map(|j| {
                let x = 2.0 * PI * j as f64 / n as f64;
                coeffs.iter().map(|(k, c)| c * Complex64::from_polar(1.0, *k as f64 * x)).sum()
            })
            .collect();
        for eps in [0.1, 1.0, 10.0] {
            let m = sobolev_linfty_check(&v, 2.0 * PI, h, eps, l)?;
            min_margin = min_margin.min(m.margin / m.rhs);
        }
    }

    // singular tube cover
    let x0 = pole();
    let atoms: Vec<FiberAtom> = (0..10)
        .map(|_| {
            let t: f64 = rng.gen_range(0.0..2.0 * PI);
            FiberAtom {
                direction: vec![t.cos(), t.sin()],
                mass: 0.1,
            }
        })
        .collect();
    let eps = 1e-2;
    let cover = singular_tube_cover(&x0, &atoms, eps, 0.1)?;
    let covered = covered_mass(&sphere(1.0), &cover, &x0, &atoms)?;
    let cover_ok = cover.radius_sum < eps && (covered - 1.0).abs() < 1e-12;

    // local bound: monotone in the density, √c scaling
    let s = sphere(1.0);
    let grid = FiberGrid::circle(96);
    let f1: Vec<f64> = (0..96).map(|j| grid.angle(j).sin().max(0.0)).collect();
    let f2: Vec<f64> = f1.iter().map(|v| v + 0.1 * v.sqrt()).collect();
    let i1 = thm_local_bound(&MeasureDecomposition::new(x0.clone(), grid.clone(), f1.clone(), vec![])?, &s, None)?.raw_integral;
    let i2 = thm_local_bound(&MeasureDecomposition::new(x0.clone(), grid.clone(), f2, vec![])?, &s, None)?.raw_integral;
    let mut scaling_err: f64 = 0.0;
    for c in [0.25, 4.0, 9.0] {
        let scaled: Vec<f64> = f1.iter().map(|v| c * v).collect();
        let ic = thm_local_bound(&MeasureDecomposition::new(x0.clone(), grid.clone(), scaled, vec![])?, &s, None)?.raw_integral;
        scaling_err = scaling_err.max((ic / i1 - c.sqrt()).abs());
    }
    let bound_ok = i1 <= i2 && scaling_err < 1e-12;

    let pass = decreasing && min_margin >= 0.0 && cover_ok && bound_ok;
    outcome(
        pass,
        format!(
            "identity residuals {:.2e}/{:.2e} → {:.2e}/{:.2e}; min relative Sobolev margin {min_margin:.3}; \
             cover Σr = {:.2e}, mass {covered:.3}; local bound monotone {}, √c error {scaling_err:.1e}",
            res[0].product, res[0].commutator, res[2].product, res[2].commutator, cover.radius_sum, i1 <= i2
        ),
    )
}

type Criterion = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("zonal saturation", criterion_1),
        ("quasimode lower bound", criterion_2),
        ("singular-part suppression", criterion_3),
        ("defect-pairing oracle", criterion_4),
        ("return dynamics oracle", criterion_5),
        ("recurrence and dissipativity", criterion_6),
        ("injectivity-radius scaling", criterion_7),
        ("constants and factors", criterion_8),
        ("property suites", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {} [{}] {name}: {} ({:.1}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
