//! Fixtures shared by the kernel benchmarks.

use std::f64::consts::PI;

use eigengrowth::{
    ChartPoint, CircleFunction, HamiltonianModel, ManifoldModel, QuasimodeSpec, Result, Symbol, WaveField,
};
use num_complex::Complex64;

pub fn pole() -> ChartPoint {
    ManifoldModel::sphere_point([0.0, 0.0, 1.0])
}

pub fn unit_sphere() -> HamiltonianModel {
    HamiltonianModel::laplace(ManifoldModel::round_sphere(1.0).expect("unit sphere"))
}

pub fn square_torus() -> HamiltonianModel {
    HamiltonianModel::laplace(ManifoldModel::flat_torus(vec![2.0 * PI; 2]).expect("square torus"))
}

/// Uniform-density quasimode at the pole with unit flowout mass.
pub fn uniform_spec(h: f64) -> QuasimodeSpec {
    QuasimodeSpec {
        center: pole(),
        density: CircleFunction::constant(64, 1.0 / (4.0 * PI * PI)).expect("constant density"),
        atoms: vec![],
        epsilon: None,
        cutoff_r: 1.25,
        h,
    }
}

/// Normalized plane wave `e^{i⟨m,x⟩}` on an `n × n` grid of the square torus.
pub fn plane_wave(m: [i64; 2], n: usize) -> Result<WaveField> {
    let h = 1.0 / ((m[0] * m[0] + m[1] * m[1]) as f64).sqrt();
    WaveField::torus_modes(vec![2.0 * PI; 2], vec![n, n], h, &[(m.to_vec(), Complex64::new(1.0, 0.0))])
}

/// Position-dependent symbol that forces the direct (non-separable) quantization path.
pub fn mixed_symbol() -> Symbol {
    Symbol::general("mixed", |x, xi| {
        let d2 = (xi[0] - 0.6).powi(2) + (xi[1] - 0.8).powi(2);
        Complex64::new((1.0 + 0.5 * (x[0] + 2.0 * x[1]).cos()) * (-2.0 * d2).exp(), 0.0)
    })
}
