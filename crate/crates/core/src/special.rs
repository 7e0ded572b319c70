//! Special functions and quadrature rules shared by the spectral code.
//!
//! Associated Legendre functions are returned in the orthonormal
//! normalization without the Condon–Shortley phase, so that
//! `Y_l^m(θ, φ) = P̄_l^{|m|}(cos θ) e^{imφ}` is orthonormal on the unit sphere.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|t| half * t).collect(),
    )
}

/// Composite Gauss–Legendre integral of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let step = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * step;
        let mid = lo + 0.5 * step;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(mid + 0.5 * step * xi);
        }
        total += 0.5 * step * s;
    }
    total
}

/// Legendre polynomial `P_l(x)` by the three-term recurrence.
pub fn legendre(l: usize, x: f64) -> f64 {
    legendre_with_derivative(l, x).0
}

/// `(P_l(x), P_l'(x))`.
pub fn legendre_with_derivative(l: usize, x: f64) -> (f64, f64) {
    if l == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 1..l {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let lf = l as f64;
    let d = if (1.0 - x * x).abs() < 1e-300 {
        let s = if x > 0.0 || l % 2 == 1 { 1.0 } else { -1.0 };
        s * lf * (lf + 1.0) / 2.0
    } else {
        lf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, d)
}

/// Natural log of the orthonormal sectoral value `P̄_m^m(x)` (without the sign).
fn ln_sectoral(m: usize, x: f64) -> f64 {
    let mut s = 0.5 * ((2 * m + 1) as f64 / (4.0 * PI)).ln();
    for k in 1..=m {
        s += 0.5 * ((2 * k - 1) as f64 / (2 * k) as f64).ln();
    }
    let sin2 = (1.0 - x * x).max(0.0);
    if m > 0 {
        if sin2 == 0.0 {
            return f64::NEG_INFINITY;
        }
        s += 0.5 * m as f64 * sin2.ln();
    }
    s
}

/// Orthonormal associated Legendre values `P̄_l^m(x)` for `l = m..=lmax`.
///
/// The recurrence is run on a rescaled mantissa so that sectoral values
/// far below the f64 range do not flush the whole column to zero.
pub fn assoc_legendre_column(lmax: usize, m: usize, x: f64) -> Vec<f64> {
    if m > lmax {
        return Vec::new();
    }
    let mut out = vec![0.0; lmax - m + 1];
    let mut log_scale = ln_sectoral(m, x);
    if log_scale == f64::NEG_INFINITY {
        return out;
    }
    let mut p_prev = 0.0;
    let mut p_curr = 1.0;
    out[0] = emit(p_curr, log_scale);
    let mf = m as f64;
    for l in (m + 1)..=lmax {
        let lf = l as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = if l >= m + 2 {
            let lm1 = lf - 1.0;
            ((lm1 * lm1 - mf * mf) / (4.0 * lm1 * lm1 - 1.0)).sqrt()
        } else {
            0.0
        };
        let p_next = a * (x * p_curr - b * p_prev);
        p_prev = p_curr;
        p_curr = p_next;
        let mag = p_curr.abs().max(p_prev.abs());
        if mag > 1e150 || (mag < 1e-150 && mag > 0.0) {
            let r = mag.ln();
            p_curr /= mag;
            p_prev /= mag;
            log_scale += r;
        }
        out[l - m] = emit(p_curr, log_scale);
    }
    out
}

fn emit(mantissa: f64, log_scale: f64) -> f64 {
    if mantissa == 0.0 || log_scale < -745.0 {
        0.0
    } else {
        mantissa * log_scale.exp()
    }
}

/// Single value `P̄_l^m(x)`.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    if m > l {
        return 0.0;
    }
    *assoc_legendre_column(l, m, x).last().unwrap()
}

/// `ln Γ`-free evaluation of `ln((l+m)! / (l-m)!)`.
pub fn ln_factorial_ratio(l: usize, m: usize) -> f64 {
    assert!(m <= l);
    ((l - m + 1)..=(l + m)).map(|k| (k as f64).ln()).sum()
}

/// C^∞ step: 0 for `x ≤ 0`, 1 for `x ≥ 1`, smooth and monotone in between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

/// Smoothed indicator of `|x| ≤ radius`, falling to zero over `width` outside it.
pub fn smooth_plateau(x: f64, radius: f64, width: f64) -> f64 {
    1.0 - smooth_step((x.abs() - radius) / width)
}

/// Surface area of the unit sphere `S^{k}` embedded in `R^{k+1}`.
pub fn unit_sphere_area(k: usize) -> f64 {
    // |S^k| = 2 π^{(k+1)/2} / Γ((k+1)/2)
    let half = (k + 1) as f64 / 2.0;
    2.0 * PI.powf(half) / gamma_half_integer(k + 1)
}

/// Γ(n/2) for positive integer n.
fn gamma_half_integer(n: usize) -> f64 {
    match n {
        1 => PI.sqrt(),
        2 => 1.0,
        _ => (n as f64 / 2.0 - 1.0) * gamma_half_integer(n - 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert_relative_eq!(s, 2.0 / 23.0, epsilon = 1e-14);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gauss_legendre_large_order_is_accurate() {
        let (x, w) = gauss_legendre(400);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * (3.0 * x).cos()).sum();
        assert_relative_eq!(s, 2.0 * 3.0f64.sin() / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn legendre_known_values() {
        assert_relative_eq!(legendre(2, 0.5), -0.125, epsilon = 1e-15);
        assert_relative_eq!(legendre(200, 1.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(legendre(3, -1.0), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn assoc_legendre_matches_closed_forms() {
        let x: f64 = 0.3;
        let s = (1.0 - x * x).sqrt();
        // P̄_1^1 = sqrt(3/(8π)) sinθ, P̄_2^1 = sqrt(15/(8π)) sinθ cosθ
        assert_relative_eq!(assoc_legendre(1, 1, x), (3.0 / (8.0 * PI)).sqrt() * s, epsilon = 1e-14);
        assert_relative_eq!(
            assoc_legendre(2, 1, x),
            (15.0 / (8.0 * PI)).sqrt() * s * x,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            assoc_legendre(5, 0, x),
            (11.0 / (4.0 * PI)).sqrt() * legendre(5, x),
            epsilon = 1e-14
        );
    }

    #[test]
    fn assoc_legendre_is_normalized() {
        let (x, w) = gauss_legendre(200);
        for &(l, m) in &[(10usize, 3usize), (150, 150), (199, 17)] {
            let s: f64 = x
                .iter()
                .zip(&w)
                .map(|(x, w)| w * assoc_legendre(l, m, *x).powi(2))
                .sum();
            assert_relative_eq!(s * 2.0 * PI, 1.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn smooth_step_limits() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert_relative_eq!(smooth_step(0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(unit_sphere_area(1), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(2), 4.0 * PI, epsilon = 1e-14);
    }
}
