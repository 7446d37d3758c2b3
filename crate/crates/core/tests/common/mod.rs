//! Shared oracles for the integration tests. These are intentionally
//! independent of the library's own quadrature and inversion paths.
#![allow(dead_code)]

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1], computed
/// by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial value and derivative at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0f64;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Fixed-order Gauss-Legendre integral of `f` on `[a, b]`.
pub fn gl_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Brute-force Legendre transform `sup_s (t s - phi(s))` over a dense
/// log-spaced grid around the stationary point `s_star`.
pub fn legendre_sup(phi: impl Fn(f64) -> f64, t: f64, s_star: f64) -> f64 {
    let lo = (s_star * 1e-3).ln();
    let hi = (s_star * 1e3).ln();
    let count = 14_000;
    let mut best = 0.0f64; // s = 0 gives value 0
    for i in 0..=count {
        let s = (lo + (hi - lo) * i as f64 / count as f64).exp();
        best = best.max(t * s - phi(s));
    }
    best
}

/// Bessel function of the first kind, order one, by its power series
/// (adequate for |x| up to ~15).
pub fn bessel_j1(x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = half;
    let mut sum = term;
    for k in 1..40 {
        let kf = k as f64;
        term *= -(half * half) / (kf * (kf + 1.0));
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// `∫_{B_r(c)} cos^2(x_1) dx` in the plane:
/// `(pi r^2 + pi r J1(2r) cos(2 c_1)) / 2`.
pub fn disk_cos_sq_integral(r: f64, center_coord: f64) -> f64 {
    use std::f64::consts::PI;
    0.5 * (PI * r * r + PI * r * bessel_j1(2.0 * r) * (2.0 * center_coord).cos())
}

/// `∫_{B_r(c)} sin^2(x_1) dx` in the plane.
pub fn disk_sin_sq_integral(r: f64, center_coord: f64) -> f64 {
    use std::f64::consts::PI;
    0.5 * (PI * r * r - PI * r * bessel_j1(2.0 * r) * (2.0 * center_coord).cos())
}

#[test]
fn gl_rule_integrates_polynomials_exactly() {
    let v = gl_integrate(|x| x * x * x * x, 0.0, 1.0, 8);
    assert!((v - 0.2).abs() < 1e-14);
}

#[test]
fn bessel_value_spot_check() {
    // J1(2) = 0.5767248077568734, standard tables.
    assert!((bessel_j1(2.0) - 0.576724807756873).abs() < 1e-12);
}
