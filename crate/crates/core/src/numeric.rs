//! Shared numerical primitives: compensated summation, adaptive quadrature,
//! monotone bisection, and deterministic grids.

/// Relative target for adaptive quadrature.
pub const QUAD_REL_TOL: f64 = 1e-10;
/// Absolute floor below which quadrature refinement stops.
pub const QUAD_ABS_FLOOR: f64 = 1e-14;

/// Neumaier compensated accumulator. Reductions built on it are deterministic
/// for a fixed iteration order and lose almost nothing to cancellation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Compensated dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = CompensatedSum::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

/// Power with exact fast paths for the exponents that appear throughout the
/// prototype formulas. `powf` is not required to be exact even at integer
/// exponents, so the identities that must hold to the last bit (e == 0, 1, 2,
/// 1/2) bypass it.
#[inline]
pub fn powx(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 3.0 {
        x * x * x
    } else if e == 0.5 {
        x.sqrt()
    } else {
        x.powf(e)
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    budget: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let refined = left + right;
    let err = (refined - whole) / 15.0;
    if depth == 0 || err.abs() <= budget || err.abs() <= QUAD_ABS_FLOOR {
        return refined + err;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * budget, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * budget, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
///
/// The interval is pre-split into geometrically shrinking panels towards the
/// left endpoint so that integrable singularities of the derivative at `a`
/// (the degenerate prototypes with p < 2) are resolved without deep recursion.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let span = b - a;
    let mut cuts = vec![a];
    for k in (1..=6).rev() {
        let frac = 10f64.powi(-2 * k);
        cuts.push(a + span * frac);
    }
    cuts.push(a + span * 0.1);
    cuts.push(b);

    let mut total = CompensatedSum::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = simpson(flo, fmid, fhi, hi - lo);
        let budget = QUAD_REL_TOL * whole.abs().max(QUAD_ABS_FLOOR);
        total.add(adaptive_step(&f, lo, hi, flo, fmid, fhi, whole, budget, 48));
    }
    total.value()
}

/// Largest argument tried when bracketing a generalized inverse.
pub const INVERSE_BRACKET_CAP: f64 = 1e280;
/// Iteration cap for the bisection.
pub const INVERSE_MAX_ITERS: usize = 200;

/// Generalized right-continuous inverse of a non-decreasing `g` with
/// `g(0) = 0`: returns `sup { u >= 0 : g(u) <= target }`.
///
/// Returns `None` when the bracket grows past [`INVERSE_BRACKET_CAP`] without
/// `g` exceeding `target` (the function is bounded on the searched range).
pub fn monotone_inverse<F: Fn(f64) -> f64>(g: F, target: f64) -> Option<f64> {
    if target <= 0.0 {
        return Some(0.0);
    }
    let mut hi = 1.0f64;
    while g(hi) <= target {
        hi *= 2.0;
        if hi > INVERSE_BRACKET_CAP {
            return None;
        }
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    if g(lo) > target {
        lo = 0.0;
    }
    for _ in 0..INVERSE_MAX_ITERS {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Log-spaced points including both endpoints.
pub fn log_points(min: f64, max: f64, count: usize) -> Vec<f64> {
    assert!(min > 0.0 && max > min && count >= 2);
    let lmin = min.ln();
    let lmax = max.ln();
    let mut pts = Vec::with_capacity(count);
    for i in 0..count {
        let f = i as f64 / (count - 1) as f64;
        pts.push((lmin + f * (lmax - lmin)).exp());
    }
    pts[0] = min;
    let last = pts.len() - 1;
    pts[last] = max;
    pts
}

/// Rounds to the nearest multiple of `2^-bits`. Fields quantized this way
/// stay closed under the grid difference operators in exact f64 arithmetic,
/// which is what the bit-level identity checks rely on.
pub fn quantize_dyadic(x: f64, bits: u32) -> f64 {
    let scale = (1u64 << bits) as f64;
    (x * scale).round() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_tightly() {
        let v = integrate(|s| s * s, 0.0, 3.0);
        assert!((v - 9.0).abs() < 1e-9 * 9.0);
    }

    #[test]
    fn integrates_singular_derivative_endpoint() {
        // s^(1/2): derivative unbounded at zero, integral 2/3 * b^(3/2).
        let v = integrate(|s| s.sqrt(), 0.0, 1.0);
        assert!((v - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_of_square() {
        let inv = monotone_inverse(|u| u * u, 4.0).unwrap();
        assert!((inv - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_detects_bounded_function() {
        assert!(monotone_inverse(|u| u.min(1.0), 2.0).is_none());
    }

    #[test]
    fn inverse_at_zero() {
        assert_eq!(monotone_inverse(|u| u, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn compensated_sum_handles_cancellation() {
        let mut acc = CompensatedSum::new();
        acc.add(1e16);
        acc.add(1.0);
        acc.add(-1e16);
        assert_eq!(acc.value(), 1.0);
    }

    #[test]
    fn log_points_hit_endpoints() {
        let pts = log_points(1e-6, 1e6, 100);
        assert_eq!(pts[0], 1e-6);
        assert_eq!(pts[99], 1e6);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dyadic_quantization_is_idempotent() {
        let x = quantize_dyadic(0.7297316463, 13);
        assert_eq!(quantize_dyadic(x, 13), x);
    }
}
