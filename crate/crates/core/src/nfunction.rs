//! N-function calculus: prototype construction, conjugation, shifting,
//! square roots, and sampled growth-constant estimation.
//!
//! An N-function is a convex `phi(t) = ∫_0^t phi'(s) ds` with `phi'(0) = 0`,
//! `phi'` non-decreasing and positive for `t > 0`. Everything here works with
//! pointwise evaluators for `phi'` and `phi''`; `phi` itself comes from a
//! closed form when one exists and from adaptive quadrature otherwise.

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, integrate, log_points, monotone_inverse, powx};

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An N-function given by evaluators for its first two derivatives.
///
/// Immutable after construction; cloning shares the evaluators.
#[derive(Clone)]
pub struct NFunction {
    label: String,
    phi_prime: Eval,
    phi_second: Eval,
    phi_closed: Option<Eval>,
    phi2_almost_increasing: bool,
}

impl fmt::Debug for NFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NFunction")
            .field("label", &self.label)
            .field("closed_form", &self.phi_closed.is_some())
            .finish()
    }
}

impl NFunction {
    pub fn from_parts(
        label: impl Into<String>,
        phi_prime: Eval,
        phi_second: Eval,
        phi_closed: Option<Eval>,
        phi2_almost_increasing: bool,
    ) -> Self {
        Self {
            label: label.into(),
            phi_prime,
            phi_second,
            phi_closed,
            phi2_almost_increasing,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_closed_form(&self) -> bool {
        self.phi_closed.is_some()
    }

    /// Whether `phi''` is almost increasing (known at construction; derived
    /// objects inherit the flag of their base).
    pub fn phi_second_almost_increasing(&self) -> bool {
        self.phi2_almost_increasing
    }

    /// `phi'(t)`, `t >= 0`.
    #[inline]
    pub fn phi_prime(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0, "phi' evaluated at negative argument");
        (self.phi_prime)(t)
    }

    /// `phi''(t)`, `t > 0`; at `t == 0` the evaluator returns the right limit
    /// built into the prototype formulas (may be infinite for p < 2).
    #[inline]
    pub fn phi_second(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0, "phi'' evaluated at negative argument");
        (self.phi_second)(t)
    }

    /// Right limit of `phi''` at zero, evaluated at `t = 1e-12`.
    pub fn phi_second_at_zero(&self) -> f64 {
        (self.phi_second)(1e-12)
    }

    /// `phi(t)` via closed form when available, quadrature of `phi'` otherwise.
    pub fn phi(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0, "phi evaluated at negative argument");
        match &self.phi_closed {
            Some(f) => f(t),
            None => self.phi_quadrature(t),
        }
    }

    /// `phi(t)` computed by quadrature regardless of a closed form.
    pub fn phi_quadrature(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let fp = &self.phi_prime;
        integrate(|s| fp(s), 0.0, t)
    }

    /// Shifted N-function `phi_a` with
    /// `phi_a'(t) = phi'(a + t) * t / (a + t)`.
    ///
    /// `a == 0` returns a pointwise-identical copy of `self`.
    pub fn shifted(&self, a: f64) -> NFunction {
        assert!(a >= 0.0 && a.is_finite(), "shift must be finite and >= 0");
        if a == 0.0 {
            let mut out = self.clone();
            out.label = format!("shift({},0)", self.label);
            return out;
        }
        let base_p = self.phi_prime.clone();
        let base_p2 = self.phi_prime.clone();
        let base_s = self.phi_second.clone();
        let prime: Eval = Arc::new(move |t: f64| {
            if t == 0.0 {
                0.0
            } else {
                base_p(a + t) * t / (a + t)
            }
        });
        let second: Eval = Arc::new(move |t: f64| {
            if t == 0.0 {
                base_p2(a) / a
            } else {
                let den = a + t;
                base_s(den) * t / den + base_p2(den) * a / (den * den)
            }
        });
        NFunction {
            label: format!("shift({},{})", self.label, a),
            phi_prime: prime,
            phi_second: second,
            phi_closed: None,
            phi2_almost_increasing: self.phi2_almost_increasing,
        }
    }

    /// The square-root N-function `phibar` with `phibar'(t) = sqrt(t phi'(t))`.
    pub fn square_root(&self) -> NFunction {
        let base_p = self.phi_prime.clone();
        let base_p2 = self.phi_prime.clone();
        let base_s = self.phi_second.clone();
        let prime: Eval = Arc::new(move |t: f64| (t * base_p(t)).sqrt());
        let second: Eval = Arc::new(move |t: f64| {
            let t = if t == 0.0 { 1e-12 } else { t };
            let root = (t * base_p2(t)).sqrt();
            if root == 0.0 {
                return f64::INFINITY;
            }
            (base_p2(t) + t * base_s(t)) / (2.0 * root)
        });
        NFunction {
            label: format!("sqrt({})", self.label),
            phi_prime: prime,
            phi_second: second,
            phi_closed: None,
            phi2_almost_increasing: self.phi2_almost_increasing,
        }
    }

    /// Generalized right-continuous inverse of `phi'`:
    /// `sup { u >= 0 : phi'(u) <= s }`.
    pub fn inverse_phi_prime(&self, s: f64) -> Result<f64> {
        if s < 0.0 || !s.is_finite() {
            return Err(Error::Domain(format!("inverse of phi' at {s}")));
        }
        let fp = &self.phi_prime;
        monotone_inverse(|u| fp(u), s).ok_or_else(|| {
            Error::InverseOutOfRange(format!(
                "phi' of '{}' never exceeds {} on (0, {:.1e}]",
                self.label,
                s,
                numeric::INVERSE_BRACKET_CAP
            ))
        })
    }

    /// Conjugate value `phi*(t) = ∫_0^t (phi')^{-1}(s) ds`.
    pub fn conjugate_at(&self, t: f64) -> Result<f64> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("conjugate at {t}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        // One upfront bracket check; inner quadrature arguments stay below t.
        self.inverse_phi_prime(t)?;
        let fp = self.phi_prime.clone();
        Ok(integrate(
            move |s| monotone_inverse(|u| fp(u), s).unwrap_or(f64::INFINITY),
            0.0,
            t,
        ))
    }

    /// Conjugate as an N-function:
    /// `(phi*)' = (phi')^{-1}`, `(phi*)'' = 1 / phi''((phi')^{-1})`.
    pub fn conjugate(&self) -> NFunction {
        let base_p = self.phi_prime.clone();
        let base_p2 = self.phi_prime.clone();
        let base_s = self.phi_second.clone();
        let prime: Eval =
            Arc::new(move |t: f64| monotone_inverse(|u| base_p(u), t).unwrap_or(f64::INFINITY));
        let second: Eval = Arc::new(move |t: f64| {
            let u = match monotone_inverse(|u| base_p2(u), t) {
                Some(u) => u,
                None => return 0.0,
            };
            let d = base_s(u.max(1e-300));
            if d == 0.0 {
                f64::INFINITY
            } else if d.is_infinite() {
                0.0
            } else {
                1.0 / d
            }
        });
        NFunction {
            label: format!("conj({})", self.label),
            phi_prime: prime,
            phi_second: second,
            phi_closed: None,
            phi2_almost_increasing: false,
        }
    }

    /// Structural invariants checked on a sampled grid: `phi'(0) = 0`,
    /// monotone positive `phi'`, `phi(0) = 0`, midpoint convexity, and
    /// closed-form/quadrature agreement within `1e-8 * (1 + phi)`.
    pub fn validate_on_grid(&self, grid: &LogGrid) -> Result<()> {
        let pts = grid.points();
        if self.phi_prime(0.0) != 0.0 {
            return Err(Error::DegenerateNFunction(format!(
                "{}: phi'(0) = {}",
                self.label,
                self.phi_prime(0.0)
            )));
        }
        if self.phi(0.0) != 0.0 {
            return Err(Error::DegenerateNFunction(format!(
                "{}: phi(0) = {}",
                self.label,
                self.phi(0.0)
            )));
        }
        let mut prev = 0.0f64;
        for &t in &pts {
            let v = self.phi_prime(t);
            if !(v > 0.0) {
                return Err(Error::DegenerateNFunction(format!(
                    "{}: phi'({t}) = {v}",
                    self.label
                )));
            }
            if v < prev * (1.0 - 1e-12) {
                return Err(Error::DegenerateNFunction(format!(
                    "{}: phi' decreases at t = {t}",
                    self.label
                )));
            }
            prev = v;
        }
        for w in pts.windows(2) {
            let (s, t) = (w[0], w[1]);
            let mid = 0.5 * (s + t);
            let lhs = self.phi(mid);
            let rhs = 0.5 * (self.phi(s) + self.phi(t));
            if lhs > rhs * (1.0 + 1e-9) + 1e-300 {
                return Err(Error::DegenerateNFunction(format!(
                    "{}: midpoint convexity fails on [{s}, {t}]",
                    self.label
                )));
            }
        }
        if self.phi_closed.is_some() {
            for &t in pts.iter().step_by(8) {
                let closed = self.phi(t);
                let quad = self.phi_quadrature(t);
                if (closed - quad).abs() > 1e-8 * (1.0 + closed.abs()) {
                    return Err(Error::DegenerateNFunction(format!(
                        "{}: closed form {closed} vs quadrature {quad} at t = {t}",
                        self.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Checked single-point evaluation of `phi` (negative arguments are a domain
/// error rather than a panic).
pub fn eval_phi(spec: &NFunction, t: f64) -> Result<f64> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::Domain(format!("phi evaluated at {t}")));
    }
    Ok(spec.phi(t))
}

/// Value of the shifted N-function `phi_a(t)` by quadrature of its defining
/// integrand; cheaper than materializing `shifted(a)` in inner sampling loops.
pub fn shifted_phi(spec: &NFunction, a: f64, t: f64) -> f64 {
    debug_assert!(a >= 0.0 && t >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    if a == 0.0 {
        return spec.phi(t);
    }
    let fp = &spec.phi_prime;
    integrate(|s| fp(a + s) * s / (a + s), 0.0, t)
}

/// `phi_a'(t) = phi'(a + t) * t / (a + t)` in closed form.
pub fn shifted_phi_prime(spec: &NFunction, a: f64, t: f64) -> f64 {
    debug_assert!(a >= 0.0 && t >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    spec.phi_prime(a + t) * t / (a + t)
}

/// Prototype family selector for the p-Laplacian-type potentials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrototypeKind {
    /// `phi'(s) = (mu + s^(p-2)) s`
    A1,
    /// `phi'(s) = (mu + s^2)^((p-2)/2) s`
    A2,
    /// `phi'(s) = (mu + s)^(p-2) s ln(e + s)`
    A3,
}

impl fmt::Display for PrototypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrototypeKind::A1 => write!(f, "phi1"),
            PrototypeKind::A2 => write!(f, "phi2"),
            PrototypeKind::A3 => write!(f, "phi3"),
        }
    }
}

/// Serializable prototype parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSpec {
    pub kind: PrototypeKind,
    pub p: f64,
    pub mu: f64,
}

impl PrototypeSpec {
    pub fn new(kind: PrototypeKind, p: f64, mu: f64) -> Self {
        Self { kind, p, mu }
    }

    pub fn build(&self) -> Result<NFunction> {
        make_prototype(self.kind, self.p, self.mu)
    }

    pub fn label(&self) -> String {
        format!("{}(p={},mu={})", self.kind, self.p, self.mu)
    }
}

/// Builds one of the three prototype potentials.
///
/// Requires `p > 1` and `mu >= 0`; the logarithmic family additionally
/// requires `p >= 2` so that `phi''` is almost increasing.
pub fn make_prototype(kind: PrototypeKind, p: f64, mu: f64) -> Result<NFunction> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidPrototype(format!("p = {p}, need p > 1")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidPrototype(format!("mu = {mu}, need mu >= 0")));
    }
    let label = PrototypeSpec::new(kind, p, mu).label();
    let fun = match kind {
        PrototypeKind::A1 => {
            let prime: Eval = Arc::new(move |s: f64| {
                if s == 0.0 {
                    0.0
                } else {
                    (mu + powx(s, p - 2.0)) * s
                }
            });
            let second: Eval = Arc::new(move |s: f64| mu + (p - 1.0) * powx(s, p - 2.0));
            let closed: Eval = Arc::new(move |t: f64| 0.5 * mu * t * t + powx(t, p) / p);
            NFunction::from_parts(label, prime, second, Some(closed), p >= 2.0)
        }
        PrototypeKind::A2 => {
            let e = 0.5 * (p - 2.0);
            let prime: Eval = Arc::new(move |s: f64| {
                if s == 0.0 {
                    0.0
                } else {
                    powx(mu + s * s, e) * s
                }
            });
            let second: Eval = Arc::new(move |s: f64| {
                if p == 2.0 {
                    // (mu + s^2)^(-1) (mu + s^2) reduces to 1 for every mu.
                    1.0
                } else if s == 0.0 {
                    if mu > 0.0 {
                        powx(mu, e)
                    } else if p > 2.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    powx(mu + s * s, e - 1.0) * (mu + (p - 1.0) * s * s)
                }
            });
            let closed: Eval = Arc::new(move |t: f64| {
                if p == 2.0 {
                    0.5 * t * t
                } else if mu == 0.0 {
                    powx(t, p) / p
                } else {
                    // mu^(p/2) * ((1 + t^2/mu)^(p/2) - 1) / p, cancellation-free.
                    powx(mu, 0.5 * p) * (0.5 * p * (t * t / mu).ln_1p()).exp_m1() / p
                }
            });
            NFunction::from_parts(label, prime, second, Some(closed), p >= 2.0)
        }
        PrototypeKind::A3 => {
            if p < 2.0 {
                return Err(Error::InvalidPrototype(format!(
                    "logarithmic prototype needs p >= 2, got p = {p}"
                )));
            }
            let prime: Eval = Arc::new(move |s: f64| powx(mu + s, p - 2.0) * s * (E + s).ln());
            let second: Eval = Arc::new(move |s: f64| {
                if s == 0.0 {
                    powx(mu, p - 2.0)
                } else {
                    let base = powx(mu + s, p - 2.0);
                    let log = (E + s).ln();
                    (p - 2.0) * powx(mu + s, p - 3.0) * s * log + base * log + base * s / (E + s)
                }
            });
            NFunction::from_parts(label, prime, second, None, true)
        }
    };
    Ok(fun)
}

/// Specification of a log-spaced sampling grid, kept alongside the constants
/// estimated on it so that results are reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LogGrid {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    /// Default grid for constant estimation: 2048 points on [1e-6, 1e6].
    pub fn default_constants_grid() -> Self {
        Self::new(1e-6, 1e6, 2048)
    }

    pub fn points(&self) -> Vec<f64> {
        log_points(self.min, self.max, self.count)
    }
}

/// Scale factors used for the Boyd-index scan. Powers of two keep the scan
/// exact for homogeneous potentials.
pub const BOYD_SCALE_FACTORS: [f64; 9] = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0];

/// Sampled growth constants of an N-function.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthConstants {
    /// Sampled infimum of `t phi''(t) / phi'(t)`.
    pub g_lo: f64,
    /// Sampled supremum of the same ratio.
    pub g_hi: f64,
    /// Sampled supremum of `phi(2t) / phi(t)`.
    pub delta2: f64,
    /// Lower Boyd index.
    pub q1: f64,
    /// Upper Boyd index.
    pub q2: f64,
    pub grid: LogGrid,
    pub scale_factors: Vec<f64>,
}

impl GrowthConstants {
    /// The single equivalence constant of `phi' ~ t phi''`:
    /// `max(g_hi, 1/g_lo)`.
    pub fn g_uniformity(&self) -> f64 {
        self.g_hi.max(1.0 / self.g_lo)
    }
}

/// Scans `t phi''/phi'`, the doubling ratio, and the polynomial envelope
/// exponents over `grid`. Deterministic given the grid.
pub fn estimate_growth_constants(spec: &NFunction, grid: &LogGrid) -> Result<GrowthConstants> {
    if grid.count < 1000 || grid.min > 1e-6 || grid.max < 1e6 {
        return Err(Error::InvalidGrid(format!(
            "need >= 1000 points spanning [1e-6, 1e6], got {} on [{}, {}]",
            grid.count, grid.min, grid.max
        )));
    }
    let pts = grid.points();
    let mut g_lo = f64::INFINITY;
    let mut g_hi = f64::NEG_INFINITY;
    let mut delta2 = f64::NEG_INFINITY;
    let mut q1 = f64::INFINITY;
    let mut q2 = f64::NEG_INFINITY;
    for &t in &pts {
        let fp = spec.phi_prime(t);
        if !(fp > 0.0) {
            return Err(Error::DegenerateNFunction(format!(
                "{}: phi'({t}) = {fp} inside the sampling grid",
                spec.label()
            )));
        }
        let ratio = t * spec.phi_second(t) / fp;
        g_lo = g_lo.min(ratio);
        g_hi = g_hi.max(ratio);
        let phi_t = spec.phi(t);
        if !(phi_t > 0.0) {
            return Err(Error::DegenerateNFunction(format!(
                "{}: phi({t}) = {phi_t}",
                spec.label()
            )));
        }
        delta2 = delta2.max(spec.phi(2.0 * t) / phi_t);
        for &a in BOYD_SCALE_FACTORS.iter() {
            let q = (spec.phi(a * t) / phi_t).log2() / a.log2();
            q1 = q1.min(q);
            q2 = q2.max(q);
        }
    }
    Ok(GrowthConstants {
        g_lo,
        g_hi,
        delta2,
        q1,
        q2,
        grid: *grid,
        scale_factors: BOYD_SCALE_FACTORS.to_vec(),
    })
}

/// Sampled supremum of `phi(2t)/phi(t)` alone (used where the full constant
/// scan would be wasteful, e.g. conjugates whose evaluations are iterative).
pub fn estimate_delta2(spec: &NFunction, grid: &LogGrid) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &t in &grid.points() {
        let lo = spec.phi(t);
        if !(lo > 0.0) {
            return Err(Error::DegenerateNFunction(format!(
                "{}: phi({t}) = {lo}",
                spec.label()
            )));
        }
        worst = worst.max(spec.phi(2.0 * t) / lo);
    }
    Ok(worst)
}

/// Result of a Young-inequality check `ab <= delta phi(a) + c phi*(b)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct YoungCheck {
    pub pass: bool,
    /// `delta phi(a) + c phi*(b) - ab`; non-negative when the bound holds.
    pub slack: f64,
}

/// Calibrates the Young constant `c(delta)` as the largest value of
/// `(ab - delta phi(a)) / phi*(b)` over grid pairs with `phi*(b) > 0`.
pub fn calibrate_young_constant(spec: &NFunction, delta: f64, grid: &LogGrid) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta = {delta}, need > 0")));
    }
    let pts = grid.points();
    let conj: Vec<f64> = pts
        .iter()
        .map(|&b| spec.conjugate_at(b))
        .collect::<Result<_>>()?;
    let mut c = 0.0f64;
    for &a in &pts {
        let pa = spec.phi(a);
        for (j, &b) in pts.iter().enumerate() {
            if conj[j] <= 0.0 {
                continue;
            }
            c = c.max((a * b - delta * pa) / conj[j]);
        }
    }
    Ok(c)
}

/// Checks `ab <= delta phi(a) + c_delta phi*(b)` for a calibrated `c_delta`.
pub fn check_young(
    spec: &NFunction,
    a: f64,
    b: f64,
    delta: f64,
    c_delta: f64,
) -> Result<YoungCheck> {
    if a < 0.0 || b < 0.0 {
        return Err(Error::Domain(format!("Young check at a = {a}, b = {b}")));
    }
    let rhs = delta * spec.phi(a) + c_delta * spec.conjugate_at(b)?;
    let slack = rhs - a * b;
    Ok(YoungCheck {
        pass: slack >= -1e-12 * (1.0 + (a * b).abs()),
        slack,
    })
}
