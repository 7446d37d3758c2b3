//! Symmetric-matrix algebra, radial growth tensors, and the equivalence
//! evaluators connecting the tensor monotonicity gap, the curvature form,
//! the shifted N-function, and the square-root tensor gap.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nfunction::{shifted_phi, shifted_phi_prime, NFunction, PrototypeKind, PrototypeSpec};
use crate::numeric::powx;

/// Symmetric d x d matrix, d in {2, 3}; only the upper triangle is stored.
///
/// Packing order: d = 2 -> [m11, m22, m12]; d = 3 -> [m11, m22, m33, m12, m13, m23].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat {
    dim: u8,
    e: [f64; 6],
}

impl SymMat {
    pub fn zero(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "dim must be 2 or 3");
        Self {
            dim: dim as u8,
            e: [0.0; 6],
        }
    }

    pub fn from_upper(dim: usize, entries: &[f64]) -> Self {
        let mut m = Self::zero(dim);
        let len = m.packed_len();
        assert_eq!(entries.len(), len);
        m.e[..len].copy_from_slice(entries);
        m
    }

    pub fn from_diag(dim: usize, diag: &[f64]) -> Self {
        let mut m = Self::zero(dim);
        assert_eq!(diag.len(), dim);
        m.e[..dim].copy_from_slice(diag);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    fn packed_len(&self) -> usize {
        match self.dim {
            2 => 3,
            _ => 6,
        }
    }

    fn off_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        if self.dim == 2 {
            2
        } else {
            match (i, j) {
                (0, 1) => 3,
                (0, 2) => 4,
                _ => 5,
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let d = self.dim();
        assert!(i < d && j < d);
        if i == j {
            self.e[i]
        } else if i < j {
            self.e[self.off_index(i, j)]
        } else {
            self.e[self.off_index(j, i)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let d = self.dim();
        assert!(i < d && j < d);
        if i == j {
            self.e[i] = v;
        } else if i < j {
            let k = self.off_index(i, j);
            self.e[k] = v;
        } else {
            let k = self.off_index(j, i);
            self.e[k] = v;
        }
    }

    /// Frobenius norm of the full matrix (off-diagonal entries count twice).
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Full double contraction `A : B`.
    pub fn dot(&self, other: &SymMat) -> f64 {
        assert_eq!(self.dim, other.dim);
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            s += self.e[i] * other.e[i];
        }
        for k in d..self.packed_len() {
            s += 2.0 * self.e[k] * other.e[k];
        }
        s
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for k in 0..self.packed_len() {
            out.e[k] += other.e[k];
        }
        out
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for k in 0..self.packed_len() {
            out.e[k] -= other.e[k];
        }
        out
    }

    pub fn scale(&self, c: f64) -> SymMat {
        let mut out = *self;
        for k in 0..self.packed_len() {
            out.e[k] *= c;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.e[..self.packed_len()].iter().all(|&v| v == 0.0)
    }

    /// Row-major full matrix.
    pub fn to_full(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.get(i, j);
            }
        }
        out
    }

    /// Symmetrizes a row-major full matrix.
    pub fn from_full_symmetrize(dim: usize, full: &[f64]) -> Self {
        assert_eq!(full.len(), dim * dim);
        let mut m = Self::zero(dim);
        for i in 0..dim {
            m.set(i, i, full[i * dim + i]);
            for j in (i + 1)..dim {
                m.set(i, j, 0.5 * (full[i * dim + j] + full[j * dim + i]));
            }
        }
        m
    }

    /// Random symmetric matrix with the given Frobenius norm: i.i.d. normal
    /// entries symmetrized, then rescaled.
    pub fn random_with_norm(rng: &mut impl Rng, dim: usize, target_norm: f64) -> Self {
        loop {
            let mut m = Self::zero(dim);
            for i in 0..dim {
                for j in i..dim {
                    m.set(i, j, standard_normal(rng));
                }
            }
            let n = m.norm();
            if n > 1e-12 {
                return m.scale(target_norm / n);
            }
        }
    }
}

/// Standard normal draw by Box-Muller.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A monotone growth tensor `A(Q) = phi'(|Q|) Q / |Q|`, with the closed-form
/// branch of the three prototype families available when constructed from a
/// [`PrototypeSpec`].
#[derive(Clone, Debug)]
pub struct GrowthTensor {
    phi: NFunction,
    closed: Option<PrototypeSpec>,
}

impl GrowthTensor {
    /// Radial tensor derived from an arbitrary potential.
    pub fn potential(phi: NFunction) -> Self {
        Self { phi, closed: None }
    }

    /// Prototype tensor using its closed-form coefficient.
    pub fn closed_form(proto: PrototypeSpec) -> Result<Self> {
        let phi = proto.build()?;
        Ok(Self {
            phi,
            closed: Some(proto),
        })
    }

    pub fn phi(&self) -> &NFunction {
        &self.phi
    }

    pub fn prototype(&self) -> Option<PrototypeSpec> {
        self.closed
    }

    /// Scalar coefficient `c(|Q|)` with `A(Q) = c(|Q|) Q`.
    pub fn coefficient(&self, norm: f64) -> f64 {
        debug_assert!(norm > 0.0);
        match self.closed {
            Some(PrototypeSpec {
                kind: PrototypeKind::A1,
                p,
                mu,
            }) => mu + powx(norm, p - 2.0),
            Some(PrototypeSpec {
                kind: PrototypeKind::A2,
                p,
                mu,
            }) => powx(mu + norm * norm, 0.5 * (p - 2.0)),
            Some(PrototypeSpec {
                kind: PrototypeKind::A3,
                p,
                mu,
            }) => powx(mu + norm, p - 2.0) * (std::f64::consts::E + norm).ln(),
            None => self.phi.phi_prime(norm) / norm,
        }
    }

    /// `A(Q)`; zero at `Q = 0`.
    pub fn apply(&self, q: &SymMat) -> SymMat {
        let n = q.norm();
        if n == 0.0 {
            return SymMat::zero(q.dim());
        }
        q.scale(self.coefficient(n))
    }

    /// `A` applied to a row-major full matrix, written into `out`.
    pub fn apply_full(&self, m: &[f64], out: &mut [f64]) {
        let n = frobenius(m);
        if n == 0.0 {
            out.fill(0.0);
            return;
        }
        let c = self.coefficient(n);
        for (o, v) in out.iter_mut().zip(m) {
            *o = c * v;
        }
    }
}

fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `V(Q) = phibar'(|Q|) Q / |Q|` with `phibar'(t) = sqrt(t phi'(t))`.
pub fn apply_v(phi: &NFunction, q: &SymMat) -> SymMat {
    let n = q.norm();
    if n == 0.0 {
        return SymMat::zero(q.dim());
    }
    q.scale((n * phi.phi_prime(n)).sqrt() / n)
}

/// Full-matrix variant of [`apply_v`].
pub fn apply_v_full(phi: &NFunction, m: &[f64], out: &mut [f64]) {
    let n = frobenius(m);
    if n == 0.0 {
        out.fill(0.0);
        return;
    }
    let c = (n * phi.phi_prime(n)).sqrt() / n;
    for (o, v) in out.iter_mut().zip(m) {
        *o = c * v;
    }
}

/// The four mutually equivalent monotonicity expressions evaluated at a pair
/// of symmetric matrices.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MonotonicityQuadruple {
    /// `(A(P) - A(Q)) : (P - Q)`
    pub inner: f64,
    /// `phi''(|P| + |Q|) |P - Q|^2`
    pub curvature: f64,
    /// `phi_{|P|}(|P - Q|)`
    pub shifted: f64,
    /// `|V(P) - V(Q)|^2`
    pub vgap: f64,
}

impl MonotonicityQuadruple {
    pub const ZERO: Self = Self {
        inner: 0.0,
        curvature: 0.0,
        shifted: 0.0,
        vgap: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [self.inner, self.curvature, self.shifted, self.vgap]
    }

    /// The six pairwise ratios in the order
    /// (inner/curv, inner/shift, inner/vgap, curv/shift, curv/vgap, shift/vgap).
    pub fn pairwise_ratios(&self) -> [f64; 6] {
        let [a, b, c, d] = self.as_array();
        [a / b, a / c, a / d, b / c, b / d, c / d]
    }
}

/// Pairs closer than `1e-12 * (1 + |P| + |Q|)` are reported as all-zero and
/// excluded from ratio statistics.
pub fn monotonicity_quadruple(
    phi: &NFunction,
    tensor: &GrowthTensor,
    p: &SymMat,
    q: &SymMat,
) -> MonotonicityQuadruple {
    let diff = p.sub(q);
    let dist = diff.norm();
    let np = p.norm();
    let nq = q.norm();
    if dist < 1e-12 * (1.0 + np + nq) {
        return MonotonicityQuadruple::ZERO;
    }
    let inner = tensor.apply(p).sub(&tensor.apply(q)).dot(&diff);
    let curvature = phi.phi_second(np + nq) * dist * dist;
    let shifted = shifted_phi(phi, np, dist);
    let vg = apply_v(phi, p).sub(&apply_v(phi, q));
    let vgap = vg.dot(&vg);
    MonotonicityQuadruple {
        inner,
        curvature,
        shifted,
        vgap,
    }
}

/// Deterministic sample of matrix pairs with log-uniform norms in
/// `[norm_lo, norm_hi]`.
pub fn sample_pairs(
    seed: u64,
    dim: usize,
    count: usize,
    norm_lo: f64,
    norm_hi: f64,
) -> Vec<(SymMat, SymMat)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (llo, lhi) = (norm_lo.ln(), norm_hi.ln());
    (0..count)
        .map(|_| {
            let np = (rng.gen_range(llo..lhi)).exp();
            let nq = (rng.gen_range(llo..lhi)).exp();
            (
                SymMat::random_with_norm(&mut rng, dim, np),
                SymMat::random_with_norm(&mut rng, dim, nq),
            )
        })
        .collect()
}

/// Sampled extremal constants of the two-sided tensor growth bounds:
/// `c` is the smallest observed `inner / curvature`, `C` the largest observed
/// `|A(P) - A(Q)| / (phi''(|P|+|Q|) |P-Q|)`.
pub fn check_assumption1(
    tensor: &GrowthTensor,
    phi: &NFunction,
    samples: usize,
    seed: u64,
    dim: usize,
) -> Result<(f64, f64)> {
    assert!(samples >= 1000, "need at least 1e3 sample pairs");
    let pairs = sample_pairs(seed, dim, samples, 1e-4, 1e4);
    let mut c_lo = f64::INFINITY;
    let mut c_hi: f64 = 0.0;
    for (p, q) in &pairs {
        let diff = p.sub(q);
        let dist = diff.norm();
        if dist < 1e-12 * (1.0 + p.norm() + q.norm()) {
            continue;
        }
        let gap = tensor.apply(p).sub(&tensor.apply(q));
        let inner = gap.dot(&diff);
        if inner <= 0.0 {
            return Err(Error::MonotonicityViolated(format!(
                "inner product {inner} at |P| = {}, |Q| = {}",
                p.norm(),
                q.norm()
            )));
        }
        let curv = phi.phi_second(p.norm() + q.norm());
        c_lo = c_lo.min(inner / (curv * dist * dist));
        c_hi = c_hi.max(gap.norm() / (curv * dist));
    }
    if !(c_lo.is_finite() && c_hi.is_finite() && c_lo > 0.0 && c_hi > 0.0) {
        return Err(Error::Numerical(format!(
            "assumption fit degenerate: c = {c_lo}, C = {c_hi}"
        )));
    }
    Ok((c_lo, c_hi))
}

/// Result of a shift-change inequality check.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShiftChangeCheck {
    pub pass: bool,
    /// `K (phi'_{|C|}(|S-C|) + phi'_{|C|}(|T-C|)) - phi'_{|S|}(|S-T|)`.
    pub slack: f64,
}

/// Checks `phi'_{|S|}(|S-T|) <= K (phi'_{|C|}(|S-C|) + phi'_{|C|}(|T-C|))`.
pub fn check_shift_change(
    phi: &NFunction,
    s: &SymMat,
    t: &SymMat,
    c: &SymMat,
    k: f64,
) -> ShiftChangeCheck {
    let lhs = shifted_phi_prime(phi, s.norm(), s.sub(t).norm());
    let nc = c.norm();
    let rhs = k
        * (shifted_phi_prime(phi, nc, s.sub(c).norm())
            + shifted_phi_prime(phi, nc, t.sub(c).norm()));
    let slack = rhs - lhs;
    ShiftChangeCheck {
        pass: slack >= -1e-12 * (1.0 + lhs.abs()),
        slack,
    }
}

/// One row of a quadruple sweep export.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadrupleRow {
    pub seed: u64,
    pub dim: usize,
    pub p_norm: f64,
    pub q_norm: f64,
    pub quadruple: MonotonicityQuadruple,
    pub ratios: [f64; 6],
}

/// Evaluates the quadruple on `count` seeded pairs; near-coincident pairs are
/// skipped.
pub fn quadruple_sweep(
    phi: &NFunction,
    tensor: &GrowthTensor,
    dim: usize,
    count: usize,
    seed: u64,
    norm_lo: f64,
    norm_hi: f64,
) -> Vec<QuadrupleRow> {
    sample_pairs(seed, dim, count, norm_lo, norm_hi)
        .iter()
        .filter_map(|(p, q)| {
            let quad = monotonicity_quadruple(phi, tensor, p, q);
            if quad.inner == 0.0 && quad.vgap == 0.0 {
                return None;
            }
            Some(QuadrupleRow {
                seed,
                dim,
                p_norm: p.norm(),
                q_norm: q.norm(),
                quadruple: quad,
                ratios: quad.pairwise_ratios(),
            })
        })
        .collect()
}

/// CSV export: one row per sampled pair.
pub fn write_quadruple_csv<W: Write>(out: &mut W, rows: &[QuadrupleRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "seed,dim,p_norm,q_norm,inner,curvature,shifted,vgap,\
         r_inner_curv,r_inner_shift,r_inner_vgap,r_curv_shift,r_curv_vgap,r_shift_vgap"
    )?;
    for r in rows {
        let q = r.quadruple;
        write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.seed, r.dim, r.p_norm, r.q_norm, q.inner, q.curvature, q.shifted, q.vgap
        )?;
        for v in r.ratios {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Largest symmetric deviation `max(r, 1/r)` over all finite positive ratios;
/// the calibration constant for a fit-then-validate split.
pub fn ratio_envelope(rows: &[QuadrupleRow]) -> f64 {
    let mut k = 1.0f64;
    for row in rows {
        for &r in &row.ratios {
            if r.is_finite() && r > 0.0 {
                k = k.max(r).max(1.0 / r);
            }
        }
    }
    k
}
