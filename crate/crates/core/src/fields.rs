//! Discrete space-time fields on a uniform periodic box: difference and
//! averaging operators, parabolic cylinders, cutoff pairs, and the flat
//! binary snapshot format.
//!
//! Layout conventions, fixed across the crate:
//! * space nodes are indexed row-major over `(i0, i1[, i2])`, periodic in
//!   every axis (index arithmetic mod `n`);
//! * multi-component values are stored slice-major, node-major,
//!   component-major;
//! * a field with `c` components has spatial gradient with `c * dim`
//!   components, ordered component-major then derivative-axis
//!   (`out[c * dim + axis]`).

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Uniform periodic space grid: `n` nodes per axis on a box of side `len`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub dim: usize,
    pub n: usize,
    pub len: f64,
}

impl SpaceGrid {
    pub fn new(dim: usize, n: usize, len: f64) -> Self {
        assert!(dim == 2 || dim == 3, "dim must be 2 or 3");
        assert!(n >= 4, "need at least 4 nodes per axis");
        assert!(len > 0.0);
        Self { dim, n, len }
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.len / self.n as f64
    }

    pub fn nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cell volume `hx^dim`.
    pub fn cell(&self) -> f64 {
        self.hx().powi(self.dim as i32)
    }

    #[inline]
    pub fn wrap(&self, i: i64) -> usize {
        i.rem_euclid(self.n as i64) as usize
    }

    /// Flat index from per-axis indices (row-major).
    #[inline]
    pub fn index(&self, ix: &[usize]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim {
            idx = idx * self.n + ix[a];
        }
        idx
    }

    /// Per-axis indices from a flat index.
    #[inline]
    pub fn unindex(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in (0..self.dim).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    /// Flat index of the node shifted by `steps` grid cells along `axis`.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, steps: i64) -> usize {
        let mut ix = self.unindex(idx);
        ix[axis] = self.wrap(ix[axis] as i64 + steps);
        self.index(&ix[..self.dim])
    }

    /// Node coordinates in `[0, len)^dim`.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let ix = self.unindex(idx);
        let h = self.hx();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = ix[a] as f64 * h;
        }
        x
    }

    /// Minimum-image Euclidean distance between a node and a point.
    pub fn distance(&self, idx: usize, center: &[f64; 3]) -> f64 {
        let x = self.coords(idx);
        let mut s = 0.0;
        for a in 0..self.dim {
            let mut d = (x[a] - center[a]).abs() % self.len;
            if d > 0.5 * self.len {
                d = self.len - d;
            }
            s += d * d;
        }
        s.sqrt()
    }
}

/// Uniform time grid: `steps` intervals of length `dt` (`steps + 1` slices).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, dt: f64) -> Self {
        assert!(dt > 0.0);
        Self { steps, dt }
    }

    pub fn slices(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, slice: usize) -> f64 {
        slice as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

/// Values on one time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceField {
    pub grid: SpaceGrid,
    pub comps: usize,
    data: Vec<f64>,
}

impl SliceField {
    pub fn zeros(grid: SpaceGrid, comps: usize) -> Self {
        Self {
            grid,
            comps,
            data: vec![0.0; grid.nodes() * comps],
        }
    }

    pub fn from_fn(grid: SpaceGrid, comps: usize, f: impl Fn(&[f64; 3], usize) -> f64) -> Self {
        let mut field = Self::zeros(grid, comps);
        for node in 0..grid.nodes() {
            let x = grid.coords(node);
            for c in 0..comps {
                field.data[node * comps + c] = f(&x, c);
            }
        }
        field
    }

    #[inline]
    pub fn at(&self, node: usize, c: usize) -> f64 {
        self.data[node * self.comps + c]
    }

    #[inline]
    pub fn set(&mut self, node: usize, c: usize, v: f64) {
        self.data[node * self.comps + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SliceField {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    /// Nodewise map of the full component vector.
    pub fn map_nodes(&self, out_comps: usize, f: impl Fn(&[f64], &mut [f64])) -> SliceField {
        let mut out = SliceField::zeros(self.grid, out_comps);
        for node in 0..self.grid.nodes() {
            let src = &self.data[node * self.comps..(node + 1) * self.comps];
            let dst = &mut out.data[node * out_comps..(node + 1) * out_comps];
            f(src, dst);
        }
        out
    }

    pub fn axpy(&mut self, alpha: f64, other: &SliceField) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn sub(&self, other: &SliceField) -> SliceField {
        assert_eq!(self.data.len(), other.data.len());
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    /// Discrete L2 norm `sqrt(sum |v|^2 hx^dim)`.
    pub fn l2_norm(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for v in &self.data {
            acc.add(v * v);
        }
        (acc.value() * self.grid.cell()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pointwise squared Euclidean norm over components (one output component).
    pub fn sq_norm_field(&self) -> SliceField {
        self.map_nodes(1, |src, dst| {
            dst[0] = src.iter().map(|v| v * v).sum();
        })
    }
}

/// Vector-valued function on the space grid times the time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub grid: SpaceGrid,
    pub time: TimeGrid,
    pub comps: usize,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: SpaceGrid, time: TimeGrid, comps: usize) -> Self {
        Self {
            grid,
            time,
            comps,
            data: vec![0.0; time.slices() * grid.nodes() * comps],
        }
    }

    pub fn from_fn(
        grid: SpaceGrid,
        time: TimeGrid,
        comps: usize,
        f: impl Fn(&[f64; 3], f64, usize) -> f64,
    ) -> Self {
        let mut field = Self::zeros(grid, time, comps);
        for s in 0..time.slices() {
            let t = time.time(s);
            for node in 0..grid.nodes() {
                let x = grid.coords(node);
                for c in 0..comps {
                    let k = field.flat(s, node, c);
                    field.data[k] = f(&x, t, c);
                }
            }
        }
        field
    }

    #[inline]
    fn flat(&self, slice: usize, node: usize, c: usize) -> usize {
        (slice * self.grid.nodes() + node) * self.comps + c
    }

    #[inline]
    pub fn at(&self, slice: usize, node: usize, c: usize) -> f64 {
        self.data[self.flat(slice, node, c)]
    }

    #[inline]
    pub fn set(&mut self, slice: usize, node: usize, c: usize, v: f64) {
        let k = self.flat(slice, node, c);
        self.data[k] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, s: usize) -> SliceField {
        let nper = self.grid.nodes() * self.comps;
        SliceField {
            grid: self.grid,
            comps: self.comps,
            data: self.data[s * nper..(s + 1) * nper].to_vec(),
        }
    }

    pub fn set_slice(&mut self, s: usize, field: &SliceField) {
        assert_eq!(field.comps, self.comps);
        let nper = self.grid.nodes() * self.comps;
        self.data[s * nper..(s + 1) * nper].copy_from_slice(&field.data);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SpaceTimeField {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies a slice operation to every time slice.
    pub fn map_slices(
        &self,
        out_comps: usize,
        f: impl Fn(&SliceField) -> SliceField,
    ) -> SpaceTimeField {
        let mut out = SpaceTimeField::zeros(self.grid, self.time, out_comps);
        for s in 0..self.time.slices() {
            let mapped = f(&self.slice(s));
            assert_eq!(mapped.comps, out_comps);
            out.set_slice(s, &mapped);
        }
        out
    }
}

/// Centered second-order gradient with periodic wrap; exact on affine fields.
pub fn gradient(field: &SliceField) -> SliceField {
    let grid = field.grid;
    let d = grid.dim;
    let inv2h = 1.0 / (2.0 * grid.hx());
    let mut out = SliceField::zeros(grid, field.comps * d);
    for node in 0..grid.nodes() {
        for a in 0..d {
            let plus = grid.neighbor(node, a, 1);
            let minus = grid.neighbor(node, a, -1);
            for c in 0..field.comps {
                let v = (field.at(plus, c) - field.at(minus, c)) * inv2h;
                out.set(node, c * d + a, v);
            }
        }
    }
    out
}

/// Symmetric gradient `(grad u + grad^T u) / 2` of a `dim`-component field,
/// stored as a full row-major matrix field.
pub fn sym_gradient(field: &SliceField) -> SliceField {
    let d = field.grid.dim;
    assert_eq!(field.comps, d, "symmetric gradient needs a d-vector field");
    let grad = gradient(field);
    let mut out = grad.clone();
    for node in 0..field.grid.nodes() {
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (grad.at(node, i * d + j) + grad.at(node, j * d + i));
                out.set(node, i * d + j, v);
                out.set(node, j * d + i, v);
            }
        }
    }
    out
}

/// Adjoint of the centered gradient: for a matrix field `M` (components
/// `i * dim + a`), returns `(-div M)_i`. Under the periodic inner product
/// `sum M : grad(w) = sum (-div M) . w` holds exactly in exact arithmetic.
pub fn neg_divergence(field: &SliceField) -> SliceField {
    let grid = field.grid;
    let d = grid.dim;
    assert_eq!(field.comps % d, 0);
    let comps_out = field.comps / d;
    let inv2h = 1.0 / (2.0 * grid.hx());
    let mut out = SliceField::zeros(grid, comps_out);
    for node in 0..grid.nodes() {
        for a in 0..d {
            let plus = grid.neighbor(node, a, 1);
            let minus = grid.neighbor(node, a, -1);
            for i in 0..comps_out {
                let v = (field.at(minus, i * d + a) - field.at(plus, i * d + a)) * inv2h;
                let cur = out.at(node, i);
                out.set(node, i, cur + v);
            }
        }
    }
    out
}

/// Lattice shift difference `g(x + s hx) - g(x)` with periodic wrap.
pub fn shift_diff(field: &SliceField, shift: &[i64]) -> SliceField {
    let grid = field.grid;
    assert_eq!(shift.len(), grid.dim);
    let mut out = SliceField::zeros(grid, field.comps);
    for node in 0..grid.nodes() {
        let ix = grid.unindex(node);
        let mut jx = [0usize; 3];
        for a in 0..grid.dim {
            jx[a] = grid.wrap(ix[a] as i64 + shift[a]);
        }
        let other = grid.index(&jx[..grid.dim]);
        for c in 0..field.comps {
            out.set(node, c, field.at(other, c) - field.at(node, c));
        }
    }
    out
}

/// Pure translation by a lattice vector (data relabeling, no arithmetic).
pub fn translate(field: &SliceField, shift: &[i64]) -> SliceField {
    let grid = field.grid;
    assert_eq!(shift.len(), grid.dim);
    let mut out = SliceField::zeros(grid, field.comps);
    for node in 0..grid.nodes() {
        let ix = grid.unindex(node);
        let mut jx = [0usize; 3];
        for a in 0..grid.dim {
            jx[a] = grid.wrap(ix[a] as i64 + shift[a]);
        }
        let other = grid.index(&jx[..grid.dim]);
        for c in 0..field.comps {
            out.set(node, c, field.at(other, c));
        }
    }
    out
}

/// Slice-wise lattice shift difference of a space-time field.
pub fn shift_diff_spacetime(field: &SpaceTimeField, shift: &[i64]) -> SpaceTimeField {
    field.map_slices(field.comps, |s| shift_diff(s, shift))
}

/// Forward time difference `g(., t + h) - g(., t)` defined on slices
/// `0 ..= steps - h`.
pub fn time_diff(field: &SpaceTimeField, h: usize) -> Result<SpaceTimeField> {
    let m = field.time.steps;
    if h == 0 || h > m {
        return Err(Error::Domain(format!(
            "time difference step {h} outside 1..={m}"
        )));
    }
    let time = TimeGrid::new(m - h, field.time.dt);
    let mut out = SpaceTimeField::zeros(field.grid, time, field.comps);
    let nper = field.grid.nodes() * field.comps;
    for s in 0..=m - h {
        for k in 0..nper {
            out.data[s * nper + k] = field.data[(s + h) * nper + k] - field.data[s * nper + k];
        }
    }
    Ok(out)
}

/// Steklov average over a left-closed window of `h` slices:
/// `v_h(t) = (v(t) + ... + v(t + h - 1)) / h` on slices `0 ..= steps - h`,
/// zero on the remaining slices.
///
/// The forward time difference of `v_h` divided by `dt` equals
/// `(v(t + h) - v(t)) / (h dt)`; with a power-of-two `h` and exactly
/// subtractable data the identity holds to the last bit.
pub fn steklov(field: &SpaceTimeField, h: usize) -> Result<SpaceTimeField> {
    let m = field.time.steps;
    if h == 0 || h > m {
        return Err(Error::Domain(format!(
            "averaging window {h} outside 1..={m}"
        )));
    }
    let mut out = SpaceTimeField::zeros(field.grid, field.time, field.comps);
    let nper = field.grid.nodes() * field.comps;
    let hf = h as f64;
    for s in 0..=m - h {
        for k in 0..nper {
            let mut sum = 0.0;
            for j in 0..h {
                sum += field.data[(s + j) * nper + k];
            }
            out.data[s * nper + k] = sum / hf;
        }
    }
    Ok(out)
}

/// Parabolic cylinder: ball of radius `rho` around `center` times the time
/// interval of length `rho^2` centered at `t_center`.
///
/// Membership is strict on both factors: `|x - center| < rho` in the
/// minimum-image Euclidean distance and `|t - t_center| < rho^2 / 2`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub center: [f64; 3],
    pub t_center: f64,
    pub rho: f64,
}

impl ParabolicCylinder {
    pub fn new(center: [f64; 3], t_center: f64, rho: f64) -> Self {
        assert!(rho > 0.0);
        Self {
            center,
            t_center,
            rho,
        }
    }

    /// Same axis and time center, different radius.
    pub fn with_radius(&self, rho: f64) -> Self {
        Self::new(self.center, self.t_center, rho)
    }

    pub fn contains_node(&self, grid: &SpaceGrid, node: usize) -> bool {
        grid.distance(node, &self.center) < self.rho
    }

    pub fn contains_slice(&self, time: &TimeGrid, slice: usize) -> bool {
        (time.time(slice) - self.t_center).abs() < 0.5 * self.rho * self.rho
    }

    /// Checks the cylinder sits strictly inside the periodic box (margin of
    /// two cells in space) and inside the time horizon.
    pub fn validate(&self, grid: &SpaceGrid, time: &TimeGrid) -> Result<()> {
        let margin = 2.0 * grid.hx();
        if self.rho + margin > 0.5 * grid.len {
            return Err(Error::CylinderOutsideDomain(format!(
                "rho = {} with margin {} exceeds half box {}",
                self.rho,
                margin,
                0.5 * grid.len
            )));
        }
        let half = 0.5 * self.rho * self.rho;
        if self.t_center - half < -1e-12 || self.t_center + half > time.horizon() + 1e-12 {
            return Err(Error::CylinderOutsideDomain(format!(
                "time window [{}, {}] outside [0, {}]",
                self.t_center - half,
                self.t_center + half,
                time.horizon()
            )));
        }
        Ok(())
    }
}

/// Midpoint-rule integral of a scalar space-time field over a cylinder.
pub fn cylinder_integral(field: &SpaceTimeField, cyl: &ParabolicCylinder) -> Result<f64> {
    assert_eq!(field.comps, 1, "cylinder integral needs a scalar field");
    cyl.validate(&field.grid, &field.time)?;
    let weight = field.grid.cell() * field.time.dt;
    let members: Vec<usize> = (0..field.grid.nodes())
        .filter(|&n| cyl.contains_node(&field.grid, n))
        .collect();
    let mut acc = CompensatedSum::new();
    for s in 0..field.time.slices() {
        if !cyl.contains_slice(&field.time, s) {
            continue;
        }
        for &n in &members {
            acc.add(field.at(s, n, 0));
        }
    }
    Ok(acc.value() * weight)
}

/// Midpoint-rule integral of a scalar slice over the ball of radius `rho`.
pub fn ball_integral(field: &SliceField, center: &[f64; 3], rho: f64) -> f64 {
    assert_eq!(field.comps, 1);
    let mut acc = CompensatedSum::new();
    for n in 0..field.grid.nodes() {
        if field.grid.distance(n, center) < rho {
            acc.add(field.at(n, 0));
        }
    }
    acc.value() * field.grid.cell()
}

/// Maximum over the cylinder's time slices of the ball integral (the discrete
/// stand-in for the essential supremum in time).
pub fn ess_sup_slices(field: &SpaceTimeField, cyl: &ParabolicCylinder) -> Result<f64> {
    assert_eq!(field.comps, 1);
    cyl.validate(&field.grid, &field.time)?;
    let mut best = f64::NEG_INFINITY;
    let mut any = false;
    for s in 0..field.time.slices() {
        if !cyl.contains_slice(&field.time, s) {
            continue;
        }
        any = true;
        best = best.max(ball_integral(&field.slice(s), &cyl.center, cyl.rho));
    }
    if !any {
        return Err(Error::CylinderOutsideDomain(
            "no time slices inside cylinder".into(),
        ));
    }
    Ok(best)
}

/// Quintic smoothstep on [0, 1].
fn smoothstep5(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

/// Fallback cutoff power when no Boyd index is supplied; valid for every
/// lower index above 1.2.
pub const DEFAULT_CUTOFF_POWER: u32 = 4;

/// Smallest power `k >= 1` with `(2k - 1) q1 > 2k`.
pub fn cutoff_power_for_index(q1: f64) -> u32 {
    assert!(q1 > 1.0, "lower Boyd index must exceed 1");
    let mut k = 1u32;
    while (2.0 * k as f64 - 1.0) * q1 <= 2.0 * k as f64 {
        k += 1;
        if k > 64 {
            break;
        }
    }
    k
}

/// Space-time cutoff pair between two concentric parabolic cylinders.
///
/// The base profiles transition with a quintic smoothstep; the cutoff used in
/// the energy quantities is `psi = (eta sigma)^k`. The recorded constants
/// certify the discrete bounds `|grad eta| <= c_eta / (rho2 - rho1)` and
/// `|sigma_t| <= c_sigma / (rho2 - rho1)^2` on the whole grid.
#[derive(Clone, Debug)]
pub struct CutoffPair {
    pub rho1: f64,
    pub rho2: f64,
    pub power: u32,
    pub cylinder: ParabolicCylinder,
    eta: SliceField,
    sigma: Vec<f64>,
    pub c_eta: f64,
    pub c_sigma: f64,
    time: TimeGrid,
}

impl CutoffPair {
    pub fn build(
        grid: SpaceGrid,
        time: TimeGrid,
        center: [f64; 3],
        t_center: f64,
        rho1: f64,
        rho2: f64,
        power: u32,
    ) -> Result<Self> {
        if !(rho1 < rho2) {
            return Err(Error::CutoffUnresolvable(format!(
                "need rho1 < rho2, got {rho1} >= {rho2}"
            )));
        }
        if rho2 - rho1 < 4.0 * grid.hx() {
            return Err(Error::CutoffUnresolvable(format!(
                "rho2 - rho1 = {} below 4 hx = {}",
                rho2 - rho1,
                4.0 * grid.hx()
            )));
        }
        if power == 0 {
            return Err(Error::CutoffUnresolvable("power must be >= 1".into()));
        }
        let outer = ParabolicCylinder::new(center, t_center, rho2);
        outer.validate(&grid, &time)?;

        let width = rho2 - rho1;
        let mut eta = SliceField::zeros(grid, 1);
        for node in 0..grid.nodes() {
            let r = grid.distance(node, &center);
            let v = if r <= rho1 {
                1.0
            } else if r >= rho2 {
                0.0
            } else {
                smoothstep5((rho2 - r) / width)
            };
            eta.set(node, 0, v);
        }
        let half1 = 0.5 * rho1 * rho1;
        let half2 = 0.5 * rho2 * rho2;
        let twidth = half2 - half1;
        let sigma: Vec<f64> = (0..time.slices())
            .map(|s| {
                let tau = (time.time(s) - t_center).abs();
                if tau <= half1 {
                    1.0
                } else if tau >= half2 {
                    0.0
                } else {
                    smoothstep5((half2 - tau) / twidth)
                }
            })
            .collect();

        let grad_eta = gradient(&eta);
        let mut max_grad: f64 = 0.0;
        for node in 0..grid.nodes() {
            let mut s = 0.0;
            for a in 0..grid.dim {
                let g = grad_eta.at(node, a);
                s += g * g;
            }
            max_grad = max_grad.max(s.sqrt());
        }
        let mut max_dsigma: f64 = 0.0;
        for w in sigma.windows(2) {
            max_dsigma = max_dsigma.max((w[1] - w[0]).abs() / time.dt);
        }

        Ok(Self {
            rho1,
            rho2,
            power,
            cylinder: outer,
            eta,
            sigma,
            c_eta: max_grad * width,
            c_sigma: max_dsigma * width * width,
            time,
        })
    }

    /// Builds with the smallest power admissible for the given lower Boyd
    /// index.
    pub fn build_for_index(
        grid: SpaceGrid,
        time: TimeGrid,
        center: [f64; 3],
        t_center: f64,
        rho1: f64,
        rho2: f64,
        q1: f64,
    ) -> Result<Self> {
        Self::build(
            grid,
            time,
            center,
            t_center,
            rho1,
            rho2,
            cutoff_power_for_index(q1),
        )
    }

    pub fn inner_cylinder(&self) -> ParabolicCylinder {
        self.cylinder.with_radius(self.rho1)
    }

    /// Base space profile in [0, 1].
    pub fn eta(&self, node: usize) -> f64 {
        self.eta.at(node, 0)
    }

    /// Base time profile in [0, 1].
    pub fn sigma(&self, slice: usize) -> f64 {
        self.sigma[slice]
    }

    /// The powered cutoff `(eta sigma)^k`.
    pub fn psi(&self, node: usize, slice: usize) -> f64 {
        (self.eta(node) * self.sigma(slice)).powi(self.power as i32)
    }

    /// Certified-bound check on every node and slice.
    pub fn verify_bounds(&self) -> bool {
        let width = self.rho2 - self.rho1;
        let grad = gradient(&self.eta);
        let grid = self.eta.grid;
        for node in 0..grid.nodes() {
            let mut s = 0.0;
            for a in 0..grid.dim {
                let g = grad.at(node, a);
                s += g * g;
            }
            if s.sqrt() > self.c_eta / width * (1.0 + 1e-12) {
                return false;
            }
        }
        for w in self.sigma.windows(2) {
            if ((w[1] - w[0]).abs() / self.time.dt) > self.c_sigma / (width * width) * (1.0 + 1e-12)
            {
                return false;
            }
        }
        true
    }
}

/// Outcome of the discrete line-integral bound check.
#[derive(Clone, Copy, Debug)]
pub struct LineBoundCheck {
    pub pass: bool,
    /// Minimum of `rhs - lhs` over all nodes.
    pub min_slack: f64,
}

/// Validates `|u(x + l hx e_axis) - u(x)|^alpha <= |l hx|^alpha *
/// mean_j |D+ u(x + j hx e_axis)|^alpha` over every node, the discrete
/// path-sum form of absolute continuity along lines.
pub fn fundamental_line_bound_check(
    field: &SliceField,
    axis: usize,
    l: i64,
    alpha: u32,
) -> LineBoundCheck {
    assert!(alpha == 1 || alpha == 2, "alpha must be 1 or 2");
    let grid = field.grid;
    assert!(axis < grid.dim);
    if l == 0 {
        return LineBoundCheck {
            pass: true,
            min_slack: 0.0,
        };
    }
    let steps = l.unsigned_abs() as usize;
    let dir: i64 = if l > 0 { 1 } else { -1 };
    let h = grid.hx();
    let lh = (l.abs() as f64) * h;
    let mut min_slack = f64::INFINITY;
    let mut pass = true;
    for node in 0..grid.nodes() {
        let far = grid.neighbor(node, axis, l);
        let mut diff2 = 0.0;
        for c in 0..field.comps {
            let d = field.at(far, c) - field.at(node, c);
            diff2 += d * d;
        }
        let lhs = if alpha == 1 { diff2.sqrt() } else { diff2 };
        // One-sided differences along the lattice path from node to far.
        let mut mean = 0.0;
        for j in 0..steps {
            let a = grid.neighbor(node, axis, dir * j as i64);
            let b = grid.neighbor(node, axis, dir * (j as i64 + 1));
            let mut step2 = 0.0;
            for c in 0..field.comps {
                let d = (field.at(b, c) - field.at(a, c)) / h;
                step2 += d * d;
            }
            mean += if alpha == 1 { step2.sqrt() } else { step2 };
        }
        mean /= steps as f64;
        let rhs = lh.powi(alpha as i32) * mean;
        let slack = rhs - lhs;
        if slack < -1e-12 * (1.0 + lhs.abs()) {
            pass = false;
        }
        min_slack = min_slack.min(slack);
    }
    LineBoundCheck { pass, min_slack }
}

/// Band-limited random field: sum of cosine modes with per-axis integer
/// wavenumbers bounded by `kmax`, seeded and deterministic.
pub fn band_limited_field(
    grid: SpaceGrid,
    comps: usize,
    kmax: i32,
    amplitude: f64,
    seed: u64,
) -> SliceField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim;
    let mut modes: Vec<([i32; 3], Vec<f64>, Vec<f64>)> = Vec::new();
    let mut enumerate = |k: [i32; 3]| {
        if k.iter().all(|&v| v == 0) {
            return None;
        }
        let amps: Vec<f64> = (0..comps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phases: Vec<f64> = (0..comps)
            .map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI))
            .collect();
        Some((k, amps, phases))
    };
    if d == 2 {
        for k0 in -kmax..=kmax {
            for k1 in -kmax..=kmax {
                if let Some(m) = enumerate([k0, k1, 0]) {
                    modes.push(m);
                }
            }
        }
    } else {
        for k0 in -kmax..=kmax {
            for k1 in -kmax..=kmax {
                for k2 in -kmax..=kmax {
                    if let Some(m) = enumerate([k0, k1, k2]) {
                        modes.push(m);
                    }
                }
            }
        }
    }
    let norm = amplitude / (modes.len() as f64).sqrt();
    let two_pi = 2.0 * std::f64::consts::PI;
    SliceField::from_fn(grid, comps, |x, c| {
        let mut v = 0.0;
        for (k, amps, phases) in &modes {
            let mut phase = phases[c];
            for a in 0..d {
                phase += two_pi * k[a] as f64 * x[a] / grid.len;
            }
            v += amps[c] * phase.cos();
        }
        v * norm
    })
}

/// Writes the flat binary snapshot: the header `dim, n, steps` (u32 LE),
/// `len, dt` (f64 LE), `comps` (u32 LE), then the values as little-endian
/// f64 in slice-major, node-major, component-major order.
pub fn write_spacetime(path: &Path, field: &SpaceTimeField) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&(field.grid.dim as u32).to_le_bytes())?;
    out.write_all(&(field.grid.n as u32).to_le_bytes())?;
    out.write_all(&(field.time.steps as u32).to_le_bytes())?;
    out.write_all(&field.grid.len.to_le_bytes())?;
    out.write_all(&field.time.dt.to_le_bytes())?;
    out.write_all(&(field.comps as u32).to_le_bytes())?;
    for v in &field.data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_spacetime`].
pub fn read_spacetime(path: &Path) -> Result<SpaceTimeField> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut u32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];
    file.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim != 2 && dim != 3 {
        return Err(Error::Config(format!("snapshot with dim = {dim}")));
    }
    file.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf)?;
    let steps = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut f64buf)?;
    let len = f64::from_le_bytes(f64buf);
    file.read_exact(&mut f64buf)?;
    let dt = f64::from_le_bytes(f64buf);
    file.read_exact(&mut u32buf)?;
    let comps = u32::from_le_bytes(u32buf) as usize;
    let grid = SpaceGrid::new(dim, n, len);
    let time = TimeGrid::new(steps, dt);
    let mut field = SpaceTimeField::zeros(grid, time, comps);
    for v in &mut field.data {
        file.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    Ok(field)
}

/// CSV dump for small grids: one line per (slice, node) with coordinates and
/// all components.
pub fn write_spacetime_csv<W: Write>(out: &mut W, field: &SpaceTimeField) -> std::io::Result<()> {
    write!(out, "slice,t,node")?;
    for a in 0..field.grid.dim {
        write!(out, ",x{a}")?;
    }
    for c in 0..field.comps {
        write!(out, ",v{c}")?;
    }
    writeln!(out)?;
    for s in 0..field.time.slices() {
        let t = field.time.time(s);
        for node in 0..field.grid.nodes() {
            let x = field.grid.coords(node);
            write!(out, "{s},{t},{node}")?;
            for a in 0..field.grid.dim {
                write!(out, ",{}", x[a])?;
            }
            for c in 0..field.comps {
                write!(out, ",{}", field.at(s, node, c))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
