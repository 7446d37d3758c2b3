//! Implicit Euler stepping for the evolutionary phi-Laplacian systems
//! `u_t - div A(Du) = f` (symmetric gradient) and `u_t - div A(grad u) = f`
//! (full gradient) on the periodic box.
//!
//! Each implicit step is solved by damped Picard iterations: the residual is
//! corrected through a frozen-coefficient linear solve with coefficient
//! `phi''(|Gu| + delta_reg)`, which is symmetric positive definite thanks to
//! the mass term, so plain conjugate gradients apply. Monotonicity of the
//! tensor makes the implicit step a well-posed convex problem.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    band_limited_field, gradient, neg_divergence, sym_gradient, CutoffPair, SliceField, SpaceGrid,
    SpaceTimeField, TimeGrid,
};
use crate::nfunction::{NFunction, PrototypeSpec};
use crate::numeric::CompensatedSum;
use crate::tensors::GrowthTensor;

/// Which gradient the tensor acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// Symmetric gradient `Du = (grad u + grad^T u)/2`.
    Sym,
    /// Full gradient.
    Full,
}

impl SystemKind {
    pub fn apply_gradient(&self, u: &SliceField) -> SliceField {
        match self {
            SystemKind::Sym => sym_gradient(u),
            SystemKind::Full => gradient(u),
        }
    }
}

/// Forcing term selector.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Constant(Vec<f64>),
    Field(Arc<SpaceTimeField>),
    Analytic(Arc<dyn Fn(&[f64; 3], f64, usize) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Zero"),
            Forcing::Constant(v) => write!(f, "Constant({v:?})"),
            Forcing::Field(_) => write!(f, "Field(..)"),
            Forcing::Analytic(_) => write!(f, "Analytic(..)"),
        }
    }
}

impl Forcing {
    pub fn slice_at(&self, grid: SpaceGrid, comps: usize, slice: usize, t: f64) -> SliceField {
        match self {
            Forcing::Zero => SliceField::zeros(grid, comps),
            Forcing::Constant(v) => {
                assert_eq!(v.len(), comps);
                SliceField::from_fn(grid, comps, |_, c| v[c])
            }
            Forcing::Field(f) => f.slice(slice),
            Forcing::Analytic(f) => SliceField::from_fn(grid, comps, |x, c| f(x, t, c)),
        }
    }
}

/// Full problem description for one solve.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub system: SystemKind,
    pub tensor: GrowthTensor,
    pub grid: SpaceGrid,
    pub time: TimeGrid,
    pub initial: SliceField,
    pub forcing: Forcing,
    /// Relative nonlinear tolerance: stop at `|r| <= tol (1 + |f|)`.
    pub tol: f64,
    pub max_picard: usize,
    /// Regularization added to `|Gu|` inside the frozen coefficient.
    pub delta_reg: f64,
    /// Cap on the frozen coefficient; capped steps are flagged.
    pub coeff_cap: f64,
}

impl ProblemSpec {
    pub fn new(
        system: SystemKind,
        tensor: GrowthTensor,
        grid: SpaceGrid,
        time: TimeGrid,
        initial: SliceField,
        forcing: Forcing,
    ) -> Result<Self> {
        if time.dt > grid.len * grid.len / 4.0 {
            return Err(Error::Config(format!(
                "dt = {} exceeds the sanity cap L^2/4 = {}",
                time.dt,
                grid.len * grid.len / 4.0
            )));
        }
        if !initial.is_finite() {
            return Err(Error::Config(
                "initial data contains non-finite values".into(),
            ));
        }
        assert_eq!(initial.comps, grid.dim);
        Ok(Self {
            system,
            tensor,
            grid,
            time,
            initial,
            forcing,
            tol: 1e-9,
            max_picard: 200,
            delta_reg: 1e-10,
            coeff_cap: 1e12,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_picard(mut self, n: usize) -> Self {
        self.max_picard = n;
        self
    }
}

/// Per-step iteration record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepStats {
    pub picard_iters: usize,
    pub final_residual: f64,
    /// Residual norm before each accepted correction, then the final value.
    pub residual_history: Vec<f64>,
    pub cg_iters: usize,
    pub dampings: usize,
    pub coeff_capped: bool,
}

/// Full solve record.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub trajectory: SpaceTimeField,
    pub steps: Vec<StepStats>,
    pub coeff_capped_any: bool,
}

/// JSON-facing summary of a solve (the trajectory goes into the binary
/// snapshot, not the JSON).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSummary {
    pub steps: usize,
    pub total_picard: usize,
    pub total_cg: usize,
    pub max_residual: f64,
    pub capped_steps: usize,
}

impl SolveReport {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            steps: self.steps.len(),
            total_picard: self.steps.iter().map(|s| s.picard_iters).sum(),
            total_cg: self.steps.iter().map(|s| s.cg_iters).sum(),
            max_residual: self
                .steps
                .iter()
                .map(|s| s.final_residual)
                .fold(0.0, f64::max),
            capped_steps: self.steps.iter().filter(|s| s.coeff_capped).count(),
        }
    }
}

/// `-div A(G u)`, the spatial operator, with the divergence taken as the
/// exact adjoint of the gradient stencil.
pub fn apply_operator(system: SystemKind, tensor: &GrowthTensor, u: &SliceField) -> SliceField {
    let gu = system.apply_gradient(u);
    let d = u.grid.dim;
    let flux = gu.map_nodes(d * d, |src, dst| tensor.apply_full(src, dst));
    neg_divergence(&flux)
}

/// Discrete weak pairing `sum A(G u) : G w * hx^dim`. Equals
/// `sum apply_operator(u) . w * hx^dim` for periodic fields.
pub fn weak_pairing(
    system: SystemKind,
    tensor: &GrowthTensor,
    u: &SliceField,
    w: &SliceField,
) -> f64 {
    let gu = system.apply_gradient(u);
    let d = u.grid.dim;
    let flux = gu.map_nodes(d * d, |src, dst| tensor.apply_full(src, dst));
    let gw = gradient(w);
    let mut acc = CompensatedSum::new();
    for (a, b) in flux.data().iter().zip(gw.data()) {
        acc.add(a * b);
    }
    acc.value() * u.grid.cell()
}

/// L2 pairing `sum v . w * hx^dim`.
pub fn l2_pairing(v: &SliceField, w: &SliceField) -> f64 {
    let mut acc = CompensatedSum::new();
    for (a, b) in v.data().iter().zip(w.data()) {
        acc.add(a * b);
    }
    acc.value() * v.grid.cell()
}

/// Frozen scalar coefficient `min(phi''(|Gv| + delta_reg), cap)` per node.
/// Returns the field and whether the cap was hit anywhere.
fn frozen_coefficient(spec: &ProblemSpec, v: &SliceField) -> (Vec<f64>, bool) {
    let gv = spec.system.apply_gradient(v);
    let grid = spec.grid;
    let d = grid.dim;
    let phi = spec.tensor.phi();
    let mut capped = false;
    let mut coeff = vec![0.0; grid.nodes()];
    for node in 0..grid.nodes() {
        let mut norm2 = 0.0;
        for c in 0..d * d {
            let g = gv.at(node, c);
            norm2 += g * g;
        }
        let mut a = phi.phi_second(norm2.sqrt() + spec.delta_reg);
        if a > spec.coeff_cap {
            a = spec.coeff_cap;
            capped = true;
        }
        coeff[node] = a;
    }
    (coeff, capped)
}

/// Applies the linearized operator `w -> w/dt - div(a G w)`.
fn apply_linearized(spec: &ProblemSpec, coeff: &[f64], w: &SliceField, inv_dt: f64) -> SliceField {
    let d = spec.grid.dim;
    let mut gw = spec.system.apply_gradient(w);
    for node in 0..spec.grid.nodes() {
        let a = coeff[node];
        for c in 0..d * d {
            let v = gw.at(node, c);
            gw.set(node, c, a * v);
        }
    }
    let mut out = neg_divergence(&gw);
    out.axpy(inv_dt, w);
    out
}

/// Nonlinear residual `(v - u_prev)/dt - div A(G v) - f`.
fn residual(
    spec: &ProblemSpec,
    v: &SliceField,
    u_prev: &SliceField,
    f_next: &SliceField,
    inv_dt: f64,
) -> SliceField {
    let mut r = apply_operator(spec.system, &spec.tensor, v);
    r.axpy(inv_dt, v);
    r.axpy(-inv_dt, u_prev);
    r.axpy(-1.0, f_next);
    r
}

/// Plain conjugate gradients on the linearized SPD operator; returns the
/// iteration count. The approximate solution lands in `x`.
fn cg_solve(
    spec: &ProblemSpec,
    coeff: &[f64],
    b: &SliceField,
    x: &mut SliceField,
    inv_dt: f64,
    tol_l2: f64,
    max_iters: usize,
) -> Result<usize> {
    let mut r = b.clone();
    // x starts at zero, so r = b.
    let mut p = r.clone();
    let mut rs = l2_pairing(&r, &r);
    let target2 = tol_l2 * tol_l2;
    let mut iters = 0;
    while rs > target2 && iters < max_iters {
        let ap = apply_linearized(spec, coeff, &p, inv_dt);
        let pap = l2_pairing(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!(
                "linearized operator lost positivity: p.Ap = {pap}"
            )));
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = l2_pairing(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        let mut p_new = r.clone();
        p_new.axpy(beta, &p);
        p = p_new;
        iters += 1;
    }
    if rs > target2 {
        return Err(Error::Numerical(format!(
            "inner solve stalled at residual {}",
            rs.sqrt()
        )));
    }
    Ok(iters)
}

/// One implicit Euler step by damped Picard iteration.
pub fn step_implicit(
    spec: &ProblemSpec,
    u_prev: &SliceField,
    f_next: &SliceField,
) -> Result<(SliceField, StepStats)> {
    let inv_dt = 1.0 / spec.time.dt;
    let f_norm = f_next.l2_norm();
    let target = spec.tol * (1.0 + f_norm);
    let mut v = u_prev.clone();
    let mut r = residual(spec, &v, u_prev, f_next, inv_dt);
    let mut r_norm = r.l2_norm();
    let mut history = vec![r_norm];
    let mut stats = StepStats {
        picard_iters: 0,
        final_residual: r_norm,
        residual_history: Vec::new(),
        cg_iters: 0,
        dampings: 0,
        coeff_capped: false,
    };
    for _ in 0..spec.max_picard {
        if !r_norm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite residual after {} iterations",
                stats.picard_iters
            )));
        }
        if r_norm <= target {
            stats.final_residual = r_norm;
            stats.residual_history = history;
            return Ok((v, stats));
        }
        let (coeff, capped) = frozen_coefficient(spec, &v);
        stats.coeff_capped |= capped;
        let mut b = r.clone();
        b.scale(-1.0);
        let mut delta = SliceField::zeros(spec.grid, spec.grid.dim);
        let inner_tol = (0.01 * r_norm).max(0.05 * target);
        stats.cg_iters += cg_solve(
            spec,
            &coeff,
            &b,
            &mut delta,
            inv_dt,
            inner_tol,
            20 * spec.grid.nodes(),
        )?;
        // Backtracking on the residual norm; only strict decrease is accepted.
        let mut omega = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = v.clone();
            trial.axpy(omega, &delta);
            let r_trial = residual(spec, &trial, u_prev, f_next, inv_dt);
            let rn_trial = r_trial.l2_norm();
            if rn_trial.is_finite() && rn_trial < r_norm {
                v = trial;
                r = r_trial;
                r_norm = rn_trial;
                accepted = true;
                break;
            }
            omega *= 0.5;
            stats.dampings += 1;
        }
        if !accepted {
            history.push(r_norm);
            return Err(Error::NonConvergence {
                reason: "damping underflow without residual decrease".into(),
                history,
            });
        }
        history.push(r_norm);
        stats.picard_iters += 1;
    }
    if r_norm <= target {
        stats.final_residual = r_norm;
        stats.residual_history = history;
        return Ok((v, stats));
    }
    Err(Error::NonConvergence {
        reason: format!(
            "residual {} above target {} after {} iterations",
            r_norm, target, spec.max_picard
        ),
        history,
    })
}

/// Marches the full trajectory. Slice 0 of the result is the initial data,
/// bit for bit.
pub fn solve(spec: &ProblemSpec) -> Result<SolveReport> {
    let mut trajectory = SpaceTimeField::zeros(spec.grid, spec.time, spec.grid.dim);
    trajectory.set_slice(0, &spec.initial);
    let mut steps = Vec::with_capacity(spec.time.steps);
    let mut u = spec.initial.clone();
    for s in 1..=spec.time.steps {
        let t_next = spec.time.time(s);
        let f_next = spec.forcing.slice_at(spec.grid, spec.grid.dim, s, t_next);
        if !f_next.is_finite() {
            return Err(Error::Config(format!(
                "forcing contains non-finite values at step {s}"
            )));
        }
        let (u_next, stat) = step_implicit(spec, &u, &f_next)?;
        trajectory.set_slice(s, &u_next);
        steps.push(stat);
        u = u_next;
    }
    let coeff_capped_any = steps.iter().any(|s| s.coeff_capped);
    Ok(SolveReport {
        trajectory,
        steps,
        coeff_capped_any,
    })
}

/// A manufactured exact solution with analytic value and time derivative.
#[derive(Clone)]
pub struct ManufacturedSolution {
    pub value: Arc<dyn Fn(&[f64; 3], f64, usize) -> f64 + Send + Sync>,
    pub time_derivative: Arc<dyn Fn(&[f64; 3], f64, usize) -> f64 + Send + Sync>,
}

impl ManufacturedSolution {
    pub fn sample(&self, grid: SpaceGrid, t: f64) -> SliceField {
        let f = &self.value;
        SliceField::from_fn(grid, grid.dim, |x, c| f(x, t, c))
    }

    pub fn sample_trajectory(&self, grid: SpaceGrid, time: TimeGrid) -> SpaceTimeField {
        let f = &self.value;
        SpaceTimeField::from_fn(grid, time, grid.dim, |x, t, c| f(x, t, c))
    }
}

/// Forcing that makes `u_exact` a solution of the discrete-in-space system:
/// `f = d_t u_exact + apply_operator(u_exact)` sampled per slice. Also
/// returns the gradient of `f` by centered differences for the audits.
pub fn manufactured_forcing(
    u_exact: &ManufacturedSolution,
    system: SystemKind,
    tensor: &GrowthTensor,
    grid: SpaceGrid,
    time: TimeGrid,
) -> (SpaceTimeField, SpaceTimeField) {
    let d = grid.dim;
    let mut f = SpaceTimeField::zeros(grid, time, d);
    for s in 0..time.slices() {
        let t = time.time(s);
        let u_slice = u_exact.sample(grid, t);
        let mut op = apply_operator(system, tensor, &u_slice);
        let dudt = {
            let g = &u_exact.time_derivative;
            SliceField::from_fn(grid, d, |x, c| g(x, t, c))
        };
        op.axpy(1.0, &dudt);
        f.set_slice(s, &op);
    }
    let grad_f = f.map_slices(d * d, gradient);
    (f, grad_f)
}

/// The labeled terms of the localized energy identity on a trajectory:
/// the time supremum of the weighted gradient energy, the second-order
/// dissipation, the cutoff time- and space-derivative terms, and the forcing
/// term. All integrals use the cutoff's outer cylinder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// `sup_t 1/2 ∫ |grad u|^2 psi^2`
    pub sup_weighted_gradient: f64,
    /// `∫∫ phi''(|Gu|) |grad Gu|^2 psi^2`
    pub second_order: f64,
    /// `|psi_t|_inf ∫∫ |grad u|^2 psi`
    pub time_cutoff: f64,
    /// `|grad psi|_inf^2 ∫∫ phi''(|Gu|) |grad u|^2`
    pub space_cutoff: f64,
    /// `∫∫ |grad f|^2 psi^2`
    pub forcing: f64,
}

impl EnergyLedger {
    pub fn labeled(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("sup_weighted_gradient", self.sup_weighted_gradient),
            ("second_order", self.second_order),
            ("time_cutoff", self.time_cutoff),
            ("space_cutoff", self.space_cutoff),
            ("forcing", self.forcing),
        ]
    }
}

/// Evaluates the energy ledger of a solved trajectory against a cutoff pair.
/// `grad_f` may be omitted for zero forcing.
pub fn energy_monitor(
    trajectory: &SpaceTimeField,
    system: SystemKind,
    phi: &NFunction,
    cutoff: &CutoffPair,
    grad_f: Option<&SpaceTimeField>,
) -> Result<EnergyLedger> {
    let grid = trajectory.grid;
    let time = trajectory.time;
    let d = grid.dim;
    cutoff.cylinder.validate(&grid, &time)?;
    let cell = grid.cell();
    let dt = time.dt;

    // Cutoff derivative magnitudes: psi = (eta sigma)^k scanned discretely.
    let mut psi_field = SpaceTimeField::zeros(grid, time, 1);
    for s in 0..time.slices() {
        for node in 0..grid.nodes() {
            psi_field.set(s, node, 0, cutoff.psi(node, s));
        }
    }
    let mut psi_t_inf: f64 = 0.0;
    for s in 0..time.steps {
        for node in 0..grid.nodes() {
            psi_t_inf =
                psi_t_inf.max((psi_field.at(s + 1, node, 0) - psi_field.at(s, node, 0)).abs() / dt);
        }
    }
    let mut grad_psi_inf: f64 = 0.0;
    for s in 0..time.slices() {
        let gp = gradient(&psi_field.slice(s));
        for node in 0..grid.nodes() {
            let mut n2 = 0.0;
            for a in 0..d {
                let g = gp.at(node, a);
                n2 += g * g;
            }
            grad_psi_inf = grad_psi_inf.max(n2.sqrt());
        }
    }

    let mut sup_energy = f64::NEG_INFINITY;
    let mut second_order = CompensatedSum::new();
    let mut time_cutoff = CompensatedSum::new();
    let mut space_cutoff = CompensatedSum::new();
    let mut forcing = CompensatedSum::new();
    for s in 0..time.slices() {
        let u = trajectory.slice(s);
        let grad_u = gradient(&u);
        let gu = system.apply_gradient(&u);
        let grad_gu = gradient(&gu);
        let mut slice_energy = CompensatedSum::new();
        for node in 0..grid.nodes() {
            let psi = psi_field.at(s, node, 0);
            let mut grad_u2 = 0.0;
            for c in 0..d * d {
                let g = grad_u.at(node, c);
                grad_u2 += g * g;
            }
            slice_energy.add(0.5 * grad_u2 * psi * psi);
            let mut gu2 = 0.0;
            for c in 0..d * d {
                let g = gu.at(node, c);
                gu2 += g * g;
            }
            let curv = phi.phi_second(gu2.sqrt().max(1e-300));
            let mut grad_gu2 = 0.0;
            for c in 0..d * d * d {
                let g = grad_gu.at(node, c);
                grad_gu2 += g * g;
            }
            second_order.add(curv * grad_gu2 * psi * psi * dt);
            time_cutoff.add(grad_u2 * psi * dt);
            if cutoff.cylinder.contains_node(&grid, node)
                && cutoff.cylinder.contains_slice(&time, s)
            {
                space_cutoff.add(curv * grad_u2 * dt);
            }
            if let Some(gf) = grad_f {
                let mut gf2 = 0.0;
                for c in 0..d * d {
                    let g = gf.at(s, node, c);
                    gf2 += g * g;
                }
                forcing.add(gf2 * psi * psi * dt);
            }
        }
        sup_energy = sup_energy.max(slice_energy.value() * cell);
    }
    Ok(EnergyLedger {
        sup_weighted_gradient: sup_energy,
        second_order: second_order.value() * cell,
        time_cutoff: time_cutoff.value() * cell * psi_t_inf,
        space_cutoff: space_cutoff.value() * cell * grad_psi_inf * grad_psi_inf,
        forcing: forcing.value() * cell,
    })
}

/// Named initial conditions and forcing selectors for config-driven runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialSelector {
    Zero,
    /// `(sin x1, 0)`: divergence-free single mode.
    ShearMode,
    /// `sin x0 sin x1` in every component.
    ProductMode,
    Band {
        kmax: i32,
        amplitude: f64,
        seed: u64,
    },
}

impl InitialSelector {
    pub fn build(&self, grid: SpaceGrid) -> SliceField {
        match self {
            InitialSelector::Zero => SliceField::zeros(grid, grid.dim),
            InitialSelector::ShearMode => SliceField::from_fn(grid, grid.dim, |x, c| {
                if c == 0 {
                    (2.0 * std::f64::consts::PI * x[1] / grid.len).sin()
                } else {
                    0.0
                }
            }),
            InitialSelector::ProductMode => SliceField::from_fn(grid, grid.dim, |x, _| {
                let k = 2.0 * std::f64::consts::PI / grid.len;
                (k * x[0]).sin() * (k * x[1]).sin()
            }),
            InitialSelector::Band {
                kmax,
                amplitude,
                seed,
            } => band_limited_field(grid, grid.dim, *kmax, *amplitude, *seed),
        }
    }
}

/// Forcing selectors expressible in a config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ForcingSelector {
    Zero,
    Constant { values: Vec<f64> },
}

impl ForcingSelector {
    pub fn build(&self) -> Forcing {
        match self {
            ForcingSelector::Zero => Forcing::Zero,
            ForcingSelector::Constant { values } => Forcing::Constant(values.clone()),
        }
    }
}

/// JSON-facing problem configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub system: SystemKind,
    pub tensor: PrototypeSpec,
    pub dim: usize,
    pub n: usize,
    pub len: f64,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_picard")]
    pub max_picard: usize,
    pub initial: InitialSelector,
    pub forcing: ForcingSelector,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_picard() -> usize {
    200
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemSpec> {
        let grid = SpaceGrid::new(self.dim, self.n, self.len);
        let time = TimeGrid::new(self.steps, self.dt);
        let tensor = GrowthTensor::closed_form(self.tensor)?;
        let initial = self.initial.build(grid);
        let spec = ProblemSpec::new(
            self.system,
            tensor,
            grid,
            time,
            initial,
            self.forcing.build(),
        )?;
        Ok(spec.with_tol(self.tol).with_max_picard(self.max_picard))
    }
}

/// Discrete eigenvalue of the wide (centered-difference twice) Laplacian for
/// a product of unit-wavenumber sine modes over `axes` on a box of side
/// `len`: `sum sin^2(k h)/h^2` with `k = 2 pi / len`.
pub fn wide_laplacian_eigenvalue(grid: SpaceGrid, axes: usize) -> f64 {
    let h = grid.hx();
    let k = 2.0 * std::f64::consts::PI / grid.len;
    let s = (k * h).sin() / h;
    axes as f64 * s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nfunction::PrototypeKind;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn heat_tensor() -> GrowthTensor {
        GrowthTensor::closed_form(PrototypeSpec::new(PrototypeKind::A2, 2.0, 0.0)).unwrap()
    }

    fn grid(n: usize) -> SpaceGrid {
        SpaceGrid::new(2, n, 2.0 * PI)
    }

    #[test]
    fn operator_on_constant_field_is_zero() {
        let u = SliceField::from_fn(grid(16), 2, |_, c| c as f64 + 1.0);
        let out = apply_operator(SystemKind::Full, &heat_tensor(), &u);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operator_matches_analytic_laplacian() {
        let g = grid(64);
        let u = SliceField::from_fn(g, 2, |x, _| x[0].sin() * x[1].sin());
        let out = apply_operator(SystemKind::Full, &heat_tensor(), &u);
        // -div grad u = 2 sin x0 sin x1 up to O(h^2).
        let mut max_err: f64 = 0.0;
        for node in 0..g.nodes() {
            let x = g.coords(node);
            let expected = 2.0 * x[0].sin() * x[1].sin();
            max_err = max_err.max((out.at(node, 0) - expected).abs());
        }
        assert!(max_err < 2.0 * g.hx() * g.hx(), "max err {max_err}");
    }

    #[test]
    fn sym_operator_is_half_laplacian_on_divergence_free_field() {
        let g = grid(64);
        let u = SliceField::from_fn(g, 2, |x, c| if c == 0 { x[1].sin() } else { 0.0 });
        let sym = apply_operator(SystemKind::Sym, &heat_tensor(), &u);
        let full = apply_operator(SystemKind::Full, &heat_tensor(), &u);
        for node in 0..g.nodes() {
            for c in 0..2 {
                assert_relative_eq!(sym.at(node, c), 0.5 * full.at(node, c), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn adjointness_of_operator_and_weak_form() {
        // Dyadic box and quantized fields make both reductions exact, so the
        // pairing identity holds bitwise.
        let g = SpaceGrid::new(2, 16, 4.0);
        let u =
            band_limited_field(g, 2, 3, 1.0, 21).map(|v| crate::numeric::quantize_dyadic(v, 13));
        let w =
            band_limited_field(g, 2, 3, 1.0, 22).map(|v| crate::numeric::quantize_dyadic(v, 13));
        for system in [SystemKind::Full, SystemKind::Sym] {
            let weak = weak_pairing(system, &heat_tensor(), &u, &w);
            let strong = l2_pairing(&apply_operator(system, &heat_tensor(), &u), &w);
            assert_eq!(weak, strong, "{system:?}");
        }
    }

    #[test]
    fn single_step_heat_eigenmode() {
        let g = grid(64);
        let time = TimeGrid::new(1, 1e-2);
        let u0 = SliceField::from_fn(g, 2, |x, _| x[0].sin() * x[1].sin());
        let spec = ProblemSpec::new(
            SystemKind::Full,
            heat_tensor(),
            g,
            time,
            u0.clone(),
            Forcing::Zero,
        )
        .unwrap();
        let (u1, stats) = step_implicit(&spec, &u0, &SliceField::zeros(g, 2)).unwrap();
        let lambda = wide_laplacian_eigenvalue(g, 2);
        let factor = 1.0 / (1.0 + lambda * time.dt);
        for node in (0..g.nodes()).step_by(17) {
            for c in 0..2 {
                assert_relative_eq!(u1.at(node, c), factor * u0.at(node, c), epsilon = 1e-8);
            }
        }
        assert!(stats.final_residual <= 1e-9 * (1.0 + 0.0) * 1.0001);
        assert!(!stats.coeff_capped);
    }

    #[test]
    fn zero_data_is_fixed_point() {
        let g = grid(16);
        let time = TimeGrid::new(3, 1e-2);
        let spec = ProblemSpec::new(
            SystemKind::Sym,
            heat_tensor(),
            g,
            time,
            SliceField::zeros(g, 2),
            Forcing::Zero,
        )
        .unwrap();
        let report = solve(&spec).unwrap();
        assert!(report.trajectory.data().iter().all(|&v| v == 0.0));
        assert!(report.steps.iter().all(|s| s.picard_iters == 0));
    }

    #[test]
    fn zero_steps_returns_initial_data_only() {
        let g = grid(16);
        let time = TimeGrid::new(0, 1e-2);
        let u0 = band_limited_field(g, 2, 2, 0.5, 9);
        let spec = ProblemSpec::new(
            SystemKind::Full,
            heat_tensor(),
            g,
            time,
            u0.clone(),
            Forcing::Zero,
        )
        .unwrap();
        let report = solve(&spec).unwrap();
        assert_eq!(report.trajectory.time.slices(), 1);
        assert_eq!(report.trajectory.slice(0).data(), u0.data());
        assert!(report.steps.is_empty());
    }

    #[test]
    fn trajectory_slice_zero_is_initial_data() {
        let g = grid(16);
        let time = TimeGrid::new(2, 1e-2);
        let u0 = band_limited_field(g, 2, 2, 0.5, 3);
        let spec = ProblemSpec::new(
            SystemKind::Full,
            heat_tensor(),
            g,
            time,
            u0.clone(),
            Forcing::Zero,
        )
        .unwrap();
        let report = solve(&spec).unwrap();
        let s0 = report.trajectory.slice(0);
        assert_eq!(s0.data(), u0.data());
    }

    #[test]
    fn manufactured_static_solution_forcing() {
        // Static u: forcing reduces to -div A(grad u), time derivative absent.
        let g = grid(32);
        let time = TimeGrid::new(2, 1e-2);
        let ms = ManufacturedSolution {
            value: Arc::new(|x: &[f64; 3], _t, c| if c == 0 { x[0].sin() } else { 0.0 }),
            time_derivative: Arc::new(|_, _, _| 0.0),
        };
        let (f, _grad_f) = manufactured_forcing(&ms, SystemKind::Full, &heat_tensor(), g, time);
        let u = ms.sample(g, 0.0);
        let op = apply_operator(SystemKind::Full, &heat_tensor(), &u);
        for node in (0..g.nodes()).step_by(13) {
            assert_eq!(f.at(0, node, 0), op.at(node, 0));
        }

        // Space-independent linear-in-time u: forcing is the constant rate.
        let ms2 = ManufacturedSolution {
            value: Arc::new(|_x, t, c| if c == 0 { 3.0 * t } else { -t }),
            time_derivative: Arc::new(|_x, _t, c| if c == 0 { 3.0 } else { -1.0 }),
        };
        let (f2, _) = manufactured_forcing(&ms2, SystemKind::Full, &heat_tensor(), g, time);
        for node in (0..g.nodes()).step_by(29) {
            assert_eq!(f2.at(1, node, 0), 3.0);
            assert_eq!(f2.at(1, node, 1), -1.0);
        }
    }

    #[test]
    fn manufactured_residual_is_consistency_only() {
        // With the discrete-operator forcing, the exact solution satisfies the
        // implicit step up to the time-discretization error O(dt).
        let g = grid(32);
        let dt = 1e-3;
        let time = TimeGrid::new(4, dt);
        let lambda = wide_laplacian_eigenvalue(g, 2);
        let ms = ManufacturedSolution {
            value: Arc::new(move |x: &[f64; 3], t, _| {
                (-lambda * t).exp() * x[0].sin() * x[1].sin()
            }),
            time_derivative: Arc::new(move |x: &[f64; 3], t, _| {
                -lambda * (-lambda * t).exp() * x[0].sin() * x[1].sin()
            }),
        };
        let (f, _) = manufactured_forcing(&ms, SystemKind::Full, &heat_tensor(), g, time);
        let spec = ProblemSpec::new(
            SystemKind::Full,
            heat_tensor(),
            g,
            time,
            ms.sample(g, 0.0),
            Forcing::Field(Arc::new(f.clone())),
        )
        .unwrap();
        let u_prev = ms.sample(g, 0.0);
        let u_next = ms.sample(g, dt);
        let r = residual(&spec, &u_next, &u_prev, &f.slice(1), 1.0 / dt);
        // Consistency error scale: |u_tt| dt / 2 ~ lambda^2 dt / 2 pointwise,
        // so the L2 norm is bounded by lambda^2 dt |u0|.
        let bound = lambda * lambda * dt * u_prev.l2_norm();
        assert!(r.l2_norm() < bound, "residual {} vs {}", r.l2_norm(), bound);
    }

    #[test]
    fn monotone_contraction_of_trajectories() {
        let g = grid(16);
        let time = TimeGrid::new(5, 5e-3);
        for proto in [
            PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.1),
            PrototypeSpec::new(PrototypeKind::A2, 1.5, 1.0),
            PrototypeSpec::new(PrototypeKind::A3, 2.0, 0.0),
        ] {
            let tensor = GrowthTensor::closed_form(proto).unwrap();
            let u0a = band_limited_field(g, 2, 2, 1.0, 31);
            let u0b = band_limited_field(g, 2, 2, 1.0, 32);
            let spec_a =
                ProblemSpec::new(SystemKind::Sym, tensor.clone(), g, time, u0a, Forcing::Zero)
                    .unwrap();
            let spec_b =
                ProblemSpec::new(SystemKind::Sym, tensor, g, time, u0b, Forcing::Zero).unwrap();
            let ra = solve(&spec_a).unwrap();
            let rb = solve(&spec_b).unwrap();
            let mut prev = f64::INFINITY;
            for s in 0..=time.steps {
                let dist = ra
                    .trajectory
                    .slice(s)
                    .sub(&rb.trajectory.slice(s))
                    .l2_norm();
                assert!(
                    dist <= prev * (1.0 + 1e-7) + 1e-12,
                    "{}: distance grew {prev} -> {dist} at slice {s}",
                    proto.label()
                );
                prev = dist;
            }
        }
    }

    #[test]
    fn picard_history_strictly_decreases() {
        let g = grid(16);
        let time = TimeGrid::new(1, 2e-2);
        let tensor =
            GrowthTensor::closed_form(PrototypeSpec::new(PrototypeKind::A2, 3.0, 0.1)).unwrap();
        let u0 = band_limited_field(g, 2, 2, 1.5, 8);
        let spec =
            ProblemSpec::new(SystemKind::Sym, tensor, g, time, u0.clone(), Forcing::Zero).unwrap();
        let (_u1, stats) = step_implicit(&spec, &u0, &SliceField::zeros(g, 2)).unwrap();
        assert!(stats.picard_iters > 0);
        assert!(stats.picard_iters <= 200);
        assert!(stats.residual_history.len() >= 2);
        for w in stats.residual_history.windows(2) {
            assert!(w[1] < w[0], "history not strictly decreasing: {w:?}");
        }
    }

    #[test]
    fn nonconvergence_reports_history() {
        let g = grid(16);
        let time = TimeGrid::new(1, 2e-2);
        let tensor =
            GrowthTensor::closed_form(PrototypeSpec::new(PrototypeKind::A2, 3.0, 0.1)).unwrap();
        let u0 = band_limited_field(g, 2, 2, 1.5, 8);
        let spec = ProblemSpec::new(SystemKind::Sym, tensor, g, time, u0.clone(), Forcing::Zero)
            .unwrap()
            .with_tol(1e-16)
            .with_max_picard(1);
        match step_implicit(&spec, &u0, &SliceField::zeros(g, 2)) {
            Err(Error::NonConvergence { history, .. }) => assert!(history.len() >= 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn coefficient_cap_flag() {
        let g = grid(16);
        let time = TimeGrid::new(1, 1e-2);
        let tensor =
            GrowthTensor::closed_form(PrototypeSpec::new(PrototypeKind::A2, 1.5, 0.0)).unwrap();
        let u0 = band_limited_field(g, 2, 2, 1.0, 4);
        let mut spec =
            ProblemSpec::new(SystemKind::Full, tensor, g, time, u0.clone(), Forcing::Zero).unwrap();
        spec.coeff_cap = 1e-3;
        let (_coeff, capped) = frozen_coefficient(&spec, &u0);
        assert!(capped);
    }

    #[test]
    fn three_dimensional_heat_decay() {
        let g = SpaceGrid::new(3, 16, 2.0 * PI);
        let dt = 5e-3;
        let steps = 20;
        let time = TimeGrid::new(steps, dt);
        let u0 = SliceField::from_fn(g, 3, |x, _| x[0].sin() * x[1].sin() * x[2].sin());
        let spec = ProblemSpec::new(
            SystemKind::Full,
            heat_tensor(),
            g,
            time,
            u0.clone(),
            Forcing::Zero,
        )
        .unwrap();
        let report = solve(&spec).unwrap();
        let lambda = wide_laplacian_eigenvalue(g, 3);
        let factor = (1.0 + lambda * dt).powi(-(steps as i32));
        let mut expected = u0;
        expected.scale(factor);
        let err = report.trajectory.slice(steps).sub(&expected).l2_norm() / expected.l2_norm();
        assert!(err < 1e-6, "3d discrete-factor error {err}");
    }

    #[test]
    fn config_round_trip_and_build() {
        let cfg = ProblemConfig {
            system: SystemKind::Sym,
            tensor: PrototypeSpec::new(PrototypeKind::A2, 3.0, 0.1),
            dim: 2,
            n: 16,
            len: 2.0 * PI,
            dt: 1e-2,
            steps: 3,
            tol: 1e-8,
            max_picard: 100,
            initial: InitialSelector::ShearMode,
            forcing: ForcingSelector::Zero,
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ProblemConfig = serde_json::from_str(&json).unwrap();
        let spec = back.build().unwrap();
        assert_eq!(spec.tol, 1e-8);
        assert_eq!(spec.grid.n, 16);
    }

    #[test]
    fn config_rejects_huge_dt() {
        let cfg = ProblemConfig {
            system: SystemKind::Full,
            tensor: PrototypeSpec::new(PrototypeKind::A2, 2.0, 0.0),
            dim: 2,
            n: 16,
            len: 1.0,
            dt: 10.0,
            steps: 1,
            tol: 1e-9,
            max_picard: 10,
            initial: InitialSelector::Zero,
            forcing: ForcingSelector::Zero,
        };
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }
}
