//! Empirical audits of the interior second-order energy estimates: both
//! sides of each inequality are evaluated on a discrete trajectory with unit
//! constants, and the ratio lhs/rhs is reported. Boundedness and stability of
//! that ratio across refinement and regularization sweeps is the falsifiable
//! rendering of the unquantified constants.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    ball_integral, gradient, ParabolicCylinder, SliceField, SpaceGrid, SpaceTimeField, TimeGrid,
};
use crate::nfunction::{
    estimate_growth_constants, LogGrid, NFunction, PrototypeKind, PrototypeSpec,
};
use crate::numeric::CompensatedSum;
use crate::solver::{solve, Forcing, InitialSelector, ProblemSpec, SystemKind};
use crate::tensors::{apply_v_full, GrowthTensor};

/// Slot for the cylinder geometry of an audit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CylinderSpec {
    pub center: [f64; 3],
    pub t_center: f64,
}

impl CylinderSpec {
    /// Box center in space, mid-horizon in time.
    pub fn centered(grid: SpaceGrid, time: TimeGrid) -> Self {
        let mut center = [0.0; 3];
        for a in 0..grid.dim {
            center[a] = 0.5 * grid.len;
        }
        Self {
            center,
            t_center: 0.5 * time.horizon(),
        }
    }

    pub fn cylinder(&self, rho: f64) -> ParabolicCylinder {
        ParabolicCylinder::new(self.center, self.t_center, rho)
    }
}

/// Grid and potential context echoed into every report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditContext {
    pub n: usize,
    pub hx: f64,
    pub dt: f64,
    pub phi_label: String,
    pub phi_second_almost_increasing: bool,
}

/// Itemized evaluation of one interior estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaccioppoliReport {
    pub estimate_id: String,
    pub system: SystemKind,
    pub r: f64,
    pub big_r: f64,
    pub delta0: f64,
    pub phi_second_delta0: f64,
    /// Whether `phi''(0)` was taken as the right limit at 1e-12.
    pub zero_limit_used: bool,
    /// Slice maximum of the ball gradient energy on the inner cylinder.
    pub lhs_sup_slice: f64,
    /// Cylinder integral of `|grad V(Gu)|^2` on the inner cylinder.
    pub lhs_grad_v: f64,
    /// `phi''(0) * ∫ |grad^2 u|^2` (nondegenerate variants only).
    pub lhs_second_grad: Option<f64>,
    pub lhs: f64,
    /// Modular term on the outer cylinder (either `∫ phi(|grad u|)` or the
    /// symmetric-plus-oscillation pair, per the estimate).
    pub rhs_modular: f64,
    /// `phi(delta0)` times the discrete measure of the outer cylinder.
    pub rhs_phi_delta0: f64,
    /// `∫ |grad u|^2` on the outer cylinder (full-gradient estimate only).
    pub rhs_quadratic: Option<f64>,
    /// `∫ |grad f|^2` on the outer cylinder.
    pub rhs_forcing: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub context: AuditContext,
}

/// Per-slice derived quantities shared by the audits.
struct SliceScan {
    grad_u_sq: SliceField,
    grad_v_sq: SliceField,
    phi_grad: SliceField,
    phi_sym: SliceField,
    second_grad_sq: SliceField,
}

fn scan_slice(u: &SliceField, phi: &NFunction, system: SystemKind) -> SliceScan {
    let d = u.grid.dim;
    let grad_u = gradient(u);
    let grad_u_sq = grad_u.sq_norm_field();
    let gu = system.apply_gradient(u);
    let v_field = gu.map_nodes(d * d, |src, dst| apply_v_full(phi, src, dst));
    let grad_v_sq = gradient(&v_field).sq_norm_field();
    let phi_grad = grad_u_sq.map(|s2| phi.phi(s2.sqrt()));
    let sym = crate::fields::sym_gradient(u);
    let phi_sym = sym.sq_norm_field().map(|s2| phi.phi(s2.sqrt()));
    let second_grad_sq = gradient(&grad_u).sq_norm_field();
    SliceScan {
        grad_u_sq,
        grad_v_sq,
        phi_grad,
        phi_sym,
        second_grad_sq,
    }
}

/// Curvature below this floor counts as vanishing: the right limit of
/// `phi''` at zero is computed at 1e-12, so it is never exactly zero for the
/// degenerate potentials, only negligibly small.
pub const ZERO_CURVATURE_FLOOR: f64 = 1e-8;

/// Default rule for `delta0`: the smallest point of the default constants
/// grid with `phi''(delta0) >= 1e-8`.
pub fn default_delta0(phi: &NFunction) -> Result<f64> {
    for t in LogGrid::default_constants_grid().points() {
        if phi.phi_second(t) >= ZERO_CURVATURE_FLOOR {
            return Ok(t);
        }
    }
    Err(Error::InvalidDelta0(format!(
        "{}: phi'' stays below 1e-8 on the default grid",
        phi.label()
    )))
}

/// Fully weighted integrals over the nested cylinders (all terms carry their
/// `hx^dim * dt` measure; the sup term carries `hx^dim`).
struct CylinderAccumulators {
    sup_slice: f64,
    grad_v: f64,
    second_grad: f64,
    phi_grad_outer: f64,
    phi_sym_outer: f64,
    phi_osc_outer: f64,
    quad_outer: f64,
    forcing_outer: f64,
    measure_outer: f64,
}

/// Walks the trajectory once and accumulates every integral the estimate
/// variants need.
fn accumulate(
    u: &SpaceTimeField,
    grad_f: Option<&SpaceTimeField>,
    phi: &NFunction,
    system: SystemKind,
    inner: &ParabolicCylinder,
    outer: &ParabolicCylinder,
) -> CylinderAccumulators {
    let grid = u.grid;
    let time = u.time;
    let d = grid.dim;
    let cell = grid.cell();
    let dt = time.dt;
    let members_inner: Vec<usize> = (0..grid.nodes())
        .filter(|&n| inner.contains_node(&grid, n))
        .collect();
    let members_outer: Vec<usize> = (0..grid.nodes())
        .filter(|&n| outer.contains_node(&grid, n))
        .collect();

    // Mean of u over the outer cylinder for the oscillation modular.
    let mut mean = vec![0.0f64; d];
    let mut count = 0usize;
    for s in 0..time.slices() {
        if !outer.contains_slice(&time, s) {
            continue;
        }
        for &node in &members_outer {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += u.at(s, node, c);
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count.max(1) as f64;
    }

    let mut sup_slice = f64::NEG_INFINITY;
    let mut grad_v = CompensatedSum::new();
    let mut second_grad = CompensatedSum::new();
    let mut phi_grad_outer = CompensatedSum::new();
    let mut phi_sym_outer = CompensatedSum::new();
    let mut phi_osc_outer = CompensatedSum::new();
    let mut quad_outer = CompensatedSum::new();
    let mut forcing_outer = CompensatedSum::new();

    for s in 0..time.slices() {
        let in_inner_time = inner.contains_slice(&time, s);
        let in_outer_time = outer.contains_slice(&time, s);
        if !in_inner_time && !in_outer_time {
            continue;
        }
        let u_slice = u.slice(s);
        let scan = scan_slice(&u_slice, phi, system);
        if in_inner_time {
            let mut slice_energy = CompensatedSum::new();
            for &node in &members_inner {
                slice_energy.add(scan.grad_u_sq.at(node, 0));
                grad_v.add(scan.grad_v_sq.at(node, 0));
                second_grad.add(scan.second_grad_sq.at(node, 0));
            }
            sup_slice = sup_slice.max(slice_energy.value() * cell);
        }
        if in_outer_time {
            for &node in &members_outer {
                phi_grad_outer.add(scan.phi_grad.at(node, 0));
                phi_sym_outer.add(scan.phi_sym.at(node, 0));
                quad_outer.add(scan.grad_u_sq.at(node, 0));
                let mut osc2 = 0.0;
                for c in 0..d {
                    let dv = u.at(s, node, c) - mean[c];
                    osc2 += dv * dv;
                }
                phi_osc_outer.add(phi.phi(osc2.sqrt() / outer.rho));
                if let Some(gf) = grad_f {
                    let mut g2 = 0.0;
                    for c in 0..d * d {
                        let g = gf.at(s, node, c);
                        g2 += g * g;
                    }
                    forcing_outer.add(g2);
                }
            }
        }
    }
    let w = cell * dt;
    CylinderAccumulators {
        sup_slice,
        grad_v: grad_v.value() * w,
        second_grad: second_grad.value() * w,
        phi_grad_outer: phi_grad_outer.value() * w,
        phi_sym_outer: phi_sym_outer.value() * w,
        phi_osc_outer: phi_osc_outer.value() * w,
        quad_outer: quad_outer.value() * w,
        forcing_outer: forcing_outer.value() * w,
        measure_outer: count as f64 * w,
    }
}

fn make_context(u: &SpaceTimeField, phi: &NFunction) -> AuditContext {
    AuditContext {
        n: u.grid.n,
        hx: u.grid.hx(),
        dt: u.time.dt,
        phi_label: phi.label().to_string(),
        phi_second_almost_increasing: phi.phi_second_almost_increasing(),
    }
}

fn assemble_sym(
    id: &str,
    acc: &CylinderAccumulators,
    modular: f64,
    phi_delta_term: f64,
    second_grad: Option<f64>,
    factor_curvature: f64,
    r: f64,
    big_r: f64,
    delta0: f64,
    phi2_delta0: f64,
    zero_limit_used: bool,
    forcing: f64,
    ctx: &AuditContext,
) -> CaccioppoliReport {
    let gap = big_r - r;
    let lhs = acc.sup_slice + acc.grad_v + second_grad.unwrap_or(0.0);
    let rhs = factor_curvature / (gap * gap) * (modular + phi_delta_term) + gap * gap * forcing;
    CaccioppoliReport {
        estimate_id: id.to_string(),
        system: SystemKind::Sym,
        r,
        big_r,
        delta0,
        phi_second_delta0: phi2_delta0,
        zero_limit_used,
        lhs_sup_slice: acc.sup_slice,
        lhs_grad_v: acc.grad_v,
        lhs_second_grad: second_grad,
        lhs,
        rhs_modular: modular,
        rhs_phi_delta0: phi_delta_term,
        rhs_quadratic: None,
        rhs_forcing: forcing,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        context: ctx.clone(),
    }
}

/// Audits the symmetric-gradient interior estimate and its variants on a
/// solved trajectory.
///
/// Emits the base estimate and the symmetric-oscillation variant; when
/// `phi''(0) > 0` it additionally emits the nondegenerate pair carrying the
/// `phi''(0) ∫ |grad^2 u|^2` left-hand term.
#[allow(clippy::too_many_arguments)]
pub fn audit_sym(
    u: &SpaceTimeField,
    grad_f: Option<&SpaceTimeField>,
    phi: &NFunction,
    cyl: &CylinderSpec,
    r: f64,
    big_r: f64,
    delta0: Option<f64>,
) -> Result<Vec<CaccioppoliReport>> {
    if !(r < big_r) {
        return Err(Error::Domain(format!("need r < R, got {r} >= {big_r}")));
    }
    let inner = cyl.cylinder(r);
    let outer = cyl.cylinder(big_r);
    inner.validate(&u.grid, &u.time)?;
    outer.validate(&u.grid, &u.time)?;

    let delta0 = match delta0 {
        Some(d) => d,
        None => default_delta0(phi)?,
    };
    if delta0 < 0.0 {
        return Err(Error::InvalidDelta0(format!("delta0 = {delta0}")));
    }
    let zero_limit_used = delta0 == 0.0;
    let phi2_delta0 = if zero_limit_used {
        phi.phi_second_at_zero()
    } else {
        phi.phi_second(delta0)
    };
    let floor = if zero_limit_used {
        ZERO_CURVATURE_FLOOR
    } else {
        0.0
    };
    if !(phi2_delta0 > floor) {
        return Err(Error::InvalidDelta0(format!(
            "phi''({delta0}) = {phi2_delta0}"
        )));
    }

    let acc = accumulate(u, grad_f, phi, SystemKind::Sym, &inner, &outer);
    let ctx = make_context(u, phi);
    let phi_delta = phi.phi(delta0) * acc.measure_outer;
    let factor = 1.0 + 1.0 / phi2_delta0;
    let forcing = acc.forcing_outer;

    let mut reports = vec![
        assemble_sym(
            "sym-cylinder",
            &acc,
            acc.phi_grad_outer,
            phi_delta,
            None,
            factor,
            r,
            big_r,
            delta0,
            phi2_delta0,
            zero_limit_used,
            forcing,
            &ctx,
        ),
        assemble_sym(
            "sym-cylinder-oscillation",
            &acc,
            acc.phi_sym_outer + acc.phi_osc_outer,
            phi_delta,
            None,
            factor,
            r,
            big_r,
            delta0,
            phi2_delta0,
            zero_limit_used,
            forcing,
            &ctx,
        ),
    ];

    let phi2_zero = phi.phi_second_at_zero();
    if phi2_zero >= ZERO_CURVATURE_FLOOR && phi2_zero.is_finite() {
        let second = Some(phi2_zero * acc.second_grad);
        let factor0 = 1.0 + 1.0 / phi2_zero;
        reports.push(assemble_sym(
            "sym-cylinder-nondegenerate",
            &acc,
            acc.phi_grad_outer,
            0.0,
            second,
            factor0,
            r,
            big_r,
            0.0,
            phi2_zero,
            true,
            forcing,
            &ctx,
        ));
        reports.push(assemble_sym(
            "sym-cylinder-nondegenerate-oscillation",
            &acc,
            acc.phi_sym_outer + acc.phi_osc_outer,
            0.0,
            second,
            factor0,
            r,
            big_r,
            0.0,
            phi2_zero,
            true,
            forcing,
            &ctx,
        ));
    }
    Ok(reports)
}

/// Audits the full-gradient interior estimate on a solved trajectory.
pub fn audit_full(
    u: &SpaceTimeField,
    grad_f: Option<&SpaceTimeField>,
    phi: &NFunction,
    cyl: &CylinderSpec,
    r: f64,
    big_r: f64,
) -> Result<CaccioppoliReport> {
    if !(r < big_r) {
        return Err(Error::Domain(format!("need r < R, got {r} >= {big_r}")));
    }
    let inner = cyl.cylinder(r);
    let outer = cyl.cylinder(big_r);
    inner.validate(&u.grid, &u.time)?;
    outer.validate(&u.grid, &u.time)?;

    let acc = accumulate(u, grad_f, phi, SystemKind::Full, &inner, &outer);
    let ctx = make_context(u, phi);
    let gap = big_r - r;
    let lhs = acc.sup_slice + acc.grad_v;
    let modular = acc.phi_grad_outer;
    let quadratic = acc.quad_outer;
    let forcing = acc.forcing_outer;
    // The forcing weight is the inner cylinder's time length r^2.
    let rhs = (modular + quadratic) / (gap * gap) + r * r * forcing;
    Ok(CaccioppoliReport {
        estimate_id: "full-cylinder".to_string(),
        system: SystemKind::Full,
        r,
        big_r,
        delta0: 0.0,
        phi_second_delta0: 0.0,
        zero_limit_used: false,
        lhs_sup_slice: acc.sup_slice,
        lhs_grad_v: acc.grad_v,
        lhs_second_grad: None,
        lhs,
        rhs_modular: modular,
        rhs_phi_delta0: 0.0,
        rhs_quadratic: Some(quadratic),
        rhs_forcing: forcing,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        context: ctx,
    })
}

/// Time-slab variant of the full-gradient estimate on nested balls
/// `B_R ⊂ B_R0` between slice indices `s1 <= s2`: the slab energy and
/// square-root-tensor dissipation against the initial-slice energy plus the
/// slab modular.
pub fn audit_full_slab(
    u: &SpaceTimeField,
    phi: &NFunction,
    center: [f64; 3],
    big_r: f64,
    r0: f64,
    s1: usize,
    s2: usize,
) -> Result<CaccioppoliReport> {
    if !(big_r < r0) {
        return Err(Error::Domain(format!("need R < R0, got {big_r} >= {r0}")));
    }
    if s1 > s2 || s2 > u.time.steps {
        return Err(Error::Domain(format!(
            "slice window [{s1}, {s2}] outside [0, {}]",
            u.time.steps
        )));
    }
    let grid = u.grid;
    if r0 + 2.0 * grid.hx() > 0.5 * grid.len {
        return Err(Error::CylinderOutsideDomain(format!(
            "outer ball R0 = {r0} does not fit the box"
        )));
    }
    let d = grid.dim;
    let cell = grid.cell();
    let dt = u.time.dt;
    let members_r: Vec<usize> = (0..grid.nodes())
        .filter(|&n| grid.distance(n, &center) < big_r)
        .collect();
    let members_r0: Vec<usize> = (0..grid.nodes())
        .filter(|&n| grid.distance(n, &center) < r0)
        .collect();

    let mut sup_slice = f64::NEG_INFINITY;
    let mut grad_v = CompensatedSum::new();
    let mut modular = CompensatedSum::new();
    for s in s1..=s2 {
        let u_slice = u.slice(s);
        let grad_u = gradient(&u_slice);
        let grad_u_sq = grad_u.sq_norm_field();
        let v_field = grad_u.map_nodes(d * d, |src, dst| apply_v_full(phi, src, dst));
        let grad_v_sq = gradient(&v_field).sq_norm_field();
        let mut slice_energy = CompensatedSum::new();
        for &node in &members_r {
            slice_energy.add(grad_u_sq.at(node, 0));
            grad_v.add(grad_v_sq.at(node, 0) * dt);
        }
        sup_slice = sup_slice.max(slice_energy.value() * cell);
        for &node in &members_r0 {
            modular.add(phi.phi(grad_u_sq.at(node, 0).sqrt()) * dt);
        }
    }
    let initial_energy = ball_integral(&gradient(&u.slice(s1)).sq_norm_field(), &center, r0);
    let gap = r0 - big_r;
    let lhs = sup_slice + grad_v.value() * cell;
    let rhs = initial_energy + modular.value() * cell / (gap * gap);
    Ok(CaccioppoliReport {
        estimate_id: "full-time-slab".to_string(),
        system: SystemKind::Full,
        r: big_r,
        big_r: r0,
        delta0: 0.0,
        phi_second_delta0: 0.0,
        zero_limit_used: false,
        lhs_sup_slice: sup_slice,
        lhs_grad_v: grad_v.value() * cell,
        lhs_second_grad: None,
        lhs,
        rhs_modular: modular.value() * cell,
        rhs_phi_delta0: 0.0,
        rhs_quadratic: Some(initial_energy),
        rhs_forcing: 0.0,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        context: AuditContext {
            n: grid.n,
            hx: grid.hx(),
            dt,
            phi_label: phi.label().to_string(),
            phi_second_almost_increasing: phi.phi_second_almost_increasing(),
        },
    })
}

/// Modular Korn audit on one slice: `∫ phi(|grad u|)` against
/// `∫ phi(|Du|) + phi(|u - mean| / r)` over the ball of radius `r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KornReport {
    pub r: f64,
    pub lhs_full_gradient: f64,
    pub rhs_symmetric: f64,
    pub rhs_oscillation: f64,
    pub ratio: f64,
}

pub fn audit_korn(u: &SliceField, phi: &NFunction, center: [f64; 3], r: f64) -> Result<KornReport> {
    let grid = u.grid;
    if r + 2.0 * grid.hx() > 0.5 * grid.len {
        return Err(Error::CylinderOutsideDomain(format!(
            "ball r = {r} does not fit the box with margin"
        )));
    }
    let d = grid.dim;
    let members: Vec<usize> = (0..grid.nodes())
        .filter(|&n| grid.distance(n, &center) < r)
        .collect();
    if members.is_empty() {
        return Err(Error::CylinderOutsideDomain("empty ball".into()));
    }
    let mut mean = vec![0.0f64; d];
    for &node in &members {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += u.at(node, c);
        }
    }
    for m in &mut mean {
        *m /= members.len() as f64;
    }
    let grad_u_sq = gradient(u).sq_norm_field();
    let sym_sq = crate::fields::sym_gradient(u).sq_norm_field();
    let cell = grid.cell();
    let mut lhs = CompensatedSum::new();
    let mut rhs_sym = CompensatedSum::new();
    let mut rhs_osc = CompensatedSum::new();
    for &node in &members {
        lhs.add(phi.phi(grad_u_sq.at(node, 0).sqrt()));
        rhs_sym.add(phi.phi(sym_sq.at(node, 0).sqrt()));
        let mut osc2 = 0.0;
        for c in 0..d {
            let dv = u.at(node, c) - mean[c];
            osc2 += dv * dv;
        }
        rhs_osc.add(phi.phi(osc2.sqrt() / r));
    }
    let lhs = lhs.value() * cell;
    let rhs_symmetric = rhs_sym.value() * cell;
    let rhs_oscillation = rhs_osc.value() * cell;
    let denom = rhs_symmetric + rhs_oscillation;
    Ok(KornReport {
        r,
        lhs_full_gradient: lhs,
        rhs_symmetric,
        rhs_oscillation,
        ratio: if denom > 0.0 { lhs / denom } else { 0.0 },
    })
}

/// Template for the regularization-uniformity sweep: everything but `mu` is
/// shared across the family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTemplate {
    pub system: SystemKind,
    pub kind: PrototypeKind,
    pub p: f64,
    pub dim: usize,
    pub n: usize,
    pub len: f64,
    pub dt: f64,
    pub steps: usize,
    pub initial: InitialSelector,
    #[serde(default = "default_sweep_tol")]
    pub tol: f64,
}

fn default_sweep_tol() -> f64 {
    1e-9
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    pub g_const: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub estimate_id: String,
    pub rows: Vec<SweepRow>,
    /// Spread of the growth constant across the family.
    pub g_spread: f64,
    /// Spread of the ratios: max / min.
    pub ratio_spread: f64,
}

/// Solves and audits one problem per `mu`, after verifying the family shares
/// its growth constant within 10%.
pub fn uniformity_sweep(
    template: &SweepTemplate,
    mu_list: &[f64],
    r: f64,
    big_r: f64,
    delta0: f64,
) -> Result<SweepTable> {
    if mu_list.is_empty() {
        return Err(Error::Config("empty mu list".into()));
    }
    if mu_list.iter().any(|&mu| !(mu > 0.0)) {
        return Err(Error::Config("sweep requires mu > 0".into()));
    }
    let grid = SpaceGrid::new(template.dim, template.n, template.len);
    let time = TimeGrid::new(template.steps, template.dt);
    let const_grid = LogGrid::default_constants_grid();

    let mut g_values = Vec::with_capacity(mu_list.len());
    for &mu in mu_list {
        let phi = PrototypeSpec::new(template.kind, template.p, mu).build()?;
        let gc = estimate_growth_constants(&phi, &const_grid)?;
        g_values.push(gc.g_uniformity());
    }
    let g_max = g_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let g_min = g_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if g_max / g_min > 1.1 {
        return Err(Error::FamilyNotUniform(format!(
            "growth constants spread {g_min}..{g_max} exceeds 10%"
        )));
    }

    let cyl = CylinderSpec::centered(grid, time);
    let mut rows = Vec::with_capacity(mu_list.len());
    for (&mu, &g) in mu_list.iter().zip(&g_values) {
        let proto = PrototypeSpec::new(template.kind, template.p, mu);
        let tensor = GrowthTensor::closed_form(proto)?;
        let phi = tensor.phi().clone();
        let spec = ProblemSpec::new(
            template.system,
            tensor,
            grid,
            time,
            template.initial.build(grid),
            Forcing::Zero,
        )?
        .with_tol(template.tol);
        let report = solve(&spec)?;
        let ratio = match template.system {
            SystemKind::Sym => {
                audit_sym(&report.trajectory, None, &phi, &cyl, r, big_r, Some(delta0))?[0].ratio
            }
            SystemKind::Full => audit_full(&report.trajectory, None, &phi, &cyl, r, big_r)?.ratio,
        };
        rows.push(SweepRow {
            mu,
            g_const: g,
            ratio,
        });
    }
    let ratio_max = rows
        .iter()
        .map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let ratio_min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(SweepTable {
        estimate_id: match template.system {
            SystemKind::Sym => "sym-cylinder".to_string(),
            SystemKind::Full => "full-cylinder".to_string(),
        },
        rows,
        g_spread: g_max / g_min,
        ratio_spread: ratio_max / ratio_min.max(f64::MIN_POSITIVE),
    })
}

/// Pointwise and summed comparison of `3 |grad Du|^2` against
/// `|grad^2 u|^2` on one slice. The summed inequality holds on every
/// periodic field; the pointwise ratio is reported for inspection.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SecondGradientCheck {
    pub max_pointwise_ratio: f64,
    pub pointwise_pass: bool,
    pub sum_grad_sym: f64,
    pub sum_second: f64,
    pub integrated_pass: bool,
}

pub fn second_gradient_bound_check(u: &SliceField) -> SecondGradientCheck {
    let grad_u = gradient(u);
    let second_sq = gradient(&grad_u).sq_norm_field();
    let sym = crate::fields::sym_gradient(u);
    let grad_sym_sq = gradient(&sym).sq_norm_field();
    let mut max_ratio: f64 = 0.0;
    let mut sum_sym = CompensatedSum::new();
    let mut sum_second = CompensatedSum::new();
    for node in 0..u.grid.nodes() {
        let a = grad_sym_sq.at(node, 0);
        let b = second_sq.at(node, 0);
        sum_sym.add(a);
        sum_second.add(b);
        if b > 1e-30 {
            max_ratio = max_ratio.max(b / a.max(1e-300));
        }
    }
    let sum_grad_sym = sum_sym.value();
    let sum_second = sum_second.value();
    SecondGradientCheck {
        max_pointwise_ratio: max_ratio,
        pointwise_pass: max_ratio <= 3.0 * (1.0 + 1e-12),
        sum_grad_sym,
        sum_second,
        integrated_pass: sum_second <= 3.0 * sum_grad_sym * (1.0 + 1e-12),
    }
}

/// CSV export of interior-estimate reports, one row per audit.
pub fn write_caccioppoli_csv<W: Write>(
    out: &mut W,
    run_id: &str,
    reports: &[CaccioppoliReport],
) -> std::io::Result<()> {
    writeln!(
        out,
        "run_id,estimate_id,phi,n,r,R,delta0,lhs_sup,lhs_grad_v,lhs_second,lhs,\
         rhs_modular,rhs_phi_delta0,rhs_quadratic,rhs_forcing,rhs,ratio"
    )?;
    for rep in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            run_id,
            rep.estimate_id,
            rep.context.phi_label,
            rep.context.n,
            rep.r,
            rep.big_r,
            rep.delta0,
            rep.lhs_sup_slice,
            rep.lhs_grad_v,
            rep.lhs_second_grad.unwrap_or(0.0),
            rep.lhs,
            rep.rhs_modular,
            rep.rhs_phi_delta0,
            rep.rhs_quadratic.unwrap_or(0.0),
            rep.rhs_forcing,
            rep.rhs,
            rep.ratio
        )?;
    }
    Ok(())
}

/// CSV export of Korn audits.
pub fn write_korn_csv<W: Write>(
    out: &mut W,
    run_id: &str,
    rows: &[(u64, KornReport)],
) -> std::io::Result<()> {
    writeln!(
        out,
        "run_id,seed,r,lhs_full_gradient,rhs_symmetric,rhs_oscillation,ratio"
    )?;
    for (seed, rep) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            run_id,
            seed,
            rep.r,
            rep.lhs_full_gradient,
            rep.rhs_symmetric,
            rep.rhs_oscillation,
            rep.ratio
        )?;
    }
    Ok(())
}

/// CSV export of a uniformity sweep.
pub fn write_sweep_csv<W: Write>(
    out: &mut W,
    run_id: &str,
    table: &SweepTable,
) -> std::io::Result<()> {
    writeln!(out, "run_id,estimate_id,mu,g_const,ratio")?;
    for row in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            run_id, table.estimate_id, row.mu, row.g_const, row.ratio
        )?;
    }
    Ok(())
}
