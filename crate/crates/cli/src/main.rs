//! Config-driven entry point: build N-functions and check their calculus,
//! run tensor sweeps, solve the evolutionary systems, audit the interior
//! estimates, and run the regularization-uniformity sweep.
//!
//! Every run writes a `manifest.json` (config echo, version, seed, wall
//! time, produced files) into the output directory; data artifacts are
//! byte-identical across reruns with the same config and seed. Exit codes:
//! 0 pass, 1 invariant failure, 2 config error, 3 numerical failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use philab::auditor::{
    audit_full, audit_korn, audit_sym, uniformity_sweep, write_caccioppoli_csv, write_korn_csv,
    write_sweep_csv, CaccioppoliReport, CylinderSpec, SweepTemplate,
};
use philab::fields::{band_limited_field, write_spacetime, SpaceGrid};
use philab::nfunction::{
    calibrate_young_constant, check_young, estimate_growth_constants, LogGrid, PrototypeSpec,
};
use philab::solver::{solve, ProblemConfig, SystemKind};
use philab::tensors::{check_assumption1, quadruple_sweep, write_quadruple_csv, GrowthTensor};
use philab::Error;

const EXIT_OK: i32 = 0;
const EXIT_INVARIANT: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser)]
#[command(name = "philab", version, about = "phi-Laplacian numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
    Both,
}

#[derive(Args)]
struct RunOpts {
    /// JSON configuration for the run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Seed recorded in the manifest and used by sampling commands.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Force the bit-reproducible sequential path (always on; accepted for
    /// interface stability).
    #[arg(long, default_value_t = false)]
    single_thread: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
    format: OutputFormat,
}

#[derive(Subcommand)]
enum Command {
    /// N-function calculus checks.
    Nfun {
        #[command(subcommand)]
        sub: NfunCommand,
    },
    /// Growth-tensor checks.
    Tensor {
        #[command(subcommand)]
        sub: TensorCommand,
    },
    /// Solve an evolutionary problem and persist the trajectory.
    Solve(RunOpts),
    /// Solve and audit the interior estimates.
    Audit(RunOpts),
    /// Regularization-uniformity sweep.
    Sweep(RunOpts),
    /// Batch Korn audits over seeded band-limited fields.
    Korn(RunOpts),
}

#[derive(Subcommand)]
enum NfunCommand {
    Check(RunOpts),
}

#[derive(Subcommand)]
enum TensorCommand {
    Check(RunOpts),
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Nfun {
            sub: NfunCommand::Check(opts),
        } => dispatch("nfun check", &opts, nfun_check),
        Command::Tensor {
            sub: TensorCommand::Check(opts),
        } => dispatch("tensor check", &opts, tensor_check),
        Command::Solve(opts) => dispatch("solve", &opts, solve_cmd),
        Command::Audit(opts) => dispatch("audit", &opts, audit_cmd),
        Command::Sweep(opts) => dispatch("sweep", &opts, sweep_cmd),
        Command::Korn(opts) => dispatch("korn", &opts, korn_cmd),
    };
    std::process::exit(code);
}

/// Command outcome: produced files plus whether all asserted invariants held.
struct RunOutput {
    files: Vec<String>,
    invariants_ok: bool,
    detail: String,
}

struct RunContext<'a> {
    opts: &'a RunOpts,
    run_id: String,
    config: serde_json::Value,
}

impl RunContext<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.opts.out.join(name)
    }

    fn want_json(&self) -> bool {
        matches!(self.opts.format, OutputFormat::Json | OutputFormat::Both)
    }

    fn want_csv(&self) -> bool {
        matches!(self.opts.format, OutputFormat::Csv | OutputFormat::Both)
    }

    fn write_json(
        &self,
        name: &str,
        value: &serde_json::Value,
        files: &mut Vec<String>,
    ) -> Result<(), Error> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        std::fs::write(self.path(name), body)?;
        files.push(name.to_string());
        Ok(())
    }
}

fn dispatch(name: &str, opts: &RunOpts, body: fn(&RunContext) -> Result<RunOutput, Error>) -> i32 {
    let started = Instant::now();
    let config_text = match std::fs::read_to_string(&opts.config) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read config {}: {err}", opts.config.display());
            return EXIT_CONFIG;
        }
    };
    let config: serde_json::Value = match serde_json::from_str(&config_text) {
        Ok(v) => v,
        Err(err) => {
            eprintln!(
                "error: config parse failure at line {} column {}: {err}",
                err.line(),
                err.column()
            );
            return EXIT_CONFIG;
        }
    };
    if let Err(err) = std::fs::create_dir_all(&opts.out) {
        eprintln!("error: cannot create output dir: {err}");
        return EXIT_CONFIG;
    }
    let run_id = run_id(name, &config, opts.seed);
    let ctx = RunContext {
        opts,
        run_id,
        config: config.clone(),
    };
    let outcome = body(&ctx);
    let wall = started.elapsed().as_secs_f64();
    match outcome {
        Ok(output) => {
            let manifest = json!({
                "run_id": ctx.run_id,
                "tool": "philab",
                "version": env!("CARGO_PKG_VERSION"),
                "command": name,
                "seed": opts.seed,
                "single_thread": true,
                "config": config,
                "wall_time_s": wall,
                "outputs": output.files,
                "invariants_ok": output.invariants_ok,
                "detail": output.detail,
            });
            let path = opts.out.join("manifest.json");
            if let Err(err) = std::fs::write(
                &path,
                serde_json::to_string_pretty(&manifest).unwrap() + "\n",
            ) {
                eprintln!("error: cannot write manifest: {err}");
                return EXIT_CONFIG;
            }
            if output.invariants_ok {
                println!("{name}: ok ({}) run_id={}", output.detail, ctx.run_id);
                EXIT_OK
            } else {
                eprintln!("{name}: invariant failure ({})", output.detail);
                EXIT_INVARIANT
            }
        }
        Err(err) => {
            eprintln!("{name}: {err}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonConvergence { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
        Error::DegenerateNFunction(_)
        | Error::MonotonicityViolated(_)
        | Error::FamilyNotUniform(_) => EXIT_INVARIANT,
        _ => EXIT_CONFIG,
    }
}

/// FNV-1a of the command, canonical config, and seed.
fn run_id(command: &str, config: &serde_json::Value, seed: u64) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    eat(command.as_bytes());
    eat(config.to_string().as_bytes());
    eat(&seed.to_le_bytes());
    format!("{hash:016x}")
}

#[derive(Deserialize)]
struct NfunConfig {
    phi: PrototypeSpec,
    #[serde(default)]
    grid: Option<LogGrid>,
    /// Young-inequality deltas to calibrate and validate.
    #[serde(default)]
    young_deltas: Vec<f64>,
}

fn nfun_check(ctx: &RunContext) -> Result<RunOutput, Error> {
    let cfg: NfunConfig = serde_json::from_value(ctx.config.clone())?;
    let phi = cfg.phi.build()?;
    let grid = cfg.grid.unwrap_or_else(LogGrid::default_constants_grid);
    phi.validate_on_grid(&LogGrid::new(1e-4, 1e4, 96))?;
    let constants = estimate_growth_constants(&phi, &grid)?;

    let mut invariants_ok = true;
    let mut notes = Vec::new();
    if !(constants.q1 > 1.0 && constants.q1 <= constants.q2) {
        invariants_ok = false;
        notes.push("boyd indices out of order".to_string());
    }
    let doubling_cap = 2f64.powf(1.0 + constants.g_hi);
    if constants.delta2 > doubling_cap * (1.0 + 1e-9) {
        invariants_ok = false;
        notes.push(format!(
            "doubling constant {} above growth cap {doubling_cap}",
            constants.delta2
        ));
    }
    let mut young = Vec::new();
    for &delta in &cfg.young_deltas {
        let c = calibrate_young_constant(&phi, delta, &LogGrid::new(1e-4, 1e4, 32))?;
        // Spot validation on a deterministic lattice.
        let mut ok = true;
        for &a in &LogGrid::new(1e-3, 1e3, 11).points() {
            for &b in &LogGrid::new(1e-3, 1e3, 11).points() {
                if !check_young(&phi, a, b, delta, 1.25 * c)?.pass {
                    ok = false;
                }
            }
        }
        if !ok {
            invariants_ok = false;
            notes.push(format!("young validation failed for delta {delta}"));
        }
        young.push(json!({"delta": delta, "c": c}));
    }

    let mut files = Vec::new();
    if ctx.want_json() {
        ctx.write_json(
            "constants.json",
            &json!({
                "run_id": ctx.run_id,
                "phi": cfg.phi,
                "constants": constants,
                "young": young,
            }),
            &mut files,
        )?;
    }
    if ctx.want_csv() {
        let mut buf = String::new();
        buf.push_str("run_id,label,g_lo,g_hi,delta2,q1,q2\n");
        buf.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            ctx.run_id,
            cfg.phi.label(),
            constants.g_lo,
            constants.g_hi,
            constants.delta2,
            constants.q1,
            constants.q2
        ));
        std::fs::write(ctx.path("constants.csv"), buf)?;
        files.push("constants.csv".to_string());
    }
    Ok(RunOutput {
        files,
        invariants_ok,
        detail: if notes.is_empty() {
            format!("G={}", constants.g_uniformity())
        } else {
            notes.join("; ")
        },
    })
}

#[derive(Deserialize)]
struct TensorConfig {
    phi: PrototypeSpec,
    #[serde(default = "default_dims")]
    dims: Vec<usize>,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_norm_lo")]
    norm_lo: f64,
    #[serde(default = "default_norm_hi")]
    norm_hi: f64,
}

fn default_dims() -> Vec<usize> {
    vec![2, 3]
}

fn default_samples() -> usize {
    2000
}

fn default_norm_lo() -> f64 {
    1e-3
}

fn default_norm_hi() -> f64 {
    1e3
}

fn tensor_check(ctx: &RunContext) -> Result<RunOutput, Error> {
    let cfg: TensorConfig = serde_json::from_value(ctx.config.clone())?;
    let tensor = GrowthTensor::closed_form(cfg.phi)?;
    let phi = tensor.phi().clone();
    let mut files = Vec::new();
    let mut fitted = Vec::new();
    let mut all_rows = Vec::new();
    for &dim in &cfg.dims {
        let (c, big_c) =
            check_assumption1(&tensor, &phi, cfg.samples.max(1000), ctx.opts.seed, dim)?;
        let rows = quadruple_sweep(
            &phi,
            &tensor,
            dim,
            cfg.samples,
            ctx.opts.seed,
            cfg.norm_lo,
            cfg.norm_hi,
        );
        fitted.push(json!({"dim": dim, "c": c, "C": big_c, "rows": rows.len()}));
        all_rows.extend(rows);
    }
    if ctx.want_csv() {
        // The row layout is fixed by the export contract; the manifest
        // cross-reference rides in a leading comment line.
        let mut buf = format!("# run_id={}\n", ctx.run_id).into_bytes();
        write_quadruple_csv(&mut buf, &all_rows)?;
        std::fs::write(ctx.path("quadruples.csv"), buf)?;
        files.push("quadruples.csv".to_string());
    }
    if ctx.want_json() {
        ctx.write_json(
            "tensor_constants.json",
            &json!({
                "run_id": ctx.run_id,
                "phi": cfg.phi,
                "seed": ctx.opts.seed,
                "fits": fitted,
            }),
            &mut files,
        )?;
    }
    Ok(RunOutput {
        files,
        invariants_ok: true,
        detail: format!("{} quadruple rows", all_rows.len()),
    })
}

fn solve_cmd(ctx: &RunContext) -> Result<RunOutput, Error> {
    let cfg: ProblemConfig = serde_json::from_value(ctx.config.clone())?;
    let spec = cfg.build()?;
    let report = solve(&spec)?;
    let mut files = Vec::new();
    write_spacetime(&ctx.path("trajectory.bin"), &report.trajectory)?;
    files.push("trajectory.bin".to_string());
    if ctx.want_json() {
        ctx.write_json(
            "report.json",
            &json!({
                "run_id": ctx.run_id,
                "config": ctx.config,
                "summary": report.summary(),
                "trajectory": "trajectory.bin",
            }),
            &mut files,
        )?;
    }
    Ok(RunOutput {
        files,
        invariants_ok: true,
        detail: format!(
            "{} steps, max residual {:.3e}",
            report.summary().steps,
            report.summary().max_residual
        ),
    })
}

#[derive(Deserialize)]
struct AuditConfig {
    problem: ProblemConfig,
    r: f64,
    #[serde(rename = "R")]
    big_r: f64,
    #[serde(default)]
    delta0: Option<f64>,
}

fn audit_cmd(ctx: &RunContext) -> Result<RunOutput, Error> {
    let cfg: AuditConfig = serde_json::from_value(ctx.config.clone())?;
    let spec = cfg.problem.build()?;
    let phi = spec.tensor.phi().clone();
    let report = solve(&spec)?;
    let cyl = CylinderSpec::centered(spec.grid, spec.time);
    let reports: Vec<CaccioppoliReport> = match spec.system {
        SystemKind::Sym => audit_sym(
            &report.trajectory,
            None,
            &phi,
            &cyl,
            cfg.r,
            cfg.big_r,
            cfg.delta0,
        )?,
        SystemKind::Full => vec![audit_full(
            &report.trajectory,
            None,
            &phi,
            &cyl,
            cfg.r,
            cfg.big_r,
        )?],
    };
    let invariants_ok = reports.iter().all(|r| r.ratio.is_finite());
    let mut files = Vec::new();
    if ctx.want_json() {
        ctx.write_json(
            "audit.json",
            &json!({
                "run_id": ctx.run_id,
                "config": ctx.config,
                "reports": reports,
            }),
            &mut files,
        )?;
    }
    if ctx.want_csv() {
        let mut buf = Vec::new();
        write_caccioppoli_csv(&mut buf, &ctx.run_id, &reports)?;
        std::fs::write(ctx.path("audit.csv"), buf)?;
        files.push("audit.csv".to_string());
    }
    Ok(RunOutput {
        files,
        invariants_ok,
        detail: format!("{} estimates audited", reports.len()),
    })
}

#[derive(Deserialize)]
struct SweepConfig {
    template: SweepTemplate,
    mu_list: Vec<f64>,
    r: f64,
    #[serde(rename = "R")]
    big_r: f64,
    #[serde(default = "default_delta0")]
    delta0: f64,
    /// Optional bound asserted on max/min of the audited ratios.
    #[serde(default)]
    max_ratio_spread: Option<f64>,
}

fn default_delta0() -> f64 {
    1.0
}

fn sweep_cmd(ctx: &RunContext) -> Result<RunOutput, Error> {
    let cfg: SweepConfig = serde_json::from_value(ctx.config.clone())?;
    let table = uniformity_sweep(&cfg.template, &cfg.mu_list, cfg.r, cfg.big_r, cfg.delta0)?;
    let mut invariants_ok = true;
    let mut detail = format!(
        "g spread {:.4}, ratio spread {:.4}",
        table.g_spread, table.ratio_spread
    );
    if let Some(limit) = cfg.max_ratio_spread {
        if table.ratio_spread > limit {
            invariants_ok = false;
            detail = format!("ratio spread {} above limit {limit}", table.ratio_spread);
        }
    }
    let mut files = Vec::new();
    if ctx.want_json() {
        ctx.write_json(
            "sweep.json",
            &json!({
                "run_id": ctx.run_id,
                "config": ctx.config,
                "table": table,
            }),
            &mut files,
        )?;
    }
    if ctx.want_csv() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &ctx.run_id, &table)?;
        std::fs::write(ctx.path("sweep.csv"), buf)?;
        files.push("sweep.csv".to_string());
    }
    Ok(RunOutput {
        files,
        invariants_ok,
        detail,
    })
}

#[derive(Deserialize)]
struct KornConfig {
    phi: PrototypeSpec,
    dim: usize,
    n: usize,
    len: f64,
    r: f64,
    #[serde(default = "default_field_count")]
    fields: usize,
    #[serde(default = "default_kmax")]
    kmax: i32,
    #[serde(default = "default_amplitude")]
    amplitude: f64,
}

fn default_field_count() -> usize {
    100
}

fn default_kmax() -> i32 {
    3
}

fn default_amplitude() -> f64 {
    1.0
}

fn korn_cmd(ctx: &RunContext) -> Result<RunOutput, Error> {
    let cfg: KornConfig = serde_json::from_value(ctx.config.clone())?;
    let phi = cfg.phi.build()?;
    let grid = SpaceGrid::new(cfg.dim, cfg.n, cfg.len);
    let mut center = [0.0f64; 3];
    for a in 0..cfg.dim {
        center[a] = 0.5 * cfg.len;
    }
    let mut rows = Vec::new();
    let mut invariants_ok = true;
    for k in 0..cfg.fields {
        let seed = ctx.opts.seed.wrapping_add(k as u64);
        let u = band_limited_field(grid, cfg.dim, cfg.kmax, cfg.amplitude, seed);
        let rep = audit_korn(&u, &phi, center, cfg.r)?;
        if !rep.ratio.is_finite() {
            invariants_ok = false;
        }
        rows.push((seed, rep));
    }
    let max_ratio = rows
        .iter()
        .map(|(_, r)| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut files = Vec::new();
    if ctx.want_csv() {
        let mut buf = Vec::new();
        write_korn_csv(&mut buf, &ctx.run_id, &rows)?;
        std::fs::write(ctx.path("korn.csv"), buf)?;
        files.push("korn.csv".to_string());
    }
    if ctx.want_json() {
        ctx.write_json(
            "korn.json",
            &json!({
                "run_id": ctx.run_id,
                "config": ctx.config,
                "max_ratio": max_ratio,
                "audits": rows.iter().map(|(s, r)| json!({"seed": s, "report": r})).collect::<Vec<_>>(),
            }),
            &mut files,
        )?;
    }
    Ok(RunOutput {
        files,
        invariants_ok,
        detail: format!("{} fields, max ratio {max_ratio:.4}", rows.len()),
    })
}
