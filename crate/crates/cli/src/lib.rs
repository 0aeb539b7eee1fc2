//! Runner behind the `volobs` binary: reads a JSON run configuration, executes the
//! task and writes every artifact into one output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use volobs_core::config::{FieldFormat, Prepared, RunConfig, Task};
use volobs_core::freeboundary::{
    density_scan, estimate_lambda, extract_free_boundary, nondegeneracy_scan, support_radius, FreeBoundary,
};
use volobs_core::io::{contours_geojson, write_contours_csv, write_field_bin, write_field_csv, write_sweep_csv};
use volobs_core::oracle::radial_solution;
use volobs_core::verify::{
    battery, check_euler_lagrange, check_flat_boundary_exponent, check_lambda_constancy, check_lipschitz_sequence,
    epsilon_sweep, max_gradient, solver_residual_allowance, Check, PropertyReport, SweepResult,
};
use volobs_core::{solve_penalized, Error, ObstacleKind, PenaltyParams, Shape, SolveResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Parser)]
#[command(name = "volobs", version, about = "Volume-constrained double-obstacle solver and property checks")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output` in the config (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `solver.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress progress and the report table.
    #[arg(long)]
    pub quiet: bool,
    /// Worker threads for sweeps and refinement studies (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug)]
pub enum RunError {
    Config(Error),
    Runtime(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "invalid configuration: {e}"),
            RunError::Runtime(e) => write!(f, "run failed: {e}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => RunError::Config(e),
            other => RunError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(e.into())
    }
}

type Res<T> = std::result::Result<T, RunError>;

/// What a task produced, before it is written out.
struct Outcome {
    /// The field whose free boundary and dumps are written.
    main: Option<SolveResult>,
    report: PropertyReport,
    extra: Value,
    sweep: Option<SweepResult>,
    /// Whether a failing report turns into a nonzero exit.
    enforce: bool,
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
    started: Instant,
}

impl Ctx<'_> {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.cli.quiet {
            eprintln!("[{:>7.1}s] {}", self.started.elapsed().as_secs_f64(), msg.as_ref());
        }
    }
}

/// Loads the config, applies flag overrides, executes the task and writes artifacts.
/// Returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("volobs: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Res<i32> {
    let mut cfg = RunConfig::from_path(&cli.config).map_err(|e| match e {
        Error::Io(_) => RunError::Config(Error::Config { path: "--config".into(), message: e.to_string() }),
        other => RunError::from(other),
    })?;
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let prepared = cfg.prepare().map_err(RunError::Config)?;
    fs::create_dir_all(&out_dir)
        .map_err(|e| RunError::Config(Error::Config { path: "output".into(), message: format!("{}: {e}", out_dir.display()) }))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| RunError::Runtime(Error::InvalidParameter(e.to_string())))?;

    let ctx = Ctx { cli, cfg, started: Instant::now() };
    ctx.note(format!(
        "task {:?} on a {}x{} grid, h = {:.4e}",
        ctx.cfg.task,
        prepared.masks.grid().nx,
        prepared.masks.grid().ny,
        prepared.masks.grid().h
    ));
    let outcome = pool.install(|| match ctx.cfg.task {
        Task::Solve => task_solve(&ctx, &prepared),
        Task::Sweep => task_sweep(&ctx, &prepared),
        Task::Verify => task_verify(&ctx, &prepared),
        Task::OracleCompare => task_oracle(&ctx, &prepared),
    })?;
    write_artifacts(&ctx, &prepared, &outcome, &out_dir)?;
    if !cli.quiet {
        eprintln!("{}", outcome.report);
    }
    ctx.note(format!("artifacts in {}", out_dir.display()));
    Ok(if outcome.enforce && !outcome.report.pass { EXIT_FAILED } else { EXIT_OK })
}

fn solve(ctx: &Ctx, prep: &Prepared) -> Res<SolveResult> {
    let r = solve_penalized(&prep.spec, &prep.masks, &prep.obstacles, &prep.penalty, &ctx.cfg.solver)?;
    ctx.note(format!(
        "solved: J = {:.6}, E = {:.6}, V = {:.6}, {} iterations, converged = {}",
        r.penalized_energy, r.energy, r.exterior_volume, r.iterations, r.converged
    ));
    Ok(r)
}

fn base_report(ctx: &Ctx, prep: &Prepared, r: &SolveResult) -> PropertyReport {
    let v = &ctx.cfg.verify;
    let delta = v.clearance_delta.unwrap_or(2.0 * prep.masks.grid().h);
    battery(r, &prep.spec, &prep.masks, v.m_probe, delta)
}

fn task_solve(ctx: &Ctx, prep: &Prepared) -> Res<Outcome> {
    let r = solve(ctx, prep)?;
    let report = base_report(ctx, prep, &r);
    Ok(Outcome { main: Some(r), report, extra: Value::Null, sweep: None, enforce: false })
}

fn run_sweep(ctx: &Ctx, prep: &Prepared) -> Res<SweepResult> {
    let sw = ctx.cfg.sweep.as_ref().expect("sweep section checked at load");
    let sp = &ctx.cfg.solver;
    let result = if sw.warm_start {
        epsilon_sweep(&prep.spec, &prep.masks, &prep.obstacles, &sw.eps, &prep.penalty, sp, sw.rel_tol)?
    } else {
        let solves: Vec<_> = sw
            .eps
            .par_iter()
            .map(|&eps| {
                let p = PenaltyParams { eps, ..prep.penalty };
                (eps, solve_penalized(&prep.spec, &prep.masks, &prep.obstacles, &p, sp))
            })
            .collect();
        SweepResult::from_solves(&prep.masks, &prep.penalty, sw.rel_tol, solves)?
    };
    for row in &result.rows {
        ctx.note(format!("eps = {}: V = {:.6}, E = {:.6}", row.eps, row.exterior_volume, row.energy));
    }
    if let Some(a) = &result.aborted {
        ctx.note(format!("sweep stopped early: {a}"));
    }
    Ok(result)
}

fn task_sweep(ctx: &Ctx, prep: &Prepared) -> Res<Outcome> {
    let mut sweep = run_sweep(ctx, prep)?;
    let mut report = PropertyReport::new();
    report.push(sweep.check());
    report.push(sweep.lambda_check());
    let main = sweep.results.pop();
    if let Some(r) = &main {
        for c in base_report(ctx, prep, r).checks {
            report.push(c);
        }
    }
    Ok(Outcome { main, report, extra: Value::Null, sweep: Some(sweep), enforce: false })
}

fn task_verify(ctx: &Ctx, prep: &Prepared) -> Res<Outcome> {
    let v = &ctx.cfg.verify;
    let r = solve(ctx, prep)?;
    let mut report = base_report(ctx, prep, &r);
    let mut extra = serde_json::Map::new();
    report.push(check_lambda_constancy(&r, &prep.masks));

    match check_euler_lagrange(&r, &prep.obstacles, &prep.masks, solver_residual_allowance(&r, &ctx.cfg.solver)) {
        Ok(el) => {
            report.push(el.check.clone());
            extra.insert("euler_lagrange".into(), to_value(&el));
        }
        Err(e) => ctx.note(format!("euler_lagrange skipped: {e}")),
    }

    if let Some(window) = v.flat_window {
        let faces = prep.spec.shape.faces();
        if faces.is_empty() {
            ctx.note("flat_exponent skipped: D has no straight faces");
        }
        let mut fits = Vec::new();
        for (k, face) in faces.iter().enumerate() {
            let mut fe = check_flat_boundary_exponent(&r.u, &prep.masks, face, window)?;
            fe.check.name = format!("flat_exponent[{k}]");
            report.push(fe.check.clone());
            fits.push(fe);
        }
        extra.insert("flat_exponent".into(), to_value(&fits));
    }

    let nd = nondegeneracy_scan(&r.u, &prep.spec, &prep.masks, &r.penalty, v.nondegeneracy_probe);
    report.push(
        Check::new(
            "nondegeneracy",
            "circle averages of u near the free boundary grow at least like sqrt(eps) r",
            nd.violations.len() as f64,
            0.0,
            nd.violations.is_empty(),
        )
        .with_detail(format!("{} balls, empirical constant {:.4e}", nd.balls, nd.empirical_constant))
        .informational(),
    );
    let h = prep.masks.grid().h;
    let density = density_scan(&r.u, &prep.spec, &prep.masks, &r.penalty, 8.0 * h);
    report.push(
        Check::new(
            "density",
            "the positivity set has positive density at free-boundary points",
            density.min_ratio,
            0.0,
            density.min_ratio > 0.0,
        )
        .with_detail(format!("{} balls of radius 8h", density.balls))
        .informational(),
    );
    extra.insert("nondegeneracy".into(), json!({ "balls": nd.balls, "violations": nd.violations.len(), "empirical_constant": nd.empirical_constant }));
    extra.insert("density".into(), to_value(&density));

    if !v.resolutions.is_empty() {
        let study = lipschitz_study(ctx, &v.resolutions, v.corner_exclusion)?;
        report.push(study.0);
        extra.insert("lipschitz".into(), json!({ "resolutions": v.resolutions, "max_gradients": study.1 }));
    }

    let mut sweep = None;
    if ctx.cfg.sweep.is_some() {
        let s = run_sweep(ctx, prep)?;
        report.push(s.check());
        report.push(s.lambda_check());
        sweep = Some(s);
    }
    Ok(Outcome { main: Some(r), report, extra: Value::Object(extra), sweep, enforce: true })
}

/// Independent solves at each resolution, fanned out over the pool.
fn lipschitz_study(ctx: &Ctx, resolutions: &[usize], corner_exclusion: f64) -> Res<(Check, Vec<f64>)> {
    let shape: Shape = ctx.cfg.shape()?;
    let solved: Vec<Res<(f64, bool)>> = resolutions
        .par_iter()
        .map(|&res| {
            let p = ctx.cfg.prepare_at(res)?;
            let r = solve_penalized(&p.spec, &p.masks, &p.obstacles, &p.penalty, &ctx.cfg.solver)?;
            Ok((max_gradient(&r.u, &shape, corner_exclusion), r.converged))
        })
        .collect();
    let solved = solved.into_iter().collect::<Res<Vec<_>>>()?;
    let grads: Vec<f64> = solved.iter().map(|s| s.0).collect();
    ctx.note(format!("lipschitz study: max |grad u| = {grads:?}"));
    let mut check = check_lipschitz_sequence(&grads);
    let stalled: Vec<usize> = resolutions.iter().zip(&solved).filter(|(_, s)| !s.1).map(|(r, _)| *r).collect();
    if !stalled.is_empty() {
        check.pass = false;
        check.detail = Some(format!("{}; not converged at resolutions {stalled:?}", check.detail.unwrap_or_default()));
    }
    Ok((check, grads))
}

fn task_oracle(ctx: &Ctx, prep: &Prepared) -> Res<Outcome> {
    let (radius, centered) = match &prep.spec.shape {
        Shape::Disk { center, radius } => (*radius, center[0] == 0.0 && center[1] == 0.0),
        _ => (0.0, false),
    };
    if !centered {
        return Err(RunError::Config(Error::Config {
            path: "domain.shape".into(),
            message: "oracle-compare needs a disk centred at the origin".into(),
        }));
    }
    let ObstacleKind::Constant { lower, .. } = prep.kind else {
        return Err(RunError::Config(Error::Config {
            path: "domain.obstacles.kind".into(),
            message: "oracle-compare needs constant obstacles".into(),
        }));
    };
    let exact = radial_solution(radius, lower, prep.spec.mu).map_err(RunError::Config)?;
    let r = solve(ctx, prep)?;
    let mut report = base_report(ctx, prep, &r);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let anchor = "agreement with the radial annulus solution";
    let e = rel(r.energy, exact.energy());
    report.push(
        Check::new("oracle_energy", anchor, e, 0.03, e <= 0.03)
            .with_detail(format!("E = {:.6}, exact {:.6}", r.energy, exact.energy())),
    );
    let v = rel(r.exterior_volume, exact.volume());
    report.push(
        Check::new("oracle_volume", anchor, v, 0.03, v <= 0.03)
            .with_detail(format!("V = {:.6}, exact {:.6}", r.exterior_volume, exact.volume())),
    );
    let lam = extract_free_boundary(&r.u, &prep.masks, &r.penalty).and_then(|fb| estimate_lambda(&r.u, &prep.masks, &r.penalty, &fb));
    let (l_err, cv, detail) = match &lam {
        Ok(l) => (rel(l.mean, exact.lambda()), l.cv, format!("lambda = {:.6}, exact {:.6}", l.mean, exact.lambda())),
        Err(e) => (f64::NAN, f64::NAN, e.to_string()),
    };
    report.push(Check::new("oracle_lambda", anchor, l_err, 0.08, l_err <= 0.08).with_detail(detail));
    report.push(Check::new("oracle_lambda_cv", "lambda is constant along the free boundary", cv, 0.10, cv <= 0.10));
    let extra = json!({
        "oracle": {
            "inner_radius": exact.a,
            "outer_radius": exact.b,
            "boundary_value": exact.c,
            "energy": exact.energy(),
            "volume": exact.volume(),
            "lambda": exact.lambda(),
        }
    });
    Ok(Outcome { main: Some(r), report, extra, sweep: None, enforce: true })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, v: &Value) -> Res<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_artifacts(ctx: &Ctx, prep: &Prepared, o: &Outcome, dir: &Path) -> Res<()> {
    let g = prep.masks.grid();
    let mut summary = json!({
        "task": ctx.cfg.task,
        "config": ctx.cfg,
        "grid": g,
        "pass": o.report.pass,
    });
    if let Some(r) = &o.main {
        match ctx.cfg.field_format {
            FieldFormat::Csv => write_field_csv(create(&dir.join("u.csv"))?, &r.u)?,
            FieldFormat::Bin => write_field_bin(create(&dir.join("u.bin"))?, &r.u)?,
            FieldFormat::Both => {
                write_field_csv(create(&dir.join("u.csv"))?, &r.u)?;
                write_field_bin(create(&dir.join("u.bin"))?, &r.u)?;
            }
        }
        summary["solve"] = json!({
            "energy": r.energy,
            "penalized_energy": r.penalized_energy,
            "exterior_volume": r.exterior_volume,
            "initial_penalized_energy": r.initial_penalized_energy,
            "iterations": r.iterations,
            "converged": r.converged,
            "eps": r.penalty.eps,
            "mu": r.penalty.mu,
            "sup_phi": r.sup_phi,
            "support_radius": support_radius(&r.u, &r.penalty),
        });
        let fb: Result<FreeBoundary, Error> = extract_free_boundary(&r.u, &prep.masks, &r.penalty);
        match fb {
            Ok(fb) => {
                write_contours_csv(create(&dir.join("contours.csv"))?, &fb.chains)?;
                let lam = estimate_lambda(&r.u, &prep.masks, &r.penalty, &fb).ok();
                summary["free_boundary"] = json!({
                    "length": fb.length,
                    "chains": fb.chains.len(),
                    "lambda": lam.map(|l| json!({ "mean": l.mean, "cv": l.cv, "samples": l.samples.len(), "skipped": l.skipped })),
                    "contours": contours_geojson(&fb.chains),
                });
            }
            Err(e) => {
                write_contours_csv(create(&dir.join("contours.csv"))?, &[])?;
                summary["free_boundary"] = json!({ "error": e.to_string() });
            }
        }
    }
    if let Some(s) = &o.sweep {
        write_sweep_csv(create(&dir.join("sweep.csv"))?, &s.rows)?;
        summary["sweep"] = to_value(s);
    }
    if !o.extra.is_null() {
        summary["diagnostics"] = o.extra.clone();
    }
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("report.json"), &to_value(&o.report))?;
    Ok(())
}
