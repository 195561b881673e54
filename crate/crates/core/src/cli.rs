//! Command-line entry point. Exit codes: 0 success, 1 invariant or
//! certificate failure, 2 argument or configuration error, 3 solver failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::cascade::{run_cascade, summarize, write_record, CascadePlan};
use crate::elliptic_init::{pipeline, InitialDensity};
use crate::error::{ConeError, Result};
use crate::estimates::estimate_report;
use crate::flow::{diagnostics_table, run, FlowConfig, Reference, Scheme};
use crate::geometry::{ConeGeometry, GeometryParams};
use crate::grid::GridSpec;
use crate::io::{content_id, write_json, Config};
use crate::polar::{comparison_check, integrate_polar, quasi_isometry_certificate, refinement_check, write_chart_csv};
use crate::polar::{ComparisonReport, QuasiIsometryCertificate, RefinementReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Every key a config file may contain.
pub const CONFIG_KEYS: &[&str] = &[
    "beta",
    "eps",
    "N",
    "delta",
    "rho",
    "grid.n",
    "grid.kind",
    "grid.q",
    "flow.dt",
    "flow.T",
    "flow.scheme",
    "flow.reference",
    "flow.newton_tol",
    "flow.newton_max_iter",
    "flow.dt_min",
    "flow.save_every",
    "init.F",
    "output.dir",
    "estimates.alpha",
    "estimates.delta",
    "cascade.eps_ladder",
    "cascade.delta",
    "cascade.a0",
    "cascade.alpha",
];

#[derive(Debug, Parser)]
#[command(name = "coneflow", version, about = "Regularized conical Kähler-Ricci flow on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the polar chart of the regularized cone metric and certify its bounds.
    PolarCheck {
        #[arg(long)]
        beta: f64,
        #[arg(long, required = true)]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        rho_max: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value = "polar")]
        out: PathBuf,
    },
    /// Smooth the initial data and run one flow.
    RunFlow {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the flow along an `eps` ladder and judge its convergence.
    Cascade {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "CONEFLOW_JOBS")]
        jobs: Option<usize>,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &ConeError) -> i32 {
    match e {
        ConeError::Config(_)
        | ConeError::Domain(_)
        | ConeError::Singularity
        | ConeError::NTooSmall { .. }
        | ConeError::DeltaTooLarge { .. }
        | ConeError::Io(_) => EXIT_USAGE,
        ConeError::StepFailed { .. } | ConeError::LinearSolve(_) | ConeError::Eigen(_) | ConeError::Quadrature { .. } => {
            EXIT_SOLVER
        }
        ConeError::NonPositiveDensity { .. }
        | ConeError::Normalization { .. }
        | ConeError::Infeasible { .. }
        | ConeError::KahlerViolation { .. }
        | ConeError::MaximumPrinciple { .. }
        | ConeError::Consistency(_)
        | ConeError::Mismatch(_) => EXIT_INVARIANT,
    }
}

fn error_kind(e: &ConeError) -> &'static str {
    match e {
        ConeError::Domain(_) => "domain",
        ConeError::Singularity => "singularity",
        ConeError::NTooSmall { .. } => "n_too_small",
        ConeError::DeltaTooLarge { .. } => "delta_too_large",
        ConeError::NonPositiveDensity { .. } => "nonpositive_density",
        ConeError::Quadrature { .. } => "quadrature",
        ConeError::LinearSolve(_) => "linear_solve",
        ConeError::Normalization { .. } => "normalization",
        ConeError::Infeasible { .. } => "infeasible",
        ConeError::StepFailed { .. } => "step_failed",
        ConeError::KahlerViolation { .. } => "kahler_violation",
        ConeError::MaximumPrinciple { .. } => "maximum_principle",
        ConeError::Consistency(_) => "consistency",
        ConeError::Eigen(_) => "eigen",
        ConeError::Mismatch(_) => "mismatch",
        ConeError::Config(_) => "config",
        ConeError::Io(_) => "io",
    }
}

/// One `key=value` line per error, so scripts can grep stderr.
fn report_error(e: &ConeError) -> i32 {
    let code = exit_code(e);
    let t = match e {
        ConeError::StepFailed { t, .. } | ConeError::KahlerViolation { t, .. } | ConeError::MaximumPrinciple { t, .. } => {
            format!(" t={t:e}")
        }
        _ => String::new(),
    };
    eprintln!("error code={code} kind={}{t} message={:?}", error_kind(e), e.to_string());
    code
}

pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let outcome = match cli.command {
        Command::PolarCheck {
            beta,
            eps,
            rho_max,
            step,
            out,
        } => cmd_polar_check(beta, &eps, rho_max, step, &out),
        Command::RunFlow { config, out } => cmd_run_flow(&config, out.as_deref()),
        Command::Cascade { config, out, jobs } => cmd_cascade(&config, out.as_deref(), jobs),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

#[derive(Debug, Serialize)]
struct PolarEntry {
    eps: f64,
    csv: String,
    comparison: ComparisonReport,
    quasi_isometry: QuasiIsometryCertificate,
    refinement: RefinementReport,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct PolarCertificate {
    beta: f64,
    rho_max: f64,
    step: f64,
    entries: Vec<PolarEntry>,
    passed: bool,
}

fn cmd_polar_check(beta: f64, eps: &[f64], rho_max: f64, step: f64, out: &Path) -> Result<i32> {
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    for (k, &e) in eps.iter().enumerate() {
        let chart = integrate_polar(beta, e, rho_max, step)?;
        let csv = format!("chart_{k}.csv");
        write_chart_csv(&chart, &out.join(&csv))?;
        let comparison = comparison_check(&chart);
        let quasi_isometry = quasi_isometry_certificate(&chart);
        let refinement = refinement_check(beta, e, rho_max, step)?;
        let passed = comparison.passed && quasi_isometry.passed;
        println!(
            "eps = {e:e}: a in [{:.6}, {:.6}], u - beta >= {:.3e}  {}",
            quasi_isometry.lower,
            quasi_isometry.upper,
            comparison.min_lower_margin,
            if passed { "ok" } else { "FAIL" }
        );
        entries.push(PolarEntry {
            eps: e,
            csv,
            comparison,
            quasi_isometry,
            refinement,
            passed,
        });
    }
    let passed = entries.iter().all(|e| e.passed);
    write_json(
        &PolarCertificate {
            beta,
            rho_max,
            step,
            entries,
            passed,
        },
        &out.join("certificate.json"),
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_INVARIANT })
}

/// Everything a config file selects.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub geometry: GeometryParams,
    pub flow: FlowConfig,
    pub init: InitialDensity,
    pub output_dir: PathBuf,
    pub alpha: f64,
    pub delta: f64,
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s {
        "implicit" => Ok(Scheme::Implicit),
        "semi-implicit" => Ok(Scheme::SemiImplicit),
        _ => Err(ConeError::Config(format!("flow.scheme: unknown scheme '{s}'"))),
    }
}

fn parse_reference(s: &str) -> Result<Reference> {
    match s {
        "omega0" => Ok(Reference::Omega0),
        "omega-eps" => Ok(Reference::OmegaEps),
        _ => Err(ConeError::Config(format!("flow.reference: unknown reference '{s}'"))),
    }
}

fn grid_spec(cfg: &Config, eps_floor: f64) -> Result<GridSpec> {
    let n = cfg.get_usize("grid.n")?.unwrap_or(1024);
    match cfg.get_str("grid.kind").unwrap_or("resolving") {
        "uniform" => Ok(GridSpec::uniform(n)),
        "graded" => {
            let q = cfg
                .get_f64("grid.q")?
                .ok_or_else(|| ConeError::Config("grid.kind = graded needs grid.q".into()))?;
            Ok(GridSpec::graded(n, q))
        }
        "resolving" => Ok(GridSpec::resolving(n, eps_floor)),
        k => Err(ConeError::Config(format!("grid.kind: unknown kind '{k}'"))),
    }
}

/// Maps a parsed config onto run settings; missing keys take defaults.
pub fn run_settings(cfg: &Config) -> Result<RunSettings> {
    cfg.check_keys(CONFIG_KEYS)?;
    let beta = cfg.get_f64("beta")?.unwrap_or(0.5);
    let eps = cfg.get_f64("eps")?.unwrap_or(1e-2);
    let eps_floor = match cfg.get_list("cascade.eps_ladder")? {
        Some(l) => l.into_iter().fold(eps, f64::min),
        None => eps,
    };
    let geometry = GeometryParams {
        beta,
        eps,
        barrier_scale: cfg.get_f64("N")?,
        delta: cfg.get_f64("delta")?,
        rho_exp: cfg.get_f64("rho")?,
        grid: grid_spec(cfg, eps_floor)?,
    };
    let d = FlowConfig::default();
    let flow = FlowConfig {
        dt: cfg.get_f64("flow.dt")?.unwrap_or(d.dt),
        t_end: cfg.get_f64("flow.T")?.unwrap_or(d.t_end),
        scheme: cfg.get_str("flow.scheme").map(parse_scheme).transpose()?.unwrap_or(d.scheme),
        reference: cfg.get_str("flow.reference").map(parse_reference).transpose()?.unwrap_or(d.reference),
        newton_tol: cfg.get_f64("flow.newton_tol")?.unwrap_or(d.newton_tol),
        newton_max_iter: cfg.get_usize("flow.newton_max_iter")?.unwrap_or(d.newton_max_iter),
        dt_min: cfg.get_f64("flow.dt_min")?.unwrap_or(d.dt_min),
        save_every: cfg.get_usize("flow.save_every")?.unwrap_or(d.save_every),
    };
    flow.validate()?;
    let init = InitialDensity::parse(cfg.get_str("init.F").unwrap_or("ke"))?;
    Ok(RunSettings {
        geometry,
        flow,
        init,
        output_dir: PathBuf::from(cfg.get_str("output.dir").unwrap_or("runs")),
        alpha: cfg.get_f64("estimates.alpha")?.unwrap_or(0.25),
        delta: cfg.get_f64("estimates.delta")?.unwrap_or(0.05),
    })
}

/// Cascade plan from a config; ladder keys default to the standard plan.
pub fn cascade_plan(cfg: &Config) -> Result<CascadePlan> {
    let s = run_settings(cfg)?;
    let ladder = cfg.get_list("cascade.eps_ladder")?.unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5]);
    let floor = ladder.iter().copied().fold(f64::INFINITY, f64::min);
    let grid = if cfg.get_str("grid.kind").is_none() {
        GridSpec::resolving(s.geometry.grid.n, floor)
    } else {
        s.geometry.grid
    };
    let plan = CascadePlan {
        eps_ladder: ladder,
        delta: cfg.get_f64("cascade.delta")?.unwrap_or(0.05),
        a0: cfg.get_f64("cascade.a0")?.unwrap_or(0.1),
        alpha: cfg.get_f64("cascade.alpha")?.unwrap_or(0.25),
        geometry: GeometryParams { grid, ..s.geometry },
        flow: s.flow,
        init: s.init,
    };
    plan.validate()?;
    Ok(plan)
}

/// Per-run bookkeeping. Timestamps live only here, so every other output
/// is a pure function of the config.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub config: std::collections::BTreeMap<String, String>,
    pub created_unix: u64,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
}

fn run_dir(cfg: &Config, base: &Path) -> (String, PathBuf) {
    let id = content_id(&cfg.canonical());
    let dir = base.join(&id);
    (id, dir)
}

fn cmd_run_flow(path: &Path, out: Option<&Path>) -> Result<i32> {
    let cfg = Config::load(path)?;
    let s = run_settings(&cfg)?;
    let start = Instant::now();
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let geom = ConeGeometry::new(s.geometry)?;
    let smoothing = pipeline(&geom, &s.init.sample(&geom))?;
    let traj = run(&geom, &s.flow, &smoothing.phi_hat)?;
    let report = estimate_report(&traj, &geom, s.alpha, s.delta)?;

    let (run_id, dir) = run_dir(&cfg, out.unwrap_or(&s.output_dir));
    std::fs::create_dir_all(&dir)?;
    diagnostics_table(&traj).write(&dir.join("trajectory.csv"))?;
    write_json(&report, &dir.join("report.json"))?;
    write_json(&smoothing, &dir.join("smoothing.json"))?;
    let manifest = RunManifest {
        run_id: run_id.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.entries().clone(),
        created_unix,
        wall_seconds: start.elapsed().as_secs_f64(),
        outputs: vec!["trajectory.csv".into(), "report.json".into(), "smoothing.json".into()],
    };
    write_json(&manifest, &dir.join("manifest.json"))?;

    let passed = report.certificate.passed() && report.curvature.r_t_min.is_finite();
    println!(
        "run {run_id}: {} steps, sup tr = {:.4}, sup tr^-1 = {:.4}, sup |phi_dot| = {:.4}, min tR = {:.4}  {}",
        traj.diagnostics.len(),
        report.trace_sup,
        report.inv_trace_sup,
        report.sup_phi_dot,
        report.curvature.r_t_min,
        if passed { "ok" } else { "FAIL" }
    );
    println!("wrote {}", dir.display());
    Ok(if passed { EXIT_OK } else { EXIT_INVARIANT })
}

fn cmd_cascade(path: &Path, out: Option<&Path>, jobs: Option<usize>) -> Result<i32> {
    let cfg = Config::load(path)?;
    let plan = cascade_plan(&cfg)?;
    let base = out.map(Path::to_path_buf).unwrap_or_else(|| {
        PathBuf::from(cfg.get_str("output.dir").unwrap_or("runs"))
    });
    let (_, dir) = run_dir(&cfg, &base);
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let rec = run_cascade(&plan, jobs)?;
    for (k, o) in rec.outcomes.iter().enumerate() {
        if let Err(e) = o {
            eprintln!("rung={k} eps={:e}", plan.eps_ladder[k]);
            report_error(e);
        }
    }
    let summary = summarize(&rec)?;
    write_record(&rec, &summary, &dir)?;
    for c in &summary.verdict.checks {
        println!("{:<24} {}  {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
    }
    println!("wrote {}", dir.display());
    if summary.verdict.passed {
        return Ok(EXIT_OK);
    }
    // A rung that died in the solver outranks a failed check.
    let solver = rec
        .outcomes
        .iter()
        .filter_map(|o| o.as_ref().err())
        .any(|e| exit_code(e) == EXIT_SOLVER);
    Ok(if solver { EXIT_SOLVER } else { EXIT_INVARIANT })
}
