//! Runs the flow along a decreasing `eps` ladder on one shared grid and
//! measures how consecutive rungs approach each other away from the divisor.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic_init::{pipeline, InitialDensity, SmoothingResult};
use crate::error::{ConeError, Result};
use crate::estimates::{estimate_report, jeffres_compare, parabolic_holder, EstimateReport};
use crate::flow::{diagnostics_table, run, FlowConfig, Reference, Trajectory};
use crate::geometry::{ConeGeometry, GeometryParams};
use crate::grid::{GridSpec, RadialGrid};
use crate::io::write_json;

/// Ratio a Cauchy ladder must beat between consecutive distances.
pub const CAUCHY_RATIO: f64 = 0.9;
/// Number of sampled nodes for the distance-distortion proxy.
pub const GH_SAMPLES: usize = 64;
/// Weight `a` of the uniqueness probe.
pub const JEFFRES_A: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadePlan {
    pub eps_ladder: Vec<f64>,
    /// Divisor-exclusion radius in `sigma`.
    pub delta: f64,
    pub a0: f64,
    pub alpha: f64,
    /// Geometry template; its `eps` is replaced per rung and its grid is
    /// shared by every rung.
    pub geometry: GeometryParams,
    pub flow: FlowConfig,
    pub init: InitialDensity,
}

impl CascadePlan {
    /// Default ladder `10^-1 .. 10^-5` on a grid resolving the smallest rung.
    pub fn standard(beta: f64, n: usize, flow: FlowConfig) -> Self {
        let eps_ladder = vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
        let grid = GridSpec::resolving(n, 1e-5);
        CascadePlan {
            eps_ladder,
            delta: 0.05,
            a0: 0.1,
            alpha: 0.25,
            geometry: GeometryParams::new(beta, 1e-5, grid),
            flow,
            init: InitialDensity::KahlerEinstein,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_ladder.is_empty() {
            return Err(ConeError::Config("empty eps ladder".into()));
        }
        if self.eps_ladder.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(ConeError::Config("ladder entries must lie in (0, 1]".into()));
        }
        if self.eps_ladder.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(ConeError::Config("ladder must be strictly decreasing".into()));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(ConeError::Config(format!("delta = {} outside (0, 1/2)", self.delta)));
        }
        if !(self.a0 > 0.0 && self.a0 < self.flow.t_end) {
            return Err(ConeError::Config(format!("a0 = {} outside (0, T)", self.a0)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConeError::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.flow.reference != Reference::Omega0 {
            return Err(ConeError::Config("the cascade compares omega_0-form potentials".into()));
        }
        self.flow.validate()
    }

    /// Exponent of `|S|^{2p}` in the uniqueness probe, below `alpha beta / 2`.
    pub fn jeffres_p(&self) -> f64 {
        0.4 * self.alpha * self.geometry.beta
    }
}

/// One completed rung.
#[derive(Debug, Clone)]
pub struct Rung {
    pub geom: ConeGeometry,
    pub smoothing: SmoothingResult,
    pub trajectory: Trajectory,
    pub report: EstimateReport,
}

#[derive(Debug, Clone)]
pub struct CascadeRecord {
    pub plan: CascadePlan,
    pub outcomes: Vec<std::result::Result<Rung, ConeError>>,
}

impl CascadeRecord {
    pub fn rung(&self, k: usize) -> Result<&Rung> {
        match self.outcomes.get(k) {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => Err(e.clone()),
            None => Err(ConeError::domain(format!("rung {k} out of range"))),
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

fn run_rung(plan: &CascadePlan, eps: f64) -> Result<Rung> {
    let geom = ConeGeometry::new(GeometryParams { eps, ..plan.geometry })?;
    let f = plan.init.sample(&geom);
    let smoothing = pipeline(&geom, &f)?;
    let trajectory = run(&geom, &plan.flow, &smoothing.phi_hat)?;
    let report = estimate_report(&trajectory, &geom, plan.alpha, plan.delta)?;
    Ok(Rung {
        geom,
        smoothing,
        trajectory,
        report,
    })
}

/// Runs every rung, at most `jobs` at a time. Failed rungs are kept as
/// errors so completed ones remain available.
pub fn run_cascade(plan: &CascadePlan, jobs: usize) -> Result<CascadeRecord> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ConeError::Config(e.to_string()))?;
    let outcomes = pool.install(|| {
        plan.eps_ladder
            .par_iter()
            .map(|&eps| run_rung(plan, eps))
            .collect::<Vec<_>>()
    });
    Ok(CascadeRecord {
        plan: plan.clone(),
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub k: usize,
    pub potential: f64,
    pub density: f64,
}

impl PairDistance {
    pub fn total(&self) -> f64 {
        self.potential + self.density
    }
}

/// `|w|_0 + [w]_{alpha, alpha/2}` for the gauge-fixed potentials and for the
/// densities of rungs `k` and `k + 1`, on `delta <= sigma <= 1 - delta` and
/// `a0 <= t`. Distances use the `omega_D` metric of rung `k`.
pub fn pairwise_distance(rec: &CascadeRecord, k: usize, delta: f64, alpha: f64) -> Result<PairDistance> {
    pairwise_distance_window(rec, k, delta, rec.plan.a0, alpha)
}

/// [`pairwise_distance`] on `t >= a0`; `delta = 0` keeps the cone points.
pub fn pairwise_distance_window(rec: &CascadeRecord, k: usize, delta: f64, a0: f64, alpha: f64) -> Result<PairDistance> {
    let r1 = rec.rung(k)?;
    let r2 = rec.rung(k + 1)?;
    let (t1, t2) = (&r1.trajectory, &r2.trajectory);
    if t1.states.len() != t2.states.len() || r1.geom.grid.spec() != r2.geom.grid.spec() {
        return Err(ConeError::Mismatch("rungs are not comparable".into()));
    }
    let nodes = r1.geom.grid.away_from_poles(delta);
    if nodes.len() < 2 {
        return Err(ConeError::domain("exclusion radius leaves fewer than two nodes"));
    }
    let dd = r1.geom.donaldson_density()?.values;
    let arc = r1.geom.grid.arclength(&dd);
    let pos: Vec<f64> = nodes.iter().map(|&i| arc[i]).collect();
    let mut times = Vec::new();
    let mut dphi = Vec::new();
    let mut drho = Vec::new();
    for (s1, s2) in t1.states.iter().zip(&t2.states) {
        if s1.t < a0 - 1e-12 {
            continue;
        }
        let (g1, g2) = (s1.phi.sup(), s2.phi.sup());
        times.push(s1.t);
        dphi.push(nodes.iter().map(|&i| (s1.phi.values[i] - g1) - (s2.phi.values[i] - g2)).collect::<Vec<_>>());
        drho.push(nodes.iter().map(|&i| s1.density.values[i] - s2.density.values[i]).collect::<Vec<_>>());
    }
    let sup = |w: &[Vec<f64>]| w.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(PairDistance {
        k,
        potential: sup(&dphi) + parabolic_holder(&times, &dphi, &pos, alpha)?,
        density: sup(&drho) + parabolic_holder(&times, &drho, &pos, alpha)?,
    })
}

/// Largest change of meridian distance between sampled node pairs when the
/// density changes from `rho1` to `rho2`.
pub fn gh_proxy_densities(grid: &RadialGrid, rho1: &[f64], rho2: &[f64], samples: usize) -> f64 {
    let a1 = grid.arclength(rho1);
    let a2 = grid.arclength(rho2);
    let n = grid.len();
    let m = samples.clamp(2, n);
    let idx: Vec<usize> = (0..m).map(|j| j * (n - 1) / (m - 1)).collect();
    let mut worst: f64 = 0.0;
    for (p, &i) in idx.iter().enumerate() {
        for &j in &idx[p + 1..] {
            let d1 = a1[j] - a1[i];
            let d2 = a2[j] - a2[i];
            worst = worst.max((d1 - d2).abs());
        }
    }
    worst
}

/// Distance-distortion proxy between rungs `k` and `k + 1` at the stored
/// time nearest to `t`.
pub fn gh_proxy(rec: &CascadeRecord, k: usize, t: f64, samples: usize) -> Result<f64> {
    let r1 = rec.rung(k)?;
    let r2 = rec.rung(k + 1)?;
    let near = |tr: &Trajectory| {
        tr.states
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .map(|s| s.density.values.clone())
            .ok_or_else(|| ConeError::domain("empty trajectory"))
    };
    Ok(gh_proxy_densities(&r1.geom.grid, &near(&r1.trajectory)?, &near(&r2.trajectory)?, samples))
}

/// Pass/fail of one monitored property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0]).collect()
}

/// Scalars kept from one rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungSummary {
    pub eps: f64,
    pub barrier_scale: f64,
    pub model_delta: f64,
    pub grid: GridSpec,
    pub steps: usize,
    pub a_eps_norm: f64,
    pub quasi_iso: (f64, f64),
    pub c_f: f64,
    pub subharmonic_min: f64,
    pub report: EstimateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JeffresSummary {
    pub k: usize,
    pub p: f64,
    pub intercept: f64,
    pub slope: f64,
    pub direct: f64,
    pub envelope_ok: bool,
    pub max_excess: f64,
    /// Potential distance of the pair on all of `M x [0, T]`.
    pub full_distance: f64,
}

/// Serializable outcome of a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub plan: CascadePlan,
    pub rungs: Vec<RungSummary>,
    pub failures: Vec<(usize, String)>,
    pub distances: Vec<PairDistance>,
    pub gh: Vec<f64>,
    pub jeffres: Vec<JeffresSummary>,
    pub verdict: Verdict,
}

/// Largest proxy over the stored times in `[a0, T]`.
fn gh_over_window(rec: &CascadeRecord, k: usize) -> Result<f64> {
    let times: Vec<f64> = rec.rung(k)?.trajectory.times();
    let mut worst: f64 = 0.0;
    for t in times.into_iter().filter(|t| *t >= rec.plan.a0 - 1e-12) {
        worst = worst.max(gh_proxy(rec, k, t, GH_SAMPLES)?);
    }
    Ok(worst)
}

/// Aggregates every per-rung and pairwise monitor.
pub fn summarize(rec: &CascadeRecord) -> Result<CascadeSummary> {
    let plan = &rec.plan;
    let mut rungs = Vec::new();
    let mut failures = Vec::new();
    for (k, o) in rec.outcomes.iter().enumerate() {
        match o {
            Ok(r) => rungs.push(RungSummary {
                eps: r.geom.eps,
                barrier_scale: r.geom.barrier_scale,
                model_delta: r.geom.delta,
                grid: r.geom.grid.spec(),
                steps: r.trajectory.diagnostics.len(),
                a_eps_norm: r.smoothing.a_eps_norm,
                quasi_iso: r.smoothing.quasi_iso,
                c_f: r.smoothing.c_f(),
                subharmonic_min: r.smoothing.subharmonic_min,
                report: r.report.clone(),
            }),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    let complete = failures.is_empty();
    let mut distances = Vec::new();
    let mut gh = Vec::new();
    let mut jeffres = Vec::new();
    if complete {
        for k in 0..rec.len().saturating_sub(1) {
            distances.push(pairwise_distance(rec, k, plan.delta, plan.alpha)?);
            gh.push(gh_over_window(rec, k)?);
            let (r1, r2) = (rec.rung(k)?, rec.rung(k + 1)?);
            let l = jeffres_compare(&r1.geom, &r1.trajectory, &r2.geom, &r2.trajectory, JEFFRES_A, plan.jeffres_p())?;
            jeffres.push(JeffresSummary {
                k,
                p: l.p,
                intercept: l.intercept,
                slope: l.slope,
                direct: l.direct,
                envelope_ok: l.entries.iter().all(|e| e.envelope_ok),
                max_excess: l.entries.iter().map(|e| e.max_excess).fold(f64::NEG_INFINITY, f64::max),
                full_distance: pairwise_distance_window(rec, k, 0.0, 0.0, plan.alpha)?.potential,
            });
        }
    }
    let verdict = verdict_of(plan, &rungs, &failures, &distances, &gh, &jeffres);
    Ok(CascadeSummary {
        plan: plan.clone(),
        rungs,
        failures,
        distances,
        gh,
        jeffres,
        verdict,
    })
}

fn verdict_of(
    plan: &CascadePlan,
    rungs: &[RungSummary],
    failures: &[(usize, String)],
    distances: &[PairDistance],
    gh: &[f64],
    jeffres: &[JeffresSummary],
) -> Verdict {
    let mut checks = Vec::new();
    checks.push(Check {
        name: "runs".into(),
        passed: failures.is_empty(),
        measured: failures.iter().map(|f| f.0 as f64).collect(),
        detail: failures.iter().map(|f| format!("rung {}: {}", f.0, f.1)).collect::<Vec<_>>().join("; "),
    });
    let a: Vec<f64> = rungs.iter().map(|r| r.a_eps_norm.abs()).collect();
    checks.push(Check {
        name: "a_eps_decreasing".into(),
        passed: a.windows(2).all(|w| w[1] < w[0]),
        measured: a,
        detail: "magnitude of the smoothing constant along the ladder".into(),
    });
    let cf: Vec<f64> = rungs.iter().map(|r| r.c_f).collect();
    let s = spread(&cf);
    checks.push(Check {
        name: "c_f_stability".into(),
        passed: rungs.is_empty() || s <= 1.2 / 0.8,
        detail: format!("max/min of C_F = {s:.4}, limit 1.5 (all within 20% of a common value)"),
        measured: cf,
    });
    let tr: Vec<f64> = rungs.iter().map(|r| r.report.trace_sup).collect();
    let itr: Vec<f64> = rungs.iter().map(|r| r.report.inv_trace_sup).collect();
    let (s1, s2) = (spread(&tr), spread(&itr));
    checks.push(Check {
        name: "trace_uniformity".into(),
        passed: rungs.is_empty() || (s1 < 2.0 && s2 < 2.0),
        detail: format!("max/min of trace sup = {s1:.4}, of inverse trace sup = {s2:.4}, limit 2"),
        measured: tr.into_iter().chain(itr).collect(),
    });
    let total: Vec<f64> = distances.iter().map(|d| d.total()).collect();
    let rr = ratios(&total);
    checks.push(Check {
        name: "cauchy".into(),
        passed: rr.iter().all(|r| *r <= CAUCHY_RATIO),
        detail: format!(
            "consecutive distance ratios {rr:?} on delta = {}, t >= {}, alpha = {}",
            plan.delta, plan.a0, plan.alpha
        ),
        measured: total,
    });
    let gr = ratios(gh);
    checks.push(Check {
        name: "gh_proxy".into(),
        passed: gr.iter().all(|r| *r <= CAUCHY_RATIO),
        detail: format!("consecutive proxy ratios {gr:?}"),
        measured: gh.to_vec(),
    });
    let rt: Vec<f64> = rungs.iter().map(|r| r.report.curvature.r_t_min).collect();
    checks.push(Check {
        name: "curvature_finite".into(),
        passed: rt.iter().all(|x| x.is_finite()),
        detail: "min t R over each run".into(),
        measured: rt,
    });
    let intercepts: Vec<f64> = jeffres.iter().map(|j| j.intercept).collect();
    checks.push(Check {
        name: "jeffres".into(),
        passed: jeffres
            .iter()
            .all(|j| j.envelope_ok && j.intercept.abs() <= j.full_distance)
            && ratios(&intercepts).iter().all(|r| *r <= CAUCHY_RATIO),
        detail: format!(
            "envelope excess {:?}; extrapolated sup(phi_1 - phi_2) {:?} against pair distances {:?}",
            jeffres.iter().map(|j| j.max_excess).collect::<Vec<_>>(),
            intercepts,
            jeffres.iter().map(|j| j.full_distance).collect::<Vec<_>>()
        ),
        measured: intercepts,
    });
    checks.push(Check {
        name: "weak_flow_certificates".into(),
        passed: rungs.iter().all(|r| r.report.certificate.passed()),
        detail: "per-rung defining bounds".into(),
        measured: rungs
            .iter()
            .map(|r| r.report.certificate.bullets.iter().map(|b| b.constant).fold(0.0, f64::max))
            .collect(),
    });
    Verdict {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// Writes `cascade.json` and one folder per rung with its diagnostics CSV
/// and estimate report. Contains no timestamps, so equal plans give equal
/// bytes.
pub fn write_record(rec: &CascadeRecord, summary: &CascadeSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, o) in rec.outcomes.iter().enumerate() {
        if let Ok(r) = o {
            let sub = dir.join(format!("rung_{k}"));
            fs::create_dir_all(&sub)?;
            diagnostics_table(&r.trajectory).write(&sub.join("trajectory.csv"))?;
            write_json(&r.report, &sub.join("report.json"))?;
        }
    }
    write_json(summary, &dir.join("cascade.json"))
}
