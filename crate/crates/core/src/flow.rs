//! Time stepping of the regularized flow
//! `phi' = log(omega_phi / omega_0) + beta phi + h + (1 - beta) log(|S|^2 + eps)`
//! and of its equivalent form with reference metric `omega_eps`.
//!
//! Steps are exponential-Euler implicit: with `E = e^{beta dt}` and
//! `c = (E - 1)/beta`, the new potential solves `x = E phi + c N(x)` where
//! `N(x) = log density(x) + forcing`. The difference quotient of this scheme
//! obeys a discrete maximum principle, so the bounds on `phi'` and on
//! `e^{-beta t} phi'` hold exactly up to the Newton tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{ConeError, Result};
use crate::estimates::{scalar_curvature, trace_monitors};
use crate::geometry::ConeGeometry;
use crate::grid::{sup_abs, FieldKind, RadialField};
use crate::io::Table;
use crate::linalg::Tridiag;

/// Slack on the growth bound for `sup |phi'|`.
pub const GROWTH_TOL: f64 = 1e-6;
/// Per-step slack on the monotonicity of `sup |v|`.
pub const MONOTONE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Implicit,
    SemiImplicit,
}

/// Reference metric of the potential equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    Omega0,
    OmegaEps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub reference: Reference,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub dt_min: f64,
    /// Store every `save_every`-th step (the final state is always stored).
    pub save_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-3,
            t_end: 1.0,
            scheme: Scheme::Implicit,
            reference: Reference::Omega0,
            newton_tol: 1e-12,
            newton_max_iter: 30,
            dt_min: 1e-6,
            save_every: 10,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.t_end > 0.0
            && self.newton_tol > 0.0
            && self.newton_max_iter > 0
            && self.dt_min > 0.0
            && self.dt_min <= self.dt
            && self.save_every > 0;
        if ok && self.dt.is_finite() && self.t_end.is_finite() {
            Ok(())
        } else {
            Err(ConeError::Config(format!("invalid flow configuration {self:?}")))
        }
    }
}

/// Reference-dependent data of the potential equation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSetup {
    pub reference: Reference,
    /// Density of the reference metric relative to `omega_0`.
    pub base: Vec<f64>,
    /// `h + L` for `omega_0`, `h + L + beta Psi / N` for `omega_eps`, with
    /// `L` the cell form of `(1 - beta) log(|S|^2 + eps)`.
    pub forcing: Vec<f64>,
    /// Potential of the reference metric (`0` or `Psi / N`).
    pub shift: Vec<f64>,
    /// `h`, kept for the restart datum.
    pub h: Vec<f64>,
}

impl FlowSetup {
    pub fn new(geom: &ConeGeometry, reference: Reference) -> Result<Self> {
        let n = geom.grid.len();
        let h = geom.compute_h()?.values;
        let l = geom.cone_log_term();
        let shift = match reference {
            Reference::Omega0 => vec![0.0; n],
            Reference::OmegaEps if geom.barrier_scale.is_infinite() => vec![0.0; n],
            Reference::OmegaEps => geom
                .barrier_field(geom.beta)?
                .into_iter()
                .map(|p| p / geom.barrier_scale)
                .collect(),
        };
        // discrete-consistent reference density
        let base: Vec<f64> = geom.grid.apply_laplacian(&shift).iter().map(|d| 1.0 + d).collect();
        if let Some((node, &value)) = base.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(ConeError::NTooSmall {
                node,
                sigma: geom.grid.nodes()[node],
                value,
            });
        }
        let forcing = (0..n)
            .map(|i| h[i] + l[i] + geom.beta * shift[i])
            .collect();
        Ok(FlowSetup {
            reference,
            base,
            forcing,
            shift,
            h,
        })
    }

    /// Initial potential in this form from the smoothed `phi_hat`.
    pub fn initial_potential(&self, phi_hat: &[f64]) -> Vec<f64> {
        phi_hat.iter().zip(&self.shift).map(|(p, s)| p - s).collect()
    }

    /// Potential relative to `omega_0`.
    pub fn to_omega0(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().zip(&self.shift).map(|(p, s)| p + s).collect()
    }

    /// Density of `omega_phi` relative to `omega_0`.
    pub fn density(&self, geom: &ConeGeometry, phi: &[f64]) -> Vec<f64> {
        geom.grid
            .apply_laplacian(phi)
            .iter()
            .zip(&self.base)
            .map(|(l, b)| b + l)
            .collect()
    }

    fn nonlinear(&self, density: &[f64]) -> Vec<f64> {
        density.iter().zip(&self.forcing).map(|(d, f)| d.ln() + f).collect()
    }

    /// Right-hand side of the flow at `phi`.
    pub fn velocity(&self, geom: &ConeGeometry, phi: &[f64]) -> Result<Vec<f64>> {
        let dens = self.density(geom, phi);
        check_density(&dens, 0.0)?;
        Ok(self
            .nonlinear(&dens)
            .iter()
            .zip(phi)
            .map(|(n, p)| n + geom.beta * p)
            .collect())
    }
}

fn check_density(dens: &[f64], t: f64) -> Result<()> {
    match dens.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        Some((node, &value)) => Err(ConeError::KahlerViolation { t, node, value }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub phi: RadialField,
    pub phi_dot: RadialField,
    pub density: RadialField,
    pub eps: f64,
    pub beta: f64,
}

/// Per-step record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub t: f64,
    pub dt: f64,
    pub newton_iters: usize,
    pub residual: f64,
    pub sup_phi_dot: f64,
    pub sup_v: f64,
    pub min_density: f64,
    pub area_defect: f64,
    pub trace_sup: f64,
    pub inv_trace_sup: f64,
    pub r_min: f64,
    /// `max_x (log rho_new - log rho_old) / dt`.
    pub vol_rate_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: FlowConfig,
    pub eps: f64,
    pub beta: f64,
    pub reference: Reference,
    pub initial_sup_phi_dot: f64,
    pub initial_trace: (f64, f64),
    pub states: Vec<FlowState>,
    pub diagnostics: Vec<StepDiagnostic>,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

/// Column names of [`diagnostics_table`].
pub const DIAGNOSTIC_COLUMNS: [&str; 12] = [
    "t",
    "dt",
    "newton_iters",
    "residual",
    "sup_phi_dot",
    "sup_v",
    "min_density",
    "area_defect",
    "trace_sup",
    "inv_trace_sup",
    "r_min",
    "vol_rate_max",
];

pub fn diagnostics_table(traj: &Trajectory) -> Table {
    let mut table = Table::new(&DIAGNOSTIC_COLUMNS);
    for d in &traj.diagnostics {
        table.push(vec![
            d.t,
            d.dt,
            d.newton_iters as f64,
            d.residual,
            d.sup_phi_dot,
            d.sup_v,
            d.min_density,
            d.area_defect,
            d.trace_sup,
            d.inv_trace_sup,
            d.r_min,
            d.vol_rate_max,
        ]);
    }
    table
}

/// State at `t0` for a potential in the form selected by `setup`.
pub fn initial_state(geom: &ConeGeometry, setup: &FlowSetup, phi: Vec<f64>, t0: f64) -> Result<FlowState> {
    let dens = setup.density(geom, &phi);
    check_density(&dens, t0)?;
    let phi_dot = setup.velocity(geom, &phi)?;
    Ok(FlowState {
        t: t0,
        phi: RadialField::new(phi, FieldKind::Potential)?,
        phi_dot: RadialField::new(phi_dot, FieldKind::Potential)?,
        density: RadialField::new(dens, FieldKind::Density)?,
        eps: geom.eps,
        beta: geom.beta,
    })
}

/// Outcome of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub newton_iters: usize,
    pub residual: f64,
}

fn residual_of(x: &[f64], anchor: &[f64], c: f64, n: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(anchor)
        .zip(n)
        .map(|((x, a), n)| x - a - c * n)
        .collect()
}

/// One implicit step of size `dt`.
pub fn step(
    state: &FlowState,
    geom: &ConeGeometry,
    setup: &FlowSetup,
    config: &FlowConfig,
    dt: f64,
) -> Result<(FlowState, StepInfo)> {
    let beta = geom.beta;
    let e = (beta * dt).exp();
    let c = (beta * dt).exp_m1() / beta;
    let phi = &state.phi.values;
    let anchor: Vec<f64> = phi.iter().map(|p| e * p).collect();
    let lap = geom.grid.laplacian();
    let t_new = state.t + dt;
    let fail = |reason: String| ConeError::StepFailed {
        t: state.t,
        reason,
        suggested_dt: 0.5 * dt,
    };

    let mut x = phi.clone();
    let mut dens = state.density.values.clone();
    let mut g = residual_of(&x, &anchor, c, &setup.nonlinear(&dens));
    let mut norm = sup_abs(&g);
    let mut iters = 0;
    let max_iter = match config.scheme {
        Scheme::Implicit => config.newton_max_iter,
        Scheme::SemiImplicit => 1,
    };
    while iters < max_iter && !(config.scheme == Scheme::Implicit && norm <= config.newton_tol) {
        iters += 1;
        // J = I - c diag(1/rho) L
        let mut jac = Tridiag::zeros(x.len());
        for i in 0..x.len() {
            let s = c / dens[i];
            jac.lower[i] = -s * lap.lower[i];
            jac.diag[i] = 1.0 - s * lap.diag[i];
            jac.upper[i] = -s * lap.upper[i];
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = jac.solve(&rhs)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            let td = setup.density(geom, &trial);
            if td.iter().all(|v| *v > 0.0) {
                let tg = residual_of(&trial, &anchor, c, &setup.nonlinear(&td));
                let tn = sup_abs(&tg);
                if config.scheme == Scheme::SemiImplicit || tn <= (1.0 - 1e-4 * lambda) * norm || tn <= config.newton_tol {
                    x = trial;
                    dens = td;
                    g = tg;
                    norm = tn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(fail(format!("line search failed at residual {norm:e}")));
        }
    }
    if config.scheme == Scheme::Implicit && !(norm <= config.newton_tol) {
        return Err(fail(format!(
            "Newton did not reach {:e} in {} iterations (residual {norm:e})",
            config.newton_tol, config.newton_max_iter
        )));
    }
    check_density(&dens, t_new)?;
    let phi_dot: Vec<f64> = x
        .iter()
        .zip(&anchor)
        .map(|(x, a)| (x - a) / c + beta * x)
        .collect();
    let next = FlowState {
        t: t_new,
        phi: RadialField::new(x, FieldKind::Potential)?,
        phi_dot: RadialField::new(phi_dot, FieldKind::Potential)?,
        density: RadialField::new(dens, FieldKind::Density)?,
        eps: state.eps,
        beta,
    };
    Ok((
        next,
        StepInfo {
            newton_iters: iters,
            residual: norm,
        },
    ))
}

/// Advances by `dt`, halving into substeps on failure down to `dt_min`.
fn advance(
    state: &FlowState,
    geom: &ConeGeometry,
    setup: &FlowSetup,
    config: &FlowConfig,
    dt: f64,
    out: &mut Vec<(FlowState, StepInfo, f64)>,
) -> Result<()> {
    match step(state, geom, setup, config, dt) {
        Ok((next, info)) => {
            out.push((next, info, dt));
            Ok(())
        }
        Err(ConeError::StepFailed { t, reason, .. }) => {
            let half = 0.5 * dt;
            if half < config.dt_min {
                return Err(ConeError::StepFailed {
                    t,
                    reason: format!("{reason}; dt floor {:e} reached", config.dt_min),
                    suggested_dt: half,
                });
            }
            advance(state, geom, setup, config, half, out)?;
            let mid = out.last().expect("substep recorded").0.clone();
            advance(&mid, geom, setup, config, half, out)
        }
        Err(e) => Err(e),
    }
}

/// Runs the flow from the smoothed potential `phi_hat` (relative to `omega_0`).
pub fn run(geom: &ConeGeometry, config: &FlowConfig, phi_hat: &RadialField) -> Result<Trajectory> {
    config.validate()?;
    let setup = FlowSetup::new(geom, config.reference)?;
    let phi0 = setup.initial_potential(&phi_hat.values);
    let state = initial_state(geom, &setup, phi0, 0.0)?;
    run_from(geom, config, &setup, state)
}

/// Runs from an arbitrary state up to `config.t_end`.
pub fn run_from(
    geom: &ConeGeometry,
    config: &FlowConfig,
    setup: &FlowSetup,
    start: FlowState,
) -> Result<Trajectory> {
    config.validate()?;
    let beta = geom.beta;
    let t0 = start.t;
    let reference = geom.omega_eps_density().values;
    let phidot0 = start.phi_dot.sup_abs();
    let initial_trace = trace_monitors(&start.density.values, &reference);
    let mut traj = Trajectory {
        config: *config,
        eps: geom.eps,
        beta,
        reference: setup.reference,
        initial_sup_phi_dot: phidot0,
        initial_trace,
        states: vec![start.clone()],
        diagnostics: Vec::new(),
    };
    let n_steps = ((config.t_end - t0) / config.dt - 1e-9).ceil().max(0.0) as usize;
    let mut state = start;
    let mut sup_v_prev = phidot0 * (-beta * t0).exp();
    let mut subs = Vec::new();
    for k in 0..n_steps {
        let target = (t0 + (k + 1) as f64 * config.dt).min(config.t_end);
        let dt = target - state.t;
        subs.clear();
        advance(&state, geom, setup, config, dt, &mut subs)?;
        for (next, info, h) in subs.drain(..) {
            let sup_dot = next.phi_dot.sup_abs();
            let sup_v = sup_dot * (-beta * next.t).exp();
            let bound = (beta * (next.t - t0)).exp() * phidot0 + GROWTH_TOL;
            if sup_dot > bound {
                return Err(ConeError::MaximumPrinciple {
                    t: next.t,
                    detail: format!("sup|phi'| = {sup_dot:e} exceeds {bound:e}"),
                });
            }
            if sup_v > sup_v_prev + MONOTONE_TOL {
                return Err(ConeError::MaximumPrinciple {
                    t: next.t,
                    detail: format!("sup|v| grew from {sup_v_prev:e} to {sup_v:e}"),
                });
            }
            sup_v_prev = sup_v;
            let dens = &next.density.values;
            let (trace_sup, inv_trace_sup) = trace_monitors(dens, &reference);
            let r_min = scalar_curvature(&geom.grid, dens)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            let vol_rate_max = dens
                .iter()
                .zip(&state.density.values)
                .map(|(a, b)| (a.ln() - b.ln()) / h)
                .fold(f64::NEG_INFINITY, f64::max);
            traj.diagnostics.push(StepDiagnostic {
                t: next.t,
                dt: h,
                newton_iters: info.newton_iters,
                residual: info.residual,
                sup_phi_dot: sup_dot,
                sup_v,
                min_density: next.density.inf(),
                area_defect: geom.grid.mean(dens) - 1.0,
                trace_sup,
                inv_trace_sup,
                r_min,
                vol_rate_max,
            });
            state = next;
        }
        if (k + 1) % config.save_every == 0 || k + 1 == n_steps {
            traj.states.push(state.clone());
        }
    }
    Ok(traj)
}

/// `v = e^{-beta t} phi'` at the stored times, with the discrete heat
/// residual `(v_k - v_{k-1}) / dt - Delta_{phi_k} v_k` (zero for the first).
pub fn twisted_potential(traj: &Trajectory, geom: &ConeGeometry) -> Vec<(f64, RadialField, f64)> {
    let mut out: Vec<(f64, RadialField, f64)> = Vec::with_capacity(traj.states.len());
    for s in &traj.states {
        let w = (-traj.beta * s.t).exp();
        let v: Vec<f64> = s.phi_dot.values.iter().map(|x| w * x).collect();
        let res = match out.last() {
            None => 0.0,
            Some((tp, vp, _)) => {
                let dt = s.t - tp;
                let lap = geom.grid.apply_laplacian(&v);
                let mut r: f64 = 0.0;
                for i in 0..v.len() {
                    r = r.max(((v[i] - vp.values[i]) / dt - lap[i] / s.density.values[i]).abs());
                }
                r
            }
        };
        out.push((s.t, RadialField { values: v, kind: FieldKind::Potential }, res));
    }
    out
}

/// Log-density `F` at the state, from `phi' - beta phi - h` and from the
/// density directly; errors if they disagree beyond `tol`.
pub fn restart_datum(state: &FlowState, geom: &ConeGeometry, setup: &FlowSetup, tol: f64) -> Result<RadialField> {
    let phi0 = setup.to_omega0(&state.phi.values);
    let formula: Vec<f64> = (0..phi0.len())
        .map(|i| state.phi_dot.values[i] - geom.beta * phi0[i] - setup.h[i])
        .collect();
    let direct: Vec<f64> = state
        .density
        .values
        .iter()
        .zip(geom.cone_log_term())
        .map(|(d, l)| d.ln() + l)
        .collect();
    let gap = formula
        .iter()
        .zip(&direct)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if !(gap <= tol) {
        return Err(ConeError::Consistency(format!(
            "restart datum disagreement {gap:e} at t = {}",
            state.t
        )));
    }
    RadialField::new(direct, FieldKind::LogDensity)
}
