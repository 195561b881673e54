//! Monitored quantities: traces, scalar curvature, Hölder seminorms, the
//! Poincaré constant and the comparison probe for uniqueness.
//!
//! Curvature convention: `R = (1 - Delta_0 log rho) / rho` for the metric
//! `rho omega_0`, so the round sphere of area `4 pi` has `R = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConeError, Result};
use crate::flow::{Reference, Trajectory};
use crate::geometry::{section_norm_sq, ConeGeometry};
use crate::grid::{argmax, RadialGrid};

/// `(sup tr_{omega_eps} omega_phi, sup tr_{omega_phi} omega_eps)`; in one
/// complex dimension both traces are density ratios.
pub fn trace_monitors(density: &[f64], reference: &[f64]) -> (f64, f64) {
    density
        .iter()
        .zip(reference)
        .fold((0.0f64, 0.0f64), |(a, b), (d, r)| (a.max(d / r), b.max(r / d)))
}

/// Pointwise trace, inverse trace and determinant of `omega_phi` against a
/// reference metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFields {
    pub trace: Vec<f64>,
    pub inv_trace: Vec<f64>,
    pub det: Vec<f64>,
}

pub fn trace_fields(density: &[f64], reference: &[f64]) -> Result<TraceFields> {
    if density.len() != reference.len() {
        return Err(ConeError::Mismatch("trace field lengths".into()));
    }
    for (node, (&d, &r)) in density.iter().zip(reference).enumerate() {
        if !(d > 0.0) {
            return Err(ConeError::NonPositiveDensity { node, value: d });
        }
        if !(r > 0.0) {
            return Err(ConeError::NonPositiveDensity { node, value: r });
        }
    }
    let trace: Vec<f64> = density.iter().zip(reference).map(|(d, r)| d / r).collect();
    let inv_trace = density.iter().zip(reference).map(|(d, r)| r / d).collect();
    Ok(TraceFields {
        det: trace.clone(),
        trace,
        inv_trace,
    })
}

/// `(sum 1/lambda_i)^{n-1} >= sum lambda_i / prod lambda_k`, up to a
/// relative slack of `4 n` machine epsilons.
pub fn eigenvalue_inequality(lambdas: &[f64]) -> Result<bool> {
    let n = lambdas.len();
    if !(2..=16).contains(&n) {
        return Err(ConeError::domain(format!("tuple length {n} outside 2..=16")));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(ConeError::domain(format!("eigenvalue {l} is not positive")));
    }
    let inv: f64 = lambdas.iter().map(|l| 1.0 / l).sum();
    let lhs = inv.powi(n as i32 - 1);
    let rhs = lambdas.iter().sum::<f64>() / lambdas.iter().product::<f64>();
    let slack = 4.0 * n as f64 * f64::EPSILON * lhs.abs().max(rhs.abs());
    Ok(lhs >= rhs - slack)
}

/// The quantity `log tr_{omega_eps} omega_phi + B Psi_{eps,rho} - A phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiuReport {
    pub a: f64,
    pub b: f64,
    pub field: Vec<f64>,
    pub argmax: usize,
    pub max: f64,
    /// `tr_{omega_phi} omega_eps` at the argmax.
    pub inv_trace_at_max: f64,
}

/// `phi` is the potential relative to `omega_eps`.
pub fn siu_quantity(geom: &ConeGeometry, density: &[f64], phi: &[f64], a: f64, b: f64) -> Result<SiuReport> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(ConeError::domain("Siu constants must be nonnegative"));
    }
    let reference = geom.omega_eps_density().values;
    let tf = trace_fields(density, &reference)?;
    let psi = geom.barrier_field(geom.rho_exp)?;
    let field: Vec<f64> = (0..phi.len())
        .map(|i| tf.trace[i].ln() + b * psi[i] - a * phi[i])
        .collect();
    let k = argmax(&field);
    Ok(SiuReport {
        a,
        b,
        max: field[k],
        argmax: k,
        inv_trace_at_max: tf.inv_trace[k],
        field,
    })
}

/// Scalar curvature of `density * omega_0`.
pub fn scalar_curvature(grid: &RadialGrid, density: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = density.iter().map(|d| d.ln()).collect();
    grid.apply_laplacian(&logs)
        .iter()
        .zip(density)
        .map(|(l, d)| (1.0 - l) / d)
        .collect()
}

/// Curvature and volume-growth monitors over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    /// `min t R_min` over the recorded steps.
    pub r_t_min: f64,
    pub r_t_min_at: f64,
    /// Smallest `C` with `dlog vol / dt <= C / t + beta` at every step.
    pub c_vol: f64,
    /// Largest volume rate on the second half of the run.
    pub late_rate: f64,
    /// Time range where the rate exceeds `late_rate`, i.e. where a
    /// time-independent bound fitted late in the run fails.
    pub constant_form_violation: Option<(f64, f64)>,
}

pub fn curvature_report(traj: &Trajectory) -> Result<CurvatureReport> {
    let d = &traj.diagnostics;
    if d.is_empty() {
        return Err(ConeError::domain("no steps recorded"));
    }
    let t_end = d[d.len() - 1].t;
    let t_start = traj.states[0].t;
    let (mut r_t_min, mut r_t_min_at) = (f64::INFINITY, 0.0);
    let mut c_vol = f64::NEG_INFINITY;
    let mut late_rate = f64::NEG_INFINITY;
    for s in d {
        let t = s.t - t_start;
        if t * s.r_min < r_t_min {
            r_t_min = t * s.r_min;
            r_t_min_at = s.t;
        }
        c_vol = c_vol.max(t * (s.vol_rate_max - traj.beta));
        if s.t >= 0.5 * (t_start + t_end) {
            late_rate = late_rate.max(s.vol_rate_max);
        }
    }
    let over: Vec<f64> = d.iter().filter(|s| s.vol_rate_max > late_rate).map(|s| s.t).collect();
    let constant_form_violation = match (over.first(), over.last()) {
        (Some(&a), Some(&b)) => Some((a, b)),
        _ => None,
    };
    Ok(CurvatureReport {
        r_t_min,
        r_t_min_at,
        c_vol,
        late_rate,
        constant_form_violation,
    })
}

fn decimated(n: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

/// `sup |u(x) - u(y)| / d(x, y)^alpha` over all pairs of every 4th node plus
/// all adjacent pairs; `positions` are geodesic coordinates (increasing).
pub fn holder_seminorm(values: &[f64], positions: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let n = values.len();
    if n < 2 || positions.len() != n {
        return Err(ConeError::domain("Hölder seminorm needs at least two matching samples"));
    }
    let q = |i: usize, j: usize| {
        let d = (positions[i] - positions[j]).abs();
        if d > 0.0 {
            (values[i] - values[j]).abs() / d.powf(alpha)
        } else {
            0.0
        }
    };
    let idx = decimated(n, 4);
    let far = idx
        .par_iter()
        .enumerate()
        .map(|(k, &i)| idx[k + 1..].iter().fold(0.0f64, |m, &j| m.max(q(i, j))))
        .reduce(|| 0.0, f64::max);
    let near = (0..n - 1).fold(0.0f64, |m, i| m.max(q(i, i + 1)));
    Ok(far.max(near))
}

/// Parabolic seminorm with `d((x,t),(y,s)) = max(|x - y|, |t - s|^{1/2})`.
/// `values[k]` is the field at `times[k]`.
pub fn parabolic_holder(times: &[f64], values: &[Vec<f64>], positions: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let nt = times.len();
    if nt == 0 || values.len() != nt || positions.len() < 2 {
        return Err(ConeError::domain("empty slab"));
    }
    let n = positions.len();
    if values.iter().any(|v| v.len() != n) {
        return Err(ConeError::Mismatch("slab field length".into()));
    }
    let q = |k: usize, i: usize, l: usize, j: usize| {
        let d = (positions[i] - positions[j])
            .abs()
            .max((times[k] - times[l]).abs().sqrt());
        if d > 0.0 {
            (values[k][i] - values[l][j]).abs() / d.powf(alpha)
        } else {
            0.0
        }
    };
    let xs = decimated(n, (n / 128).max(4));
    let ts = decimated(nt, nt.div_ceil(32).max(1));
    let pts: Vec<(usize, usize)> = ts.iter().flat_map(|&k| xs.iter().map(move |&i| (k, i))).collect();
    let far = pts
        .par_iter()
        .enumerate()
        .map(|(a, &(k, i))| pts[a + 1..].iter().fold(0.0f64, |m, &(l, j)| m.max(q(k, i, l, j))))
        .reduce(|| 0.0, f64::max);
    let mut near: f64 = 0.0;
    for k in 0..nt {
        for i in 0..n {
            if i + 1 < n {
                near = near.max(q(k, i, k, i + 1));
            }
            if k + 1 < nt {
                near = near.max(q(k, i, k + 1, i));
            }
        }
    }
    Ok(far.max(near))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConeError::domain(format!("Hölder exponent {alpha} outside (0, 1)")))
    }
}

/// Seed of the Poincaré inverse iteration.
pub const POINCARE_SEED: u64 = 0x5eed;

/// `1/sqrt(lambda_1)` for `-Delta_{omega_eps}` on mean-zero functions, with
/// the real Laplacian (round sphere of area `4 pi`: `lambda_1 = 2`).
pub fn poincare_constant(geom: &ConeGeometry) -> Result<f64> {
    let rho = geom.omega_eps_density().values;
    first_eigenvalue(&geom.grid, &rho, POINCARE_SEED).map(|l| 1.0 / l.sqrt())
}

/// Smallest nonzero `lambda` of `K u = lambda M u`, `K` the Dirichlet energy
/// and `M = diag(cell * rho)`, by inverse iteration with deflation.
pub fn first_eigenvalue(grid: &RadialGrid, rho: &[f64], seed: u64) -> Result<f64> {
    let n = grid.len();
    let cells = grid.cells();
    let mass: f64 = cells.iter().zip(rho).map(|(c, r)| c * r).sum();
    let project = |u: &mut Vec<f64>| {
        let m: f64 = (0..n).map(|i| cells[i] * rho[i] * u[i]).sum::<f64>() / mass;
        u.iter_mut().for_each(|x| *x -= m);
        let norm = (0..n).map(|i| cells[i] * rho[i] * u[i] * u[i]).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    project(&mut u);
    let mut lambda = f64::INFINITY;
    for _ in 0..2000 {
        // K x = M u  <=>  Delta_h x = -rho u / 2
        let rhs: Vec<f64> = u.iter().zip(rho).map(|(x, r)| -0.5 * r * x).collect();
        let mut x = grid.integrate_flux(&rhs);
        project(&mut x);
        let next = grid.dirichlet_energy(&x);
        u = x;
        if (next - lambda).abs() <= 1e-13 * next {
            return Ok(next);
        }
        lambda = next;
    }
    Err(ConeError::Eigen(format!("inverse iteration stalled at {lambda}")))
}

/// One `a` of the uniqueness probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JeffresEntry {
    pub a: f64,
    /// `sup (-Delta_0 |S|^{2p})_+ / min rho_2`.
    pub k_bound: f64,
    /// `max (L_1 - L_2)`.
    pub s_max: f64,
    pub sup_series: Vec<(f64, f64)>,
    /// Largest `M(t) - envelope(t)`; nonpositive when the bound holds.
    pub max_excess: f64,
    pub envelope_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JeffresLedger {
    pub p: f64,
    pub entries: Vec<JeffresEntry>,
    /// Least-squares line through `(a, sup_t M_a(t))`.
    pub intercept: f64,
    pub slope: f64,
    /// `sup_t sup_x (phi_1 - phi_2)` measured directly.
    pub direct: f64,
}

/// Compares two runs with the same initial density and different `eps`,
/// both on the grid of `geom` and in the `omega_0` form.
pub fn jeffres_compare(
    g1: &ConeGeometry,
    t1: &Trajectory,
    g2: &ConeGeometry,
    t2: &Trajectory,
    a: f64,
    p: f64,
) -> Result<JeffresLedger> {
    if t1.reference != Reference::Omega0 || t2.reference != Reference::Omega0 {
        return Err(ConeError::Mismatch("comparison needs omega_0-form potentials".into()));
    }
    if g1.grid.spec() != g2.grid.spec() || t1.states.len() != t2.states.len() {
        return Err(ConeError::Mismatch("grids or horizons differ".into()));
    }
    for (s1, s2) in t1.states.iter().zip(&t2.states) {
        if (s1.t - s2.t).abs() > 1e-12 {
            return Err(ConeError::Mismatch("stored times differ".into()));
        }
    }
    if !(a > 0.0 && p > 0.0) {
        return Err(ConeError::domain("a and p must be positive"));
    }
    let grid = &g1.grid;
    let beta = g1.beta;
    let pw: Vec<f64> = grid.nodes().iter().map(|&s| section_norm_sq(s).powf(p)).collect();
    let lap = grid.apply_laplacian(&pw);
    let neg = lap.iter().fold(0.0f64, |m, l| m.max(-l));
    let min_rho2 = t2
        .diagnostics
        .iter()
        .map(|d| d.min_density)
        .fold(t2.states[0].density.inf(), f64::min);
    let k_bound = neg / min_rho2;
    let l1 = g1.cone_log_term();
    let l2 = g2.cone_log_term();
    let s_max = l1.iter().zip(&l2).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);

    let diff_sup = |a: f64| -> Vec<(f64, f64)> {
        t1.states
            .iter()
            .zip(&t2.states)
            .map(|(s1, s2)| {
                let m = (0..pw.len())
                    .map(|i| s1.phi.values[i] + a * pw[i] - s2.phi.values[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                (s1.t, m)
            })
            .collect()
    };
    let mut entries = Vec::new();
    for a in [a, 0.5 * a, 0.25 * a] {
        let series = diff_sup(a);
        let q = a * k_bound + s_max;
        let m0 = series[0].1;
        let t0 = series[0].0;
        let mut excess = f64::NEG_INFINITY;
        for &(t, m) in &series {
            let env = (m0 + q / beta) * (beta * (t - t0)).exp() - q / beta;
            excess = excess.max(m - env);
        }
        entries.push(JeffresEntry {
            a,
            k_bound,
            s_max,
            envelope_ok: excess <= 1e-8 * (1.0 + m0.abs()),
            max_excess: excess,
            sup_series: series,
        });
    }
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .map(|e| (e.a, e.sup_series.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    let (slope, intercept) = line_fit(&pts);
    let direct = diff_sup(0.0).iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(JeffresLedger {
        p,
        entries,
        intercept,
        slope,
        direct,
    })
}

fn line_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bullet {
    pub name: String,
    pub constant: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFlowCertificate {
    pub delta: f64,
    pub alpha: f64,
    pub bullets: Vec<Bullet>,
}

impl WeakFlowCertificate {
    pub fn passed(&self) -> bool {
        self.bullets.iter().all(|b| b.passed)
    }
}

/// Checks the defining bounds of a weak conical flow on the stored states:
/// a Hölder bound on `phi`, bounds on `phi'` and on both traces against
/// `omega_D` away from the divisor, and `omega_phi >= C omega_D` everywhere.
pub fn weak_flow_certificate(traj: &Trajectory, geom: &ConeGeometry, delta: f64, alpha: f64) -> Result<WeakFlowCertificate> {
    let dd = geom.donaldson_density()?.values;
    let pos = geom.grid.arclength(&dd);
    let times = traj.times();
    let phis: Vec<Vec<f64>> = traj.states.iter().map(|s| s.phi.values.clone()).collect();
    let holder = parabolic_holder(&times, &phis, &pos, alpha)? + phis.iter().map(|p| crate::grid::sup_abs(p)).fold(0.0, f64::max);
    let away = geom.grid.away_from_poles(delta);
    let (mut dot, mut tr, mut itr, mut lower) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for s in &traj.states {
        for &i in &away {
            dot = dot.max(s.phi_dot.values[i].abs());
            tr = tr.max(s.density.values[i] / dd[i]);
            itr = itr.max(dd[i] / s.density.values[i]);
        }
        for (d, r) in s.density.values.iter().zip(&dd) {
            lower = lower.min(d / r);
        }
    }
    let finite = |x: f64| x.is_finite();
    let bullets = vec![
        Bullet {
            name: "holder".into(),
            constant: holder,
            passed: finite(holder),
        },
        Bullet {
            name: "interior".into(),
            constant: dot.max(tr).max(itr),
            passed: finite(dot) && finite(tr) && finite(itr),
        },
        Bullet {
            name: "lower".into(),
            constant: lower,
            passed: lower > 0.0 && lower.is_finite(),
        },
    ];
    Ok(WeakFlowCertificate { delta, alpha, bullets })
}

/// Constants measured on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub eps: f64,
    pub trace_sup: f64,
    pub inv_trace_sup: f64,
    pub sup_phi_dot: f64,
    pub siu_max: f64,
    pub siu_a: f64,
    pub siu_b: f64,
    /// `tr_{omega_phi} omega_eps` at the Siu maximum, maximized over time.
    pub siu_inv_trace: f64,
    pub curvature: CurvatureReport,
    /// Spatial seminorm of the final potential in the `omega_D` distance.
    pub holder_phi: f64,
    /// Parabolic seminorm of the potential over the stored states.
    pub holder_phi_parabolic: f64,
    pub poincare: f64,
    pub certificate: WeakFlowCertificate,
}

/// `delta` is the divisor-exclusion radius (in `sigma`) of the certificate.
pub fn estimate_report(traj: &Trajectory, geom: &ConeGeometry, alpha: f64, delta: f64) -> Result<EstimateReport> {
    let d = &traj.diagnostics;
    let trace_sup = d.iter().map(|x| x.trace_sup).fold(traj.initial_trace.0, f64::max);
    let inv_trace_sup = d.iter().map(|x| x.inv_trace_sup).fold(traj.initial_trace.1, f64::max);
    let sup_phi_dot = d.iter().map(|x| x.sup_phi_dot).fold(traj.initial_sup_phi_dot, f64::max);
    let siu_a = 2.0 * (1.0 + sup_phi_dot);
    let siu_b = 1.0;
    let shift: Vec<f64> = if geom.barrier_scale.is_finite() {
        geom.barrier_field(geom.beta)?
            .iter()
            .map(|p| p / geom.barrier_scale)
            .collect()
    } else {
        vec![0.0; geom.grid.len()]
    };
    let (mut siu_max, mut siu_inv_trace) = (f64::NEG_INFINITY, 0.0f64);
    for s in &traj.states {
        // potential relative to omega_eps
        let phi: Vec<f64> = match traj.reference {
            Reference::Omega0 => s.phi.values.iter().zip(&shift).map(|(p, q)| p - q).collect(),
            Reference::OmegaEps => s.phi.values.clone(),
        };
        let r = siu_quantity(geom, &s.density.values, &phi, siu_a, siu_b)?;
        siu_max = siu_max.max(r.max);
        siu_inv_trace = siu_inv_trace.max(r.inv_trace_at_max);
    }
    let dd = geom.donaldson_density()?.values;
    let pos = geom.grid.arclength(&dd);
    let holder_phi = holder_seminorm(&traj.last().phi.values, &pos, alpha)?;
    let phis: Vec<Vec<f64>> = traj.states.iter().map(|s| s.phi.values.clone()).collect();
    let holder_phi_parabolic = parabolic_holder(&traj.times(), &phis, &pos, alpha)?;
    Ok(EstimateReport {
        eps: traj.eps,
        trace_sup,
        inv_trace_sup,
        sup_phi_dot,
        siu_max,
        siu_a,
        siu_b,
        siu_inv_trace,
        curvature: curvature_report(traj)?,
        holder_phi,
        holder_phi_parabolic,
        poincare: poincare_constant(geom)?,
        certificate: weak_flow_certificate(traj, geom, delta, alpha)?,
    })
}
