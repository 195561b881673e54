//! Canonical polar coordinates for the regularized cone metric
//! `beta^2 (|z|^2 + eps)^(beta-1) |dz|^2`.
//!
//! With `rho = |z|` the arclength coordinate solves
//! `ds/drho = beta (rho^2 + eps)^(-(1-beta)/2)`, `s(0) = 0`, and the metric
//! becomes `ds^2 + a s^2 dtheta^2` with
//! `a = beta^2 rho^2 / ((rho^2 + eps)^(1-beta) s^2) = beta^2 / u^2`,
//! `u = (rho^2 + eps)^((1-beta)/2) s / rho`. The coefficient satisfies
//! `beta^2 < a <= 1`.
//!
//! For `eps > 0` the ODE is integrated with classical RK4 at a fixed step in
//! the stretched variable `rho = sqrt(eps) sinh(xi)`, in which the right-hand
//! side `beta (sqrt(eps) cosh xi)^beta` is smooth and slowly varying down to
//! `rho = 0`, so the tip needs no special start.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConeError, Result};

/// Slack used by the bound checks.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarChart {
    pub beta: f64,
    pub eps: f64,
    pub step: f64,
    pub rho_nodes: Vec<f64>,
    pub s_vals: Vec<f64>,
    pub a_vals: Vec<f64>,
    pub u_vals: Vec<f64>,
}

fn ds_drho(beta: f64, eps: f64, rho: f64) -> f64 {
    beta * (rho * rho + eps).powf(-(1.0 - beta) / 2.0)
}

fn u_of(beta: f64, eps: f64, rho: f64, s: f64) -> f64 {
    (rho * rho + eps).powf((1.0 - beta) / 2.0) * s / rho
}

pub fn integrate_polar(beta: f64, eps: f64, rho_max: f64, step: f64) -> Result<PolarChart> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(ConeError::domain(format!("beta = {beta} outside (0, 1]")));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(ConeError::domain(format!("eps = {eps} must be >= 0")));
    }
    if !(rho_max > 0.0) || !rho_max.is_finite() {
        return Err(ConeError::domain("rho_max must be > 0"));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(ConeError::domain(format!("step = {step} must be > 0")));
    }
    let mut chart = PolarChart {
        beta,
        eps,
        step,
        rho_nodes: Vec::new(),
        s_vals: Vec::new(),
        a_vals: Vec::new(),
        u_vals: Vec::new(),
    };
    if eps == 0.0 || beta == 1.0 {
        // closed forms: s = rho^beta (eps = 0), s = rho (beta = 1); both give v = rho, u = 1
        let count = (rho_max / step).ceil().max(1.0) as usize;
        for k in 1..=count {
            let rho = if k == count { rho_max } else { k as f64 * step };
            let s = if beta == 1.0 { rho } else { rho.powf(beta) };
            chart.push(rho, s, 1.0);
        }
        return Ok(chart);
    }
    let root = eps.sqrt();
    let xi_max = (rho_max / root).asinh();
    let count = (xi_max / step).ceil().max(1.0) as usize;
    let h = xi_max / count as f64;
    let rhs = |xi: f64| beta * (root * xi.cosh()).powf(beta);
    let mut s = 0.0;
    for k in 0..count {
        let xi = k as f64 * h;
        let k1 = rhs(xi);
        let k2 = rhs(xi + 0.5 * h);
        let k4 = rhs(xi + h);
        // the right-hand side does not depend on s, so k3 = k2
        s += h / 6.0 * (k1 + 4.0 * k2 + k4);
        let rho = if k + 1 == count { rho_max } else { root * ((k + 1) as f64 * h).sinh() };
        chart.push(rho, s, u_of(beta, eps, rho, s));
    }
    Ok(chart)
}

impl PolarChart {
    fn push(&mut self, rho: f64, s: f64, u: f64) {
        self.rho_nodes.push(rho);
        self.s_vals.push(s);
        self.u_vals.push(u);
        self.a_vals.push(self.beta * self.beta / (u * u));
    }

    pub fn rho_max(&self) -> f64 {
        *self.rho_nodes.last().unwrap_or(&0.0)
    }

    /// `s(rho)` by cubic Hermite interpolation with the exact slope.
    pub fn s_at(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0) || rho > self.rho_max() * (1.0 + 1e-14) {
            return Err(ConeError::domain(format!(
                "rho = {rho} outside chart range (0, {}]",
                self.rho_max()
            )));
        }
        if self.eps == 0.0 || self.beta == 1.0 {
            return Ok(if self.beta == 1.0 { rho } else { rho.powf(self.beta) });
        }
        let k = self.rho_nodes.partition_point(|&r| r < rho);
        let (r0, s0) = if k == 0 { (0.0, 0.0) } else { (self.rho_nodes[k - 1], self.s_vals[k - 1]) };
        let k = k.min(self.rho_nodes.len() - 1);
        let (r1, s1) = (self.rho_nodes[k], self.s_vals[k]);
        if rho == r1 {
            return Ok(s1);
        }
        let d0 = ds_drho(self.beta, self.eps, r0);
        let d1 = ds_drho(self.beta, self.eps, r1);
        let w = r1 - r0;
        let t = (rho - r0) / w;
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        Ok(h00 * s0 + h10 * w * d0 + h01 * s1 + h11 * w * d1)
    }

    pub fn u_at(&self, rho: f64) -> Result<f64> {
        let s = self.s_at(rho)?;
        Ok(u_of(self.beta, self.eps, rho, s))
    }
}

/// Interpolated `a_eps(rho)`; fails if the value leaves `(beta^2, 1]`.
pub fn coefficient_a(chart: &PolarChart, rho: f64) -> Result<f64> {
    if chart.beta == 1.0 || chart.eps == 0.0 {
        chart.s_at(rho)?;
        return Ok(chart.beta * chart.beta);
    }
    let u = chart.u_at(rho)?;
    let a = chart.beta * chart.beta / (u * u);
    let lo = chart.beta * chart.beta;
    let strict_ok = if chart.eps == 0.0 { a >= lo - BOUND_SLACK } else { a > lo - BOUND_SLACK };
    if !strict_ok || a > 1.0 + BOUND_SLACK {
        return Err(ConeError::Consistency(format!(
            "a = {a} at rho = {rho} violates beta^2 < a <= 1"
        )));
    }
    Ok(a)
}

/// Result of the comparison argument `u in [beta, 1)`, `beta rho <= v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `min (1 - u)`.
    pub min_upper_margin: f64,
    /// `min (u - beta)`.
    pub min_lower_margin: f64,
    /// `min (v - beta rho)` with `v = u rho`.
    pub min_v_margin: f64,
    /// `beta = 1` or `eps = 0`: `u = 1` identically and the strict upper
    /// bound degenerates to equality.
    pub degenerate_branch: bool,
    pub violations: Vec<usize>,
    pub passed: bool,
}

pub fn comparison_check(chart: &PolarChart) -> ComparisonReport {
    let beta = chart.beta;
    let degenerate = beta == 1.0 || chart.eps == 0.0;
    let mut report = ComparisonReport {
        min_upper_margin: f64::INFINITY,
        min_lower_margin: f64::INFINITY,
        min_v_margin: f64::INFINITY,
        degenerate_branch: degenerate,
        violations: Vec::new(),
        passed: true,
    };
    for (k, (&u, &rho)) in chart.u_vals.iter().zip(&chart.rho_nodes).enumerate() {
        let upper = 1.0 - u;
        let lower = u - beta;
        let vm = u * rho - beta * rho;
        report.min_upper_margin = report.min_upper_margin.min(upper);
        report.min_lower_margin = report.min_lower_margin.min(lower);
        report.min_v_margin = report.min_v_margin.min(vm);
        let upper_bad = !degenerate && upper <= 0.0;
        let lower_bad = lower < -BOUND_SLACK || vm < -BOUND_SLACK * rho.max(1.0);
        if upper_bad || lower_bad {
            report.violations.push(k);
        }
    }
    report.passed = report.violations.is_empty();
    report
}

/// Pinching of the pulled-back cone metric between multiples of the
/// Euclidean metric `ds^2 + s^2 dtheta^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiIsometryCertificate {
    pub beta: f64,
    pub eps: f64,
    /// `min a`: the metric dominates `lower * Euclidean`.
    pub lower: f64,
    /// `max(1, max a)`: the metric is dominated by `upper * Euclidean`.
    pub upper: f64,
    pub violations: Vec<usize>,
    pub passed: bool,
}

pub fn quasi_isometry_certificate(chart: &PolarChart) -> QuasiIsometryCertificate {
    let b2 = chart.beta * chart.beta;
    let mut lower = f64::INFINITY;
    let mut max_a: f64 = 1.0;
    let mut violations = Vec::new();
    for (k, &a) in chart.a_vals.iter().enumerate() {
        lower = lower.min(a);
        max_a = max_a.max(a);
        let lower_ok = if chart.eps == 0.0 || chart.beta == 1.0 { a >= b2 - BOUND_SLACK } else { a > b2 - BOUND_SLACK };
        if !lower_ok || a > 1.0 + BOUND_SLACK {
            violations.push(k);
        }
    }
    QuasiIsometryCertificate {
        beta: chart.beta,
        eps: chart.eps,
        lower,
        upper: max_a,
        passed: violations.is_empty(),
        violations,
    }
}

/// Step-halving study: max changes of `s` and `a` at shared nodes between
/// `step` and `step / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub max_ds: f64,
    pub max_da: f64,
}

pub fn refinement_check(beta: f64, eps: f64, rho_max: f64, step: f64) -> Result<RefinementReport> {
    let coarse = integrate_polar(beta, eps, rho_max, step)?;
    let fine = integrate_polar(beta, eps, rho_max, step / 2.0)?;
    let mut rep = RefinementReport { max_ds: 0.0, max_da: 0.0 };
    for (k, (&s, &a)) in coarse.s_vals.iter().zip(&coarse.a_vals).enumerate() {
        let j = if eps == 0.0 || beta == 1.0 {
            fine.rho_nodes.partition_point(|&r| r < coarse.rho_nodes[k] - 1e-15)
        } else {
            2 * k + 1
        };
        let j = j.min(fine.s_vals.len() - 1);
        rep.max_ds = rep.max_ds.max((s - fine.s_vals[j]).abs());
        rep.max_da = rep.max_da.max((a - fine.a_vals[j]).abs());
    }
    Ok(rep)
}

/// Writes `(rho, s, a, u)` rows with a header.
pub fn write_chart_csv(chart: &PolarChart, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rho", "s", "a", "u"])?;
    for k in 0..chart.rho_nodes.len() {
        w.write_record([
            crate::io::fmt_f64(chart.rho_nodes[k]),
            crate::io::fmt_f64(chart.s_vals[k]),
            crate::io::fmt_f64(chart.a_vals[k]),
            crate::io::fmt_f64(chart.u_vals[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chart_csv(path: &Path, beta: f64, eps: f64, step: f64) -> Result<PolarChart> {
    let mut r = csv::Reader::from_path(path)?;
    let mut chart = PolarChart {
        beta,
        eps,
        step,
        rho_nodes: vec![],
        s_vals: vec![],
        a_vals: vec![],
        u_vals: vec![],
    };
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| ConeError::Io("short row".into()))?
                .parse::<f64>()
                .map_err(|e| ConeError::Io(e.to_string()))
        };
        chart.rho_nodes.push(get(0)?);
        chart.s_vals.push(get(1)?);
        chart.a_vals.push(get(2)?);
        chart.u_vals.push(get(3)?);
    }
    Ok(chart)
}

impl std::fmt::Display for QuasiIsometryCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "beta={} eps={:e}: {:.12} <= a <= {:.12} [{}]",
            self.beta,
            self.eps,
            self.lower,
            self.upper,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}
