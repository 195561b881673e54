//! Background data: the sphere with two antipodal cone points, the
//! regularized cone potentials, and the model metrics built from them.
//!
//! All densities are cell averages relative to `omega_0` (see [`crate::grid`]).
//! The section `S` of the anticanonical bundle vanishing at both poles has
//! `|S|^2 = 4 sigma (1 - sigma)`, so `sup |S|^2 = 1` and its curvature form
//! is `omega_0` itself.

use serde::{Deserialize, Serialize};

use crate::error::{ConeError, Result};
use crate::grid::{FieldKind, GridSpec, RadialField, RadialGrid};
use crate::quad;

/// `|S|^2` as a function of `sigma`.
#[inline]
pub fn section_norm_sq(sigma: f64) -> f64 {
    4.0 * sigma * (1.0 - sigma)
}

fn check_angle(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(ConeError::domain(format!("beta = {beta} outside (0, 1]")));
    }
    Ok(())
}

/// `(eps + y)^beta - eps^beta` without cancellation for `y << eps`.
pub fn power_increment(beta: f64, eps: f64, y: f64) -> f64 {
    if eps == 0.0 {
        y.powf(beta)
    } else {
        eps.powf(beta) * (beta * (y / eps).ln_1p()).exp_m1()
    }
}

/// `chi_beta(eps + y) = beta int_0^y ((eps + x)^beta - eps^beta) / x dx`.
///
/// Integrated in `u = ln(1 + x/eps)`, where the integrand
/// `expm1(beta u) / (1 - e^{-u})` is smooth on the whole range.
pub fn chi_eval(beta: f64, eps: f64, y: f64) -> Result<f64> {
    check_angle(beta)?;
    if !(y >= 0.0) || !y.is_finite() {
        return Err(ConeError::domain(format!("chi argument y = {y} must be >= 0")));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(ConeError::domain(format!("eps = {eps} must be >= 0")));
    }
    if beta == 1.0 {
        return Ok(y);
    }
    if eps == 0.0 {
        return Ok(y.powf(beta));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let upper = (y / eps).ln_1p();
    let integrand = |u: f64| {
        if u == 0.0 {
            beta
        } else {
            (beta * u).exp_m1() / -(-u).exp_m1()
        }
    };
    let inner = quad::integrate(integrand, 0.0, upper, 1e-300, 1e-15)?;
    Ok(beta * eps.powf(beta) * inner)
}

/// `dz dzbar` density of `i ddbar chi_beta(eps + |z|^2)`: `beta^2 (eps + y)^(beta - 1)`.
pub fn regularized_cone_density(beta: f64, eps: f64, y: f64) -> Result<f64> {
    check_angle(beta)?;
    if !(y >= 0.0) || !(eps >= 0.0) {
        return Err(ConeError::domain("negative argument to cone density"));
    }
    if eps == 0.0 && y == 0.0 {
        if beta == 1.0 {
            return Ok(1.0);
        }
        return Err(ConeError::Singularity);
    }
    Ok(beta * beta * (eps + y).powf(beta - 1.0))
}

/// Construction parameters; `barrier_scale: None` selects N automatically and
/// `delta: None` uses `1/N`, which makes `omega_D` the `eps -> 0` limit of
/// `omega_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub beta: f64,
    pub eps: f64,
    pub barrier_scale: Option<f64>,
    pub delta: Option<f64>,
    pub rho_exp: Option<f64>,
    pub grid: GridSpec,
}

impl GeometryParams {
    pub fn new(beta: f64, eps: f64, grid: GridSpec) -> Self {
        GeometryParams {
            beta,
            eps,
            barrier_scale: None,
            delta: None,
            rho_exp: None,
            grid,
        }
    }
}

/// Immutable problem datum.
#[derive(Debug, Clone)]
pub struct ConeGeometry {
    pub beta: f64,
    pub eps: f64,
    /// N in `omega_eps = omega_0 + (1/N) i ddbar chi_beta(eps + |S|^2)`;
    /// `f64::INFINITY` switches the regularizing term off.
    pub barrier_scale: f64,
    /// Coefficient of `i ddbar |S|^{2 beta}` in the Donaldson model metric.
    pub delta: f64,
    pub rho_exp: f64,
    pub grid: RadialGrid,
    /// `c` in `|S|^2 = c |z|^2 / (1 + |z|^2)^2`.
    pub s_norm: f64,
    omega_eps: Vec<f64>,
    weight: Vec<f64>,
}

impl ConeGeometry {
    pub fn new(params: GeometryParams) -> Result<Self> {
        check_angle(params.beta)?;
        if !(params.eps >= 0.0 && params.eps <= 1.0) {
            return Err(ConeError::domain(format!("eps = {} outside [0, 1]", params.eps)));
        }
        let rho_exp = params.rho_exp.unwrap_or(0.25f64.min(0.5 * params.beta));
        if !(rho_exp > 0.0 && (rho_exp < params.beta || params.beta == 1.0 && rho_exp < 1.0)) {
            return Err(ConeError::domain(format!(
                "barrier exponent {rho_exp} must lie in (0, beta)"
            )));
        }
        let grid = RadialGrid::new(params.grid)?;
        let (barrier_scale, omega_eps) = match params.barrier_scale {
            Some(n) => {
                if !(n > 0.0) {
                    return Err(ConeError::domain(format!("N = {n} must be > 0")));
                }
                let dens = omega_eps_values(&grid, params.beta, params.eps, n);
                if let Some((node, &value)) = dens.iter().enumerate().find(|(_, v)| **v <= 0.0) {
                    return Err(ConeError::NTooSmall {
                        node,
                        sigma: grid.nodes()[node],
                        value,
                    });
                }
                (n, dens)
            }
            None => {
                // double N from 10 until min density keeps a 10% margin
                let mut n = 10.0;
                loop {
                    let dens = omega_eps_values(&grid, params.beta, params.eps, n);
                    let min = dens.iter().cloned().fold(f64::INFINITY, f64::min);
                    if min >= 0.1 {
                        break (n, dens);
                    }
                    n *= 2.0;
                    if n > 1e12 {
                        return Err(ConeError::domain("no admissible N found"));
                    }
                }
            }
        };
        let delta = params.delta.unwrap_or(1.0 / barrier_scale);
        if !(delta >= 0.0) {
            return Err(ConeError::domain("delta must be >= 0"));
        }
        let weight = cone_weight_values(&grid, params.beta, params.eps)?;
        Ok(ConeGeometry {
            beta: params.beta,
            eps: params.eps,
            barrier_scale,
            delta,
            rho_exp,
            grid,
            s_norm: 4.0,
            omega_eps,
            weight,
        })
    }

    pub fn params(&self) -> GeometryParams {
        GeometryParams {
            beta: self.beta,
            eps: self.eps,
            barrier_scale: Some(self.barrier_scale),
            delta: Some(self.delta),
            rho_exp: Some(self.rho_exp),
            grid: self.grid.spec(),
        }
    }

    /// Same geometry at a different regularization.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        ConeGeometry::new(GeometryParams { eps, ..self.params() })
    }

    pub fn section_norm_sq_nodes(&self) -> Vec<f64> {
        self.grid.nodes().iter().map(|&s| section_norm_sq(s)).collect()
    }

    /// Density of `omega_eps` relative to `omega_0`.
    pub fn omega_eps_density(&self) -> RadialField {
        RadialField {
            values: self.omega_eps.clone(),
            kind: FieldKind::Density,
        }
    }

    /// `Psi_{eps,rho} = chi_rho(eps + |S|^2)` at a node.
    pub fn barrier_psi(&self, rho_exp: f64, node: usize) -> Result<f64> {
        if !(rho_exp > 0.0 && rho_exp <= self.beta) {
            return Err(ConeError::domain(format!("barrier exponent {rho_exp} outside (0, beta]")));
        }
        let sigma = *self
            .grid
            .nodes()
            .get(node)
            .ok_or_else(|| ConeError::domain(format!("node {node} out of range")))?;
        chi_eval(rho_exp, self.eps, section_norm_sq(sigma))
    }

    /// `Psi_{eps,rho}` on every node (computed on the lower half, mirrored).
    pub fn barrier_field(&self, rho_exp: f64) -> Result<Vec<f64>> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            if 2 * i < n {
                out[i] = self.barrier_psi(rho_exp, i)?;
            } else {
                out[i] = out[n - 1 - i];
            }
        }
        Ok(out)
    }

    /// Density of `omega_D = omega_0 + delta i ddbar |S|^{2 beta}`.
    pub fn donaldson_density(&self) -> Result<RadialField> {
        let beta = self.beta;
        let delta = self.delta;
        let corr = self
            .grid
            .cell_average_of_flux(|s| beta * section_norm_sq(s).powf(beta) * (1.0 - 2.0 * s));
        let values: Vec<f64> = corr.iter().map(|c| 1.0 + delta * c).collect();
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(ConeError::DeltaTooLarge { node, value });
        }
        Ok(RadialField {
            values,
            kind: FieldKind::Density,
        })
    }

    /// Cell averages of the standard cone density `beta^2 |z|^{2beta-2}` in
    /// the chart around the pole `sigma = 0`, relative to `omega_0`.
    pub fn standard_cone_density_near_pole(&self, sigma_max: f64) -> Result<Vec<(usize, f64)>> {
        let beta = self.beta;
        let f = move |s: f64| 0.25 * beta * beta * s.powf(beta - 1.0) * (1.0 - s).powf(-1.0 - beta);
        let reg = move |s: f64| 0.25 * beta * beta * (1.0 - s).powf(-1.0 - beta);
        let faces = self.grid.faces();
        let cells = self.grid.cells();
        let mut out = Vec::new();
        for (i, &s) in self.grid.nodes().iter().enumerate() {
            if s >= sigma_max {
                break;
            }
            let integral = if i == 0 {
                quad::integrate_power_endpoint(reg, beta, faces[1], 1e-300, 1e-13)?
            } else {
                quad::integrate(f, faces[i], faces[i + 1], 1e-300, 1e-13)?
            };
            out.push((i, integral / cells[i]));
        }
        Ok(out)
    }

    /// Band constant `C` with `omega_D / cone in [1/C, C]` on `sigma < sigma_max`.
    pub fn donaldson_band(&self, sigma_max: f64) -> Result<f64> {
        let dd = self.donaldson_density()?;
        let cone = self.standard_cone_density_near_pole(sigma_max)?;
        let mut c: f64 = 1.0;
        for (i, model) in cone {
            let r = dd.values[i] / model;
            c = c.max(r).max(1.0 / r);
        }
        Ok(c)
    }

    /// Cell averages of `(|S|^2 + eps)^(beta - 1)`.
    pub fn cone_weight(&self) -> &[f64] {
        &self.weight
    }

    /// The cell-averaged form of `(1 - beta) log(|S|^2 + eps)`, i.e. `-log W`.
    pub fn cone_log_term(&self) -> Vec<f64> {
        self.weight.iter().map(|w| -w.ln()).collect()
    }

    /// Ricci potential `h` making the flow's fixed points conical
    /// Kähler-Einstein: `i ddbar h = beta omega_0 + (1-beta) Theta - Ric(omega_0)`,
    /// normalized to mean zero against `omega_0`.
    pub fn compute_h(&self) -> Result<RadialField> {
        // Ric(omega_0) = omega_0 and Theta = omega_0 on the round sphere of area 4 pi.
        let curvature_0 = 1.0;
        let theta = 1.0;
        let rhs: Vec<f64> = vec![self.beta + (1.0 - self.beta) * theta - curvature_0; self.grid.len()];
        let h = solve_poisson(&self.grid, &rhs)?;
        RadialField::new(h, FieldKind::Potential)
    }
}

fn cone_weight_values(grid: &RadialGrid, beta: f64, eps: f64) -> Result<Vec<f64>> {
    if beta == 1.0 {
        return Ok(vec![1.0; grid.len()]);
    }
    let f = move |s: f64| (section_norm_sq(s) + eps).powf(beta - 1.0);
    let reg = move |s: f64| {
        if eps == 0.0 {
            (4.0 * (1.0 - s)).powf(beta - 1.0)
        } else {
            s.powf(1.0 - beta) * (section_norm_sq(s) + eps).powf(beta - 1.0)
        }
    };
    grid.cell_average_singular(f, beta, reg)
}

fn omega_eps_values(grid: &RadialGrid, beta: f64, eps: f64, n: f64) -> Vec<f64> {
    if n.is_infinite() {
        return vec![1.0; grid.len()];
    }
    let corr = grid.cell_average_of_flux(|s| {
        beta * power_increment(beta, eps, section_norm_sq(s)) * (1.0 - 2.0 * s)
    });
    corr.iter().map(|c| 1.0 + c / n).collect()
}

/// Pointwise ratio `b / a` of two densities: `tr_a b` in complex dimension one.
pub fn trace_ratio(a: &RadialField, b: &RadialField) -> Result<RadialField> {
    if a.len() != b.len() {
        return Err(ConeError::Mismatch("trace_ratio length".into()));
    }
    let mut out = Vec::with_capacity(a.len());
    for (i, (x, y)) in a.values.iter().zip(&b.values).enumerate() {
        if *x <= 0.0 {
            return Err(ConeError::NonPositiveDensity { node: i, value: *x });
        }
        if *y <= 0.0 {
            return Err(ConeError::NonPositiveDensity { node: i, value: *y });
        }
        out.push(y / x);
    }
    Ok(RadialField {
        values: out,
        kind: FieldKind::Density,
    })
}

/// Solves `Delta_0 u = rhs` with `u` of mean zero. `rhs` must have mean zero.
pub fn solve_poisson(grid: &RadialGrid, rhs: &[f64]) -> Result<Vec<f64>> {
    let scale = rhs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mean = grid.mean(rhs);
    if mean.abs() > 1e-10 * scale {
        return Err(ConeError::LinearSolve(format!(
            "incompatible right-hand side (mean {mean:e})"
        )));
    }
    let mut u = grid.integrate_flux(rhs);
    let m = grid.mean(&u);
    u.iter_mut().for_each(|x| *x -= m);
    let res = grid.apply_laplacian(&u);
    let err = res
        .iter()
        .zip(rhs)
        .fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
    if !(err <= 1e-8 * scale) {
        return Err(ConeError::LinearSolve(format!("residual {err:e} too large")));
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(beta: f64, eps: f64, n: usize) -> ConeGeometry {
        ConeGeometry::new(GeometryParams::new(beta, eps, GridSpec::uniform(n))).unwrap()
    }

    #[test]
    fn chi_analytic_branches() {
        assert_eq!(chi_eval(1.0, 0.5, 2.0).unwrap(), 2.0);
        assert!((chi_eval(0.5, 0.0, 4.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(chi_eval(0.5, 0.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn chi_domain_errors() {
        assert!(chi_eval(0.5, 0.1, -1.0).is_err());
        assert!(chi_eval(0.0, 0.1, 1.0).is_err());
        assert!(chi_eval(1.5, 0.1, 1.0).is_err());
        assert!(chi_eval(0.5, -0.1, 1.0).is_err());
    }

    #[test]
    fn chi_tends_to_cone_potential() {
        let y: f64 = 0.7;
        let exact = y.powf(0.4);
        let close = chi_eval(0.4, 1e-12, y).unwrap();
        // deficit ~ eps^beta log(y/eps)
        assert!((close - exact).abs() < 1e-3, "{close} {exact}");
    }

    #[test]
    fn cone_density_branches() {
        assert_eq!(regularized_cone_density(1.0, 0.3, 7.0).unwrap(), 1.0);
        assert!((regularized_cone_density(0.5, 0.0, 4.0).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(regularized_cone_density(0.5, 0.0, 0.0), Err(ConeError::Singularity));
    }

    #[test]
    fn omega_eps_preserves_area() {
        for &(b, e) in &[(1.0, 0.2), (0.5, 1e-3), (0.3, 0.0), (0.9, 1.0)] {
            let g = geom(b, e, 257);
            let d = g.omega_eps_density();
            let rel = g.grid.area(&d.values) / g.grid.total_area() - 1.0;
            assert!(rel.abs() < 1e-12, "beta {b} eps {e}: {rel:e}");
            assert!(d.inf() > 0.0);
        }
    }

    #[test]
    fn explicit_small_n_is_rejected() {
        let mut p = GeometryParams::new(0.5, 0.1, GridSpec::uniform(65));
        p.barrier_scale = Some(0.2);
        match ConeGeometry::new(p) {
            Err(ConeError::NTooSmall { node, .. }) => assert!(node > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn large_n_tends_to_round() {
        let mut p = GeometryParams::new(0.5, 0.01, GridSpec::uniform(65));
        p.barrier_scale = Some(1e9);
        let g = ConeGeometry::new(p).unwrap();
        let d = g.omega_eps_density();
        assert!(d.values.iter().all(|v| (v - 1.0).abs() < 1e-7));
    }

    #[test]
    fn barrier_values() {
        let g = geom(0.5, 0.0, 65);
        assert!((g.barrier_psi(0.25, 32).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(g.barrier_psi(0.25, 0).unwrap(), 0.0);
        assert!(g.barrier_psi(0.75, 3).is_err());
    }

    #[test]
    fn donaldson_cases() {
        let mut p = GeometryParams::new(0.5, 0.0, GridSpec::uniform(65));
        p.delta = Some(0.0);
        let g = ConeGeometry::new(p).unwrap();
        assert!(g.donaldson_density().unwrap().values.iter().all(|v| *v == 1.0));
        p.delta = Some(50.0);
        let g = ConeGeometry::new(p).unwrap();
        assert!(matches!(g.donaldson_density(), Err(ConeError::DeltaTooLarge { .. })));
    }

    #[test]
    fn h_vanishes_and_has_mean_zero() {
        for b in [1.0, 0.5, 0.3] {
            let g = geom(b, 0.01, 129);
            let h = g.compute_h().unwrap();
            assert!(h.sup_abs() < 1e-14);
            assert!(g.grid.mean(&h.values).abs() < 1e-14);
        }
    }

    #[test]
    fn cone_weight_integrates_power() {
        // eps = 0: int_0^1 (4 s (1-s))^{beta-1} ds = 4^{beta-1} B(beta, beta)
        let g = geom(0.5, 0.0, 101);
        let total = g.grid.mean(g.cone_weight());
        // B(1/2, 1/2) = pi
        assert!((total - 0.5 * std::f64::consts::PI).abs() < 1e-11, "{total}");
        let g1 = geom(1.0, 0.1, 33);
        assert!(g1.cone_weight().iter().all(|w| *w == 1.0));
    }

    #[test]
    fn trace_ratio_cases() {
        let a = RadialField::density(vec![1.0, 2.0, 3.0]).unwrap();
        let b = RadialField::density(vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(trace_ratio(&a, &a).unwrap().values, vec![1.0; 3]);
        assert_eq!(trace_ratio(&a, &b).unwrap().values, vec![2.0; 3]);
        let bad = RadialField { values: vec![1.0, 0.0, 1.0], kind: FieldKind::Density };
        assert!(trace_ratio(&bad, &a).is_err());
    }

    #[test]
    fn poisson_rejects_incompatible_rhs() {
        let g = RadialGrid::uniform(33).unwrap();
        assert!(solve_poisson(&g, &vec![1.0; 33]).is_err());
    }
}
