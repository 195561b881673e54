//! Rotationally symmetric reduction of the two-pointed sphere.
//!
//! Fields live on nodes of `sigma = |z|^2 / (1 + |z|^2)`, the moment
//! coordinate of the round metric `omega_0` of area `4 pi`. In this
//! coordinate `omega_0` has uniform area density, and for a radial function
//! `f` the complex Laplacian of `omega_0` is
//!
//! ```text
//! Delta_0 f = 1/2 d/dsigma ( sigma (1 - sigma) df/dsigma ).
//! ```
//!
//! Every node owns a control volume bounded by the midpoints to its
//! neighbours (the poles close the end cells). Densities relative to
//! `omega_0` are cell averages over these volumes, so the discrete
//! `i ddbar` of any bounded field integrates to exactly zero.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ConeError, Result};
use crate::linalg::Tridiag;
use crate::quad;

/// Node placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    /// `sigma = (2 xi)^q / 2` on the lower half, mirrored on the upper half.
    Graded { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub kind: GridKind,
}

impl GridSpec {
    pub fn uniform(n: usize) -> Self {
        GridSpec {
            n,
            kind: GridKind::Uniform,
        }
    }

    pub fn graded(n: usize, q: f64) -> Self {
        GridSpec {
            n,
            kind: GridKind::Graded { q },
        }
    }

    /// Grading that puts roughly eight cells inside `sigma < eps` at each pole.
    pub fn resolving(n: usize, eps: f64) -> Self {
        let half = ((n - 1) / 2).max(1) as f64;
        let q = ((4.0 / eps.max(1e-300)).ln() / half.ln()).max(1.0);
        if q <= 1.0 + 1e-12 {
            GridSpec::uniform(n)
        } else {
            GridSpec::graded(n, q)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    spec: GridSpec,
    nodes: Vec<f64>,
    faces: Vec<f64>,
    cells: Vec<f64>,
    weights: Vec<f64>,
}

/// `sigma (1 - sigma)`, the flux coefficient of `Delta_0`.
#[inline]
pub fn flux_coefficient(sigma: f64) -> f64 {
    sigma * (1.0 - sigma)
}

/// Antiderivative of the round arclength element `dsigma / sqrt(sigma(1-sigma))`.
#[inline]
fn round_arclength(sigma: f64) -> f64 {
    (2.0 * sigma - 1.0).clamp(-1.0, 1.0).asin()
}

impl RadialGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let n = spec.n;
        if n < 5 {
            return Err(ConeError::domain(format!("grid needs at least 5 nodes, got {n}")));
        }
        let map = |xi: f64| -> f64 {
            match spec.kind {
                GridKind::Uniform => xi,
                GridKind::Graded { q } => 0.5 * (2.0 * xi).powf(q),
            }
        };
        if let GridKind::Graded { q } = spec.kind {
            if !(q >= 1.0 && q.is_finite()) {
                return Err(ConeError::domain(format!("grading exponent {q} must be >= 1")));
            }
        }
        let mut nodes = vec![0.0; n];
        let last = (n - 1) as f64;
        for i in 0..n {
            if 2 * i < n {
                nodes[i] = map(i as f64 / last);
            }
        }
        for i in 0..n {
            if 2 * i > n - 1 {
                nodes[i] = 1.0 - nodes[n - 1 - i];
            }
        }
        if n % 2 == 1 {
            nodes[(n - 1) / 2] = 0.5;
        }
        for w in nodes.windows(2) {
            if w[1] <= w[0] {
                return Err(ConeError::domain("grid nodes not strictly increasing"));
            }
        }
        let mut faces = Vec::with_capacity(n + 1);
        faces.push(0.0);
        for w in nodes.windows(2) {
            faces.push(0.5 * (w[0] + w[1]));
        }
        faces.push(1.0);
        let cells: Vec<f64> = faces.windows(2).map(|w| w[1] - w[0]).collect();
        let weights = cells.iter().map(|c| 4.0 * PI * c).collect();
        Ok(RadialGrid {
            spec,
            nodes,
            faces,
            cells,
            weights,
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(GridSpec::uniform(n))
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Control-volume boundaries, `len() + 1` entries from 0 to 1.
    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    /// Control-volume lengths in `sigma` (they sum to 1).
    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Area weights: `4 pi` times the cell length.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_area(&self) -> f64 {
        4.0 * PI
    }

    /// Area of a density given relative to `omega_0`.
    pub fn area(&self, density: &[f64]) -> f64 {
        self.weights.iter().zip(density).map(|(w, r)| w * r).sum()
    }

    /// Normalized integral `(1/Vol) int f dvol_0`.
    pub fn mean(&self, values: &[f64]) -> f64 {
        self.cells.iter().zip(values).map(|(c, v)| c * v).sum()
    }

    /// Normalized integral of `f` against a density.
    pub fn mean_weighted(&self, values: &[f64], density: &[f64]) -> f64 {
        self.cells
            .iter()
            .zip(values)
            .zip(density)
            .map(|((c, v), r)| c * v * r)
            .sum()
    }

    /// Matrix of the discrete `Delta_0` (finite-volume divergence form).
    pub fn laplacian(&self) -> Tridiag {
        let n = self.len();
        let mut a = Tridiag::zeros(n);
        for i in 0..n - 1 {
            let c = flux_coefficient(self.faces[i + 1]) / (self.nodes[i + 1] - self.nodes[i]);
            a.upper[i] += 0.5 * c / self.cells[i];
            a.diag[i] -= 0.5 * c / self.cells[i];
            a.lower[i + 1] += 0.5 * c / self.cells[i + 1];
            a.diag[i + 1] -= 0.5 * c / self.cells[i + 1];
        }
        a
    }

    /// Discrete `Delta_0 u`.
    pub fn apply_laplacian(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut flux = vec![0.0; n + 1];
        for i in 0..n - 1 {
            flux[i + 1] = flux_coefficient(self.faces[i + 1]) * (u[i + 1] - u[i])
                / (self.nodes[i + 1] - self.nodes[i]);
        }
        (0..n)
            .map(|i| 0.5 * (flux[i + 1] - flux[i]) / self.cells[i])
            .collect()
    }

    /// Inverts `apply_laplacian` by marching the face fluxes from `sigma = 0`
    /// (where the flux vanishes). Returns the solution with `u[0] = 0`; the
    /// last equation holds only when `rhs` has zero mean.
    pub fn integrate_flux(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut u = vec![0.0; n];
        let (mut flux, mut comp) = (0.0f64, 0.0f64);
        for i in 0..n - 1 {
            // Neumaier summation of 2 * cell * rhs
            let term = 2.0 * self.cells[i] * rhs[i];
            let t = flux + term;
            comp += if flux.abs() >= term.abs() {
                (flux - t) + term
            } else {
                (term - t) + flux
            };
            flux = t;
            let dx = self.nodes[i + 1] - self.nodes[i];
            u[i + 1] = u[i] + (flux + comp) * dx / flux_coefficient(self.faces[i + 1]);
        }
        u
    }

    /// Real Dirichlet energy `int |grad u|^2 dA / (4 pi)`.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        (0..self.len() - 1)
            .map(|i| {
                let d = u[i + 1] - u[i];
                flux_coefficient(self.faces[i + 1]) * d * d / (self.nodes[i + 1] - self.nodes[i])
            })
            .sum()
    }

    /// Cell average of `Delta_0 f` given the analytic flux `sigma(1-sigma) f'`.
    pub fn cell_average_of_flux<F: Fn(f64) -> f64>(&self, flux: F) -> Vec<f64> {
        let fl: Vec<f64> = self.faces.iter().map(|&s| flux(s)).collect();
        (0..self.len())
            .map(|i| 0.5 * (fl[i + 1] - fl[i]) / self.cells[i])
            .collect()
    }

    /// Cell averages of a symmetric pointwise function that may carry an
    /// integrable `sigma^(p-1)` singularity at the poles. `regular` must be
    /// `sigma^(1-p) f(sigma)` near `sigma = 0` (bounded).
    pub fn cell_average_singular<F, G>(&self, f: F, p: f64, regular: G) -> Result<Vec<f64>>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64,
    {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            if 2 * i > n - 1 {
                out[i] = out[n - 1 - i];
                continue;
            }
            let (a, b) = (self.faces[i], self.faces[i + 1]);
            let integral = if i == 0 {
                quad::integrate_power_endpoint(&regular, p, b, 1e-300, 1e-13)?
            } else {
                quad::integrate(&f, a, b, 1e-300, 1e-13)?
            };
            out[i] = integral / self.cells[i];
        }
        Ok(out)
    }

    /// Cumulative meridian arclength from `sigma = 0` to each node for the
    /// metric with cell-averaged area density `density` (relative to `omega_0`).
    pub fn arclength(&self, density: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for i in 0..self.len() {
            let root = density[i].max(0.0).sqrt();
            let at_node = acc + root * (round_arclength(self.nodes[i]) - round_arclength(self.faces[i]));
            out.push(at_node);
            acc += root * (round_arclength(self.faces[i + 1]) - round_arclength(self.faces[i]));
        }
        out
    }

    /// Nodes strictly outside the `delta`-neighbourhood of the poles.
    pub fn away_from_poles(&self, delta: f64) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= delta && s <= 1.0 - delta)
            .map(|(i, _)| i)
            .collect()
    }
}

/// What a sampled field represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Potential,
    Density,
    LogDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialField {
    pub values: Vec<f64>,
    pub kind: FieldKind,
}

impl RadialField {
    /// Checks finiteness, and strict positivity for densities.
    pub fn new(values: Vec<f64>, kind: FieldKind) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ConeError::domain(format!("non-finite value at node {i}")));
            }
            if kind == FieldKind::Density && *v <= 0.0 {
                return Err(ConeError::NonPositiveDensity { node: i, value: *v });
            }
        }
        Ok(RadialField { values, kind })
    }

    pub fn potential(values: Vec<f64>) -> Result<Self> {
        Self::new(values, FieldKind::Potential)
    }

    pub fn density(values: Vec<f64>) -> Result<Self> {
        Self::new(values, FieldKind::Density)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_abs(&self) -> f64 {
        sup_abs(&self.values)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

pub fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_symmetry() {
        for spec in [GridSpec::uniform(33), GridSpec::graded(64, 2.0), GridSpec::resolving(101, 1e-5)] {
            let g = RadialGrid::new(spec).unwrap();
            let n = g.len();
            assert_eq!(g.nodes()[0], 0.0);
            assert_eq!(g.nodes()[n - 1], 1.0);
            for i in 0..n {
                assert!((g.nodes()[i] + g.nodes()[n - 1 - i] - 1.0).abs() < 1e-15);
            }
            let area = g.area(&vec![1.0; n]);
            assert!((area / (4.0 * PI) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_integrates_to_zero() {
        let g = RadialGrid::new(GridSpec::graded(80, 1.7)).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|s| (5.0 * s).sin() + s * s * s).collect();
        let lap = g.apply_laplacian(&u);
        assert!(g.mean(&lap).abs() < 1e-13);
    }

    #[test]
    fn laplacian_of_first_harmonic() {
        // Delta_0 (sigma - 1/2) = -(sigma - 1/2): first eigenvalue 1 (complex), 2 (real).
        let g = RadialGrid::uniform(401).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|s| s - 0.5).collect();
        let lap = g.apply_laplacian(&u);
        for i in 1..g.len() - 1 {
            assert!((lap[i] + u[i]).abs() < 1e-10, "{i}: {} {}", lap[i], u[i]);
        }
    }

    #[test]
    fn round_meridian_has_length_pi() {
        let g = RadialGrid::new(GridSpec::graded(50, 2.0)).unwrap();
        let d = g.arclength(&vec![1.0; g.len()]);
        assert!((d[g.len() - 1] - PI).abs() < 1e-12);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn density_field_rejects_zero() {
        assert!(matches!(
            RadialField::density(vec![1.0, 0.0]),
            Err(ConeError::NonPositiveDensity { node: 1, .. })
        ));
        assert!(RadialField::potential(vec![f64::NAN]).is_err());
    }
}
