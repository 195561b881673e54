//! Tridiagonal algebra for the one-dimensional reduction.

use crate::error::{ConeError, Result};

/// A tridiagonal matrix. `lower[i]` multiplies `x[i-1]` in row `i`
/// (`lower[0]` unused), `upper[i]` multiplies `x[i+1]` (`upper[n-1]` unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Tridiag {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Thomas algorithm. Fails on a vanishing pivot.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(ConeError::LinearSolve(format!(
                "rhs length {} != {}",
                rhs.len(),
                n
            )));
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        if piv.abs() < 1e-300 || !piv.is_finite() {
            return Err(ConeError::LinearSolve("zero pivot at row 0".into()));
        }
        c[0] = self.upper[0] / piv;
        d[0] = rhs[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.lower[i] * c[i - 1];
            if piv.abs() < 1e-300 || !piv.is_finite() {
                return Err(ConeError::LinearSolve(format!("zero pivot at row {i}")));
            }
            c[i] = if i + 1 < n { self.upper[i] / piv } else { 0.0 };
            d[i] = (rhs[i] - self.lower[i] * d[i - 1]) / piv;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }

    /// Solves `A x = rhs` for a singular `A` whose kernel is the constants
    /// (a discrete Laplacian). The first unknown is pinned to zero and the
    /// first equation, implied by compatibility, is dropped.
    pub fn solve_pinned(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if n < 2 {
            return Ok(vec![0.0; n]);
        }
        let sub = Tridiag {
            lower: self.lower[1..].to_vec(),
            diag: self.diag[1..].to_vec(),
            upper: self.upper[1..].to_vec(),
        };
        let x = sub.solve(&rhs[1..])?;
        let mut out = Vec::with_capacity(n);
        out.push(0.0);
        out.extend(x);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_known_solution() {
        let n = 6;
        let mut a = Tridiag::zeros(n);
        for i in 0..n {
            a.diag[i] = 4.0;
            a.lower[i] = -1.0;
            a.upper[i] = -1.5;
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.apply(&x);
        let y = a.solve(&b).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = Tridiag::zeros(3);
        assert!(matches!(a.solve(&[1.0, 1.0, 1.0]), Err(ConeError::LinearSolve(_))));
    }
}
