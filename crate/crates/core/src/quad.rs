//! Adaptive Gauss-Kronrod quadrature (7-point Gauss, 15-point Kronrod).
//!
//! Panels are bisected until the Gauss/Kronrod difference meets the local
//! share of the tolerance. Integrable endpoint singularities converge by
//! geometric refinement toward the singular end; callers with a known
//! power-law endpoint should substitute it away first (see
//! [`integrate_power_endpoint`]).

use crate::error::{ConeError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (whole, _) = gk15(&f, a, b);
    let tol = abs_tol.max(rel_tol * whole.abs());
    let mut total = 0.0;
    let mut stack = vec![(a, b, 0usize)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(&f, lo, hi);
        let share = tol * (hi - lo).abs() / (b - a).abs();
        if !val.is_finite() {
            return Err(ConeError::Quadrature { a, b });
        }
        if err <= share.max(f64::EPSILON * val.abs() * 4.0) || depth >= 200 {
            if depth >= 200 && err > tol {
                return Err(ConeError::Quadrature { a, b });
            }
            total += val;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    Ok(total)
}

/// Integrates `w(x) * g(x)` over `[0, b]` where `w(x) ~ x^(p-1)` near 0 is
/// absorbed by the substitution `x = b u^(1/p)`. The caller passes
/// `h(x) = x^(1-p) * integrand(x)`, which must be bounded near 0.
pub fn integrate_power_endpoint<F: Fn(f64) -> f64>(
    h: F,
    p: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    // x = b u^{1/p}: x^{p-1} dx = (b^p / p) du
    let scale = b.powf(p) / p;
    let inner = integrate(
        |u: f64| {
            let x = b * u.powf(1.0 / p);
            h(x)
        },
        0.0,
        1.0,
        abs_tol / scale,
        rel_tol,
    )?;
    Ok(scale * inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((v - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn sqrt_singularity_converges() {
        let v = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn substitution_handles_strong_power() {
        // \int_0^1 x^{-0.7} (1+x) dx = 1/0.3 + 1/1.3
        let p = 0.3;
        let v = integrate_power_endpoint(|x: f64| 1.0 + x, p, 1.0, 1e-14, 1e-14).unwrap();
        assert!((v - (1.0 / 0.3 + 1.0 / 1.3)).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-12, 1e-12).unwrap(), 0.0);
    }
}
