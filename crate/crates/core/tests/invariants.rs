use proptest::prelude::*;

use coneflow::elliptic_init::{pipeline, InitialDensity};
use coneflow::estimates::{eigenvalue_inequality, holder_seminorm, trace_fields};
use coneflow::flow::{run, FlowConfig};
use coneflow::geometry::chi_eval;
use coneflow::polar::{integrate_polar, BOUND_SLACK};
use coneflow::{ConeGeometry, GeometryParams, GridSpec, RadialGrid};

fn smooth_field(grid: &RadialGrid, coeffs: &[f64]) -> Vec<f64> {
    grid.nodes()
        .iter()
        .map(|&s| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * (std::f64::consts::PI * (k + 1) as f64 * s).cos())
                .sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chi_is_monotone(beta in 0.05f64..1.0, eps in 1e-8f64..1.0, y1 in 0.0f64..1.0, y2 in 0.0f64..1.0, shrink in 0.0f64..1.0) {
        let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
        let a = chi_eval(beta, eps, lo).unwrap();
        let b = chi_eval(beta, eps, hi).unwrap();
        prop_assert!(a <= b * (1.0 + 1e-14) + 1e-300);
        // nonincreasing in eps
        let smaller = chi_eval(beta, eps * shrink, hi).unwrap();
        prop_assert!(smaller >= b * (1.0 - 1e-13));
    }

    #[test]
    fn added_potentials_preserve_area(coeffs in prop::collection::vec(-0.02f64..0.02, 1..6), n in 33usize..300) {
        let grid = RadialGrid::new(GridSpec::graded(n, 1.5)).unwrap();
        let u = smooth_field(&grid, &coeffs);
        let dens: Vec<f64> = grid.apply_laplacian(&u).iter().map(|l| 1.0 + l).collect();
        prop_assert!((grid.mean(&dens) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn polar_bounds(beta in 0.1f64..1.0, exp in -8.0f64..0.0) {
        let eps = 10f64.powf(exp);
        let chart = integrate_polar(beta, eps, 1.0, 2e-3).unwrap();
        for &a in &chart.a_vals {
            prop_assert!(a > beta * beta - BOUND_SLACK && a <= 1.0 + BOUND_SLACK);
        }
        prop_assert!(chart.u_vals.iter().all(|u| *u < 1.0));
        prop_assert!((chart.u_vals[0] - beta).abs() < 1e-3);
    }

    #[test]
    fn traces_are_reciprocal(values in prop::collection::vec((1e-3f64..1e3, 1e-3f64..1e3), 1..50)) {
        let (d, r): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
        let tf = trace_fields(&d, &r).unwrap();
        for i in 0..d.len() {
            prop_assert!((tf.trace[i] * tf.inv_trace[i] - 1.0).abs() <= 4.0 * f64::EPSILON);
            prop_assert_eq!(tf.trace[i], tf.det[i]);
        }
    }

    #[test]
    fn holder_is_a_seminorm(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..40),
        c in -5.0f64..5.0,
        alpha in 0.05f64..0.95,
    ) {
        let positions: Vec<f64> = (0..pts.len()).map(|i| 0.1 * i as f64 + 0.01 * (i * i) as f64).collect();
        let (u, v): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let scaled: Vec<f64> = u.iter().map(|a| c * a).collect();
        let hu = holder_seminorm(&u, &positions, alpha).unwrap();
        let hv = holder_seminorm(&v, &positions, alpha).unwrap();
        let hs = holder_seminorm(&sum, &positions, alpha).unwrap();
        prop_assert!(hs <= (hu + hv) * (1.0 + 1e-12) + 1e-15);
        let hc = holder_seminorm(&scaled, &positions, alpha).unwrap();
        prop_assert!((hc - c.abs() * hu).abs() <= 1e-12 * (1.0 + hc));
        // constants are invisible
        let shifted: Vec<f64> = u.iter().map(|a| a + c).collect();
        let hsh = holder_seminorm(&shifted, &positions, alpha).unwrap();
        prop_assert!((hsh - hu).abs() <= 1e-12 * (1.0 + hu));
    }

    #[test]
    fn eigenvalue_inequality_holds(logs in prop::collection::vec(-8.0f64..8.0, 2..7)) {
        let l: Vec<f64> = logs.iter().map(|x| x.exp()).collect();
        prop_assert!(eigenvalue_inequality(&l).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn flow_maximum_principles(beta in 0.3f64..1.0, exp in -3.0f64..-1.0, amplitude in 0.0f64..0.6) {
        let eps = 10f64.powf(exp);
        let geom = ConeGeometry::new(GeometryParams::new(beta, eps, GridSpec::resolving(129, eps))).unwrap();
        let f = InitialDensity::Rough { amplitude, waves: 2 }.sample(&geom);
        let s = pipeline(&geom, &f).unwrap();
        let config = FlowConfig { dt: 1e-2, t_end: 0.3, ..FlowConfig::default() };
        let traj = run(&geom, &config, &s.phi_hat).unwrap();
        let mut prev = f64::INFINITY;
        for d in &traj.diagnostics {
            prop_assert!(d.sup_phi_dot <= (beta * d.t).exp() * traj.initial_sup_phi_dot + 1e-6);
            prop_assert!(d.sup_v <= prev + 1e-8);
            prop_assert!(d.area_defect.abs() <= 1e-6);
            prev = d.sup_v;
        }
    }
}

#[test]
fn eigenvalue_inequality_is_equality_in_dimension_two() {
    for &(a, b) in &[(1.0, 1.0), (0.3, 7.0), (1e-4, 2e3)] {
        let lhs: f64 = 1.0 / a + 1.0 / b;
        let rhs = (a + b) / (a * b);
        assert!((lhs - rhs).abs() <= 8.0 * f64::EPSILON * lhs);
        assert!(eigenvalue_inequality(&[a, b]).unwrap());
    }
}
