use std::ffi::OsString;
use std::fs;
use std::path::Path;

use coneflow::cli::{cascade_plan, main_with_args, run_settings, EXIT_INVARIANT, EXIT_OK, EXIT_SOLVER, EXIT_USAGE};
use coneflow::io::{read_json, Config, Table};
use coneflow::polar::read_chart_csv;

fn call(args: &[&str]) -> i32 {
    let mut v: Vec<OsString> = vec!["coneflow".into()];
    v.extend(args.iter().map(OsString::from));
    main_with_args(v)
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn only_subdir(dir: &Path) -> std::path::PathBuf {
    let mut d: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(d.len(), 1);
    d.pop().unwrap()
}

const FIXED_POINT: &str = "beta = 1\neps = 0.1\nN = inf\ninit.F = const\ngrid.n = 129\ngrid.kind = uniform\nflow.T = 0.1\n";

#[test]
fn argument_errors_exit_2() {
    assert_eq!(call(&[]), EXIT_USAGE);
    assert_eq!(call(&["polar-check", "--beta", "x", "--eps", "0.1"]), EXIT_USAGE);
    assert_eq!(call(&["polar-check", "--beta", "0.5"]), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    assert_eq!(call(&["polar-check", "--beta", "1.5", "--eps", "0.1", "--out", out.to_str().unwrap()]), EXIT_USAGE);
    assert_eq!(call(&["run-flow", "--config", dir.path().join("missing.cfg").to_str().unwrap()]), EXIT_USAGE);
    let bad = write_config(dir.path(), "bad.cfg", "beta = 0.5\nflow.scheme = leapfrog\n");
    assert_eq!(call(&["run-flow", "--config", &bad]), EXIT_USAGE);
    let unknown = write_config(dir.path(), "u.cfg", "betta = 0.5\n");
    assert_eq!(call(&["run-flow", "--config", &unknown]), EXIT_USAGE);
}

#[test]
fn polar_check_writes_readable_charts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("polar");
    let o = out.to_str().unwrap();
    assert_eq!(call(&["polar-check", "--beta", "0.5", "--eps", "1e-4", "--eps", "0", "--out", o]), EXIT_OK);
    let cert = read_json(&out.join("certificate.json")).unwrap();
    assert_eq!(cert["passed"], true);
    let entries = cert["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    let chart = read_chart_csv(&out.join("chart_1.csv"), 0.5, 0.0, 1e-3).unwrap();
    assert!(chart.a_vals.iter().all(|a| (a - 0.25).abs() < 1e-12));

    assert_eq!(call(&["polar-check", "--beta", "1", "--eps", "0.1", "--out", o]), EXIT_OK);
    let chart = read_chart_csv(&out.join("chart_0.csv"), 1.0, 0.1, 1e-3).unwrap();
    assert!(chart.a_vals.iter().all(|a| (a - 1.0).abs() < 1e-12));
}

#[test]
fn fixed_point_run_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fp.cfg", FIXED_POINT);
    let out = dir.path().join("runs");
    assert_eq!(call(&["run-flow", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let run = only_subdir(&out);
    let table = Table::read(&run.join("trajectory.csv")).unwrap();
    assert!(table.column("sup_phi_dot").unwrap().iter().all(|v| v.abs() < 1e-12));
    assert!(table.column("trace_sup").unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));

    let manifest = read_json(&run.join("manifest.json")).unwrap();
    assert_eq!(manifest["run_id"].as_str().unwrap(), run.file_name().unwrap().to_str().unwrap());
    assert_eq!(manifest["config"]["beta"], "1");
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(run.join(f.as_str().unwrap()).is_file());
    }
    let report = read_json(&run.join("report.json")).unwrap();
    assert_eq!(report["certificate"]["bullets"].as_array().unwrap().len(), 3);
}

#[test]
fn oversized_step_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "big.cfg",
        "beta = 0.5\neps = 0.01\ngrid.n = 129\nflow.dt = 0.5\nflow.newton_max_iter = 1\nflow.newton_tol = 1e-13\nflow.dt_min = 0.1\n",
    );
    let out = dir.path().join("runs");
    assert_eq!(call(&["run-flow", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_SOLVER);
    assert!(!out.exists());
}

#[test]
fn run_id_ignores_key_order_and_comments() {
    let a = Config::parse("beta = 0.5\neps = 0.1\n").unwrap();
    let b = Config::parse("# comment\neps = 0.1\n\nbeta = 0.5\n").unwrap();
    assert_eq!(a.canonical(), b.canonical());
    assert_eq!(
        coneflow::io::content_id(&a.canonical()),
        coneflow::io::content_id(&b.canonical())
    );
}

#[test]
fn config_mapping() {
    let cfg = Config::parse(
        "beta = 0.7\neps = 1e-3\nN = 40\ndelta = 0.02\nrho = 0.2\n[grid]\nn = 65\nkind = graded\nq = 2\n[flow]\ndt = 2e-3\nT = 0.5\nscheme = semi-implicit\nreference = omega-eps\n",
    )
    .unwrap();
    let s = run_settings(&cfg).unwrap();
    assert_eq!(s.geometry.beta, 0.7);
    assert_eq!(s.geometry.barrier_scale, Some(40.0));
    assert_eq!(s.geometry.delta, Some(0.02));
    assert_eq!(s.geometry.rho_exp, Some(0.2));
    assert_eq!(s.geometry.grid, coneflow::GridSpec::graded(65, 2.0));
    assert_eq!(s.flow.dt, 2e-3);
    assert_eq!(s.flow.t_end, 0.5);
    assert_eq!(s.flow.scheme, coneflow::flow::Scheme::SemiImplicit);
    assert_eq!(s.flow.reference, coneflow::flow::Reference::OmegaEps);
    // the cascade compares omega_0-form potentials only
    assert!(cascade_plan(&cfg).is_err());

    let cfg = Config::parse("grid.n = 65\ncascade.eps_ladder = 0.1, 0.01\ncascade.a0 = 0.2\n").unwrap();
    let plan = cascade_plan(&cfg).unwrap();
    assert_eq!(plan.eps_ladder, vec![0.1, 0.01]);
    assert_eq!(plan.a0, 0.2);
    assert_eq!(plan.geometry.grid, coneflow::GridSpec::resolving(65, 0.01));
}

#[test]
fn cascade_single_rung_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let single = write_config(dir.path(), "one.cfg", "grid.n = 129\nflow.dt = 1e-2\ncascade.eps_ladder = 0.1\n");
    let out1 = dir.path().join("one");
    assert_eq!(call(&["cascade", "--config", &single, "--out", out1.to_str().unwrap(), "--jobs", "1"]), EXIT_OK);
    let rec = read_json(&only_subdir(&out1).join("cascade.json")).unwrap();
    assert_eq!(rec["rungs"].as_array().unwrap().len(), 1);

    let ladder = write_config(dir.path(), "two.cfg", "grid.n = 129\nflow.dt = 1e-2\ncascade.eps_ladder = 0.1, 0.01\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ca = call(&["cascade", "--config", &ladder, "--out", a.to_str().unwrap(), "--jobs", "2"]);
    let cb = call(&["cascade", "--config", &ladder, "--out", b.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(ca, cb);
    assert!(ca == EXIT_OK || ca == EXIT_INVARIANT);
    let (ra, rb) = (only_subdir(&a), only_subdir(&b));
    for f in ["cascade.json", "rung_0/trajectory.csv", "rung_0/report.json", "rung_1/trajectory.csv", "rung_1/report.json"] {
        assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{f}");
    }
    let summary = read_json(&ra.join("cascade.json")).unwrap();
    let verdict = summary["verdict"]["passed"].as_bool().unwrap();
    assert_eq!(ca == EXIT_OK, verdict);
}
