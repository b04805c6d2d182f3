use std::process::Command;

use pns_core::boundary::{BoundaryCurve, RegionGrid};
use pns_core::montecarlo::read_histogram_csv;
use pns_lab::{run, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};

fn invoke(args: &[&str]) -> (u8, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("pns-lab").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn value<'a>(out: &'a str, key: &str) -> Option<&'a str> {
    out.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

#[test]
fn analyze_feasible_point() {
    let (code, out, _) = invoke(&["analyze", "--mu", "0.1", "--eta", "0.1"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(value(&out, "feasibility"), Some("FEASIBLE"));
    let b: f64 = value(&out, "b_match").unwrap().parse().unwrap();
    assert!((b - (0.09f64.exp_m1() / 0.1)).abs() < 1e-15);
    assert!(out.contains("plan.structure=pass"));
    assert!(out.contains("# n,d_n,p_match,p_loss\n0,"));
}

#[test]
fn analyze_infeasible_point() {
    let (code, out, _) = invoke(&["analyze", "--mu", "0.1", "--eta", "0.7"]);
    assert_eq!(code, EXIT_DOMAIN);
    assert_eq!(value(&out, "feasibility"), Some("INFEASIBLE"));
    assert_eq!(value(&out, "witness"), Some("1"));
}

#[test]
fn analyze_full_blocking_regime() {
    let (code, out, err) = invoke(&["analyze", "--mu", "0.5", "--eta", "0.05"]);
    assert_eq!(code, EXIT_DOMAIN);
    assert_eq!(value(&out, "regime"), Some("FULL-BLOCKING"));
    assert!(err.contains("full-blocking"));
}

#[test]
fn usage_errors() {
    for args in [
        &["analyze", "--mu", "-1", "--eta", "0.5"][..],
        &["analyze", "--mu", "0.1", "--eta", "1.5"],
        &["analyze", "--mu", "0.1"],
        &["analyze", "--mu", "abc", "--eta", "0.5"],
        &["region", "--mu-min", "0.5", "--mu-max", "0.2", "--eta-min", "0.1", "--eta-max", "1", "--steps", "3"],
        &["region", "--mu-min", "0.1", "--mu-max", "0.2", "--eta-min", "0.1", "--eta-max", "1", "--steps", "1"],
        &["simulate", "--mu", "0.1", "--eta", "0.1", "--pulses", "10", "--mode", "lossy"],
        &["simulate", "--mu", "0.1", "--eta", "0.1", "--pulses", "10", "--seed", "1", "--mode", "sideways"],
        &["gain", "--eta", "0.1", "--sifting", "0"],
        &["frobnicate"],
    ] {
        let (code, out, err) = invoke(args);
        assert_eq!(code, EXIT_USAGE, "{args:?}");
        assert!(out.is_empty());
        assert!(err.contains("Usage:"), "{args:?}: {err}");
    }
}

#[test]
fn region_csv_round_trips() {
    let (code, out, _) = invoke(&[
        "region", "--mu-min", "0.01", "--mu-max", "1", "--eta-min", "0.01", "--eta-max", "1", "--steps", "12",
    ]);
    assert_eq!(code, EXIT_OK);
    let grid = RegionGrid::read_csv(out.as_bytes()).unwrap();
    assert_eq!(grid.mu_axis.len(), 12);
    let mut again = Vec::new();
    grid.write_csv(&mut again).unwrap();
    assert_eq!(again, out.as_bytes());
    assert!(grid.cells.iter().flatten().all(|c| c.feasible == (c.d1 <= 0.0)));
}

#[test]
fn boundary_csv_and_no_root_exit() {
    let (code, out, _) = invoke(&["boundary", "--mu-min", "0.01", "--mu-max", "1", "--steps", "25"]);
    assert_eq!(code, EXIT_OK);
    let curve = BoundaryCurve::read_csv(out.as_bytes()).unwrap();
    assert_eq!(curve.samples.len(), 25);
    let mut again = Vec::new();
    curve.write_csv(&mut again).unwrap();
    assert_eq!(again, out.as_bytes());

    let (code, _, err) = invoke(&["boundary", "--mu-min", "1", "--mu-max", "12", "--steps", "3"]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(err.contains("no boundary point"));
}

#[test]
fn gain_reports_optimum() {
    let (code, out, _) = invoke(&["gain", "--eta", "0.01"]);
    assert_eq!(code, EXIT_OK);
    let mu: f64 = value(&out, "mu_opt").unwrap().parse().unwrap();
    assert!((0.0100..=0.0105).contains(&mu));
    assert_eq!(value(&out, "feasible"), Some("true"));
    let margin: f64 = value(&out, "margin").unwrap().parse().unwrap();
    assert!(margin > 0.0);
}

#[test]
fn simulate_writes_histogram_and_report() {
    let dir = std::env::temp_dir().join(format!("pns-lab-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("hist.csv");
    let (code, out, _) = invoke(&[
        "simulate", "--mu", "0.1", "--eta", "0.1", "--pulses", "20000", "--seed", "5", "--mode", "extended",
        "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(value(&out, "mode"), Some("extended"));
    assert!(value(&out, "p_value").is_some());
    let rows = read_histogram_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.count).sum::<u64>(), 20000);
    std::fs::remove_dir_all(&dir).unwrap();

    let (code, _, err) = invoke(&["simulate", "--mu", "0.1", "--eta", "0.7", "--pulses", "10", "--seed", "1", "--mode", "extended"]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(err.contains("no extended attack"));
}

#[test]
fn binary_output_is_reproducible() {
    let exe = env!("CARGO_BIN_EXE_pns-lab");
    let args = ["simulate", "--mu", "0.2", "--eta", "0.15", "--pulses", "200000", "--seed", "99", "--mode", "extended"];
    let a = Command::new(exe).args(args).output().unwrap();
    let b = Command::new(exe).args(args).output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stderr, b.stderr);
    assert!(a.stdout.starts_with(b"n,count,empirical_p,analytic_p,z\n"));
}
