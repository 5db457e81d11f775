//! End-to-end tests that drive the compiled `kramers` binary through
//! temporary directories and re-parse everything it writes.
//!
//! These tests check the contract of the front end: exit codes, report
//! self-verification, the provenance hash linking exit studies back to the
//! barrier report they used, and bit-for-bit reproducibility.

use std::path::Path;
use std::process::{Command, Output};

use kramers::report;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_kramers")
}

/// Write `config` into `dir` and run one subcommand with output going to
/// `dir` as well.
fn run_in(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, config).unwrap();
    Command::new(bin())
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("spawn kramers binary")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

const fn benchmark_header() -> &'static str {
    // Linear restoring drift, unit gain, interval domain: the defaults.
    "measure.kind = exponential-light\nmeasure.beta = 2\n"
}

#[test]
fn quasipotential_point_mode_report_self_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{}run.seed = 5\nqp.target = 0.8\nqp.restarts = 1\nqp.grid_stage = off\nqp.t_grid = 0.5, 1, 2\n",
        benchmark_header()
    );
    let out = run_in(dir.path(), &cfg, &["quasipotential"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let text = read(dir.path(), "qp-report.txt");
    let rep = report::parse(&text).expect("report verifies");
    assert_eq!(rep.get("report.kind"), Some("quasipotential"));

    // The report re-evaluates the entropy of its own control; the gap
    // between that and the quoted value is the certificate check.
    let value = rep.get_f64("qp.value").unwrap();
    let recheck = rep.get_f64("qp.value.recheck").unwrap();
    let gap = rep.get_f64("qp.recheck_gap").unwrap();
    assert!(value.is_finite() && value > 0.0);
    assert!(gap <= 1e-8, "certificate gap {gap}");
    assert!((recheck - value).abs() <= 1e-8);

    // At least one optimizer trace line made it into the report.
    assert!(rep.pairs.iter().any(|(k, _)| k.starts_with("qp.trace.")));

    // Tampering with the body must break verification.
    let tampered = text.replace("qp.value =", "qp.value =  ");
    assert!(report::parse(&tampered).is_err());
}

#[test]
fn barrier_report_feeds_exit_studies_with_matching_hash() {
    let dir = tempfile::tempdir().unwrap();

    // Cheap barrier search: single restart, short horizon grid.
    let qp_cfg = format!(
        "{}run.seed = 11\nqp.restarts = 1\nqp.max_iter = 200\nqp.t_grid = 1.5, 2.5\n",
        benchmark_header()
    );
    let out = run_in(dir.path(), &qp_cfg, &["quasipotential"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let qp_text = read(dir.path(), "qp-report.txt");
    let qp_rep = report::parse(&qp_text).unwrap();
    let vbar = qp_rep.get_f64("qp.value").unwrap();
    assert!((0.9..=1.05).contains(&vbar), "barrier {vbar}");

    // Symmetric well: both boundary points should surface, the best as
    // z_star and its mirror as a runner-up within optimizer tolerance.
    let z_star: f64 = qp_rep.get("qp.z_star").unwrap().trim().parse().unwrap();
    assert!((z_star.abs() - 1.0).abs() <= 2e-3, "argmin at {z_star}");
    let runner: f64 = qp_rep.get("qp.runner_up").unwrap().trim().parse().unwrap();
    assert!(z_star * runner < 0.0, "runner-up {runner} not the mirror of {z_star}");
    let rgap = qp_rep.get_f64("qp.runner_up_gap").unwrap();
    assert!(rgap.abs() <= 5e-3, "symmetric gap {rgap}");

    // Exit-time study consuming the barrier report by path.
    let qp_path = dir.path().join("qp-report.txt");
    let study_cfg = format!(
        "{}run.seed = 11\nrun.n = 200\nrun.eps = 0.3, 0.2\nrun.barrier = report:{}\n",
        benchmark_header(),
        qp_path.display()
    );
    let out = run_in(dir.path(), &study_cfg, &["kramers"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let krep = report::parse(&read(dir.path(), "kramers-report.txt")).unwrap();
    assert_eq!(
        krep.get("kramers.qp_report_hash").unwrap(),
        format!("{:016x}", qp_rep.hash),
        "provenance hash must match the barrier report"
    );
    assert_eq!(krep.get_f64("kramers.vbar").unwrap(), vbar);

    // One table row per schedule level, plus the header.
    let table = read(dir.path(), "kramers-table.csv");
    assert_eq!(table.lines().count(), 3, "table:\n{table}");
    assert!(table.starts_with("eps,"));

    // Location study through the same certificate.
    let out = run_in(dir.path(), &study_cfg, &["exit-stats"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let lrep = report::parse(&read(dir.path(), "location-report.txt")).unwrap();
    assert_eq!(
        lrep.get("location.qp_report_hash").unwrap(),
        format!("{:016x}", qp_rep.hash)
    );
    assert_eq!(lrep.get("location.mode"), Some("symmetric-pair"));
}

#[test]
fn strict_mode_rejects_censored_mean() {
    let dir = tempfile::tempdir().unwrap();
    // A cap this small times out nearly every path at eps = 0.3.
    let cfg = format!(
        "{}run.seed = 3\nrun.n = 150\nrun.eps = 0.3\nrun.barrier = none\nrun.t_cap = fixed\nrun.t_cap.value = 0.05\n",
        benchmark_header()
    );
    let out = run_in(dir.path(), &cfg, &["--strict", "kramers"]);
    assert_eq!(code(&out), 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rep = report::parse(&read(dir.path(), "kramers-report.txt")).unwrap();
    assert!(rep
        .pairs
        .iter()
        .any(|(k, v)| k == "kramers.flag" && v.starts_with("INVALID-FOR-MEAN")));

    // Same run without --strict still writes the flagged report but exits 0.
    let out = run_in(dir.path(), &cfg, &["kramers"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let mk = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = format!(
            "{}run.seed = 9\nrun.n = 150\nrun.eps = 0.3\nrun.barrier = none\nrun.t_cap = fixed\nrun.t_cap.value = 50\nsimulate.paths = 2\nsimulate.horizon = 1\n",
            benchmark_header()
        );
        let out = run_in(dir.path(), &cfg, &["kramers"]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
        let out = run_in(dir.path(), &cfg, &["simulate"]);
        assert_eq!(code(&out), 0);
        dir
    };
    let (a, b) = (mk(), mk());
    for name in [
        "kramers-report.txt",
        "kramers-table.csv",
        "trajectory-0000.csv",
        "trajectory-0001.csv",
        "simulate-manifest.txt",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn simulate_manifest_certifies_trajectory_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{}run.seed = 2\nrun.eps = 0.25\nsimulate.paths = 2\nsimulate.horizon = 1\n",
        benchmark_header()
    );
    let out = run_in(dir.path(), &cfg, &["simulate"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let mani = report::parse(&read(dir.path(), "simulate-manifest.txt")).unwrap();
    assert_eq!(mani.get("report.kind"), Some("manifest"));
    assert_eq!(mani.get("files"), Some("2"));
    for k in 0..2 {
        let name = format!("trajectory-{k:04}.csv");
        let content = read(dir.path(), &name);
        assert!(content.starts_with("time,jump,x0"), "{name} header");
        let expect = mani.get(&format!("file.{name}")).unwrap();
        assert_eq!(expect, format!("{:016x}", kramers::stream::fnv64(content.as_bytes())));
    }
}

#[test]
fn sample_measure_writes_marks_and_moment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{}run.seed = 4\nrun.n = 4000\n", benchmark_header());
    let out = run_in(dir.path(), &cfg, &["sample-measure"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let marks = read(dir.path(), "marks.csv");
    assert_eq!(marks.lines().count(), 4001);
    let mani = report::parse(&read(dir.path(), "sample-manifest.txt")).unwrap();
    // Second moment of exp(-z^2) dz normalized by its mass sqrt(pi) is 1/2.
    let m2 = mani.get_f64("empirical_second_moment").unwrap();
    assert!((m2 - 0.5).abs() < 0.05, "second moment per mark {m2}");
}

#[test]
fn identity_tilt_reproduces_direct_estimate_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{}run.seed = 6\nrun.n = 150\nrun.eps = 0.3\nrun.barrier = none\nrun.t_cap = fixed\nrun.t_cap.value = 50\nis.tilt = identity\nis.horizon = 1.5\n",
        benchmark_header()
    );
    let out = run_in(dir.path(), &cfg, &["is-exit"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rep = report::parse(&read(dir.path(), "is-report.txt")).unwrap();
    // Identity tilt leaves the sampler untouched, so the weighted and
    // direct estimators see the same paths with unit weights.
    assert_eq!(
        rep.get("is.row[0].weighted_p").unwrap(),
        rep.get("is.row[0].direct_p").unwrap()
    );
    assert_eq!(rep.get_f64("is.row[0].var_ratio").unwrap(), 1.0);
    assert_eq!(rep.get_f64("is.row[0].ess").unwrap(), 150.0);
}

#[test]
fn cycle_diagnostic_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{}run.seed = 8\nrun.n = 150\nrun.eps = 0.3\nrun.barrier = none\nrun.t_cap = fixed\nrun.t_cap.value = 80\ncycle.rho = 0.3\ncycle.rho_prime = 0.7\n",
        benchmark_header()
    );
    let out = run_in(dir.path(), &cfg, &["cycle-diag"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rep = report::parse(&read(dir.path(), "cycle-report.txt")).unwrap();
    let q = rep.get_f64("cycle.row[0].q_hat").unwrap();
    assert!(q > 0.0 && q <= 1.0, "q_hat {q}");
    let table = read(dir.path(), "cycle-table.csv");
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();

    // Missing required key.
    let out = run_in(dir.path(), "run.n = 200\n", &["kramers"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("measure.kind"), "stderr: {err}");

    // Unknown key is rejected with its line number.
    let cfg = format!("{}run.paths = 3\n", benchmark_header());
    let out = run_in(dir.path(), &cfg, &["kramers"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run.paths") && err.contains("line 3"), "stderr: {err}");

    // Missing config file.
    let out = Command::new(bin())
        .args(["--config", "/nonexistent/exp.cfg", "kramers"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
