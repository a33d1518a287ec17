use std::path::Path;
use std::process::Command;

use oqbm_cli::config::ConfigError;
use oqbm_cli::scenarios::{bundled, BUNDLED};
use oqbm_cli::suite::{format_table, run_suite, SuiteOptions};
use oqbm_cli::{moments_run, run, CliError, Overrides, Scenario};

fn oqbm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_oqbm"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn bundled_scenarios_round_trip() {
    for (name, text) in BUNDLED {
        let a = Scenario::parse(text, name).unwrap();
        let b = Scenario::parse(&a.to_text(), name).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(a.to_text(), b.to_text(), "{name}");
    }
}

#[test]
fn empty_config_names_first_missing_key() {
    let err = Scenario::parse("", "empty").unwrap_err();
    assert_eq!(err, ConfigError::Missing("coefficients.alpha_bar".into()));
}

#[test]
fn bad_value_reports_line_and_key() {
    let text = BUNDLED[0].1.replace("nodes = 1024", "nodes = many");
    match Scenario::parse(&text, "x").unwrap_err() {
        ConfigError::Value { line, key, .. } => {
            assert_eq!(key, "grid.nodes");
            assert_eq!(text.lines().nth(line - 1).unwrap().trim(), "nodes = many");
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn unknown_key_is_rejected() {
    let text = format!("{}\n[grid]\nspacing = 2\n", BUNDLED[0].1);
    assert!(matches!(
        Scenario::parse(&text, "x"),
        Err(ConfigError::Unknown { .. }) | Err(ConfigError::Syntax { .. })
    ));
}

#[test]
fn fig1a_writes_five_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let s = bundled("fig1a").unwrap();
    let (m, traj) = run(&s, dir.path()).unwrap();
    for t in [0, 50, 100, 150, 200] {
        let f = format!("snap_t{t}.csv");
        assert!(dir.path().join(&f).exists(), "{f}");
        assert!(m.files.contains(&f));
    }
    assert_eq!(traj.snapshots.len(), 5);
    let snap = std::fs::read_to_string(dir.path().join("snap_t0.csv")).unwrap();
    assert_eq!(snap.lines().next(), Some("x,W_plus,W_minus,C_R,C_I"));
    assert_eq!(snap.lines().count(), 1025);
    let ts = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    assert_eq!(
        ts.lines().next(),
        Some("t,norm,mean_x,variance,C_I_total,sigma_z")
    );
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().next(), Some("t,peaks,gaussian_residual"));
    assert_eq!(diag.lines().count(), 6);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn moments_below_minimum_order_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = Overrides {
        nmax: Some(1),
        ..Default::default()
    }
    .apply(&bundled("fig5a").unwrap());
    let e = moments_run(&s, dir.path()).err().unwrap();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn second_order_truncation_writes_orders_up_to_two() {
    let dir = tempfile::tempdir().unwrap();
    let s = Overrides {
        nmax: Some(2),
        grid_n: Some(256),
        ..Default::default()
    }
    .apply(&bundled("fig5a").unwrap());
    let out = moments_run(&s, dir.path()).unwrap();
    let files: Vec<_> = out
        .manifest
        .files
        .iter()
        .filter(|f| f.starts_with("moments_n"))
        .collect();
    assert_eq!(
        files,
        ["moments_n0.csv", "moments_n1.csv", "moments_n2.csv"]
    );
    assert!(out.hierarchy.moments.iter().all(|r| r.len() == 3));
}

/// The Gaussian start has vanishing odd moments; the claim is that the
/// hierarchy keeps them at zero.
#[test]
fn second_order_truncation_keeps_odd_orders_zero() {
    let dir = tempfile::tempdir().unwrap();
    let s = Overrides {
        nmax: Some(2),
        grid_n: Some(256),
        ..Default::default()
    }
    .apply(&bundled("fig5a").unwrap());
    let out = moments_run(&s, dir.path()).unwrap();
    assert!(out.hierarchy.moments[0][1].iter().all(|v| *v == 0.0));
    let worst = out
        .hierarchy
        .moments
        .iter()
        .flat_map(|r| r[1])
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-12, "largest odd-order component {worst:.3e}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.ini");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("o");
    let o = oqbm(&[
        "run",
        "--config",
        empty.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("coefficients.alpha_bar"));

    let o = oqbm(&[
        "run",
        "--config",
        "fig1a",
        "--out",
        out.to_str().unwrap(),
        "--dt",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(3));

    let missing = dir.path().join("nope.ini");
    let o = oqbm(&[
        "run",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = oqbm(&[
        "run",
        "--config",
        "fig1a",
        "--out",
        out.to_str().unwrap(),
        "--grid-n",
        "256",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(Path::new(&out).join("snap_t200.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let s = Overrides {
        grid_n: Some(256),
        ..Default::default()
    }
    .apply(&bundled("fig2a").unwrap());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ma, _) = run(&s, &a).unwrap();
    let (mb, _) = run(&s, &b).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);
    for f in &ma.files {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn corrupted_drift_sign_fails_trace_check() {
    let checks = run_suite(&SuiteOptions { drift_sign: -1.0 });
    let probe = checks
        .iter()
        .find(|c| c.name == "oqbm.trace_probe")
        .unwrap();
    assert!(!probe.passed, "{probe:?}");
    let clean = run_suite(&SuiteOptions::default());
    let probe = clean.iter().find(|c| c.name == "oqbm.trace_probe").unwrap();
    assert!(probe.passed, "{probe:?}");
}

#[test]
fn suite_table_is_deterministic() {
    let a = format_table(&run_suite(&SuiteOptions::default()));
    let b = format_table(&run_suite(&SuiteOptions::default()));
    assert_eq!(a, b);
}

#[test]
fn overrides_reach_every_section() {
    let s = Overrides {
        grid_n: Some(300),
        dt: Some(1e-3),
        nmax: Some(6),
        gamma_schedule: Some(vec![5.0, 20.0]),
    }
    .apply(&bundled("fig1a").unwrap());
    assert_eq!(s.config.nodes, 300);
    assert_eq!(s.moments.as_ref().unwrap().nmax, 6);
    assert_eq!(s.phase.as_ref().unwrap().gamma_schedule, vec![5.0, 20.0]);
    assert!(matches!(
        CliError::from(ConfigError::Missing("x".into())).exit_code(),
        2
    ));
}
