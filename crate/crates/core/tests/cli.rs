use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SPEC: &str = r#"
method = ["mc", "sis-mu-sigma", "ssis-star", "gl-is"]
l = [20.0, 60.0]
n = 2000
n_pilot = 400
B = 3
seed = 99

[model]
kind = "gaussian-credit"
h = 100
d = 3
loadings_seed = 7
"#;

fn sis(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sis"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// CSV text with the wall_ms column blanked.
fn without_wall_time(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "wall_ms").expect("wall_ms column");
    let mut out = header.join(",");
    for line in lines {
        let mut cells: Vec<&str> = line.split(',').collect();
        cells[col] = "";
        out.push('\n');
        out.push_str(&cells.join(","));
    }
    out
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn csv_header_matches_contract() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", SPEC);
    assert_ok(&sis(&["run", "--config", "spec.toml", "--out", "a.csv"], dir.path()));
    let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "method,model,l,n,B,estimate,var_estimate,ci_halfwidth,debias_added,wall_ms,seed"
    );
    // 2 thresholds × 4 methods × 3 replications.
    assert_eq!(text.lines().count(), 1 + 24);
}

#[test]
fn identical_spec_and_seed_give_identical_csv() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", SPEC);
    assert_ok(&sis(&["run", "--config", "spec.toml", "--out", "a.csv"], dir.path()));
    assert_ok(&sis(&["run", "--config", "spec.toml", "--out", "b.csv"], dir.path()));
    assert_eq!(
        without_wall_time(&dir.path().join("a.csv")),
        without_wall_time(&dir.path().join("b.csv"))
    );

    assert_ok(&sis(&["run", "--config", "spec.toml", "--seed", "100", "--out", "c.csv"], dir.path()));
    assert_ne!(
        without_wall_time(&dir.path().join("a.csv")),
        without_wall_time(&dir.path().join("c.csv"))
    );
}

#[test]
fn calibrate_then_estimate_equals_run() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", SPEC);
    assert_ok(&sis(&["run", "--config", "spec.toml", "--out", "run.csv"], dir.path()));
    assert_ok(&sis(&["calibrate", "--config", "spec.toml", "--out", "fit.toml"], dir.path()));
    assert_ok(&sis(
        &["estimate", "--config", "spec.toml", "--fit", "fit.toml", "--out", "est.csv"],
        dir.path(),
    ));
    assert_eq!(
        without_wall_time(&dir.path().join("run.csv")),
        without_wall_time(&dir.path().join("est.csv"))
    );
}

#[test]
fn report_lists_every_method() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", SPEC);
    assert_ok(&sis(&["run", "--config", "spec.toml", "--out", "a.csv"], dir.path()));
    let out = sis(&["report", "a.csv"], dir.path());
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    for m in ["mc", "sis-mu-sigma", "ssis-star", "gl-is"] {
        assert!(text.contains(m), "report lacks {m}:\n{text}");
    }
}

#[test]
fn fit_for_another_model_is_rejected() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", SPEC);
    write_spec(dir.path(), "other.toml", &SPEC.replace("loadings_seed = 7", "loadings_seed = 8"));
    assert_ok(&sis(&["calibrate", "--config", "spec.toml", "--out", "fit.toml"], dir.path()));
    let out = sis(
        &["estimate", "--config", "other.toml", "--fit", "fit.toml", "--out", "x.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_pilot_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", &SPEC.replace("n_pilot = 400", "n_pilot = 0"));
    let out = sis(&["run", "--config", "spec.toml", "--out", "a.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_and_bad_flag_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", &format!("colour = 1\n{SPEC}"));
    let out = sis(&["run", "--config", "spec.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    write_spec(dir.path(), "ok.toml", SPEC);
    let out = sis(&["run", "--config", "ok.toml", "--rng", "halton"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hopeless_threshold_is_a_calibration_failure() {
    // No pilot draw ever exceeds l = 40 on a standard normal scale.
    let dir = TempDir::new().unwrap();
    write_spec(
        dir.path(),
        "spec.toml",
        r#"
        method = "sis-mu-sigma"
        l = 40.0
        n = 1000
        n_pilot = 200
        [model]
        kind = "linear"
        r_squared = 0.99
        "#,
    );
    let out = sis(&["calibrate", "--config", "spec.toml", "--out", "fit.toml"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn append_keeps_earlier_rows() {
    let dir = TempDir::new().unwrap();
    write_spec(dir.path(), "spec.toml", SPEC);
    let args = ["run", "--config", "spec.toml", "--method", "mc", "--out", "a.csv"];
    assert_ok(&sis(&args, dir.path()));
    let mut again = args.to_vec();
    again.push("--append");
    assert_ok(&sis(&again, dir.path()));
    let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    // One header, 2 thresholds × 3 replications per invocation.
    assert_eq!(text.lines().filter(|l| l.starts_with("method,")).count(), 1);
    assert_eq!(text.lines().count(), 1 + 12);
}
