use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mamodel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mamodel"))
        .args(args)
        .output()
        .expect("failed to run mamodel")
}

fn specs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

fn spec(name: &str) -> String {
    specs().join(name).to_string_lossy().into_owned()
}

fn build(dir: &TempDir, spec_name: &str, name: &str) -> String {
    let out = dir.path().join(name);
    let out = out.to_str().unwrap();
    let run = mamodel(&["build", "--spec", &spec(spec_name), "--radius", "0.5", "--out", out]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    out.to_string()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// Header plus rows of fields split on commas.
fn read_csv(path: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn num(field: &str) -> f64 {
    field.parse().unwrap()
}

#[test]
fn build_writes_euclidean_descriptor() {
    let dir = TempDir::new().unwrap();
    let out = build(&dir, "euclidean.json", "e");
    let text = fs::read_to_string(Path::new(&out).join("model.json")).unwrap();
    let desc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(desc["radius"], 0.5);
    assert_eq!(desc["metric"]["family"], "riemannian_conformal");
}

#[test]
fn build_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = build(&dir, "conformal.json", "a");
    let b = build(&dir, "conformal.json", "b");
    let first = fs::read(Path::new(&a).join("model.json")).unwrap();
    assert_eq!(first, fs::read(Path::new(&b).join("model.json")).unwrap());
    build(&dir, "conformal.json", "a");
    assert_eq!(first, fs::read(Path::new(&a).join("model.json")).unwrap());
}

#[test]
fn build_to_an_explicit_file() {
    let dir = TempDir::new().unwrap();
    let file = path(&dir, "nested/randers.json");
    let run = mamodel(&["build", "--spec", &spec("randers.json"), "--out", &file]);
    assert_eq!(run.status.code(), Some(0));
    assert!(Path::new(&file).is_file());
}

#[test]
fn invalid_spec_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.json");
    fs::write(&bad, r#"{ "family": "randers", "dim": 2, "b": [1.2, 0.0] }"#).unwrap();
    let run = mamodel(&["build", "--spec", &bad, "--out", &path(&dir, "m")]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("invalid metric specification"));

    fs::write(&bad, r#"{ "family": "finsler", "dim": 2 }"#).unwrap();
    assert_eq!(
        mamodel(&["build", "--spec", &bad, "--out", &path(&dir, "m")])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_or_malformed_descriptor_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let run = mamodel(&["verify", "--model", &path(&dir, "none")]);
    assert_eq!(run.status.code(), Some(2));
    let junk = path(&dir, "junk.json");
    fs::write(&junk, "{}").unwrap();
    assert_eq!(mamodel(&["verify", "--model", &junk]).status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "euclidean.json", "e");
    for args in [
        vec!["verify", "--model", &model, "--suite", "bogus"],
        vec!["verify", "--model", &model, "--samples", "0"],
        vec!["verify", "--model", &model, "--tol", "no_equals"],
        vec!["trace", "--model", &model, "--ray", "1,0", "--out", "x.csv"],
        vec!["grid-u", "--model", &model, "--window", "z1=0", "--out", "x.csv"],
        vec!["frobnicate"],
    ] {
        assert_eq!(mamodel(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn verify_is_deterministic_and_reports_json() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "randers.json", "r");
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    let args = |out: &str| {
        vec![
            "verify".to_string(),
            "--model".into(),
            model.clone(),
            "--suite".into(),
            "ma,leaf,roundtrip".into(),
            "--samples".into(),
            "3".into(),
            "--json".into(),
            out.to_string(),
        ]
    };
    let run_a = Command::new(env!("CARGO_BIN_EXE_mamodel"))
        .args(args(&a))
        .output()
        .unwrap();
    let run_b = Command::new(env!("CARGO_BIN_EXE_mamodel"))
        .args(args(&b))
        .output()
        .unwrap();
    assert_eq!(
        run_a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run_a.stdout)
    );
    assert_eq!(run_a.stdout, run_b.stdout);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "closed_form_u"));
    for c in checks {
        assert!(!c["anchor"].as_str().unwrap().is_empty());
        assert!(c.get("wall_clock_s").is_none());
    }
}

#[test]
fn seed_changes_samples_not_verdict() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "randers.json", "r");
    let run = |seed: &str, out: &str| {
        mamodel(&[
            "verify",
            "--model",
            &model,
            "--suite",
            "roundtrip",
            "--samples",
            "3",
            "--seed",
            seed,
            "--json",
            out,
        ])
    };
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    assert_eq!(run("42", &a).status.code(), Some(0));
    assert_eq!(run("7", &b).status.code(), Some(0));
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn failed_check_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "euclidean.json", "e");
    let strict = mamodel(&[
        "verify",
        "--model",
        &model,
        "--suite",
        "ma",
        "--samples",
        "2",
        "--tol",
        "ma_rank_witness=1e10",
    ]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL ma_rank_witness"));
}

#[test]
fn timings_are_opt_in() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "euclidean.json", "e");
    let out = path(&dir, "t.json");
    let run = mamodel(&[
        "verify",
        "--model",
        &model,
        "--suite",
        "roundtrip",
        "--samples",
        "2",
        "--timings",
        "--json",
        &out,
    ]);
    assert_eq!(run.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["wall_clock_s"].is_number()));
}

#[test]
fn trace_on_euclidean_leaf() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "euclidean.json", "e");
    let out = path(&dir, "trace.csv");
    let run = mamodel(&[
        "trace", "--model", &model, "--ray", "1,0,0", "--grid", "11x11", "--out", &out,
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(
        header,
        [
            "s",
            "r",
            "re_z1",
            "re_z2",
            "im_z1",
            "im_z2",
            "u",
            "ma_residual",
            "status"
        ]
    );
    assert_eq!(rows.len(), 121);
    let (r, u, status) = (column(&header, "r"), column(&header, "u"), column(&header, "status"));
    for row in &rows {
        assert!((num(&row[u]) - num(&row[r])).abs() < 1e-9, "{row:?}");
        if num(&row[r]) == 0.0 {
            assert_eq!(num(&row[column(&header, "im_z1")]), 0.0);
            assert_eq!(num(&row[column(&header, "im_z2")]), 0.0);
            assert_eq!(row[status], "on_m");
        }
    }
}

#[test]
fn trace_marks_rows_outside_the_tube() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "euclidean.json", "e");
    let out = path(&dir, "trace.csv");
    let run = mamodel(&[
        "trace", "--model", &model, "--ray", "0,0,0", "--grid", "2x3", "--r-max", "0.6", "--out", &out,
    ]);
    assert_eq!(run.status.code(), Some(0));
    let (header, rows) = read_csv(&out);
    assert_eq!(rows.len(), 6);
    let status = column(&header, "status");
    assert!(rows.iter().any(|row| row[status] == "tube_exceeded"));
}

#[test]
fn csv_numbers_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "conformal.json", "c");
    let out = path(&dir, "trace.csv");
    let run = mamodel(&[
        "trace",
        "--model",
        &model,
        "--ray",
        "0.3,1.1,0.7",
        "--grid",
        "3x3",
        "--out",
        &out,
    ]);
    assert_eq!(run.status.code(), Some(0));
    let (_, rows) = read_csv(&out);
    for row in &rows {
        for field in &row[..row.len() - 1] {
            let x: f64 = field.parse().unwrap();
            if x.is_finite() {
                assert_eq!(&format!("{x:.16e}"), field);
            }
        }
    }
}

#[test]
fn grid_on_euclidean_slice() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "euclidean.json", "e");
    let out = path(&dir, "grid.csv");
    let run = mamodel(&[
        "grid-u",
        "--model",
        &model,
        "--window",
        "x1=0,x2=0,y1=-0.3:0.3,y2=-0.3:0.3",
        "--res",
        "5x5",
        "--out",
        &out,
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["x1", "x2", "y1", "y2", "u", "min_eig_u2", "status"]);
    assert_eq!(rows.len(), 25);
    for row in &rows {
        let (y1, y2, u) = (num(&row[2]), num(&row[3]), num(&row[4]));
        assert!((u - y1.hypot(y2)).abs() < 1e-9, "{row:?}");
        if y1 == 0.0 && y2 == 0.0 {
            assert_eq!(u, 0.0);
            assert_eq!(row[6], "on_m");
        }
    }
}

#[test]
fn grid_of_one_point() {
    let dir = TempDir::new().unwrap();
    let model = build(&dir, "randers.json", "r");
    let out = path(&dir, "grid.csv");
    let run = mamodel(&[
        "grid-u",
        "--model",
        &model,
        "--window",
        "y1=0.2:0.3,y2=0.1:0.2",
        "--res",
        "1x1",
        "--out",
        &out,
    ]);
    assert_eq!(run.status.code(), Some(0));
    let (_, rows) = read_csv(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][6], "ok");
}
