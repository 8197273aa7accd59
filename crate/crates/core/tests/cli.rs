use std::path::Path;
use std::process::{Command, Output};

use sphereplane::io::{load_run_csv, CalibrationTable};

fn sphereplane(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sphereplane"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/run1.toml")
        .display()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_from_config_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let o = sphereplane(&["simulate", "--config", &config(), "--out", s(p)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let run = load_run_csv(&a).unwrap();
    assert_eq!(run.metadata.seed, Some(1));
    assert_eq!(run.samples.len(), 12 * 23);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.csv");
    let o = sphereplane(&[
        "simulate",
        "--config",
        &config(),
        "--seed",
        "9",
        "--out",
        s(&p),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(load_run_csv(&p).unwrap().metadata.seed, Some(9));
}

#[test]
fn calibrate_then_stability() {
    let dir = tempfile::tempdir().unwrap();
    let (run, cal) = (dir.path().join("run.csv"), dir.path().join("cal.csv"));
    let o = sphereplane(&["simulate", "--seed", "3", "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = sphereplane(&["calibrate", "--input", s(&run), "--out", s(&cal)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = CalibrationTable::load(&cal).unwrap();
    assert_eq!(table.rows.len(), 12);

    let o = sphereplane(&["stability", "--input", s(&cal), "--mode", "free"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    // Free exponent needs five points, so twelve distances give eight steps.
    assert_eq!(text.lines().filter(|l| l.ends_with(",ok")).count(), 8);

    let out = dir.path().join("scan");
    let o = sphereplane(&["stability", "--input", s(&run), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("stability_fixed.csv").exists());
    assert!(out.join("stability_free.csv").exists());
}

#[test]
fn residuals_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.csv");
    let rep = dir.path().join("report");
    assert_eq!(
        sphereplane(&["simulate", "--seed", "4", "--out", s(&run)])
            .status
            .code(),
        Some(0)
    );
    let o = sphereplane(&["residuals", "--input", s(&run), "--out-dir", s(&rep)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("exponential.casimir"));
    let report = sphereplane::io::read_report(&rep.join("report.json")).unwrap();
    assert_eq!(report.branches.len(), 2);
    assert!(report.failures().is_empty());
}

#[test]
fn lifshitz_table_over_default_range() {
    let o = sphereplane(&[
        "lifshitz",
        "--x-min",
        "50nm",
        "--x-max",
        "3um",
        "--points",
        "6",
        "--temperature",
        "300",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert!((rows[0][0] - 50e-9).abs() < 1e-20);
    assert!((rows[5][0] - 3e-6).abs() < 1e-18);
    for r in &rows {
        // Real gold at room temperature sits below the ideal-mirror value.
        let ratio = r[1] / r[2];
        assert!(ratio > 0.2 && ratio < 1.0, "ratio {ratio} at {}", r[0]);
        assert!(r[3] < 0.0 && r[5] < 0.0);
    }
}

#[test]
fn exit_codes() {
    let o = sphereplane(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    let o = sphereplane(&["lifshitz", "--x-min", "3um", "--x-max", "50nm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));

    let o = sphereplane(&["calibrate", "--input", "/nonexistent/run.csv"]);
    assert_eq!(o.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.csv");
    assert_eq!(
        sphereplane(&["simulate", "--seed", "5", "--out", s(&run)])
            .status
            .code(),
        Some(0)
    );
    // A starting node a metre away is outside what the V₀ law supports.
    let rep = dir.path().join("report");
    let o = sphereplane(&[
        "residuals",
        "--input",
        s(&run),
        "--out-dir",
        s(&rep),
        "--x-n",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("stage failed"));
}
