use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn cgeom(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cgeom")).args(args).output().expect("spawn cgeom")
}

fn ok(args: &[&str]) {
    let out = cgeom(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(p: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn classify_inverse_square() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({
            "cost": {"kind": "inverse_square"},
            "domain": {
                "source": {"kind": "ball", "center": [0.0, 0.0], "radius": 0.3},
                "target": {"kind": "ball", "center": [2.0, 0.0], "radius": 0.3}
            },
            "classify": {"samples": 8, "restarts": 16, "seed": 4}
        }),
    );
    let out = path(dir.path(), "r.json");
    ok(&["classify", "--config", &cfg, "--out", &out]);
    let r = read(&out);
    // orthogonal minimum is zero, parallel directions are negative
    assert_eq!(r["classification"]["verdict"], "a3w_only");
    assert_eq!(r["nncc"]["verdict"], "fails");
    assert_eq!(r["seed"], 4);
}

#[test]
fn classify_needs_a_domain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &json!({"cost": {"kind": "inverse_square"}}));
    let out = cgeom(&["classify", "--config", &cfg, "--out", &path(dir.path(), "r.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain"));
}

#[test]
fn cexp_round_trip_for_half_squared_distance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &json!({"cost": {"kind": "half_squared_distance"}, "base": [1.0, 2.0]}));
    let pts = dir.path().join("p.csv");
    fs::write(&pts, "p0,p1\n0.5,-0.25\n0,0\n").unwrap();
    let out = path(dir.path(), "m.csv");
    ok(&["cexp", "--config", &cfg, "--points", pts.to_str().unwrap(), "--out", &out]);
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let y: Vec<f64> = (2..4).map(|i| rows[0][i].parse().unwrap()).collect();
    // -D_x c(x0, y) = y - x0 = p
    assert!((y[0] - 1.5).abs() < 1e-9 && (y[1] - 1.75).abs() < 1e-9, "{y:?}");
    assert_eq!(&rows[0][4], "");
}

fn solve(dir: &Path) -> String {
    let cfg = write(
        dir,
        "ot.json",
        &json!({
            "cost": {"kind": "half_squared_distance"},
            "source": {"domain": {"kind": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]}, "resolution": [24, 24]},
            "target": {
                "sites": [[0.25, 0.5], [0.75, 0.5]],
                "weights": [0.5, 0.5],
                "support": {"kind": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]}
            },
            "options": {"tol": 1e-9},
            "lambda": {"boxes": 20}
        }),
    );
    let pot = path(dir, "u.json");
    let rep = path(dir, "ot_report.json");
    ok(&["ot-solve", "--config", &cfg, "--out", &pot, "--report", &rep]);
    let r = read(&rep);
    assert!(r["solution"]["residual"].as_f64().unwrap() <= 1e-9);
    assert!(r["lambda"]["ratio"].as_f64().unwrap() > 0.0);
    pot
}

#[test]
fn ot_solve_then_scan() {
    let dir = tempfile::tempdir().unwrap();
    let pot = solve(dir.path());
    let u = read(&pot);
    assert_eq!(u["sites"].as_array().unwrap().len(), 2);
    let l = u["lambdas"].as_array().unwrap();
    // symmetric instance: equal offsets
    assert!((l[0].as_f64().unwrap() - l[1].as_f64().unwrap()).abs() < 1e-6);

    let cfg = write(
        dir.path(),
        "scan.json",
        &json!({
            "grid": {"lo": [0.0, 0.0], "hi": [1.0, 1.0], "res": [21, 21]},
            "support": {"kind": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]},
            "tol": 1e-6
        }),
    );
    let table = path(dir.path(), "scan.csv");
    let rep = path(dir.path(), "scan.json.out");
    ok(&["degeneracy", "--potential", &pot, "--config", &cfg, "--table", &table, "--out", &rep]);
    let mut rdr = csv::Reader::from_path(&table).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["x", "affdim", "meets_interior", "bound_ok"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    // the interface x₁ = 1/2 crosses the grid column at 0.5
    assert!(!rows.is_empty());
    for r in &rows {
        let x: Vec<f64> = r[0].split(';').map(|s| s.parse().unwrap()).collect();
        assert!((x[0] - 0.5).abs() < 1e-9);
        assert_eq!(&r[1], "1");
    }
    assert_eq!(read(&rep)["singular_points"].as_u64().unwrap() as usize, rows.len());
}

#[test]
fn contact_on_a_two_site_potential() {
    let dir = tempfile::tempdir().unwrap();
    let pot = write(
        dir.path(),
        "u.json",
        &json!({"cost": {"kind": "neg_inner_product"}, "sites": [[0.0, 1.0], [0.0, -1.0]], "lambdas": [0.0, 0.0]}),
    );
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({
            "x0": [0.0, 0.0],
            "grid": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0], "res": [21, 21]},
            "tol": 1e-9,
            "midpoint_pairs": 20
        }),
    );
    let out = path(dir.path(), "r.json");
    ok(&["contact", "--potential", &pot, "--config", &cfg, "--out", &out]);
    let r = read(&out);
    assert!(r["contact"]["points"].as_array().unwrap().len() > 1);
    assert_eq!(r["containment"], true);
    assert_eq!(r["midpoints_outside"], 0);
}

#[test]
fn loeper_check_on_inverse_square() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({
            "cost": {"kind": "inverse_square"},
            "domain": {
                "source": {"kind": "ball", "center": [0.0, 0.0], "radius": 0.3},
                "target": {"kind": "ball", "center": [2.0, 0.0], "radius": 0.3}
            },
            "t_samples": 16,
            "classify": false
        }),
    );
    let out = path(dir.path(), "r.json");
    ok(&["loeper-check", "--config", &cfg, "--trials", "50", "--seed", "3", "--out", &out]);
    let r = read(&out);
    assert_eq!(r["violations"], 0);
    assert_eq!(r["suites"].as_array().unwrap().len(), 2);
    assert_eq!(r["suites"][0]["trials"], 50);
}

#[test]
fn construction_euclidean_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({"n": 2, "k": 1, "r0": 1.0, "R0": 1.0, "ds": [0.125, 0.0625, 0.03125], "samples": 20000, "f": {"power": 2}}),
    );
    let out = path(dir.path(), "r.json");
    let table = path(dir.path(), "v.csv");
    ok(&["construction", "--config", &cfg, "--mode", "euclidean", "--out", &out, "--table", &table]);
    let mut rdr = csv::Reader::from_path(&table).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["d", "f_d", "vol_Q", "vol_Qbar", "ratio_Q", "ratio_cyl", "lhs_step5", "rhs_step5", "barrier_ok"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let d: f64 = r[0].parse().unwrap();
        let f: f64 = r[1].parse().unwrap();
        assert!((f - d * d).abs() < 1e-15);
    }
    let r = read(&out);
    // n = 2k: lhs = 1 for every f while rhs = d² → 0
    assert_eq!(r["probe"]["flag"], true);
    assert!(r["barrier"]["ok"].is_boolean());
}

#[test]
fn construction_rejects_bad_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &json!({"n": 2, "k": 2, "r0": 1.0, "R0": 1.0}));
    let out = cgeom(&[
        "construction",
        "--config",
        &cfg,
        "--mode",
        "euclidean",
        "--out",
        &path(dir.path(), "r.json"),
        "--table",
        &path(dir.path(), "v.csv"),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k"));
}
