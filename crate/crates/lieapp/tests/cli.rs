use std::path::PathBuf;
use std::process::{Command, Output};

fn lieapp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lieapp")).args(args).output().expect("spawn lieapp")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lieapp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn report(path: &PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_catenoid_passes_and_writes_mesh() {
    let (out, mesh) = (tmp("cat.json"), tmp("cat.obj"));
    let o = lieapp(&[
        "analyze", "--surface", "catenoid", "--grid", "32x32", "--strict",
        "--out", out.to_str().unwrap(), "--mesh", mesh.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let obj = std::fs::read_to_string(mesh).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 32 * 32);
    assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 31 * 31);
}

#[test]
fn classify_catenoid_reports_isothermic_pair() {
    let out = tmp("cls.json");
    let o = lieapp(&["classify", "--surface", "catenoid", "--grid", "32x32", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let r = report(&out);
    assert_eq!(r["info"]["class"], "non_tubular");
    assert_eq!(r["info"]["p"], "isothermic");
    assert_eq!(r["info"]["q"], "l_isothermic");
}

#[test]
fn auto_fit_on_torus_is_tube_triple() {
    let out = tmp("torus.json");
    let o = lieapp(&[
        "analyze", "--surface", "torus", "--params", "R=2,r=1", "--grid", "24x24", "--lw", "auto",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let lw: Vec<f64> = serde_json::from_value(report(&out)["info"]["lw"].clone()).unwrap();
    for (x, y) in lw.iter().zip([1.0, -1.0, 1.0]) {
        assert!((x / lw[0] - y).abs() < 1e-9, "{lw:?}");
    }
}

#[test]
fn stdout_is_json_without_out() {
    let o = lieapp(&["classify", "--surface", "cylinder", "--grid", "16x16"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["info"]["class"], "tubular");
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| lieapp(args).status.code().unwrap();
    assert_eq!(code(&["analyze", "--surface", "sphere", "--grid", "16x16"]), 3);
    assert_eq!(code(&["analyze", "--surface", "nothing"]), 2);
    assert_eq!(code(&["analyze", "--surface", "catenoid", "--grid", "4x4"]), 2);
    assert_eq!(code(&["analyze"]), 2);
    assert_eq!(code(&["analyze", "--surface", "catenoid", "--lw", "0,0,0"]), 2);
    assert_eq!(code(&["analyze", "--surface", "catenoid", "--tol.bogus=1"]), 2);
    assert_eq!(code(&["analyze", "--surface", "torus", "--params", "R=1,r=2"]), 2);
    assert_eq!(
        code(&["analyze", "--surface", "catenoid", "--grid", "16x16", "--tol.closedness=1e-12", "--strict"]),
        4
    );
    // same failure without --strict is only reported
    assert_eq!(code(&["analyze", "--surface", "catenoid", "--grid", "16x16", "--tol.closedness=1e-12"]), 0);
}

#[test]
fn exported_grid_reingests() {
    let (g, a, b) = (tmp("g.json"), tmp("a.json"), tmp("b.json"));
    let run = |extra: &[&str], out: &PathBuf| {
        let mut args = vec!["analyze", "--grid", "16x16", "--lw", "1,0,1", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(lieapp(&args).status.success());
    };
    run(&["--surface", "pseudosphere", "--export-grid", g.to_str().unwrap()], &a);
    run(&["--input", g.to_str().unwrap()], &b);
    let (ra, rb) = (report(&a), report(&b));
    let q = |r: &serde_json::Value| {
        r["checks"].as_array().unwrap().iter().find(|c| c["name"] == "quadratic_differential").unwrap()["value"]
            .as_f64()
            .unwrap()
    };
    assert!(q(&rb) < 1e-8 && q(&ra) < 1e-8);
}

#[test]
fn darboux_and_calapso_run() {
    let out = tmp("d.json");
    let o = lieapp(&[
        "darboux", "--surface", "catenoid", "--domain=-0.5,0.5,0,1.5707963", "--grid", "33x33",
        "--m", "0.4", "--seed", "constrained", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&out)["info"]["p_hat.degree"], 1);

    let o = lieapp(&["calapso", "--surface", "catenoid", "--grid", "32x32", "--t", "0.1,0.5"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["checks"].as_array().unwrap().iter().any(|c| c["name"] == "t=0.5.q_invariance"));
}

#[test]
fn convergence_table_has_orders() {
    let o = lieapp(&["convergence", "--surface", "catenoid", "--grids", "16,32"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let orders = &r["convergence"]["orders"]["closedness"];
    assert!((orders[0].as_f64().unwrap() - 2.0).abs() < 0.3);
}
