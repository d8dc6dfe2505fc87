use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use superburst::cumulant::uniform_grid;
use superburst::dicke_point::{evolve_point_with, PointModel, PointModelSpec};
use superburst::ode::Tolerances;
use superburst_cli::preset::checks;

fn superburst(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superburst"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SUPERBURST_OUT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const LAMBDA: &str = "\
[experiment]
name = lambda40
kind = point-model

[point]
model = lambda
n_atoms = 40
rates = 2, 1

[integration]
t_max_gamma0 = 6
rel_tol = 1e-8
abs_tol = 1e-12
samples = 300
";

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn point_model_run_matches_library_output() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("lambda.ini"), LAMBDA).unwrap();
    let out = superburst(&["run", "lambda.ini", "--out", "res"], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let spec = PointModelSpec::new(PointModel::Lambda, 40, vec![2.0, 1.0]).unwrap();
    let (rec, _) = evolve_point_with(&spec, &uniform_grid(6.0, 300), Tolerances::new(1e-8, 1e-12)).unwrap();
    let csv = fs::read_to_string(tmp.path().join("res/record.csv")).unwrap();
    assert_eq!(csv, rec.to_csv());
    assert!(csv.starts_with("t_gamma0,R_total,"));

    let summary = json_file(&tmp.path().join("res/summary.json"));
    assert_eq!(summary["n_atoms"], json!(40));
    assert_eq!(summary["channels"][0]["peak"]["burst"], json!(true));

    let manifest = json_file(&tmp.path().join("res/manifest.json"));
    assert_eq!(manifest["status"], json!("ok"));
    assert_eq!(manifest["partial"], json!(false));
    assert_eq!(manifest["kind"], json!("point-model"));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    assert_eq!(files, ["config.ini", "record.csv", "summary.json"]);

    let inspect = superburst(&["inspect", "res/manifest.json"], tmp.path());
    assert_eq!(code(&inspect), 0);
    fs::write(tmp.path().join("res/record.csv"), "tampered").unwrap();
    let inspect = superburst(&["inspect", "res/manifest.json"], tmp.path());
    assert_eq!(code(&inspect), 3);
    assert!(String::from_utf8_lossy(&inspect.stdout).contains("MODIFIED"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "\
[experiment]
name = ladder_scaling
kind = scaling
[point]
model = ladder
n_atoms = 1
rates = 1, 2
[scaling]
sizes = 4, 8, 12, 16, 20, 24
fit_min_n = 8
[integration]
t_max_gamma0 = 8
samples = 200
";
    fs::write(tmp.path().join("s.ini"), cfg).unwrap();
    let mut bodies = Vec::new();
    for (dir, threads) in [("a", "1"), ("b", "2"), ("c", "1")] {
        let out = superburst(&["run", "s.ini", "--out", dir, "--threads", threads], tmp.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        bodies.push(fs::read(tmp.path().join(dir).join("scaling.csv")).unwrap());
        let m = json_file(&tmp.path().join(dir).join("manifest.json"));
        assert_eq!(m["threads"], json!(threads.parse::<usize>().unwrap()));
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0], bodies[2]);
    let summary = json_file(&tmp.path().join("a/summary.json"));
    let exponent = summary["channel_peak_fits"][0]["fit"]["exponent"].as_f64().unwrap();
    assert!(exponent > 1.5 && exponent < 2.5, "{exponent}");
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("lambda.ini"), format!("{LAMBDA}\n[output]\ndirectory = ignored\n")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_superburst"))
        .args(["run", "lambda.ini"])
        .current_dir(tmp.path())
        .env("SUPERBURST_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("root/lambda40/record.csv").exists());
    assert!(!tmp.path().join("ignored").exists());

    let out = superburst(&["run", "lambda.ini"], tmp.path());
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("ignored/record.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.ini"), LAMBDA.replace("rates = 2, 1", "rates = 2, x")).unwrap();
    let out = superburst(&["run", "bad.ini"], tmp.path());
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 8") && err.contains("point.rates"), "{err}");

    assert_eq!(code(&superburst(&["run", "missing.ini"], tmp.path())), 2);
    assert_eq!(code(&superburst(&["preset", "fig1", "--out", "p"], tmp.path())), 2);
    assert_eq!(code(&superburst(&["inspect", "bad.ini"], tmp.path())), 2);

    let too_big = "\
[experiment]
name = big
kind = exact-benchmark
[atoms]
wavelength_nm = 1000
[array]
n_x = 4
n_y = 4
spacing_lambda = 0.1
[trajectories]
method = master
";
    fs::write(tmp.path().join("big.ini"), too_big).unwrap();
    let out = superburst(&["run", "big.ini", "--out", "big"], tmp.path());
    assert_eq!(code(&out), 3);
    let m = json_file(&tmp.path().join("big/manifest.json"));
    assert_eq!(m["status"], json!("failed"));
    assert!(m["error"].as_str().unwrap().contains("at most"));
}

#[test]
fn exact_benchmark_writes_both_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "\
[experiment]
name = bench
kind = exact-benchmark
[atoms]
wavelength_nm = 1000
[array]
n_x = 2
n_y = 2
spacing_lambda = 0.2
[detector]
theta_deg = 90
phi_deg = 0
[integration]
t_max_gamma0 = 1
samples = 50
[trajectories]
count = 200
seed = 5
method = mcwf
";
    fs::write(tmp.path().join("b.ini"), cfg).unwrap();
    for dir in ["x", "y"] {
        let out = superburst(&["run", "b.ini", "--out", dir], tmp.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(tmp.path().join("x/exact.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("y/exact.csv")).unwrap());
    let header = String::from_utf8_lossy(&a).lines().next().unwrap().to_string();
    assert!(header.contains("stderr_total"), "{header}");
    let s = json_file(&tmp.path().join("x/summary.json"));
    assert_eq!(s["method"], json!("mcwf"));
    assert_eq!(s["trajectories"]["seed"], json!(5));
    assert!(s["overestimate_directional"].as_f64().unwrap().is_finite());
}

#[test]
fn fig2_preset_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = superburst(&["preset", "fig2", "--out", "p", "--check"], tmp.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let m = json_file(&tmp.path().join("p/fig2/manifest.json"));
    assert_eq!(m["runs"].as_array().unwrap().len(), 6);
    assert_eq!(m["checks"].as_array().unwrap().len(), 9);
    for r in m["runs"].as_array().unwrap() {
        let sub = tmp.path().join("p/fig2").join(r["manifest"].as_str().unwrap());
        assert_eq!(json_file(&sub)["status"], json!("ok"));
    }
    assert_eq!(code(&superburst(&["inspect", "p/fig2/manifest.json"], tmp.path())), 0);
}

#[test]
fn checks_flag_out_of_tolerance_values() {
    let sweep = |boundary: f64| {
        json!({
            "dominant_channel": "f",
            "reference_wavelength_nm": 1389.0,
            "channels": [
                { "label": "f", "intervals": [[100.0, boundary - 5.0], [690.0, 760.0], [1380.0, 1450.0]],
                  "crossings": [{ "d_nm": boundary, "entering": false }] },
                { "label": "g", "intervals": [], "crossings": [] }
            ]
        })
    };
    let lines = checks("fig5", &[("sweep_yb".into(), sweep(600.0)), ("sweep_sr".into(), sweep(1200.0))]);
    let get = |what: &str| lines.iter().find(|l| l.what.starts_with(what)).unwrap().pass;
    assert!(get("Yb burst region boundary"));
    assert!(!get("Sr burst region boundary"));
    assert!(get("sweep_yb island at 700"));
    assert!(!get("sweep_sr island at 2600"));

    let fig7 = checks("fig7", &[("yb_d3m3".into(), json!({ "total_peak_fit": { "exponent": 1.40 } }))]);
    assert!(fig7[0].pass);
    assert!(fig7.iter().skip(1).all(|l| !l.pass && l.value.is_nan()));
}
