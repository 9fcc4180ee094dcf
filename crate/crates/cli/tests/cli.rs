//! End-to-end runs of the `photobio` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_photobio");

/// Reduced resolution so each run takes a few seconds at most.
const COARSE: &str = "
[numerics]
mesh_points = 51
ordinates_per_hemisphere = 6
azimuthal_points = 6
";

const OVERSTABLE: &str = "
[suspension]
sc = 20.0
us = 20.0
tau_h = 1.0
omega = 0.605
aniso_a = 0.38
alpha_i_deg = 40.0
i0 = 1.0
g_c = 1.0

[stability]
a_min = 2.4
a_max = 2.9
a_points = 3
";

const STATIONARY: &str = "
[suspension]
sc = 20.0
us = 16.0
tau_h = 0.5
omega = 0.475
aniso_a = 0.0
alpha_i_deg = 0.0
i0 = 1.0
g_c = 1.0

[stability]
a_min = 2.0
a_max = 3.0
a_points = 3
";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("photobio-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove("PHOTOBIO_JOBS")
        .output()
        .unwrap()
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn csv_column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn still_suspension_is_uniform() {
    let dir = scratch("still");
    let text = STATIONARY.replace("us = 16.0", "us = 0.0");
    let out = run(&["basic-state"], &config(&dir, &text), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.join("basic_state.csv"));
    assert!(csv.starts_with("x3,n_b,G_b,q_b,T_b\n"));
    let n = csv_column(&csv, "n_b");
    assert_eq!(n.len(), 101);
    assert!(n.iter().all(|v| v == "1"), "{n:?}");
    let meta: serde_json::Value = serde_json::from_str(&read(dir.join("basic_state.json"))).unwrap();
    assert_eq!(meta["summary"]["converged"], true);
    assert_eq!(meta["params"]["swim_speed"], 0.0);
    assert!(read(dir.join("basic_state.svg")).starts_with("<svg"));
}

#[test]
fn unconverged_state_is_written_and_flagged() {
    let dir = scratch("budget");
    let text = format!("{STATIONARY}\n[numerics]\npicard_max_iter = 1\n");
    let out = run(&["basic-state"], &config(&dir, &text), &dir);
    assert_eq!(out.status.code(), Some(2));
    let meta: serde_json::Value = serde_json::from_str(&read(dir.join("basic_state.json"))).unwrap();
    assert_eq!(meta["summary"]["converged"], false);
}

#[test]
fn malformed_config_reports_position() {
    let dir = scratch("malformed");
    let out = run(&["basic-state"], &config(&dir, "[suspension]\nsc = = 2\n"), &dir);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    let out = run(&["critical"], &config(&dir, &format!("{STATIONARY}\nbogus = 1\n")), &dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn neutral_curve_single_point() {
    let dir = scratch("single");
    let cfg = config(&dir, &format!("{OVERSTABLE}{COARSE}"));
    let out = run(&["neutral-curve", "--a-min", "2.5", "--a-max", "2.5", "--a-points", "1"], &cfg, &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.join("neutral_curve.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("a,ra,branch,im_gamma\n2.5,"));
    assert_eq!(csv_column(&csv, "branch"), vec!["oscillatory"]);
    let svg = read(dir.join("neutral_curve.svg"));
    assert!(svg.contains("stroke-dasharray"));
}

#[test]
fn critical_output_fields() {
    let dir = scratch("critical");
    let out = run(&["critical"], &config(&dir, &format!("{OVERSTABLE}{COARSE}")), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(dir.join("critical.json"))).unwrap();
    let (a, lambda) = (v["a_c"].as_f64().unwrap(), v["wavelength"].as_f64().unwrap());
    assert!((a * lambda - 2.0 * std::f64::consts::PI).abs() < 1e-7);
    assert_eq!(v["branch"], "oscillatory");
    let period = v["period"].as_f64().unwrap();
    assert!((period * v["im_gamma"].as_f64().unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-7);
    assert_eq!(v["config"]["suspension"]["us"], 20.0);

    let dir = scratch("critical-stationary");
    let out = run(&["critical"], &config(&dir, &format!("{STATIONARY}{COARSE}")), &dir);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&read(dir.join("critical.json"))).unwrap();
    assert_eq!(v["branch"], "stationary");
    assert!(v.get("period").is_none());
}

#[test]
fn snapshots_cover_one_cycle() {
    let dir = scratch("snapshots");
    let out = run(&["mode-snapshots"], &config(&dir, &format!("{OVERSTABLE}{COARSE}")), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.join("mode_snapshots.csv"));
    let fractions = csv_column(&csv, "fraction");
    let w = csv_column(&csv, "w");
    let per = fractions.iter().filter(|f| *f == "0").count();
    assert_eq!(fractions.len(), 5 * per);
    // Periodicity up to the printed precision.
    for k in 0..per {
        let (first, last): (f64, f64) = (w[k].parse().unwrap(), w[4 * per + k].parse().unwrap());
        assert!((first - last).abs() <= 1e-8 * first.abs().max(1e-3), "{first} {last}");
    }

    let dir = scratch("snapshots-stationary");
    let out = run(&["mode-snapshots"], &config(&dir, &format!("{STATIONARY}{COARSE}")), &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stationary"));
}

const SWEEP: &str = "
[sweep]
[[sweep.axes]]
path = \"suspension.alpha_i_deg\"
values = [0.0, 20.0]
[[sweep.axes]]
path = \"suspension.omega\"
values = [0.4, 0.5]
";

#[test]
fn sweep_is_deterministic_and_resumable() {
    let base = format!("{STATIONARY}{COARSE}{SWEEP}").replace("a_points = 3", "a_points = 2");
    let one = scratch("sweep-1");
    let four = scratch("sweep-4");
    let cfg = config(&one, &base);
    let out1 = run(&["sweep", "--jobs", "1"], &cfg, &one);
    assert!(out1.status.success(), "{}", String::from_utf8_lossy(&out1.stderr));
    let out4 = Command::new(BIN)
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&four)
        .env("PHOTOBIO_JOBS", "4")
        .output()
        .unwrap();
    assert!(out4.status.success());
    let (a, b) = (read(one.join("sweep.csv")), read(four.join("sweep.csv")));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 5);
    assert!(a.starts_with("suspension.alpha_i_deg,suspension.omega,a_c,ra_c,"));
    assert_eq!(csv_column(&a, "suspension.omega"), vec!["0.4", "0.5", "0.4", "0.5"]);

    // A rerun reuses every stored point and reproduces the table.
    let stamp = |dir: &Path| {
        let mut times: Vec<_> = std::fs::read_dir(dir.join("points"))
            .unwrap()
            .map(|e| e.unwrap().metadata().unwrap().modified().unwrap())
            .collect();
        times.sort();
        times
    };
    let before = stamp(&one);
    assert_eq!(before.len(), 4);
    let again = run(&["sweep", "--jobs", "2"], &cfg, &one);
    assert!(again.status.success());
    assert_eq!(stamp(&one), before);
    assert_eq!(read(one.join("sweep.csv")), a);
}

#[test]
fn sweep_reports_failed_points() {
    let dir = scratch("sweep-fail");
    let text = format!("{STATIONARY}{COARSE}\n[sweep]\n[[sweep.axes]]\npath = \"suspension.omega\"\nvalues = [0.5, 1.5]\n")
        .replace("a_points = 3", "a_points = 1");
    let out = run(&["sweep", "--jobs", "2"], &config(&dir, &text), &dir);
    assert_eq!(out.status.code(), Some(3));
    let csv = read(dir.join("sweep.csv"));
    assert_eq!(csv_column(&csv, "status"), vec!["ok", "failed"]);
}

#[test]
fn empty_sweep_runs_the_base_point() {
    let dir = scratch("sweep-empty");
    let text = format!("{STATIONARY}{COARSE}").replace("a_points = 3", "a_points = 1");
    let out = run(&["sweep", "--jobs", "1"], &config(&dir, &text), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(dir.join("sweep.csv")).lines().count(), 2);
}

#[test]
fn oversized_sweep_is_a_config_error() {
    let dir = scratch("sweep-cap");
    let text = format!("{STATIONARY}\n[sweep]\nmax_points = 1\n[[sweep.axes]]\npath = \"suspension.omega\"\nvalues = [0.1, 0.2]\n");
    let out = run(&["sweep"], &config(&dir, &text), &dir);
    assert_eq!(out.status.code(), Some(1));
}
