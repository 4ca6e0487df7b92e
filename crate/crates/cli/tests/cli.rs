use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const PENDULUM: &str = r#"
n = 64
tau = 0.1
seed = 3

[model]
form = "separable"
dim = 1
potential = [{ amplitude = 1.0, frequency = [1] }]

[flow]
start = { x = [0.25], v = [0.0] }
steps = 50
taus = [0.1, 0.05, 0.025]
"#;

fn weakkam(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_weakkam"));
    cmd.args(args).env_remove("WEAKKAM_CACHE_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn solve_reports_exact_pendulum_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", PENDULUM);
    let out = weakkam(
        &["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    let dir = run_dir(&out);
    let s = summary(&dir);
    assert_eq!(s["results"]["bar_L"].as_f64().unwrap(), -1.0);
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(s["version"], env!("CARGO_PKG_VERSION"));
    assert!(s["residual"].as_f64().unwrap() <= 1e-12);
    for stage in ["velocity_bound", "graph", "solve"] {
        assert!(s["wall_clock_secs"][stage].is_number(), "missing stage {stage}");
    }
    assert_eq!(file_names(&dir), ["calibration.csv", "costs.csv", "summary.json", "u.csv", "u.svg"]);
}

#[test]
fn outputs_are_reproducible_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", PENDULUM);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for cmd in ["solve", "mather", "aubry", "flow"] {
        let da = run_dir(&weakkam(
            &[cmd, "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--threads", "1"],
            &[],
        ));
        let db = run_dir(&weakkam(
            &[cmd, "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "3"],
            &[],
        ));
        assert_eq!(da.file_name(), db.file_name());
        for name in file_names(&da) {
            if name == "summary.json" {
                let (mut sa, mut sb) = (summary(&da), summary(&db));
                sa.as_object_mut().unwrap().remove("wall_clock_secs");
                sb.as_object_mut().unwrap().remove("wall_clock_secs");
                assert_eq!(sa, sb, "{cmd}: summary differs beyond timings");
            } else {
                assert_eq!(fs::read(da.join(&name)).unwrap(), fs::read(db.join(&name)).unwrap(), "{cmd}/{name}");
            }
        }
    }
}

#[test]
fn seed_changes_sampling_and_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", PENDULUM);
    let base = ["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()];
    let d1 = run_dir(&weakkam(&base, &[]));
    let mut args = base.to_vec();
    args.extend(["--seed", "99"]);
    let d2 = run_dir(&weakkam(&args, &[]));
    assert_ne!(d1, d2);
    assert_eq!(summary(&d2)["seed"], 99);
}

#[test]
fn flow_reports_second_order_defects() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", PENDULUM);
    let dir = run_dir(&weakkam(
        &["flow", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    ));
    let s = summary(&dir);
    let ratios = s["results"]["richardson_ratios"].as_array().unwrap();
    assert_eq!(ratios.len(), 2);
    for r in ratios {
        let r = r.as_f64().unwrap();
        assert!((3.6..=4.4).contains(&r), "ratio {r}");
    }
    let csv = fs::read_to_string(dir.join("pseudo_orbit_0.csv")).unwrap();
    assert!(csv.starts_with("k,x,v,defect\n"));
    assert_eq!(csv.lines().count(), 52);
}

#[test]
fn select_picks_unpenalized_maximum() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "dw.toml",
        r#"
n = 64
tau = 0.1
[model]
form = "separable"
dim = 1
potential = [{ amplitude = 1.0, frequency = [2] }]
[select]
penalty = { kind = "bump", center = [0.5], width = 0.25 }
epsilon_pen = 1e-3
"#,
    );
    let dir = run_dir(&weakkam(
        &["select", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    ));
    assert_eq!(fs::read_to_string(dir.join("support.csv")).unwrap(), "x,v\n0,0\n");
}

#[test]
fn json_config_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "free.json",
        r#"{"n": 64, "tau": 0.1, "velocity": {"d": 2.0},
            "model": {"form": "separable", "dim": 1}}"#,
    );
    let dir = run_dir(&weakkam(
        &["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    ));
    let s = summary(&dir);
    assert_eq!(s["results"]["bar_L"].as_f64().unwrap(), 0.0);
    assert_eq!(s["residual"].as_f64().unwrap(), 0.0);
}

#[test]
fn graph_cache_is_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", PENDULUM);
    let cache = tmp.path().join("cache");
    let args = ["aubry", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()];
    let first = summary(&run_dir(&weakkam(&args, &[("WEAKKAM_CACHE_DIR", &cache)])));
    assert_eq!(first["results"]["graph_cache_hit"], false);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    let dir = run_dir(&weakkam(&args, &[("WEAKKAM_CACHE_DIR", &cache)]));
    let second = summary(&dir);
    assert_eq!(second["results"]["graph_cache_hit"], true);
    assert_eq!(first["results"]["aubry_set_size"], second["results"]["aubry_set_size"]);
    assert_eq!(fs::read_to_string(dir.join("aubry_set.csv")).unwrap(), "x,v\n0,0\n");
}

#[test]
fn sweep_writes_report_and_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        r#"
n = 32
[model]
form = "separable"
dim = 1
potential = [{ amplitude = 1.0, frequency = [1] }]
[sweep]
taus = [0.2, 0.1, 0.05]
coupling = { rule = "fixed", n = 64 }
alpha_h = 1.0
reference = { kind = "point-list", points = [{ x = [0.0], v = [0.0] }] }
"#,
    );
    let dir = run_dir(&weakkam(
        &["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    ));
    let report = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    for line in report.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[5].parse::<f64>().unwrap(), 0.0, "bar_l_error in {line}");
        assert!(cols[13].parse::<f64>().unwrap() <= 1e-12, "calibrated_residual in {line}");
    }
    assert!(dir.join("trends.svg").exists());
    assert!(dir.join("kuratowski.csv").exists());
    assert!(dir.join("rows/00_tau0.2/aubry.csv").exists());
}

#[test]
fn user_csv_reference_is_read_relative_to_config() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "ref.csv", "x,v\n0.0,0.0\n");
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        r#"
[model]
form = "separable"
dim = 1
potential = [{ amplitude = 1.0, frequency = [1] }]
[sweep]
taus = [0.2, 0.1, 0.05]
coupling = { rule = "fixed", n = 32 }
alpha_h = 1.0
reference = { kind = "user-csv", path = "ref.csv" }
"#,
    );
    let dir = run_dir(&weakkam(
        &["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()],
        &[],
    ));
    let s = summary(&dir);
    assert_eq!(s["results"]["rows"][0]["row"]["aubry_out"].as_f64().unwrap(), 0.0);
}

#[test]
fn single_tau_sweep_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        r#"
[model]
form = "separable"
dim = 1
potential = [{ amplitude = 1.0, frequency = [1] }]
[sweep]
taus = [0.1]
alpha_h = 1.0
reference = { kind = "full-zero-section" }
"#,
    );
    let out = weakkam(
        &["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 3"));
}

#[test]
fn missing_config_exits_with_config_code() {
    let out = weakkam(&["solve", "--config", "/nonexistent/run.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(weakkam(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(weakkam(&["solve"], &[]).status.code(), Some(1));
    assert_eq!(weakkam(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn disconnected_graph_is_a_solver_error() {
    // a velocity bound below one grid step leaves only self-loops
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "p.toml",
        r#"
n = 64
tau = 0.1
[model]
form = "separable"
dim = 1
potential = [{ amplitude = 1.0, frequency = [1] }]
[velocity]
d = 0.01
"#,
    );
    let out = weakkam(
        &["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
