//! End-to-end tests of the `cegsyn` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cegsyn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cegsyn"))
        .args(args)
        .current_dir(cwd)
        .env("CEGSYN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

/// Run report JSON with every wall-time field zeroed.
fn report_without_timing(path: &Path) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(m) => {
                for (k, x) in m.iter_mut() {
                    if k == "wall_time_s" {
                        *x = Value::from(0.0);
                    } else {
                        strip(x);
                    }
                }
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    strip(&mut v);
    v
}

#[test]
fn lane_run_succeeds_and_echoed_config_reproduces_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lane.toml", "scenario = \"lane_keeping\"\noutput_dir = \"first\"\n");
    let o = cegsyn(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = tmp.path().join("first");
    let report = report_without_timing(&first.join("run_report.json"));
    assert_eq!(report["outcome"], "success");
    for f in ["counterexamples.csv", "surrogate_model.json", "config.effective.toml", "iterations.csv"] {
        assert!(first.join(f).exists(), "{f}");
    }

    let echoed = first.join("config.effective.toml");
    let o = cegsyn(&["run", echoed.to_str().unwrap(), "--output", "second"], tmp.path());
    assert_eq!(code(&o), 0);
    let second = tmp.path().join("second");
    assert_eq!(report, report_without_timing(&second.join("run_report.json")));
    for f in ["surrogate_model.json", "counterexamples.csv"] {
        assert!(fs::read(first.join(f)).unwrap() == fs::read(second.join(f)).unwrap(), "{f} differs");
    }
    // Only the overridden output directory differs between the echoes.
    let echo = |dir: &Path| -> Vec<String> {
        fs::read_to_string(dir.join("config.effective.toml"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("output_dir"))
            .map(String::from)
            .collect()
    };
    assert_eq!(echo(&first), echo(&second));

    let o = cegsyn(&["export-plots", first.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0);
    let bands = fs::read_to_string(first.join("model_bands.csv")).unwrap();
    assert!(bands.starts_with("component,d,theta_delta,h_star,low,up,miss\n"));
    assert!(!bands.contains('\r'));

    let out = tmp.path().join("learned");
    let o = cegsyn(
        &[
            "learn-model",
            cfg.to_str().unwrap(),
            "--counterexamples",
            first.join("counterexamples.csv").to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("surrogate_model.json").exists());
    assert!(out.join("datapoints_d_hat.csv").exists());
}

#[test]
fn zero_horizon_is_a_config_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[sim]\nhorizon = 0\n");
    let o = cegsyn(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon must be >= 1"));
}

#[test]
fn malformed_config_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "scenario = \"braking\"\n[loop]\nmaster_seed = = 3\n");
    let o = cegsyn(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    let cfg = write_config(tmp.path(), "unknown.toml", "[spec]\n\nepsilon = 3\n");
    let o = cegsyn(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn unwritable_output_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("blocker"), "not a directory").unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "output_dir = \"blocker/run\"\n");
    let o = cegsyn(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn falsify_exit_codes_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lane.toml", "output_dir = \"out\"\n");
    let c = cfg.to_str().unwrap();
    let a = cegsyn(&["falsify", c, "--params", "0,0", "--seed", "3", "--output", "a"], tmp.path());
    assert_eq!(code(&a), 4);
    let b = cegsyn(&["falsify", c, "--params", "0,0", "--seed", "3", "--output", "b"], tmp.path());
    assert_eq!(code(&b), 4);
    for f in ["falsify_result.json", "falsify_history.csv", "counterexamples.csv"] {
        let read = |d: &str| fs::read(tmp.path().join(d).join(f)).unwrap();
        assert!(read("a") == read("b"), "{f} differs");
    }

    let cfg = write_config(tmp.path(), "true.toml", "[spec]\nphi_s = \"true\"\n");
    let o = cegsyn(
        &["falsify", cfg.to_str().unwrap(), "--params", "0,0", "--budget", "20", "--output", "t"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let o = cegsyn(&["falsify", c, "--params", "1,2,3"], tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_writes_one_row_per_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", "scenario = \"braking\"\n[sim]\nhorizon = 50\n");
    let o = cegsyn(
        &["simulate", cfg.to_str().unwrap(), "--params", "10,6", "--x0", "45,10,12,0.5", "--output", "t.csv"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().count(), 52);
    assert!(text.starts_with("step,t,d,v,d_car,v_rear,car_color_similarity,v_hat,d_hat,brake\n"));
    let o = cegsyn(&["simulate", cfg.to_str().unwrap(), "--params", "10,6", "--x0", "1", "--output", "u.csv"], tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn export_plots_without_artifacts_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cegsyn(&["export-plots", tmp.path().to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
}
