use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spikeopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeopt"))
        .current_dir(dir)
        .env_remove("SPIKEOPT_TOL")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spikeopt(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sniper_min_writes_result_and_waveform() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synthesize", "--model", "sniper", "--M", "0.7", "--objective", "min"]);
    let r = json(&dir.path().join("result.json"));
    assert_eq!(r["word"], "XYX");
    assert_eq!(r["objective"], "min");
    assert!(r["charge_residual"].as_f64().unwrap().abs() < 1e-9);
    let csv = fs::read_to_string(dir.path().join("result_control.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(csv.lines().next(), Some("t_start,t_end,u"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[2]).collect::<Vec<_>>(), vec![-0.7, 0.7, -0.7]);
    let charge: f64 = rows.iter().map(|r| r[2] * (r[1] - r[0])).sum();
    assert!(charge.abs() < 1e-9);
    assert!((rows[2][1] - r["predicted_T"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn hh_max_at_three_holds_on_the_negative_singular_arc() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synthesize", "--model", "hodgkin_huxley", "--M", "3.0", "--objective", "max", "--out", "hh.json"]);
    let r = json(&dir.path().join("hh.json"));
    assert_eq!(r["word"], "Y-S-Y");
    let hold = r["schedule"]["segments"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["kind"] == "hold")
        .unwrap()
        .clone();
    assert!(hold["u"].as_f64().unwrap() < 0.0);
    assert!((hold["theta"].as_f64().unwrap() - 4.58).abs() < 0.05);
    assert!(dir.path().join("hh_control.csv").is_file());
}

#[test]
fn morris_lecar_min_is_three_bang() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synthesize", "--model", "morris_lecar", "--M", "0.01", "--objective", "min"]);
    let r = json(&dir.path().join("result.json"));
    assert_eq!(r["word"].as_str().unwrap().len(), 3);
    let t = r["predicted_T"].as_f64().unwrap();
    assert!(t < 22.2 && t > 15.0, "{t}");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synthesize", "--model", "hodgkin_huxley", "--M", "0.7", "--objective", "max"];
    ok(dir.path(), &args);
    let first = fs::read(dir.path().join("result.json")).unwrap();
    let wave = fs::read(dir.path().join("result_control.csv")).unwrap();
    ok(dir.path(), &args);
    assert_eq!(first, fs::read(dir.path().join("result.json")).unwrap());
    assert_eq!(wave, fs::read(dir.path().join("result_control.csv")).unwrap());

    ok(dir.path(), &["sweep", "--M-grid", "0.2,0.9", "--out", "a.csv"]);
    ok(dir.path(), &["sweep", "--M-grid", "0.2,0.9", "--out", "b.csv"]);
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn single_shot_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["synthesize", "--model", "nope", "--M", "0.7", "--objective", "min"][..],
        &["synthesize", "--model", "sniper", "--M", "-1", "--objective", "min"],
        &["synthesize", "--model", "sniper", "--M", "0.7"],
        &["synthesize", "--model", "hodgkin_huxley", "--M", "4", "--objective", "max"],
        &["simulate", "--result", "missing.json"],
        &["emit-plots", "missing.json"],
        &["sweep", "--M-grid", "0.5,0.1"],
    ] {
        let out = spikeopt(dir.path(), args);
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    assert!(!dir.path().join("result.json").exists());
}

#[test]
fn unbounded_delay_needs_a_target() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["synthesize", "--model", "hodgkin_huxley", "--M", "4", "--objective", "max"];
    let mut args = base.to_vec();
    args.extend(["--target-delay", "40"]);
    ok(dir.path(), &args);
    let r = json(&dir.path().join("result.json"));
    assert!(r["unbounded_delay"].as_bool().unwrap());
    assert!((r["predicted_T"].as_f64().unwrap() - 40.0).abs() < 1e-8);
    args.pop();
    args.push("1");
    assert!(!spikeopt(dir.path(), &args).status.success());
}

#[test]
fn sweep_mode_records_unbounded_rows_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["sweep", "--M-grid", "0.7,4"]);
    assert!(stdout.contains("2 rows"));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    let row: Vec<&str> = lines[1].split(',').collect();
    let min_t: f64 = row[2].parse().unwrap();
    let max_t: f64 = row[4].parse().unwrap();
    assert!((min_t - 13.5).abs() < 0.1 && (max_t - 16.37).abs() < 0.1);
    assert!(lines[2].contains(",unbounded,"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"model": "sniper", "M": 0.4, "objective": "max", "out": "cfg.json"}"#,
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.json", "synthesize"]);
    assert_eq!(json(&dir.path().join("cfg.json"))["word"], "YXY");
    ok(dir.path(), &["--config", "run.json", "synthesize", "--M", "0.7"]);
    assert_eq!(json(&dir.path().join("cfg.json"))["word"], "Y-S-Y");

    fs::write(dir.path().join("bad.json"), r#"{"M": 0.4, "typo": 1}"#).unwrap();
    assert!(!spikeopt(dir.path(), &["--config", "bad.json", "synthesize"]).status.success());
}

#[test]
fn inline_model_in_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"model": {"name": "slow_sniper", "omega": 0.5, "prc": {"kind": "sniper", "z_d": 1.0}},
            "M": 0.1, "objective": "min"}"#,
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.json", "synthesize"]);
    let r = json(&dir.path().join("result.json"));
    assert_eq!(r["model"], "slow_sniper");
    assert!(r["predicted_T"].as_f64().unwrap() < 4.0 * std::f64::consts::PI);
    let out = ok(dir.path(), &["--config", "run.json", "simulate", "--result", "result.json"]);
    assert!(out.contains("slow_sniper"));
}

#[test]
fn simulate_reproduces_predicted_time() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synthesize", "--model", "hodgkin_huxley", "--M", "0.7", "--objective", "min"]);
    let out: Value = serde_json::from_str(&ok(dir.path(), &["simulate", "--result", "result.json"])).unwrap();
    let t0 = std::f64::consts::TAU / 0.43;
    let diff = out["spike_time"].as_f64().unwrap() - out["predicted_t"].as_f64().unwrap();
    assert!(diff.abs() < 1e-5 * t0);
    assert!(out["final_charge"].as_f64().unwrap().abs() < 1e-6);
    assert!(fs::read_to_string(dir.path().join("phase_run.csv")).unwrap().starts_with("t,theta,p\n"));
}

#[test]
fn tolerance_override() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synthesize", "--model", "sniper", "--M", "0.7", "--objective", "min"];
    let run = |tol: &str| {
        Command::new(env!("CARGO_BIN_EXE_spikeopt"))
            .current_dir(dir.path())
            .env("SPIKEOPT_TOL", tol)
            .args(args)
            .output()
            .unwrap()
    };
    assert!(run("1e-9").status.success());
    let bad = run("zero");
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("SPIKEOPT_TOL"));
    assert!(!spikeopt(dir.path(), &["--tol", "-1", "synthesize", "--model", "sniper", "--M", "0.7", "--objective", "min"])
        .status
        .success());
}

#[test]
fn fit_prc_recovers_a_two_term_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = String::from("theta,z\n");
    for k in 0..200 {
        let t = std::f64::consts::TAU * k as f64 / 200.0;
        let z = 0.4 * (t + 0.3).sin() - 0.1 * (2.0 * t - 1.0).sin();
        samples.push_str(&format!("{t},{z}\n"));
    }
    fs::write(dir.path().join("s.csv"), samples).unwrap();
    ok(dir.path(), &["fit-prc", "--samples", "s.csv", "--terms", "2", "--omega", "0.3", "--name", "toy"]);
    let fit = json(&dir.path().join("fit.json"));
    assert!(fit["rms"].as_f64().unwrap() < 1e-8);
    assert_eq!(fit["name"], "toy");
    assert_eq!(fit["prc"]["terms"].as_array().unwrap().len(), 2);

    fs::write(dir.path().join("few.csv"), "0,1\n1,2\n").unwrap();
    assert!(!spikeopt(dir.path(), &["fit-prc", "--samples", "few.csv", "--terms", "3"]).status.success());
}

#[test]
fn refitted_hh_prc_reproduces_builtin_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let hh = spikeopt::phase_model::PhaseModel::hodgkin_huxley();
    let mut samples = String::new();
    for k in 0..512 {
        let t = std::f64::consts::TAU * k as f64 / 511.0;
        samples.push_str(&format!("{t:.17e} {:.17e}\n", hh.z(t)));
    }
    fs::write(dir.path().join("s.txt"), samples).unwrap();
    ok(dir.path(), &["fit-prc", "--samples", "s.txt", "--terms", "8", "--omega", "0.43", "--name", "refit"]);
    // The catalog loader rejects unknown keys, so strip the fit diagnostics.
    let mut model = json(&dir.path().join("fit.json"));
    let obj = model.as_object_mut().unwrap();
    let rms = obj.remove("rms").unwrap().as_f64().unwrap();
    assert!(rms < 1e-6, "{rms}");
    obj.remove("iterations");
    fs::write(dir.path().join("cat.json"), model.to_string()).unwrap();
    let args = ["--catalog", "cat.json", "synthesize", "--M", "0.7", "--objective", "min", "--model"];
    ok(dir.path(), &[&args[..], &["refit", "--out", "a.json"]].concat());
    ok(dir.path(), &[&args[..], &["hodgkin_huxley", "--out", "b.json"]].concat());
    let (a, b) = (json(&dir.path().join("a.json")), json(&dir.path().join("b.json")));
    assert_eq!(a["word"], b["word"]);
    let (ta, tb) = (a["predicted_T"].as_f64().unwrap(), b["predicted_T"].as_f64().unwrap());
    assert!((ta - tb).abs() < 1e-6 * tb, "{ta} vs {tb}, rms {rms}");
}

#[test]
fn validate_fills_state_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["validate", "--M-grid", "0.7", "--cycles", "2"]);
    let csv = fs::read_to_string(dir.path().join("validation.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let min_isi: f64 = row[7].parse().unwrap();
    let max_isi: f64 = row[8].parse().unwrap();
    assert!((min_isi - 13.65).abs() < 0.3, "{min_isi}");
    assert!((max_isi - 17.13).abs() < 0.3, "{max_isi}");
    let err_min: f64 = row[9].parse().unwrap();
    assert!((err_min - (min_isi - row[2].parse::<f64>().unwrap()).abs()).abs() < 1e-9);
}

#[test]
fn emit_plots_for_result_trajectory_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synthesize", "--model", "sniper", "--M", "0.7", "--objective", "min", "--plot-dir", "p0"]);
    assert!(dir.path().join("p0/result_plot.py").is_file());
    ok(dir.path(), &["simulate", "--result", "result.json"]);
    ok(dir.path(), &["sweep", "--M-grid", "0.3,0.7", "--model", "sniper"]);
    let listed = ok(dir.path(), &["emit-plots", "result.json", "phase_run.csv", "sweep.csv"]);
    assert_eq!(listed.lines().count(), 2);
    let result_script = fs::read_to_string(dir.path().join("plots/result_plot.py")).unwrap();
    assert!(result_script.contains("phase_run.csv"));
    assert!(fs::read_to_string(dir.path().join("plots/sweep_plot.py")).unwrap().contains("fill_betweenx"));
}
