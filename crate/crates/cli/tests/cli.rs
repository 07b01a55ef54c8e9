use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn memann(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memann")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = memann(args);
    assert!(
        out.status.success(),
        "memann {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

#[test]
fn infer_written_academic_circuit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["infer", "--config", &cfg("academic_written.json"), "--out", &out]);
    let y = json(dir.path().join("yhat.json"));
    let yhat = floats(&y["result"]["y_hat"]);
    assert!((yhat[0] + 0.99377).abs() < 5e-3 && (yhat[1] - 0.99374).abs() < 5e-3, "{yhat:?}");
    assert_eq!(y["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(y["parameters"]["tau"], 5.0);
    let n = json(dir.path().join("noninvasiveness.json"));
    assert!(n["result"]["max_flux_deviation"].as_f64().unwrap() <= 1e-6);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("# verb=infer config_sha256="));
    assert!(lines.next().unwrap().starts_with("time,phi[1][1][1],"));
}

#[test]
fn zero_input_gives_zero_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["infer", "--config", &cfg("academic.json"), "--input", "0,0", "--out", &out]);
    let y = json(dir.path().join("yhat.json"));
    assert_eq!(floats(&y["result"]["y_hat"]), vec![0.0, 0.0]);
}

#[test]
fn seeded_inference_matches_software() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["infer", "--config", &cfg("academic.json"), "--seed", "11", "--input", "-0.4,0.9", "--out", &out]);
    let y = json(dir.path().join("yhat.json"));
    assert!(y["result"]["max_abs_diff_to_oracle"].as_f64().unwrap() <= 1e-6);
    assert_eq!(y["parameters"]["seed"], 11);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = d.path().display().to_string();
        run_ok(&["infer", "--config", &cfg("academic.json"), "--decimation", "50", "--out", &out]);
        run_ok(&["read", "--config", &cfg("academic.json"), "--tau", "1", "--seed", "3", "--out", &out]);
    }
    for f in ["yhat.json", "trace.csv", "noninvasiveness.json", "read_report.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn read_blank_circuit_gives_two_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["read", "--config", &cfg("academic_blank.json"), "--out", &out]);
    let r = json(dir.path().join("read_report.json"));
    for layer in r["result"]["memductances"].as_array().unwrap() {
        for row in layer.as_array().unwrap() {
            for v in floats(row) {
                assert!((v - 2.0).abs() < 1e-9, "{v}");
            }
        }
    }
    assert_eq!(r["result"]["protocol_time"], 240.0);
}

#[test]
fn read_seeded_flux_matches_memductance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["read", "--config", &cfg("academic_blank.json"), "--seed", "5", "--batched", "--out", &out]);
    let r = json(dir.path().join("read_report.json"));
    assert!(r["result"]["max_abs_diff_to_direct"].as_f64().unwrap() <= 1e-6);
    assert_eq!(r["result"]["bound_violations"].as_array().unwrap().len(), 0);
}

#[test]
fn write_academic_targets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["write", "--config", &cfg("academic_blank.json"), "--eps", "0.05", "--T", "1", "--alpha", "auto", "--out", &out]);
    let r = json(dir.path().join("write_report.json"));
    let entries = r["result"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 12);
    assert!(entries.iter().all(|e| e["final_error"].as_f64().unwrap() <= 0.05));
    let m2 = &r["result"]["final_memductances"][1];
    let w23 = m2[1][2].as_f64().unwrap();
    assert!((w23 - 0.55).abs() < 0.01, "{w23}");
    assert_eq!(r["result"]["protocol_time"], r["result"]["sum_t_hat"]);
    let curves = fs::read_to_string(dir.path().join("memductance_curves.csv")).unwrap();
    assert_eq!(curves.lines().nth(1).unwrap(), "protocol_time,layer,row,col,memductance");
}

#[test]
fn written_circuit_takes_one_probe_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["write", "--config", &cfg("academic.json"), "--x0", "0.001", "--out", &out]);
    let r = json(dir.path().join("write_report.json"));
    for e in r["result"]["entries"].as_array().unwrap() {
        assert_eq!(e["intervals"], 1);
    }
}

#[test]
fn unreachable_target_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.json");
    fs::write(&weights, r#"{"widths":[1,1],"layers":[[[4.0]]]}"#).unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"weights":"w.json"}"#).unwrap();
    let out = memann(&["write", "--config", &config.display().to_string(), "--out", &dir.path().display().to_string()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not realizable"));
}

#[test]
fn inadmissible_gain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = memann(&["write", "--config", &cfg("academic_blank.json"), "--alpha", "0.5", "--out", &dir.path().display().to_string()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gain condition"));
}

#[test]
fn mnist_synthetic_slice_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["mnist", "--config", &cfg("mnist.json"), "--synthetic", "--limit", "6", "--seed", "2", "--out", &out]);
    let r = json(dir.path().join("mnist_report.json"));
    assert_eq!(r["result"]["n_images"], 6);
    assert_eq!(r["result"]["argmax_agreement"], 6);
    assert_eq!(r["result"]["first_image"]["circuit_output"].as_array().unwrap().len(), 10);

    // the generated files can be fed back in
    let images = dir.path().join("synthetic-images.idx3-ubyte").display().to_string();
    let labels = dir.path().join("synthetic-labels.idx1-ubyte").display().to_string();
    let again = dir.path().join("again").display().to_string();
    run_ok(&["mnist", "--config", &cfg("mnist.json"), "--images", &images, "--labels", &labels, "--limit", "2", "--seed", "2", "--out", &again]);
    let r2 = json(dir.path().join("again/mnist_report.json"));
    assert_eq!(r2["result"]["first_image"], r["result"]["first_image"]);
}

#[test]
fn mnist_empty_slice() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["mnist", "--config", &cfg("mnist.json"), "--synthetic", "--limit", "0", "--out", &out]);
    let r = json(dir.path().join("mnist_report.json"));
    assert_eq!(r["result"]["n_images"], 0);
    assert!(r["result"]["first_image"].is_null());
}

#[test]
fn mnist_without_images_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = memann(&["mnist", "--config", &cfg("mnist.json"), "--out", &dir.path().display().to_string()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_default_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    run_ok(&["verify", "--config", &cfg("academic.json"), "--out", &out]);
    let r = json(dir.path().join("verify_report.json"));
    assert_eq!(r["result"]["all_pass"], true);
}

#[test]
fn verify_reports_non_odd_activation() {
    let dir = tempfile::tempdir().unwrap();
    let out = memann(&["verify", "--activation", "sigmoid", "--out", &dir.path().display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    let r = json(dir.path().join("verify_report.json"));
    let act = r["result"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "activation_assumptions")
        .unwrap();
    assert_eq!(act["pass"], false);
    let props: Vec<&str> = act["detail"]["report"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["property"].as_str().unwrap())
        .collect();
    assert!(props.contains(&"oddness"), "{props:?}");
}

#[test]
fn verify_reports_gain_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = memann(&["verify", "--alpha", "1.5", "--T", "1", "--out", &dir.path().display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    let r = json(dir.path().join("verify_report.json"));
    let gain = r["result"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "gain_condition")
        .unwrap();
    assert_eq!(gain["pass"], false);
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"widths":[2,2],"colour":"red"}"#).unwrap();
    let out = memann(&["infer", "--config", &config.display().to_string(), "--input", "1,1", "--out", &dir.path().display().to_string()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
