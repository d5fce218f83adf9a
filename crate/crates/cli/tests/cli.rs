use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpd"))
        .args(args)
        .output()
        .expect("spawn cpd")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> String {
    let p = dir.join(name).display().to_string();
    let mut args = vec!["gen"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["-o", &p]);
    let out = cpd(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

fn strip_wall_time(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("wall_time_secs");
            m.values_mut().for_each(strip_wall_time);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

#[test]
fn gen_then_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen(dir.path(), "r.tns", &["random", "--dims", "6,5,4", "--gen-rank", "2", "--gen-seed", "1"]);
    assert!(Path::new(&format!("{t}.json")).exists());
    let v = json(&cpd(&["decompose", &t, "--rank", "2", "--restarts", "3"]));
    assert_eq!(v["schema_version"], "cpd-report/1");
    assert!(v["rel_error"].as_f64().unwrap() <= 1e-8, "{}", v["rel_error"]);
    assert_eq!(v["runs"].as_array().unwrap().len(), 3);
    assert_eq!(v["problem"]["instance"]["generator"], "random");
    assert!(v["clean_rel_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn binary_input_and_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen(dir.path(), "r.bin", &["random", "--dims", "4,4,4", "--gen-rank", "2", "--gen-seed", "2"]);
    let report = dir.path().join("out.json").display().to_string();
    let out = cpd(&["decompose", &t, "--rank", "2", "-o", &report]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["rel_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn missing_file_is_a_usage_error() {
    let out = cpd(&["decompose", "/definitely/not/here.tns", "--rank", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(cpd(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cpd(&["decompose"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let t = gen(dir.path(), "r.tns", &["random", "--dims", "3,4,5", "--gen-rank", "2"]);
    assert_eq!(cpd(&["decompose", &t]).status.code(), Some(2));
    assert_eq!(cpd(&["decompose", &t, "--rank", "0"]).status.code(), Some(2));
    assert_eq!(cpd(&["decompose", &t, "--rank", "2", "--symm"]).status.code(), Some(2));
    assert_eq!(cpd(&["mlsvd", &t, "--energy-tol", "1.5"]).status.code(), Some(2));
    assert_eq!(cpd(&["--help"]).status.code(), Some(0));
}

#[test]
fn exact_mlsvd_reconstructs() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen(dir.path(), "c.tns", &["collinear", "--dims", "8,7,6", "--gen-rank", "3", "--c", "0.9"]);
    let v = json(&cpd(&["mlsvd", &t, "--energy-tol", "0"]));
    assert!(v["reconstruction_error"].as_f64().unwrap() <= 1e-10);
    assert_eq!(v["truncated_dims"], serde_json::json!([3, 3, 3]));
}

#[test]
fn output_is_deterministic_up_to_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen(
        dir.path(),
        "b.tns",
        &["bottleneck", "--dims", "7,7,7", "--gen-rank", "3", "--c", "0.8", "--nu", "0.001"],
    );
    let run = || {
        let mut v = json(&cpd(&["decompose", &t, "--rank", "3", "--restarts", "4", "--seed", "9"]));
        strip_wall_time(&mut v);
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(run(), run());
    let seq = Command::new(env!("CARGO_BIN_EXE_cpd"))
        .env("CPD_THREADS", "1")
        .args(["decompose", &t, "--rank", "3", "--restarts", "4", "--seed", "9"])
        .output()
        .unwrap();
    let mut v = json(&seq);
    strip_wall_time(&mut v);
    assert_eq!(serde_json::to_string(&v).unwrap(), run());
}

#[test]
fn csv_trace_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen(dir.path(), "r.tns", &["random", "--dims", "5,5,5", "--gen-rank", "3", "--nu", "0.01"]);
    let out = cpd(&["decompose", &t, "--rank", "3", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("iteration,"));
    assert!(text.lines().count() > 1);

    let out = cpd(&["decompose", &t, "--rank", "3", "--maxiter-sweep", "1,3,30", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let errs: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(errs[2] <= errs[0]);
}

#[test]
fn bench_accepts_against_its_own_reference() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.json").display().to_string();
    let args = ["bench", "collinear", "--dims", "8,8,8", "--gen-rank", "3", "--c", "0.5", "--nu", "0.001"];
    let mut first: Vec<&str> = args.to_vec();
    first.extend_from_slice(&["-o", &reference]);
    assert!(cpd(&first).status.success());
    let mut second = args.to_vec();
    second.extend_from_slice(&["--accept-ref", &reference]);
    let v = json(&cpd(&second));
    assert_eq!(v["accepted"], true);
    assert!(v["clean_rel_error"].as_f64().unwrap() < v["rel_error"].as_f64().unwrap());
}

#[test]
fn border_and_matmul_generators() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen(dir.path(), "m.tns", &["matmul", "--n", "2"]);
    let v = json(&cpd(&["mlsvd", &t]));
    assert_eq!(v["dims"], serde_json::json!([4, 4, 4]));
    let b = gen(dir.path(), "k.tns", &["border", "--dims", "3", "--k", "100"]);
    let v = json(&cpd(&["decompose", &b, "--rank", "2", "--maxiter", "20"]));
    assert!(v["rel_error"].as_f64().unwrap() < 0.1);
}

#[test]
fn gmm_from_model_and_samples() {
    let v = json(&cpd(&["gmm", "--dim", "5", "--components", "2", "--count", "4000", "--restarts", "5", "--seed", "3"]));
    let w: Vec<f64> = v["estimate"]["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(w.len(), 2);
    assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert!(v["fit"].as_f64().unwrap() < 0.5, "{}", v["fit"]);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let mut s = String::new();
    for i in 0..200 {
        let x = if i % 2 == 0 { 1.0 } else { -0.2 };
        s.push_str(&format!("{},{},{}\n", x, 0.3 * x + 0.01 * (i % 7) as f64, -x));
    }
    std::fs::write(&csv, s).unwrap();
    let v = json(&cpd(&["gmm", "--samples", csv.to_str().unwrap(), "--components", "2", "--restarts", "3"]));
    assert!(v.get("truth").is_none());
    assert_eq!(v["estimate"]["weights"].as_array().unwrap().len(), 2);
}
