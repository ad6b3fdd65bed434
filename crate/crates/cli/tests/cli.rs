use std::path::PathBuf;
use std::process::{Command, Output};

fn sml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sml")).args(args).env("SML_WORKERS", "2").output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sml-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn exit_codes() {
    assert_eq!(sml(&["--help"]).status.code(), Some(0));
    assert_eq!(sml(&["covfit", "--bogus"]).status.code(), Some(1));
    assert_eq!(sml(&["covfit"]).status.code(), Some(1), "fgn needs --hurst");
    // H = 1/2 has no long memory to fit
    assert_eq!(sml(&["covfit", "--hurst", "0.5"]).status.code(), Some(2));
    let out = sml(&["clt-sweep", "--hurst", "0.75", "--f", "x2", "--T", "8", "--n", "10", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("M_C"));
}

#[test]
fn covfit_reports_power_law() {
    let out = sml(&["covfit", "--hurst", "0.75"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let alpha = report["decay"]["alpha"].as_f64().unwrap();
    assert!((alpha - 0.5).abs() < 0.01, "{report}");
}

#[test]
fn config_file_supplies_defaults() {
    let dir = scratch("config");
    let conf = dir.join("run.conf");
    std::fs::write(&conf, "# small run\nhurst = 0.25\nf = x2\nT = 8,16\nn = 50\nseed = 3\n").unwrap();
    let csv = dir.join("out.csv");
    let out = sml(&["clt-sweep", "--config", conf.to_str().unwrap(), "--n", "40", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(format!("{}.manifest.json", csv.display())).unwrap();
    assert!(manifest.contains("\"n_replicates\": 40"), "{manifest}");
    let body = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().count(), 3);

    std::fs::write(&conf, "hurst = 0.25\nhurst = 0.3\n").unwrap();
    let out = sml(&["clt-sweep", "--config", conf.to_str().unwrap(), "--T", "8", "--out", csv.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn flp_block_decodes() {
    let dir = scratch("flp");
    let path = dir.join("paths.flp1");
    let out = sml(&["flp", "--hurst", "0.3", "--eps", "0.2", "--points", "9", "--n", "7", "--seed", "4", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let block = sml_core::io::decode_flp1(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!((block.n, block.n_points, block.hurst), (7, 9, 0.3));
    assert!(block.values.iter().step_by(9).all(|v| *v == 0.0), "paths start at 0");
    let _ = std::fs::remove_dir_all(&dir);
}
