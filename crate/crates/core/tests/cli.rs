//! Command-line contract: exit codes, output files and metadata.

use std::path::{Path, PathBuf};

use qstoch::cli::{run, EXIT_OK, EXIT_RESOURCE, EXIT_USAGE, EXIT_VERIFY};

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("qstoch-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn call(out: &Path, args: &[&str]) -> i32 {
    let mut v = vec!["qstoch".to_string(), "--out".into(), out.display().to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    run(v)
}

fn json(p: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn verify_passes_and_fault_is_caught() {
    let d = tmp("verify");
    assert_eq!(call(&d, &["verify"]), EXIT_OK);
    let r = json(d.join("verify_report.json"));
    assert_eq!(r["pass"], true);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["tolerance"].is_number() && c["measured"].is_number()));
    assert_eq!(call(&d, &["verify", "--inject-fault", "dst-normalization"]), EXIT_VERIFY);
    let r = json(d.join("verify_report.json"));
    let failed: Vec<&str> = r["failed"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(failed.contains(&"dst_fft_vs_matrix") && failed.contains(&"dst_circuit_vs_matrix"));
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn table_and_trajectory_files() {
    let d = tmp("table");
    assert_eq!(call(&d, &["table1"]), EXIT_OK);
    let t = std::fs::read_to_string(d.join("table1.csv")).unwrap();
    assert_eq!(t.lines().count(), 10);
    assert!(t.starts_with("epsilon,hurst,terms,reference,deviation"));
    assert_eq!(call(&d, &["--seed", "2", "trajectory", "--terms", "16", "--steps", "64", "--count", "3"]), EXIT_OK);
    let csv = std::fs::read_to_string(d.join("trajectories.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "traj_0,traj_1,traj_2");
    assert_eq!(lines.len(), 1 + 65);
    assert!(lines[1].split(',').all(|v| v.parse::<f64>().unwrap() == 0.0));
    let meta = json(d.join("trajectory.meta.json"));
    assert_eq!(meta["seed"], 2);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn exit_codes_by_error_class() {
    let d = tmp("codes");
    assert_eq!(call(&d, &["trajectory", "--hurst", "1.5"]), EXIT_USAGE);
    assert_eq!(call(&d, &["trajectory", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(call(&d, &["--help"]), EXIT_OK);
    // planner needs L = 16 here: above the dense qubit budget
    assert_eq!(call(&d, &["qmc", "--mode", "direct", "--hurst", "0.8", "--epsilon", "0.05", "--window", "0.25:0.75"]), EXIT_RESOURCE);
    assert_eq!(call(&d, &["qmc", "--mode", "ae", "--moment", "first", "--terms", "4", "--steps", "16"]), EXIT_USAGE);
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn config_file_and_flag_precedence() {
    let d = tmp("config");
    std::fs::create_dir_all(&d).unwrap();
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "# trajectories\nterms = 8\nsteps = 32\ncount = 5\n").unwrap();
    assert_eq!(call(&d, &["--config", cfg.to_str().unwrap(), "trajectory", "--count", "2"]), EXIT_OK);
    let meta = json(d.join("trajectory.meta.json"));
    assert_eq!(meta["config"]["terms"], 8);
    assert_eq!(meta["config"]["count"], 2);
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn module_commands_write_results() {
    let d = tmp("modules");
    assert_eq!(call(&d, &["levy", "--kind", "cpoisson", "--rate", "2.0", "--steps", "256", "--runs", "2"]), EXIT_OK);
    assert_eq!(std::fs::read_to_string(d.join("levy_integral.csv")).unwrap().lines().count(), 257);
    assert!(json(d.join("levy_log.json"))["runs"][0]["acceptance_probability"].is_number());
    assert_eq!(call(&d, &["qmc", "--mode", "classical", "--terms", "4", "--steps", "16", "--samples", "5000"]), EXIT_OK);
    assert_eq!(json(d.join("qmc_result.json"))["result"]["method"], "ClassicalMC");
    assert_eq!(call(&d, &["swap", "--mode", "direct"]), EXIT_OK);
    let s = json(d.join("swap_result.json"));
    assert!((s["extrapolated"].as_f64().unwrap() - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-6);
    assert_eq!(call(&d, &["tamsd", "--trials", "100", "--steps", "128", "--quantile-samples", "2000"]), EXIT_OK);
    let p = json(d.join("tamsd_power.json"));
    assert!(p["power"].as_f64().unwrap() > 0.5);
    assert_eq!(std::fs::read_dir(d.join("cache")).unwrap().count(), 1);
    std::fs::remove_dir_all(&d).unwrap();
}
