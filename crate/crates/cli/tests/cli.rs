use std::path::Path;
use std::process::Command;

use pomv_cli::commands::{cmd_benchmark, cmd_estimate, cmd_reference, cmd_simulate, RunContext};
use pomv_cli::config::RunConfig;
use pomv_cli::io::{read_benchmark, read_estimates, read_obs, read_reference};
use tempfile::TempDir;

fn config(dir: &Path, extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = ["data.T=4", "data.signal_particles=20", "mlmc.L=3", "mlmc.M_bar=6", "pf.M=8"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    o.push(format!("run.output_dir=\"{}\"", dir.display()));
    RunConfig::load(None, &o).unwrap()
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pomv"));
    c.env_remove("POMV_SEED");
    c
}

#[test]
fn simulate_estimate_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &[]);
    let ctx = RunContext::from_config(&cfg);
    let obs_path = cmd_simulate(&cfg, &ctx).unwrap();
    let (obs, prov) = read_obs(&obs_path).unwrap();
    assert_eq!(obs.horizon(), 4);
    assert_eq!(prov.get("config_hash"), Some(cfg.hash().as_str()));
    let s = cmd_estimate(&cfg, &ctx, &obs_path).unwrap();
    let (rows, _) = read_estimates(&s.path).unwrap();
    assert_eq!(rows.len(), 6);
    let mean: f64 = rows.iter().map(|r| r.theta[0]).sum::<f64>() / 6.0;
    assert!((mean - s.theta_bar[0]).abs() < 1e-9 * (1.0 + mean.abs()));
    assert_eq!(rows.iter().map(|r| r.cost_units).sum::<u64>(), s.total_cost);
    assert!(rows.iter().all(|r| r.wall_ms == 0));
}

#[test]
fn estimate_is_deterministic_in_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &[]);
    let ctx = RunContext::from_config(&cfg);
    let obs = cmd_simulate(&cfg, &ctx).unwrap();
    let a = std::fs::read(cmd_estimate(&cfg, &ctx, &obs).unwrap().path).unwrap();
    let b = std::fs::read(cmd_estimate(&cfg, &ctx, &obs).unwrap().path).unwrap();
    assert_eq!(a, b);
    let other = RunContext { seed: 99, ..ctx.clone() };
    let c = std::fs::read(cmd_estimate(&cfg, &other, &obs).unwrap().path).unwrap();
    assert_ne!(a, c);
}

#[test]
fn exit_code_two_for_bad_level_range() {
    let dir = TempDir::new().unwrap();
    let out = bin()
        .args(["--out", dir.path().to_str().unwrap(), "--set", "mlmc.L=1", "estimate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mlmc.L"));
}

#[test]
fn benchmark_without_reference_points_to_reference_command() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let common = ["--out", d, "--set", "data.T=3", "--set", "data.signal_particles=5"];
    assert!(bin().args(common).arg("simulate").output().unwrap().status.success());
    let out = bin().args(common).arg("benchmark").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pomv reference"));
}

#[test]
fn seed_flag_beats_environment() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = bin();
        c.args(["--out", d, "--set", "data.T=3", "--set", "data.signal_particles=5"]);
        if let Some(e) = env {
            c.env("POMV_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        assert!(c.arg("simulate").output().unwrap().status.success());
        read_obs(&dir.path().join("obs.csv")).unwrap().1.get("seed").unwrap().to_string()
    };
    assert_eq!(run(Some("7"), None), "7");
    assert_eq!(run(Some("7"), Some("8")), "8");
    assert_eq!(run(None, None), "1");
}

#[test]
fn stub_benchmark_has_zero_mse() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        &["mlmc.source=\"stub\"", "mlmc.stub_value=[0.25]", "benchmark.M_bar_grid=[2,4]", "benchmark.outer_reps=3", "benchmark.reference_budget=16"],
    );
    let ctx = RunContext::from_config(&cfg);
    let obs = cmd_simulate(&cfg, &ctx).unwrap();
    let (r, rp) = cmd_reference(&cfg, &ctx, &obs).unwrap();
    assert_eq!(r.theta, vec![0.25]);
    let s = cmd_benchmark(&cfg, &ctx, &obs, &rp).unwrap();
    assert_eq!(s.mse, vec![0.0, 0.0]);
    let (rows, _) = read_benchmark(&s.path).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.sq_error == 0.0));
}

#[test]
fn reference_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &["benchmark.reference_budget=8"]);
    let ctx = RunContext::from_config(&cfg);
    let obs = cmd_simulate(&cfg, &ctx).unwrap();
    let (r1, p) = cmd_reference(&cfg, &ctx, &obs).unwrap();
    let a = std::fs::read(&p).unwrap();
    let (r2, _) = cmd_reference(&cfg, &ctx, &obs).unwrap();
    assert_eq!(a, std::fs::read(&p).unwrap());
    assert_eq!(r1, r2);
    let (back, _) = read_reference(&p).unwrap();
    assert_eq!(back.theta, r1.theta);
    assert_eq!(back.budget, 8);
}

#[test]
fn tiny_observation_noise_reproduces_the_signal() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &["model.tau=1e-12", "data.trajectory_particles=1"]);
    let ctx = RunContext::from_config(&cfg);
    let (obs, _) = read_obs(&cmd_simulate(&cfg, &ctx).unwrap()).unwrap();
    let fine = cfg.mlmc.l_max + cfg.data.fine_level_offset;
    let s = 1usize << fine;
    let text = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut signal = Vec::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let k: usize = rec[1].parse().unwrap();
        if k > 0 && k.is_multiple_of(s) {
            signal.push(rec[4].parse::<f64>().unwrap());
        }
    }
    assert_eq!(signal.len(), 4);
    for (t, x) in signal.iter().enumerate() {
        assert!((obs.get(t + 1)[0] - x).abs() < 1e-9, "t={t}");
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(Some(&p), &[]).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 2);
}
