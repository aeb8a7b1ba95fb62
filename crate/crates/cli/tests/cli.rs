use std::path::Path;
use std::process::Command;

use fracest_cli::commands::{cmd_benchmark, cmd_estimate, cmd_identifiability, cmd_simulate};
use fracest_cli::config::{DistanceName, MethodName, Param};
use fracest_cli::records::{read_jsonl, sample_mean_var, TrialRecord};
use fracest_cli::ExperimentConfig;

fn small(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        n: 400,
        trials: 3,
        output: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracest"))
}

#[test]
fn simulate_writes_declared_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        q: Some(2),
        ..small(dir.path())
    };
    let file = cmd_simulate(&cfg).unwrap();
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,y,inc_1,inc_2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 400);
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
    assert!(rows[1].starts_with("0.1,"));
    assert_eq!(std::fs::read_to_string(cmd_simulate(&cfg).unwrap()).unwrap(), text);
}

#[test]
fn estimate_trials_one_emits_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        trials: 1,
        ..small(dir.path())
    };
    let records = cmd_estimate(&cfg, None).unwrap();
    assert_eq!(records.len(), 1);
    let back: Vec<TrialRecord> = read_jsonl(&dir.path().join("trials.jsonl")).unwrap();
    assert_eq!(back, records);
    assert!(back[0].wall_time.is_none());
    assert!(back[0].theta_hat.is_some());
}

#[test]
fn summary_matches_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        trials: 5,
        free: vec![Param::Sigma],
        ..small(dir.path())
    };
    cmd_estimate(&cfg, None).unwrap();
    let records: Vec<TrialRecord> = read_jsonl(&dir.path().join("trials.jsonl")).unwrap();
    let values: Vec<f64> = records.iter().map(|r| r.theta_hat.unwrap().sigma).collect();
    let mean = values.iter().sum::<f64>() / 5.0;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("parameter,true,mean,bias,variance,n"));
    let f: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(f[0], "sigma");
    let num = |i: usize| f[i].parse::<f64>().unwrap();
    assert!((num(2) - mean).abs() <= 1e-12);
    assert!((num(3) - (mean - 0.5)).abs() <= 1e-12);
    assert!((num(4) - var).abs() <= 1e-12);
    assert_eq!(f[5], "5");
    assert_eq!(sample_mean_var(&values), (num(2), num(4)));
}

#[test]
fn estimate_on_supplied_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n: 2000,
        ..small(dir.path())
    };
    let path = cmd_simulate(&cfg).unwrap();
    let from_file = cmd_estimate(&cfg, Some(&path)).unwrap();
    assert_eq!(from_file.len(), 1);
    let xi = from_file[0].theta_hat.unwrap().xi;
    assert!((xi - 2.0).abs() < 1.0, "{xi}");
    // the simulated trial 0 is the same dataset
    let cfg1 = ExperimentConfig { trials: 1, ..cfg };
    let simulated = cmd_estimate(&cfg1, None).unwrap();
    assert!((simulated[0].theta_hat.unwrap().xi - xi).abs() < 1e-9);
}

#[test]
fn sgd_estimate_records_trace_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n: 1000,
        trials: 2,
        free: vec![Param::Sigma, Param::Hurst],
        method: MethodName::Sgd,
        distance: DistanceName::Cf,
        iterations: 20,
        batch_size: 20,
        mc_samples: 100,
        ..small(dir.path())
    };
    let records = cmd_estimate(&cfg, None).unwrap();
    for r in &records {
        assert_eq!(r.iterations, Some(20), "{r:?}");
        assert!(r.final_loss.unwrap() >= 0.0);
        assert_eq!(r.theta_hat.unwrap().xi, 2.0);
    }
}

#[test]
fn identifiability_reports_three_cases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        margin_grid: 5,
        ident_grid: 6,
        ..small(dir.path())
    };
    let recs = cmd_identifiability(&cfg).unwrap();
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r.margin.passes), "{recs:?}");
    assert!(recs.iter().all(|r| r.injectivity_gap.unwrap() > 0.0));
    let lines = std::fs::read_to_string(dir.path().join("identifiability.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn benchmark_emits_seven_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n: 500,
        trials: 4,
        bench_iterations_2d: 15,
        bench_iterations_3d: 10,
        batch_size: 20,
        mc_samples: 100,
        histogram_bins: 5,
        ..small(dir.path())
    };
    let report = cmd_benchmark(&cfg).unwrap();
    assert_eq!(report.datasets.len(), 7);
    for f in &report.datasets {
        assert!(f.exists());
    }
    for (k, name) in ["single_xi", "single_sigma", "single_hurst"].iter().enumerate() {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(report.single[k].len(), 4);
    }
    for (name, iters) in [
        ("sgd_sigma_hurst", 15),
        ("sgd_xi_hurst", 15),
        ("sgd_xi_sigma", 15),
        ("sgd_xi_sigma_hurst", 10),
    ] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), iters + 1, "{name}");
        assert!(rows[0].starts_with("0,1,"), "{name}: {}", rows[0]);
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sigma_min = 2.0\nsigma_max = 1.0\n").unwrap();
    let out = bin().args(["estimate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_max"));

    std::fs::write(&bad, "n = 10\nunknown_key = 3\n").unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let good = dir.path().join("good.toml");
    std::fs::write(&good, "n = 50\nq = 1\n").unwrap();
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["simulate", "--seed", "4", "--threads", "1", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(out_dir.join("path.csv")).unwrap().lines().count(), 51);
}

#[test]
fn too_many_failed_trials_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // an unstable Euler step makes every trial overflow
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "fine_step = 1.5\nk0 = 1\nlag_h = 1.5\nn = 2000\ntrials = 2\nxi_true = 3.9\n").unwrap();
    let out = bin().args(["estimate", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let recs: Vec<TrialRecord> = read_jsonl(&dir.path().join("trials.jsonl")).unwrap();
    assert!(recs.iter().all(|r| r.error.is_some()));
}
