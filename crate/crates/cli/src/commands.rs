//! The four subcommands. Each writes its files under `cfg.output` and
//! returns what it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use fracest_core::cf::CFConfig;
use fracest_core::estimator::{
    contrast_value, estimate_1d, estimate_sgd, estimate_simulated, simulate_augmented, DistanceKind,
    EstimationProblem, EulerConfig, Model, SGDConfig, SGDTrace, SimLayout, SimulatedMode, SimulatedResult,
};
use fracest_core::fou::{identifiability_margin, injectivity_gap, IdentCase, MarginGrid, MarginReport};
use fracest_core::quadrature::QuadratureSpec;
use fracest_core::sde::{augment, AugmentedPath, DriftModel, OuDrift, Path as SdePath, PerturbedOuDrift, ThetaVector};
use fracest_core::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DistanceName, EstimatorKind, ExperimentConfig, MethodName, ModelName, Param};
use crate::records::{
    histogram_csv, sample_mean_var, summarize, summary_csv, to_jsonl, write_file, ThetaHat, TrialRecord,
};
use crate::CliError;

/// Offset of the frequency-batch streams relative to the data streams.
pub const PHI_STREAM_OFFSET: u64 = 1 << 32;
/// Offset of the driving-noise streams of simulated laws.
pub const SIM_STREAM_OFFSET: u64 = 1 << 33;

pub fn drift(cfg: &ExperimentConfig) -> Result<Arc<dyn DriftModel>, CliError> {
    Ok(match cfg.model {
        ModelName::Ou => Arc::new(OuDrift::default()),
        ModelName::PerturbedOu => Arc::new(PerturbedOuDrift::new(1, cfg.lambda, cfg.xi_min)?),
    })
}

pub fn data_layout(cfg: &ExperimentConfig, q: usize) -> SimLayout {
    SimLayout {
        fine_step: cfg.fine_step,
        k0: cfg.k0,
        rows: cfg.n,
        q,
        lag_h: cfg.lag_h,
        burn_in: cfg.data_burn_in,
    }
}

/// Observed augmented path of trial `trial`, started at zero.
pub fn simulate_data(cfg: &ExperimentConfig, trial: u64, q: usize) -> Result<AugmentedPath, CliError> {
    let d = drift(cfg)?;
    let stream = RngStream::new(cfg.master_seed, trial);
    Ok(simulate_augmented(d.as_ref(), &cfg.theta_true(), &data_layout(cfg, q), &[0.0], &stream)?)
}

/// Keeps the first `q + 1` columns of a one-dimensional augmented path.
pub fn select_columns(path: &AugmentedPath, q: usize) -> AugmentedPath {
    assert!(q <= path.q, "cannot select {q} increments from {}", path.q);
    let width = q + 1;
    let rows = path.iter_rows().flat_map(|r| r[..width].iter().copied()).collect();
    AugmentedPath {
        lag_h: path.lag_h,
        q,
        width,
        rows,
    }
}

fn mask(free: &[Param]) -> Vec<bool> {
    Param::ALL.iter().map(|p| free.contains(p)).collect()
}

pub fn build_problem(
    cfg: &ExperimentConfig,
    obs: AugmentedPath,
    free: &[Param],
    distance: DistanceName,
    trial: u64,
) -> Result<EstimationProblem, CliError> {
    let width = obs.width;
    let cf = CFConfig::new(width, cfg.p, cfg.mc_samples, RngStream::new(cfg.master_seed, PHI_STREAM_OFFSET + trial))?;
    let distance = match distance {
        DistanceName::Cf => DistanceKind::Cf,
        DistanceName::W1 => DistanceKind::W1,
    };
    let theta = cfg.theta_true().with_free_mask(mask(free));
    let model = match cfg.estimator {
        EstimatorKind::Analytic => Model::OuAnalytic,
        EstimatorKind::Simulated => Model::General(drift(cfg)?),
    };
    let problem = EstimationProblem::new(obs, cfg.theta_box(), theta, model, distance, cf)?;
    Ok(match cfg.estimator {
        EstimatorKind::Analytic => problem,
        EstimatorKind::Simulated => problem.with_euler(EulerConfig {
            fine_step: cfg.fine_step,
            k0: cfg.k0,
            n_sim: cfg.n_sim,
            burn_in: cfg.sim_burn_in,
            stream: RngStream::new(cfg.master_seed, SIM_STREAM_OFFSET + trial),
        })?,
    })
}

pub fn sgd_config(cfg: &ExperimentConfig, free: &[Param], iterations: usize, phi: RngStream) -> SGDConfig {
    let mut sgd = SGDConfig::new(cfg.theta_init().with_free_mask(mask(free)), iterations, cfg.batch_size, phi);
    sgd.step_fraction = cfg.step_fraction;
    sgd.decay = cfg.step_decay;
    sgd.project = cfg.project;
    sgd
}

struct Outcome {
    theta: ThetaVector,
    contrast: f64,
    boundary_hit: Option<bool>,
    trace: Option<SGDTrace>,
}

fn run_estimator(
    cfg: &ExperimentConfig,
    problem: &EstimationProblem,
    method: MethodName,
    sgd: Option<SGDConfig>,
) -> fracest_core::Result<Outcome> {
    let simulated = cfg.estimator == EstimatorKind::Simulated;
    match method {
        MethodName::Search => {
            let e = if simulated {
                match estimate_simulated(problem, &SimulatedMode::Search)? {
                    SimulatedResult::Search(e) => e,
                    SimulatedResult::Sgd(_) => unreachable!("search mode returns a search result"),
                }
            } else {
                estimate_1d(problem)?
            };
            Ok(Outcome {
                theta: e.theta,
                contrast: e.contrast,
                boundary_hit: Some(e.boundary_hit),
                trace: None,
            })
        }
        MethodName::Sgd => {
            let sgd = sgd.expect("sgd method needs a configuration");
            let trace = if simulated {
                match estimate_simulated(problem, &SimulatedMode::Sgd(sgd))? {
                    SimulatedResult::Sgd(t) => t,
                    SimulatedResult::Search(_) => unreachable!("sgd mode returns a trace"),
                }
            } else {
                estimate_sgd(problem, &sgd)?
            };
            let theta = trace.final_theta().clone();
            Ok(Outcome {
                contrast: contrast_value(&theta, problem)?,
                theta,
                boundary_hit: None,
                trace: Some(trace),
            })
        }
    }
}

fn trial_record(
    cfg: &ExperimentConfig,
    trial: usize,
    stream: u64,
    body: impl FnOnce() -> Result<Outcome, CliError>,
) -> (TrialRecord, Option<SGDTrace>) {
    let start = Instant::now();
    match body() {
        Ok(o) => {
            let rec = TrialRecord {
                trial,
                seed: cfg.master_seed,
                stream,
                theta_hat: Some(ThetaHat::from(&o.theta)),
                contrast: Some(o.contrast),
                boundary_hit: o.boundary_hit,
                wall_time: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
                iterations: o.trace.as_ref().map(|t| t.losses.len() - 1),
                final_loss: o.trace.as_ref().map(|t| *t.losses.last().expect("trace has a loss")),
                error: None,
            };
            (rec, o.trace)
        }
        Err(e) => (TrialRecord::failed(trial, cfg.master_seed, stream, e.to_string()), None),
    }
}

fn check_failures(failed: usize, total: usize) -> Result<(), CliError> {
    if failed * 10 > total {
        Err(CliError::TrialFailures { failed, total })
    } else {
        Ok(())
    }
}

/// Writes `path.csv`: `t,y,inc_1,...,inc_q` with `n` rows at spacing `k0 * fine_step`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let q = cfg.q();
    let path = simulate_data(cfg, 0, q)?;
    let step = cfg.coarse_step();
    let mut s = String::from("t,y");
    for i in 1..=q {
        write!(s, ",inc_{i}").unwrap();
    }
    s.push('\n');
    for (k, row) in path.iter_rows().enumerate() {
        write!(s, "{}", k as f64 * step).unwrap();
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    write_file(&cfg.output, "path.csv", &s)
}

/// Reads the `y` column of a CSV file with a header row.
pub fn read_observations(file: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(file).map_err(|e| CliError::Io(format!("{}: {e}", file.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CliError::Validation(format!("{}: empty file", file.display())))?;
    let col = header
        .split(',')
        .position(|c| c.trim() == "y")
        .ok_or_else(|| CliError::Validation(format!("{}: line 1: no `y` column", file.display())))?;
    let mut values = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(col).map(str::trim);
        let v = field
            .and_then(|f| f.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| CliError::Validation(format!("{}: line {}: bad `y` value", file.display(), i + 1)))?;
        values.push(v);
    }
    Ok(values)
}

/// Estimates over `trials` simulated datasets, or once on `data`. Writes
/// `trials.jsonl` and `summary.csv`.
pub fn cmd_estimate(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Vec<TrialRecord>, CliError> {
    cfg.validate()?;
    let q = cfg.q();
    let supplied = match data {
        Some(file) => {
            let values = read_observations(file)?;
            let coarse = SdePath {
                step: cfg.coarse_step(),
                dim: 1,
                values,
                theta: None,
            };
            Some(augment(&coarse, q, cfg.lag_h)?)
        }
        None => None,
    };
    let trials = if supplied.is_some() { 1 } else { cfg.trials };
    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let t = trial as u64;
            trial_record(cfg, trial, t, || {
                let obs = match &supplied {
                    Some(o) => o.clone(),
                    None => simulate_data(cfg, t, q)?,
                };
                let problem = build_problem(cfg, obs, &cfg.free, cfg.distance, t)?;
                let phi = RngStream::new(cfg.master_seed, PHI_STREAM_OFFSET + t).child(1);
                let sgd = (cfg.method == MethodName::Sgd).then(|| sgd_config(cfg, &cfg.free, cfg.iterations, phi));
                Ok(run_estimator(cfg, &problem, cfg.method, sgd)?)
            })
            .0
        })
        .collect();
    write_file(&cfg.output, "trials.jsonl", &to_jsonl(&records))?;
    let truth = ThetaHat::from(&cfg.theta_true());
    write_file(&cfg.output, "summary.csv", &summary_csv(&summarize(&records, &cfg.free, &truth)))?;
    check_failures(records.iter().filter(|r| !r.is_ok()).count(), records.len())?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityRecord {
    #[serde(flatten)]
    pub margin: MarginReport,
    /// Name of the certifying derivative.
    pub derivative: String,
    /// Smallest image distance over the injectivity grid.
    pub injectivity_gap: Option<f64>,
    pub gap_error: Option<String>,
}

/// Margins and injectivity gaps for the three two-parameter cases at lag
/// `ident_h`. Writes `identifiability.jsonl`.
pub fn cmd_identifiability(cfg: &ExperimentConfig) -> Result<Vec<IdentifiabilityRecord>, CliError> {
    cfg.validate()?;
    let spec = QuadratureSpec::default();
    let margin_grid = MarginGrid::uniform(
        (cfg.xi_min, cfg.xi_max),
        (cfg.sigma_min, cfg.sigma_max),
        (cfg.hurst_min, cfg.hurst_max),
        cfg.margin_grid,
    );
    let gap_grid = MarginGrid::uniform(
        (cfg.xi_min, cfg.xi_max),
        (cfg.sigma_min, cfg.sigma_max),
        (cfg.hurst_min, cfg.hurst_max),
        cfg.ident_grid,
    );
    let fixed = (cfg.xi_true, cfg.sigma_true, cfg.hurst_true);
    let records = IdentCase::ALL
        .par_iter()
        .map(|&case| {
            let margin = identifiability_margin(case, &margin_grid, cfg.ident_h, &spec)?;
            let (injectivity_gap, gap_error) = match injectivity_gap(case, &gap_grid, fixed, cfg.ident_h, &spec) {
                Ok(g) => (Some(g), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok(IdentifiabilityRecord {
                margin,
                derivative: case.derivative_name().to_string(),
                injectivity_gap,
                gap_error,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_file(&cfg.output, "identifiability.jsonl", &to_jsonl(&records))?;
    Ok(records)
}

/// Free coordinates of the two- and three-parameter SGD cases, with the
/// number of increments each uses.
pub const SGD_CASES: [(&str, &[Param], usize); 4] = [
    ("sgd_sigma_hurst", &[Param::Sigma, Param::Hurst], 1),
    ("sgd_xi_hurst", &[Param::Xi, Param::Hurst], 1),
    ("sgd_xi_sigma", &[Param::Xi, Param::Sigma], 1),
    ("sgd_xi_sigma_hurst", &[Param::Xi, Param::Sigma, Param::Hurst], 2),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub case: String,
    #[serde(flatten)]
    pub record: TrialRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// The seven per-case CSV files.
    pub datasets: Vec<PathBuf>,
    /// One-parameter estimates, indexed `[xi, sigma, hurst][trial]`.
    pub single: [Vec<TrialRecord>; 3],
    /// SGD runs in `SGD_CASES` order.
    pub sgd: Vec<(TrialRecord, Option<SGDTrace>)>,
}

fn loss_series_csv(trace: Option<&SGDTrace>) -> String {
    let mut s = String::from("iteration,loss,xi,sigma,hurst\n");
    if let Some(t) = trace {
        for (k, (theta, loss)) in t.thetas.iter().zip(&t.losses).enumerate() {
            writeln!(s, "{k},{loss},{},{},{}", theta.xi[0], theta.sigma, theta.hurst).unwrap();
        }
    }
    s
}

/// One-parameter histograms over `trials` datasets, and one SGD loss
/// series per multi-parameter case on the trial-0 dataset. Every case reads
/// columns of the same augmented path with two increments.
pub fn cmd_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkReport, CliError> {
    cfg.validate()?;
    let single: Vec<[TrialRecord; 3]> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let t = trial as u64;
            let data = simulate_data(cfg, t, 2);
            Param::ALL.map(|p| {
                trial_record(cfg, trial, t, || {
                    let obs = select_columns(data.as_ref().map_err(|e| CliError::Io(e.to_string()))?, 0);
                    let problem = build_problem(cfg, obs, &[p], cfg.distance, t)?;
                    Ok(run_estimator(cfg, &problem, MethodName::Search, None)?)
                })
                .0
            })
        })
        .collect();
    let single: [Vec<TrialRecord>; 3] = std::array::from_fn(|i| single.iter().map(|r| r[i].clone()).collect());

    let shared = simulate_data(cfg, 0, 2);
    let sgd: Vec<(TrialRecord, Option<SGDTrace>)> = SGD_CASES
        .par_iter()
        .enumerate()
        .map(|(i, (_, free, q))| {
            let iterations = if free.len() == 3 { cfg.bench_iterations_3d } else { cfg.bench_iterations_2d };
            trial_record(cfg, 0, 0, || {
                let obs = select_columns(shared.as_ref().map_err(|e| CliError::Io(e.to_string()))?, *q);
                let problem = build_problem(cfg, obs, free, DistanceName::Cf, 0)?;
                let phi = RngStream::new(cfg.master_seed, PHI_STREAM_OFFSET).child(2 + i as u64);
                let mut sgd = sgd_config(cfg, free, iterations, phi);
                sgd.reference = Some(cfg.theta_true());
                Ok(run_estimator(cfg, &problem, MethodName::Sgd, Some(sgd))?)
            })
        })
        .collect();

    let truth = ThetaHat::from(&cfg.theta_true());
    let mut datasets = Vec::new();
    let mut jsonl = Vec::new();
    let mut summary = String::from("case,parameter,true,mean,bias,variance,n,final_loss\n");
    for (i, p) in Param::ALL.iter().enumerate() {
        let case = format!("single_{}", p.name());
        let values: Vec<f64> = single[i].iter().filter_map(|r| r.theta_hat.map(|t| t.get(*p))).collect();
        datasets.push(write_file(&cfg.output, &format!("{case}.csv"), &histogram_csv(&values, cfg.histogram_bins))?);
        let (mean, var) = sample_mean_var(&values);
        let tv = truth.get(*p);
        writeln!(summary, "{case},{},{tv},{mean},{},{var},{},", p.name(), mean - tv, values.len()).unwrap();
        jsonl.extend(single[i].iter().map(|r| BenchRecord { case: case.clone(), record: r.clone() }));
    }
    for ((case, free, _), (rec, trace)) in SGD_CASES.iter().zip(&sgd) {
        datasets.push(write_file(&cfg.output, &format!("{case}.csv"), &loss_series_csv(trace.as_ref()))?);
        for p in free.iter() {
            let tv = truth.get(*p);
            match (rec.theta_hat, rec.final_loss) {
                (Some(t), Some(loss)) => {
                    let v = t.get(*p);
                    writeln!(summary, "{case},{},{tv},{v},{},0,1,{loss}", p.name(), v - tv).unwrap()
                }
                _ => writeln!(summary, "{case},{},{tv},,,,0,", p.name()).unwrap(),
            }
        }
        jsonl.push(BenchRecord { case: case.to_string(), record: rec.clone() });
    }
    write_file(&cfg.output, "benchmark_trials.jsonl", &to_jsonl(&jsonl))?;
    write_file(&cfg.output, "benchmark_summary.csv", &summary)?;

    let failed = jsonl.iter().filter(|r| !r.record.is_ok()).count();
    check_failures(failed, jsonl.len())?;
    Ok(BenchmarkReport { datasets, single, sgd })
}
