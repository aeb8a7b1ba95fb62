//! Output records and their file formats.

use std::fmt::Write as _;
use std::path::Path;

use fracest_core::sde::ThetaVector;
use serde::{Deserialize, Serialize};

use crate::config::Param;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaHat {
    pub xi: f64,
    pub sigma: f64,
    pub hurst: f64,
}

impl ThetaHat {
    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Xi => self.xi,
            Param::Sigma => self.sigma,
            Param::Hurst => self.hurst,
        }
    }
}

impl From<&ThetaVector> for ThetaHat {
    fn from(t: &ThetaVector) -> Self {
        Self {
            xi: t.xi[0],
            sigma: t.sigma,
            hurst: t.hurst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Stream id of the data path.
    pub stream: u64,
    pub theta_hat: Option<ThetaHat>,
    pub contrast: Option<f64>,
    pub boundary_hit: Option<bool>,
    /// Seconds; only filled when `record_wall_time` is set.
    pub wall_time: Option<f64>,
    pub iterations: Option<usize>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(trial: usize, seed: u64, stream: u64, error: String) -> Self {
        Self {
            trial,
            seed,
            stream,
            theta_hat: None,
            contrast: None,
            boundary_hit: None,
            wall_time: None,
            iterations: None,
            final_loss: None,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub parameter: Param,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Unbiased sample variance; zero for a single estimate.
    pub variance: f64,
    pub n: usize,
}

pub fn sample_mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n < 2 {
        0.0
    } else {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    };
    (mean, var)
}

/// Per-parameter statistics over the successful records.
pub fn summarize(records: &[TrialRecord], params: &[Param], truth: &ThetaHat) -> Vec<SummaryRow> {
    params
        .iter()
        .map(|&p| {
            let values: Vec<f64> = records.iter().filter_map(|r| r.theta_hat.map(|t| t.get(p))).collect();
            let (mean, variance) = sample_mean_var(&values);
            SummaryRow {
                parameter: p,
                truth: truth.get(p),
                mean,
                bias: mean - truth.get(p),
                variance,
                n: values.len(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("parameter,true,mean,bias,variance,n\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.parameter.name(), r.truth, r.mean, r.bias, r.variance, r.n).unwrap();
    }
    s
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Io(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<std::path::PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Equal-width histogram over the range of `values`.
pub fn histogram_csv(values: &[f64], bins: usize) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    if values.is_empty() {
        return s;
    }
    let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        lo -= 5e-4;
        hi += 5e-4;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        let a = lo + width * k as f64;
        let b = if k + 1 == bins { hi } else { lo + width * (k + 1) as f64 };
        writeln!(s, "{a},{b},{c}").unwrap();
    }
    s
}
