//! Flat experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use fracest_core::sde::{ThetaBox, ThetaVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Ou,
    PerturbedOu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Closed-form stationary law (OU drift only).
    Analytic,
    /// Euler-simulated stationary law.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceName {
    Cf,
    W1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Search,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Xi,
    Sigma,
    Hurst,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::Xi, Param::Sigma, Param::Hurst];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Xi => "xi",
            Param::Sigma => "sigma",
            Param::Hurst => "hurst",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelName,
    /// Strength of the `tanh` perturbation for `perturbed_ou`.
    pub lambda: f64,
    pub estimator: EstimatorKind,

    pub xi_true: f64,
    pub sigma_true: f64,
    pub hurst_true: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub hurst_min: f64,
    pub hurst_max: f64,
    pub free: Vec<Param>,

    pub fine_step: f64,
    pub k0: usize,
    pub n: usize,
    /// Number of increments in the augmented state; defaults to
    /// `free.len() - 1`.
    pub q: Option<usize>,
    pub lag_h: f64,
    /// Permit `lag_h != k0 * fine_step` (it must still be a multiple).
    pub allow_lag_mismatch: bool,
    /// Transient discarded from the data path, in time units.
    pub data_burn_in: f64,

    pub distance: DistanceName,
    pub p: f64,
    pub mc_samples: usize,

    pub method: MethodName,
    pub iterations: usize,
    pub batch_size: usize,
    pub step_fraction: f64,
    pub step_decay: Option<f64>,
    pub project: bool,
    pub init_xi: f64,
    pub init_sigma: f64,
    pub init_hurst: f64,

    /// Rows of the simulated law for the `simulated` estimator.
    pub n_sim: usize,
    pub sim_burn_in: Option<f64>,

    pub trials: usize,
    pub master_seed: u64,
    pub output: PathBuf,
    pub record_wall_time: bool,

    pub ident_h: f64,
    pub ident_grid: usize,
    pub margin_grid: usize,

    pub bench_iterations_2d: usize,
    pub bench_iterations_3d: usize,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelName::Ou,
            lambda: 0.2,
            estimator: EstimatorKind::Analytic,
            xi_true: 2.0,
            sigma_true: 0.5,
            hurst_true: 0.7,
            xi_min: 0.5,
            xi_max: 4.0,
            sigma_min: 0.1,
            sigma_max: 1.5,
            hurst_min: 0.3,
            hurst_max: 0.9,
            free: vec![Param::Xi],
            fine_step: 1e-3,
            k0: 100,
            n: 10_000,
            q: None,
            lag_h: 0.1,
            allow_lag_mismatch: false,
            data_burn_in: 0.0,
            distance: DistanceName::W1,
            p: 2.0,
            mc_samples: 500,
            method: MethodName::Search,
            iterations: 1000,
            batch_size: 100,
            step_fraction: 0.05,
            step_decay: None,
            project: true,
            init_xi: 1.0,
            init_sigma: 0.7,
            init_hurst: 0.5,
            n_sim: 10_000,
            sim_burn_in: None,
            trials: 100,
            master_seed: 0,
            output: PathBuf::from("out"),
            record_wall_time: false,
            ident_h: 0.1,
            ident_grid: 20,
            margin_grid: 12,
            bench_iterations_2d: 1000,
            bench_iterations_3d: 100,
            histogram_bins: 20,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("field `{field}`: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn nonzero(field: &str, v: usize) -> Result<(), CliError> {
    if v > 0 {
        Ok(())
    } else {
        Err(invalid(field, "must be at least 1"))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn q(&self) -> usize {
        self.q.unwrap_or(self.free.len().saturating_sub(1))
    }

    pub fn theta_true(&self) -> ThetaVector {
        ThetaVector::scalar(self.xi_true, self.sigma_true, self.hurst_true)
    }

    pub fn theta_init(&self) -> ThetaVector {
        ThetaVector::scalar(self.init_xi, self.init_sigma, self.init_hurst)
    }

    pub fn theta_box(&self) -> ThetaBox {
        ThetaBox {
            xi: vec![(self.xi_min, self.xi_max)],
            sigma: (self.sigma_min, self.sigma_max),
            hurst: (self.hurst_min, self.hurst_max),
        }
    }

    pub fn free_mask(&self) -> Vec<bool> {
        Param::ALL.iter().map(|p| self.free.contains(p)).collect()
    }

    pub fn coarse_step(&self) -> f64 {
        self.fine_step * self.k0 as f64
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, lo, hi) in [
            ("xi", self.xi_min, self.xi_max),
            ("sigma", self.sigma_min, self.sigma_max),
        ] {
            if !(lo > 0.0) {
                return Err(invalid(&format!("{name}_min"), format!("must be positive, got {lo}")));
            }
            if !(lo < hi && hi.is_finite()) {
                return Err(invalid(&format!("{name}_max"), format!("must exceed {name}_min = {lo}, got {hi}")));
            }
        }
        if !(self.hurst_min > 0.0) {
            return Err(invalid("hurst_min", format!("must lie in (0, 1), got {}", self.hurst_min)));
        }
        if !(self.hurst_min < self.hurst_max && self.hurst_max < 1.0) {
            return Err(invalid(
                "hurst_max",
                format!("must lie in (hurst_min, 1), got {}", self.hurst_max),
            ));
        }
        positive("xi_true", self.xi_true)?;
        positive("sigma_true", self.sigma_true)?;
        if !(self.hurst_true > 0.0 && self.hurst_true < 1.0) {
            return Err(invalid("hurst_true", "must lie in (0, 1)"));
        }
        if self.free.is_empty() {
            return Err(invalid("free", "at least one parameter must be free"));
        }
        let mut seen = self.free.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.free.len() {
            return Err(invalid("free", "duplicate parameter"));
        }
        let bx = self.theta_box();
        let init = self.theta_init();
        for p in &self.free {
            let (lo, hi) = bx.bounds(p.index());
            let v = init.get(p.index());
            if v < lo || v > hi {
                return Err(invalid(&format!("init_{}", p.name()), format!("{v} lies outside [{lo}, {hi}]")));
            }
        }
        positive("fine_step", self.fine_step)?;
        nonzero("k0", self.k0)?;
        nonzero("n", self.n)?;
        positive("lag_h", self.lag_h)?;
        let gamma = self.coarse_step();
        let ratio = self.lag_h / gamma;
        if !self.allow_lag_mismatch {
            if (ratio - 1.0).abs() > 1e-9 {
                return Err(invalid(
                    "lag_h",
                    format!("must equal k0 * fine_step = {gamma} unless allow_lag_mismatch is set"),
                ));
            }
        } else if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(invalid("lag_h", format!("must be a positive multiple of k0 * fine_step = {gamma}")));
        }
        if !(self.data_burn_in >= 0.0) {
            return Err(invalid("data_burn_in", "must be non-negative"));
        }
        if self.q() + 1 < self.free.len() {
            return Err(invalid(
                "q",
                format!("{} free parameters need q >= {}", self.free.len(), self.free.len() - 1),
            ));
        }
        if !(self.p > ((self.q() + 1) as f64 / 2.0).max(1.0)) {
            return Err(invalid("p", format!("must exceed max((q+1)/2, 1), got {}", self.p)));
        }
        nonzero("mc_samples", self.mc_samples)?;
        if self.method == MethodName::Search && self.free.len() != 1 {
            return Err(invalid("method", "search needs exactly one free parameter; use sgd"));
        }
        if self.method == MethodName::Sgd && self.distance == DistanceName::W1 {
            return Err(invalid("distance", "sgd needs the cf distance"));
        }
        nonzero("iterations", self.iterations)?;
        nonzero("batch_size", self.batch_size)?;
        positive("step_fraction", self.step_fraction)?;
        if let Some(d) = self.step_decay {
            positive("step_decay", d)?;
        }
        if self.model == ModelName::PerturbedOu {
            if self.estimator == EstimatorKind::Analytic {
                return Err(invalid("estimator", "perturbed_ou has no closed-form law; use simulated"));
            }
            if !(self.lambda >= 0.0 && self.lambda <= 0.5 * self.xi_min) {
                return Err(invalid("lambda", format!("must lie in [0, xi_min / 2 = {}]", 0.5 * self.xi_min)));
            }
        }
        nonzero("n_sim", self.n_sim)?;
        if let Some(b) = self.sim_burn_in {
            if !(b >= 0.0) {
                return Err(invalid("sim_burn_in", "must be non-negative"));
            }
        }
        nonzero("trials", self.trials)?;
        if !(self.ident_h > 0.0 && self.ident_h < 1.0) {
            return Err(invalid("ident_h", "must lie in (0, 1)"));
        }
        if self.ident_grid < 2 {
            return Err(invalid("ident_grid", "must be at least 2"));
        }
        if self.margin_grid < 2 {
            return Err(invalid("margin_grid", "must be at least 2"));
        }
        nonzero("bench_iterations_2d", self.bench_iterations_2d)?;
        nonzero("bench_iterations_3d", self.bench_iterations_3d)?;
        nonzero("histogram_bins", self.histogram_bins)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.q(), 0);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml_str("free = [\"sigma\", \"hurst\"]\nmethod = \"sgd\"\ndistance = \"cf\"\n").unwrap();
        assert_eq!(c.q(), 1);
        assert_eq!(c.n, 10_000);
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::from_toml_str("xi_min = 3.0\nxi_max = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("xi_max"), "{e}");
        let e = ExperimentConfig::from_toml_str("bogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml_str("n = \"many\"\n").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
        let e = ExperimentConfig::from_toml_str("lag_h = 0.2\n").unwrap_err();
        assert!(e.to_string().contains("lag_h"), "{e}");
        assert!(ExperimentConfig::from_toml_str("lag_h = 0.2\nallow_lag_mismatch = true\n").is_ok());
        let e = ExperimentConfig::from_toml_str("free = [\"xi\", \"sigma\"]\nq = 0\n").unwrap_err();
        assert!(e.to_string().contains("`q`"), "{e}");
        let e = ExperimentConfig::from_toml_str("model = \"perturbed_ou\"\n").unwrap_err();
        assert!(e.to_string().contains("estimator"), "{e}");
    }
}
