//! Minimum-distance estimators: bounded scalar search, projected stochastic
//! gradient descent on the closed-form fractional OU law, and the variant
//! where the stationary law is approximated by an Euler scheme.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cf::{wasserstein_1d, wasserstein_to_gaussian, CFConfig, EmpiricalMeasure, PhiBatch};
use crate::error::{domain, Error, Result};
use crate::fbm::{sample_fbm_multi, FbmGrid};
use crate::fou::{augmented_cov, grad_augmented_cov, quad_form, stationary_variance, OUParams};
use crate::quadrature::QuadratureSpec;
use crate::rng::RngStream;
use crate::sde::{
    augment, euler_simulate, lag_ratio, subsample, tangent_sigma, tangent_xi, AugmentedPath,
    DriftModel, Path, ThetaBox, ThetaVector,
};

/// Points of the coarse scan preceding golden-section refinement.
pub const GRID_POINTS: usize = 32;
/// Final bracket width of the scalar search, in normalized box units.
pub const SEARCH_TOL: f64 = 1e-4;
/// Distance to a box edge below which an estimate is flagged.
pub const BOUNDARY_TOL: f64 = 1e-3;
/// SGD iterations between derivative-free Hurst updates.
pub const HURST_SWEEP_EVERY: usize = 25;
/// Contrast evaluations per Hurst update.
pub const HURST_SWEEP_EVALS: usize = 10;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone)]
pub enum Model {
    /// Closed-form Gaussian stationary law of the fractional OU process.
    OuAnalytic,
    /// Stationary law approximated by an Euler scheme.
    General(Arc<dyn DriftModel>),
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::OuAnalytic => f.write_str("OuAnalytic"),
            Model::General(d) => write!(f, "General(dim = {})", d.dim()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Cf,
    /// Wasserstein-1 on the first coordinate only.
    W1,
}

/// Euler approximation of a stationary law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerConfig {
    pub fine_step: f64,
    /// Fine steps per observation step.
    pub k0: usize,
    /// Number of augmented rows `N`.
    pub n_sim: usize,
    /// Discarded transient in time units; `None` uses the drift default.
    pub burn_in: Option<f64>,
    pub stream: RngStream,
}

impl EulerConfig {
    pub fn coarse_step(&self) -> f64 {
        self.fine_step * self.k0 as f64
    }
}

/// Layout of an augmented simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimLayout {
    pub fine_step: f64,
    pub k0: usize,
    pub rows: usize,
    pub q: usize,
    pub lag_h: f64,
    pub burn_in: f64,
}

impl SimLayout {
    pub fn burn_steps(&self) -> usize {
        (self.burn_in / self.fine_step - 1e-9).ceil().max(0.0) as usize
    }

    /// Fine increments needed for `rows` augmented rows after burn-in.
    pub fn fine_len(&self) -> Result<usize> {
        if self.k0 == 0 || self.rows == 0 {
            return domain("k0 and the number of rows must be positive");
        }
        let r = lag_ratio(self.fine_step * self.k0 as f64, self.lag_h)?;
        Ok(self.burn_steps() + (self.rows - 1 + self.q * r) * self.k0)
    }
}

fn project_path(path: &Path, layout: &SimLayout) -> Result<AugmentedPath> {
    let trimmed = path.skip(layout.burn_steps());
    let coarse = subsample(&trimmed, layout.k0)?;
    let mut aug = augment(&coarse, layout.q, layout.lag_h)?;
    aug.rows.truncate(layout.rows * aug.width);
    Ok(aug)
}

/// Driving noise for `drift.dim()` coordinates on the fine grid.
pub fn simulation_noise(
    drift: &dyn DriftModel,
    hurst: f64,
    layout: &SimLayout,
    stream: &RngStream,
) -> Result<Vec<FbmGrid>> {
    sample_fbm_multi(hurst, layout.fine_step, layout.fine_len()?, drift.dim(), stream)
}

/// Augmented observations of an Euler path, plus the augmented tangent
/// processes `[d/dxi_1, ..., d/dxi_m, d/dsigma]` when requested.
pub fn simulate_with_noise(
    drift: &dyn DriftModel,
    theta: &ThetaVector,
    layout: &SimLayout,
    y0: &[f64],
    noise: &[FbmGrid],
    with_tangents: bool,
) -> Result<(AugmentedPath, Vec<AugmentedPath>)> {
    let path = euler_simulate(drift, theta, noise, y0)?;
    let aug = project_path(&path, layout)?;
    let mut tangents = Vec::new();
    if with_tangents {
        for t in tangent_xi(drift, theta, &path)? {
            tangents.push(project_path(&t, layout)?);
        }
        tangents.push(project_path(&tangent_sigma(drift, theta, &path, noise)?, layout)?);
    }
    Ok((aug, tangents))
}

pub fn simulate_augmented(
    drift: &dyn DriftModel,
    theta: &ThetaVector,
    layout: &SimLayout,
    y0: &[f64],
    stream: &RngStream,
) -> Result<AugmentedPath> {
    let noise = simulation_noise(drift, theta.hurst, layout, stream)?;
    Ok(simulate_with_noise(drift, theta, layout, y0, &noise, false)?.0)
}

#[derive(Debug, Clone)]
pub struct EstimationProblem {
    pub observations: AugmentedPath,
    pub theta_box: ThetaBox,
    /// Known coordinates and the free mask; free values are ignored.
    pub theta: ThetaVector,
    pub model: Model,
    pub distance: DistanceKind,
    /// Frozen batch used for contrast evaluation.
    pub cf: CFConfig,
    pub quadrature: QuadratureSpec,
    pub euler: Option<EulerConfig>,
}

impl EstimationProblem {
    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        self.theta_box.validate()?;
        if self.theta_box.n_coords() != self.theta.n_coords() {
            return Err(Error::Dimension {
                expected: self.theta.n_coords(),
                got: self.theta_box.n_coords(),
            });
        }
        let free = self.theta.free_indices().len();
        if free == 0 {
            return domain("no free parameter to estimate");
        }
        let obs = &self.observations;
        if obs.n_rows() == 0 {
            return Err(Error::Length("no observations".into()));
        }
        let d = match &self.model {
            Model::OuAnalytic => {
                if self.theta.xi.len() != 1 {
                    return Err(Error::Dimension {
                        expected: 1,
                        got: self.theta.xi.len(),
                    });
                }
                1
            }
            Model::General(drift) => {
                if self.euler.is_none() {
                    return Err(Error::Config("simulated-law estimation needs an Euler configuration".into()));
                }
                if drift.n_params() != self.theta.xi.len() {
                    return Err(Error::Dimension {
                        expected: drift.n_params(),
                        got: self.theta.xi.len(),
                    });
                }
                drift.dim()
            }
        };
        if obs.width != d * (obs.q + 1) {
            return Err(Error::Dimension {
                expected: d * (obs.q + 1),
                got: obs.width,
            });
        }
        if obs.q + 1 < free {
            return domain(format!(
                "{free} free parameters need at least {} lags, got q = {}",
                free - 1,
                obs.q
            ));
        }
        if self.distance == DistanceKind::Cf && self.cf.dim != obs.width {
            return Err(Error::Dimension {
                expected: obs.width,
                got: self.cf.dim,
            });
        }
        if let Some(e) = &self.euler {
            let gamma = e.coarse_step();
            lag_ratio(gamma, obs.lag_h)?;
            if e.n_sim == 0 {
                return domain("n_sim must be positive");
            }
        }
        Ok(())
    }

    /// `theta` with the free coordinates taken from `source`.
    pub fn with_free_from(&self, source: &ThetaVector) -> ThetaVector {
        let mut t = self.theta.clone();
        for i in self.theta.free_indices() {
            t.set(i, source.get(i));
        }
        t
    }

    /// Simulation layout. The default burn-in is taken at the lower corner
    /// of the drift box so the noise length does not depend on `theta`.
    fn layout(&self, drift: &dyn DriftModel) -> SimLayout {
        let e = self.euler.as_ref().expect("validated");
        let xi_lo: Vec<f64> = self.theta_box.xi.iter().map(|b| b.0).collect();
        SimLayout {
            fine_step: e.fine_step,
            k0: e.k0,
            rows: e.n_sim,
            q: self.observations.q,
            lag_h: self.observations.lag_h,
            burn_in: e.burn_in.unwrap_or_else(|| drift.burn_in_time(&xi_lo)),
        }
    }

    pub fn new(
        observations: AugmentedPath,
        theta_box: ThetaBox,
        theta: ThetaVector,
        model: Model,
        distance: DistanceKind,
        cf: CFConfig,
    ) -> Result<Self> {
        let p = Self {
            observations,
            theta_box,
            theta,
            model,
            distance,
            cf,
            quadrature: QuadratureSpec::default(),
            euler: None,
        };
        if !matches!(p.model, Model::General(_)) {
            p.validate()?;
        }
        Ok(p)
    }

    pub fn with_euler(mut self, euler: EulerConfig) -> Result<Self> {
        self.euler = Some(euler);
        self.validate()?;
        Ok(self)
    }
}

fn ou_params(theta: &ThetaVector, obs: &AugmentedPath) -> OUParams {
    OUParams {
        xi: theta.xi[0],
        sigma: theta.sigma,
        hurst: theta.hurst,
        lag_h: obs.lag_h,
        q: obs.q,
    }
}

fn first_column(path: &AugmentedPath) -> Vec<f64> {
    let mut v: Vec<f64> = path.iter_rows().map(|r| r[0]).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Contrast `theta -> d(mu_n, mu_theta)` with a frozen frequency batch and,
/// for simulated laws, frozen driving noise.
pub struct ContrastEvaluator<'a> {
    problem: &'a EstimationProblem,
    batch: PhiBatch,
    obs_cf: Vec<Complex64>,
    obs_first: Vec<f64>,
    noise: Option<(f64, usize, Vec<FbmGrid>)>,
    evaluations: usize,
}

impl<'a> ContrastEvaluator<'a> {
    pub fn new(problem: &'a EstimationProblem) -> Result<Self> {
        problem.validate()?;
        let (batch, obs_cf, obs_first) = match problem.distance {
            DistanceKind::Cf => {
                let batch = problem.cf.batch();
                let m = EmpiricalMeasure::new(problem.observations.width, problem.observations.rows.clone())?;
                let cf = batch.iter().map(|phi| m.cf(phi)).collect();
                (batch, cf, Vec::new())
            }
            DistanceKind::W1 => (
                PhiBatch {
                    dim: problem.observations.width,
                    points: Vec::new(),
                },
                Vec::new(),
                first_column(&problem.observations),
            ),
        };
        Ok(Self {
            problem,
            batch,
            obs_cf,
            obs_first,
            noise: None,
            evaluations: 0,
        })
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn batch(&self) -> &PhiBatch {
        &self.batch
    }

    fn noise_for(&mut self, drift: &dyn DriftModel, hurst: f64, layout: &SimLayout) -> Result<&[FbmGrid]> {
        let len = layout.fine_len()?;
        let stale = match &self.noise {
            Some((h, n, _)) => *h != hurst || *n != len,
            None => true,
        };
        if stale {
            let stream = self.problem.euler.as_ref().expect("validated").stream;
            let grids = simulation_noise(drift, hurst, layout, &stream)?;
            self.noise = Some((hurst, len, grids));
        }
        Ok(&self.noise.as_ref().expect("just set").2)
    }

    /// Simulated augmented path at `theta`, reusing the frozen noise.
    pub fn simulate(&mut self, theta: &ThetaVector, with_tangents: bool) -> Result<(AugmentedPath, Vec<AugmentedPath>)> {
        let drift = match &self.problem.model {
            Model::General(d) => Arc::clone(d),
            Model::OuAnalytic => return domain("the analytic model has no simulated law"),
        };
        let layout = self.problem.layout(drift.as_ref());
        let y0 = vec![0.0; drift.dim()];
        let noise = self.noise_for(drift.as_ref(), theta.hurst, &layout)?.to_vec();
        simulate_with_noise(drift.as_ref(), theta, &layout, &y0, &noise, with_tangents)
    }

    pub fn value(&mut self, theta: &ThetaVector) -> Result<f64> {
        if !self.problem.theta_box.contains(theta) {
            return domain("parameter outside the box");
        }
        self.evaluations += 1;
        let problem = self.problem;
        match (&problem.model, problem.distance) {
            (Model::OuAnalytic, DistanceKind::W1) => {
                let v = stationary_variance(theta.xi[0], theta.sigma, theta.hurst)?;
                wasserstein_to_gaussian(&self.obs_first, v)
            }
            (Model::OuAnalytic, DistanceKind::Cf) => {
                let law = augmented_cov(&ou_params(theta, &problem.observations), &problem.quadrature)?;
                let s: f64 = self
                    .batch
                    .iter()
                    .zip(&self.obs_cf)
                    .map(|(phi, e)| (e - Complex64::new(law.cf(phi), 0.0)).norm_sqr())
                    .sum();
                Ok(s / self.batch.len() as f64)
            }
            (Model::General(_), DistanceKind::W1) => {
                let (sim, _) = self.simulate(theta, false)?;
                wasserstein_1d(&self.obs_first, &first_column(&sim))
            }
            (Model::General(_), DistanceKind::Cf) => {
                let (sim, _) = self.simulate(theta, false)?;
                let m = EmpiricalMeasure::new(sim.width, sim.rows)?;
                let s: f64 = self
                    .batch
                    .iter()
                    .zip(&self.obs_cf)
                    .map(|(phi, e)| (e - m.cf(phi)).norm_sqr())
                    .sum();
                Ok(s / self.batch.len() as f64)
            }
        }
    }
}

/// One-shot contrast evaluation.
pub fn contrast_value(theta: &ThetaVector, problem: &EstimationProblem) -> Result<f64> {
    ContrastEvaluator::new(problem)?.value(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate1d {
    pub theta: ThetaVector,
    pub contrast: f64,
    pub boundary_hit: bool,
    pub evaluations: usize,
}

/// Minimizes `f` over `[0, 1]`: coarse scan, then golden section to `tol`.
/// Returns the best point seen; ties go to the smaller argument.
fn scan_and_refine<F>(mut f: F, grid: usize, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut best = (f64::NAN, f64::INFINITY);
    let consider = |u: f64, v: f64, best: &mut (f64, f64)| {
        if v < best.1 || (v == best.1 && u < best.0) {
            *best = (u, v);
        }
    };
    let grid = grid.max(3);
    let mut idx = 0;
    for j in 0..grid {
        let u = j as f64 / (grid - 1) as f64;
        let v = f(u)?;
        if v < best.1 {
            idx = j;
        }
        consider(u, v, &mut best);
    }
    let step = 1.0 / (grid - 1) as f64;
    let mut a = (idx as f64 - 1.0).max(0.0) * step;
    let mut b = ((idx + 1) as f64 * step).min(1.0);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            consider(d, fd, &mut best);
        }
    }
    Ok(best)
}

/// Golden section on `[0, 1]` with a fixed number of evaluations.
fn golden_fixed<F>(mut f: F, evals: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fd < fc { (d, fd) } else { (c, fc) };
    for _ in 2..evals.max(2) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    Ok(best)
}

/// Bounded scalar minimization of the contrast in the single free coordinate.
pub fn estimate_1d(problem: &EstimationProblem) -> Result<Estimate1d> {
    let free = problem.theta.free_indices();
    if free.len() != 1 {
        return domain(format!("scalar search needs exactly one free parameter, got {}", free.len()));
    }
    let i = free[0];
    let bx = &problem.theta_box;
    let mut eval = ContrastEvaluator::new(problem)?;
    let mut theta = problem.theta.clone();
    let (u, v) = scan_and_refine(
        |u| {
            theta.set(i, bx.denormalize(i, u));
            eval.value(&theta)
        },
        GRID_POINTS,
        SEARCH_TOL,
    )?;
    let mut theta = problem.theta.clone();
    let x = bx.denormalize(i, u);
    theta.set(i, x);
    let (lo, hi) = bx.bounds(i);
    Ok(Estimate1d {
        theta,
        contrast: v,
        boundary_hit: x - lo <= BOUNDARY_TOL || hi - x <= BOUNDARY_TOL,
        evaluations: eval.evaluations(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SGDConfig {
    /// Starting values of the free coordinates.
    pub init: ThetaVector,
    pub iterations: usize,
    pub batch_size: usize,
    /// First-update displacement of each free coordinate, as a fraction of
    /// its box width, used when `eta0` is not given.
    pub step_fraction: f64,
    /// Explicit initial steps per flattened coordinate.
    pub eta0: Option<Vec<f64>>,
    /// Decay scale `tau` of `eta_k = eta_0 / (1 + k / tau)`; defaults to
    /// `iterations / 4`.
    pub decay: Option<f64>,
    pub project: bool,
    pub phi_stream: RngStream,
    /// True parameter, when known, for the normalized loss.
    pub reference: Option<ThetaVector>,
}

impl SGDConfig {
    pub fn new(init: ThetaVector, iterations: usize, batch_size: usize, phi_stream: RngStream) -> Self {
        Self {
            init,
            iterations,
            batch_size,
            step_fraction: 0.05,
            eta0: None,
            decay: None,
            project: true,
            phi_stream,
            reference: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return domain("iterations and batch_size must be positive");
        }
        if !(self.step_fraction > 0.0) {
            return domain("step_fraction must be positive");
        }
        if let Some(eta) = &self.eta0 {
            if eta.iter().any(|e| !(*e > 0.0)) {
                return domain("initial steps must be positive");
            }
        }
        if let Some(t) = self.decay {
            if !(t > 0.0) {
                return domain("step decay must be positive");
            }
        }
        Ok(())
    }

    fn tau(&self) -> f64 {
        self.decay.unwrap_or((self.iterations as f64 / 4.0).max(1.0))
    }

    pub fn step(&self, k: usize, eta0: f64) -> f64 {
        eta0 / (1.0 + k as f64 / self.tau())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SGDTrace {
    pub thetas: Vec<ThetaVector>,
    /// Normalized loss when a reference is known, else the frozen-batch contrast.
    pub losses: Vec<f64>,
    pub normalized: bool,
    /// Initial steps used, per flattened coordinate (0 for fixed ones).
    pub eta0: Vec<f64>,
}

impl SGDTrace {
    pub fn final_theta(&self) -> &ThetaVector {
        self.thetas.last().expect("trace is never empty")
    }
}

/// `(1/#free) sum |theta^i - theta_0^i| / |theta_init^i - theta_0^i|`.
pub fn normalized_loss(theta: &ThetaVector, init: &ThetaVector, reference: &ThetaVector, free: &[usize]) -> f64 {
    let s: f64 = free
        .iter()
        .map(|&i| {
            let den = (init.get(i) - reference.get(i)).abs().max(1e-12);
            (theta.get(i) - reference.get(i)).abs() / den
        })
        .sum();
    s / free.len() as f64
}

fn ou_lambda(
    theta: &ThetaVector,
    batch: &PhiBatch,
    obs_cf: &[Complex64],
    problem: &EstimationProblem,
    free: &[usize],
) -> Result<Vec<f64>> {
    let g = grad_augmented_cov(&ou_params(theta, &problem.observations), &problem.quadrature)?;
    let mut out = vec![0.0; free.len()];
    for (phi, e) in batch.iter().zip(obs_cf) {
        let gv = (-0.5 * quad_form(&g.cov, phi)).exp();
        let w = (e.re - gv) * gv;
        for (o, &i) in out.iter_mut().zip(free) {
            *o += w * quad_form(g.component(i), phi);
        }
    }
    let m = batch.len() as f64;
    Ok(out.into_iter().map(|v| v / m).collect())
}

/// Batch average of `Lambda(theta, phi) = d/dtheta |mu_n(f_phi) - mu_theta(f_phi)|^2`
/// for the closed-form law, over the free coordinates.
pub fn sgd_gradient_sample(theta: &ThetaVector, batch: &PhiBatch, problem: &EstimationProblem) -> Result<Vec<f64>> {
    problem.validate()?;
    if !matches!(problem.model, Model::OuAnalytic) {
        return domain("closed-form gradient needs the analytic model");
    }
    if batch.dim != problem.observations.width {
        return Err(Error::Dimension {
            expected: problem.observations.width,
            got: batch.dim,
        });
    }
    let m = EmpiricalMeasure::new(problem.observations.width, problem.observations.rows.clone())?;
    let obs_cf: Vec<Complex64> = batch.iter().map(|phi| m.cf(phi)).collect();
    ou_lambda(theta, batch, &obs_cf, problem, &problem.theta.free_indices())
}

/// Mean of the frozen-batch contrast, the objective whose gradient
/// `sgd_gradient_sample` returns.
pub fn batch_contrast(theta: &ThetaVector, batch: &PhiBatch, problem: &EstimationProblem) -> Result<f64> {
    let law = augmented_cov(&ou_params(theta, &problem.observations), &problem.quadrature)?;
    let m = EmpiricalMeasure::new(problem.observations.width, problem.observations.rows.clone())?;
    let s: f64 = batch
        .iter()
        .map(|phi| (m.cf(phi) - Complex64::new(law.cf(phi), 0.0)).norm_sqr())
        .sum();
    Ok(s / batch.len() as f64)
}

struct Descent<'a> {
    problem: &'a EstimationProblem,
    sgd: &'a SGDConfig,
    free: Vec<usize>,
    init: ThetaVector,
    pinned: Vec<usize>,
}

impl<'a> Descent<'a> {
    fn new(problem: &'a EstimationProblem, sgd: &'a SGDConfig) -> Result<Self> {
        problem.validate()?;
        sgd.validate()?;
        let mut init = problem.with_free_from(&sgd.init);
        init.validate()?;
        if sgd.project {
            problem.theta_box.project(&mut init);
        }
        let free = problem.theta.free_indices();
        Ok(Self {
            problem,
            sgd,
            pinned: vec![0; free.len()],
            free,
            init,
        })
    }

    fn eta0(&self, grad: &[f64], coords: &[usize]) -> Vec<f64> {
        let mut eta = vec![0.0; self.init.n_coords()];
        for (g, &i) in grad.iter().zip(coords) {
            eta[i] = match &self.sgd.eta0 {
                Some(e) => e[i],
                None => self.sgd.step_fraction * self.problem.theta_box.width(i) / g.abs().max(1e-300),
            };
        }
        eta
    }

    fn apply(&mut self, theta: &mut ThetaVector, k: usize, eta0: &[f64], grad: &[f64], coords: &[usize]) {
        for (g, &i) in grad.iter().zip(coords) {
            theta.set(i, theta.get(i) - self.sgd.step(k, eta0[i]) * g);
        }
        if self.sgd.project {
            self.problem.theta_box.project(theta);
        }
        for (p, &i) in self.pinned.iter_mut().zip(&self.free) {
            let (lo, hi) = self.problem.theta_box.bounds(i);
            let v = theta.get(i);
            if v <= lo || v >= hi {
                *p += 1;
            }
        }
    }

    fn check_divergence(&self) -> Result<()> {
        let n = self.sgd.iterations;
        for (p, &i) in self.pinned.iter().zip(&self.free) {
            if 2 * p > n {
                return Err(Error::Divergence {
                    coordinate: i,
                    pinned: *p,
                    iterations: n,
                });
            }
        }
        Ok(())
    }

    fn loss(&self, theta: &ThetaVector, eval: &mut ContrastEvaluator<'_>) -> Result<f64> {
        match &self.sgd.reference {
            Some(r) => Ok(normalized_loss(theta, &self.init, r, &self.free)),
            None => eval.value(theta),
        }
    }
}

fn calibration_batch(sgd: &SGDConfig, dim: usize, p: f64) -> PhiBatch {
    PhiBatch::sample(dim, p, (10 * sgd.batch_size).max(1000), &sgd.phi_stream.child(u64::MAX))
}

/// Projected stochastic gradient descent on the closed-form law with a
/// fresh frequency batch at every iteration.
pub fn estimate_sgd(problem: &EstimationProblem, sgd: &SGDConfig) -> Result<SGDTrace> {
    if !matches!(problem.model, Model::OuAnalytic) {
        return domain("estimate_sgd needs the analytic model; use estimate_simulated");
    }
    let mut desc = Descent::new(problem, sgd)?;
    let free = desc.free.clone();
    let width = problem.observations.width;
    let obs = EmpiricalMeasure::new(width, problem.observations.rows.clone())?;
    let lambda = |theta: &ThetaVector, batch: &PhiBatch| {
        let cf: Vec<Complex64> = batch.iter().map(|phi| obs.cf(phi)).collect();
        ou_lambda(theta, batch, &cf, problem, &free)
    };
    let mut theta = desc.init.clone();
    let eta0 = desc.eta0(&lambda(&theta, &calibration_batch(sgd, width, problem.cf.p))?, &free);
    let mut eval = ContrastEvaluator::new(problem)?;
    let mut thetas = vec![theta.clone()];
    let mut losses = vec![desc.loss(&theta, &mut eval)?];
    let mut rng = sgd.phi_stream.rng();
    for k in 0..sgd.iterations {
        let mut points = Vec::with_capacity(width * sgd.batch_size);
        for _ in 0..sgd.batch_size {
            points.extend(crate::cf::sample_gp(width, problem.cf.p, &mut rng));
        }
        let batch = PhiBatch { dim: width, points };
        let g = lambda(&theta, &batch)?;
        desc.apply(&mut theta, k, &eta0, &g, &free);
        losses.push(desc.loss(&theta, &mut eval)?);
        thetas.push(theta.clone());
    }
    desc.check_divergence()?;
    Ok(SGDTrace {
        thetas,
        losses,
        normalized: sgd.reference.is_some(),
        eta0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimulatedMode {
    /// Scalar search; exactly one free coordinate.
    Search,
    /// SGD on drift and diffusion coordinates with tangent-process
    /// gradients; a free Hurst coordinate is updated by golden-section
    /// sweeps every `HURST_SWEEP_EVERY` iterations.
    Sgd(SGDConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimulatedResult {
    Search(Estimate1d),
    Sgd(SGDTrace),
}

impl SimulatedResult {
    pub fn theta(&self) -> &ThetaVector {
        match self {
            SimulatedResult::Search(e) => &e.theta,
            SimulatedResult::Sgd(t) => t.final_theta(),
        }
    }
}

/// `rho_theta`-based gradient of `|mu_n(f_phi) - mu^N_theta(f_phi)|^2` over
/// the coordinates `coords` (all `< m + 1`), averaged over `batch`.
fn simulated_lambda(
    sim: &AugmentedPath,
    tangents: &[AugmentedPath],
    batch: &PhiBatch,
    obs: &EmpiricalMeasure,
    coords: &[usize],
) -> Vec<f64> {
    let n = sim.n_rows() as f64;
    let mut out = vec![0.0; coords.len()];
    let mut dc = vec![0.0; coords.len()];
    let mut ds = vec![0.0; coords.len()];
    for phi in batch.iter() {
        let eo = obs.cf(phi);
        let (mut cs, mut ss) = (0.0, 0.0);
        dc.fill(0.0);
        ds.fill(0.0);
        for (k, row) in sim.iter_rows().enumerate() {
            let (s, c) = row.iter().zip(phi).map(|(x, p)| x * p).sum::<f64>().sin_cos();
            cs += c;
            ss += s;
            for (j, &i) in coords.iter().enumerate() {
                let t = tangents[i].row(k);
                let dp: f64 = t.iter().zip(phi).map(|(x, p)| x * p).sum();
                dc[j] -= s * dp;
                ds[j] += c * dp;
            }
        }
        let (cs, ss) = (cs / n, ss / n);
        for j in 0..coords.len() {
            out[j] += 2.0 * (cs - eo.re) * dc[j] / n + 2.0 * (ss - eo.im) * ds[j] / n;
        }
    }
    let m = batch.len() as f64;
    out.into_iter().map(|v| v / m).collect()
}

/// Batch average of the simulated-law gradient over the free drift and
/// diffusion coordinates, using the problem's frozen driving noise.
pub fn simulated_gradient_sample(
    theta: &ThetaVector,
    batch: &PhiBatch,
    problem: &EstimationProblem,
) -> Result<Vec<f64>> {
    let mut eval = ContrastEvaluator::new(problem)?;
    let coords: Vec<usize> = problem
        .theta
        .free_indices()
        .into_iter()
        .filter(|&i| i != problem.theta.hurst_index())
        .collect();
    let (sim, tangents) = eval.simulate(theta, true)?;
    let obs = EmpiricalMeasure::new(problem.observations.width, problem.observations.rows.clone())?;
    Ok(simulated_lambda(&sim, &tangents, batch, &obs, &coords))
}

/// `(1/m) sum |mu_n(f_phi) - mu^N_theta(f_phi)|^2` over `batch`, with frozen noise.
pub fn simulated_batch_contrast(theta: &ThetaVector, batch: &PhiBatch, problem: &EstimationProblem) -> Result<f64> {
    let mut eval = ContrastEvaluator::new(problem)?;
    let (sim, _) = eval.simulate(theta, false)?;
    let obs = EmpiricalMeasure::new(problem.observations.width, problem.observations.rows.clone())?;
    let m = EmpiricalMeasure::new(sim.width, sim.rows)?;
    let s: f64 = batch.iter().map(|phi| (obs.cf(phi) - m.cf(phi)).norm_sqr()).sum();
    Ok(s / batch.len() as f64)
}

/// Minimum-distance estimation against an Euler-simulated stationary law.
pub fn estimate_simulated(problem: &EstimationProblem, mode: &SimulatedMode) -> Result<SimulatedResult> {
    let drift = match &problem.model {
        Model::General(d) => Arc::clone(d),
        Model::OuAnalytic => return domain("estimate_simulated needs a general drift model"),
    };
    problem.validate()?;
    let e = problem.euler.as_ref().expect("validated");
    let gamma0 = drift.gamma0(&problem.theta.xi);
    if e.fine_step > gamma0 {
        return Err(Error::StepTooLarge {
            step: e.fine_step,
            gamma0,
        });
    }
    let sgd = match mode {
        SimulatedMode::Search => return Ok(SimulatedResult::Search(estimate_1d(problem)?)),
        SimulatedMode::Sgd(s) => s,
    };
    let mut desc = Descent::new(problem, sgd)?;
    let hurst_index = problem.theta.hurst_index();
    let grad_coords: Vec<usize> = desc.free.iter().copied().filter(|&i| i != hurst_index).collect();
    let hurst_free = desc.free.contains(&hurst_index);
    let width = problem.observations.width;
    let obs = EmpiricalMeasure::new(width, problem.observations.rows.clone())?;
    let mut eval = ContrastEvaluator::new(problem)?;
    let mut theta = desc.init.clone();

    let calib = calibration_batch(sgd, width, problem.cf.p);
    let (sim, tangents) = eval.simulate(&theta, true)?;
    let eta0 = desc.eta0(&simulated_lambda(&sim, &tangents, &calib, &obs, &grad_coords), &grad_coords);

    let mut thetas = vec![theta.clone()];
    let mut losses = vec![desc.loss(&theta, &mut eval)?];
    let mut rng = sgd.phi_stream.rng();
    let (h_lo, h_hi) = problem.theta_box.hurst;
    for k in 0..sgd.iterations {
        if hurst_free && k % HURST_SWEEP_EVERY == 0 {
            let mut probe = theta.clone();
            let (u, _) = golden_fixed(
                |u| {
                    probe.hurst = h_lo + u * (h_hi - h_lo);
                    eval.value(&probe)
                },
                HURST_SWEEP_EVALS,
            )?;
            theta.hurst = h_lo + u * (h_hi - h_lo);
        }
        if !grad_coords.is_empty() {
            let mut points = Vec::with_capacity(width * sgd.batch_size);
            for _ in 0..sgd.batch_size {
                points.extend(crate::cf::sample_gp(width, problem.cf.p, &mut rng));
            }
            let batch = PhiBatch { dim: width, points };
            let (sim, tangents) = eval.simulate(&theta, true)?;
            let g = simulated_lambda(&sim, &tangents, &batch, &obs, &grad_coords);
            desc.apply(&mut theta, k, &eta0, &g, &grad_coords);
        } else {
            desc.apply(&mut theta, k, &eta0, &[], &[]);
        }
        losses.push(desc.loss(&theta, &mut eval)?);
        thetas.push(theta.clone());
    }
    desc.check_divergence()?;
    Ok(SimulatedResult::Sgd(SGDTrace {
        thetas,
        losses,
        normalized: sgd.reference.is_some(),
        eta0,
    }))
}
