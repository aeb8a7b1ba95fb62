//! Euler scheme for `dY = b_xi(Y) dt + sigma dB^H`, the increment-augmented
//! process, and the tangent recursions used by gradient-based estimators.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fbm::FbmGrid;

/// Values above this magnitude abort a simulation.
pub const OVERFLOW_LIMIT: f64 = 1e12;

/// Parameter `theta = (xi, sigma, H)`. Flattened coordinates are ordered
/// `[xi_1, ..., xi_m, sigma, H]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub xi: Vec<f64>,
    pub sigma: f64,
    pub hurst: f64,
    /// One flag per flattened coordinate; empty means all free.
    #[serde(default)]
    pub free_mask: Vec<bool>,
}

impl ThetaVector {
    pub fn new(xi: Vec<f64>, sigma: f64, hurst: f64) -> Self {
        Self {
            xi,
            sigma,
            hurst,
            free_mask: Vec::new(),
        }
    }

    /// Scalar-drift convenience constructor.
    pub fn scalar(xi: f64, sigma: f64, hurst: f64) -> Self {
        Self::new(vec![xi], sigma, hurst)
    }

    pub fn with_free_mask(mut self, mask: Vec<bool>) -> Self {
        self.free_mask = mask;
        self
    }

    pub fn n_coords(&self) -> usize {
        self.xi.len() + 2
    }

    pub fn sigma_index(&self) -> usize {
        self.xi.len()
    }

    pub fn hurst_index(&self) -> usize {
        self.xi.len() + 1
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free_mask.get(i).copied().unwrap_or(true)
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.n_coords()).filter(|&i| self.is_free(i)).collect()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.xi.clone();
        v.push(self.sigma);
        v.push(self.hurst);
        v
    }

    pub fn get(&self, i: usize) -> f64 {
        let m = self.xi.len();
        match i {
            _ if i < m => self.xi[i],
            _ if i == m => self.sigma,
            _ if i == m + 1 => self.hurst,
            _ => panic!("coordinate {i} out of range"),
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let m = self.xi.len();
        match i {
            _ if i < m => self.xi[i] = value,
            _ if i == m => self.sigma = value,
            _ if i == m + 1 => self.hurst = value,
            _ => panic!("coordinate {i} out of range"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.xi.is_empty() {
            return domain("xi must have at least one component");
        }
        if self.xi.iter().any(|x| !x.is_finite()) {
            return domain("xi must be finite");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return domain(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return domain(format!("Hurst parameter {} outside (0, 1)", self.hurst));
        }
        if !self.free_mask.is_empty() && self.free_mask.len() != self.n_coords() {
            return Err(Error::Dimension {
                expected: self.n_coords(),
                got: self.free_mask.len(),
            });
        }
        Ok(())
    }
}

/// Compact parameter box `Xi x Sigma x H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub xi: Vec<(f64, f64)>,
    pub sigma: (f64, f64),
    pub hurst: (f64, f64),
}

impl ThetaBox {
    pub fn scalar(xi: (f64, f64), sigma: (f64, f64), hurst: (f64, f64)) -> Result<Self> {
        let b = Self {
            xi: vec![xi],
            sigma,
            hurst,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &(lo, hi)) in self.xi.iter().enumerate() {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return domain(format!("xi[{i}] box [{lo}, {hi}] must satisfy 0 < lo < hi"));
            }
        }
        let (lo, hi) = self.sigma;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return domain(format!("sigma box [{lo}, {hi}] must satisfy 0 < lo < hi"));
        }
        let (lo, hi) = self.hurst;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return domain(format!("Hurst box [{lo}, {hi}] must lie inside (0, 1)"));
        }
        Ok(())
    }

    pub fn n_coords(&self) -> usize {
        self.xi.len() + 2
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        let m = self.xi.len();
        match i {
            _ if i < m => self.xi[i],
            _ if i == m => self.sigma,
            _ if i == m + 1 => self.hurst,
            _ => panic!("coordinate {i} out of range"),
        }
    }

    pub fn width(&self, i: usize) -> f64 {
        let (lo, hi) = self.bounds(i);
        hi - lo
    }

    pub fn contains(&self, theta: &ThetaVector) -> bool {
        theta.n_coords() == self.n_coords()
            && (0..self.n_coords()).all(|i| {
                let (lo, hi) = self.bounds(i);
                let v = theta.get(i);
                v >= lo && v <= hi
            })
    }

    /// Euclidean projection onto the box.
    pub fn project(&self, theta: &mut ThetaVector) {
        for i in 0..self.n_coords() {
            let (lo, hi) = self.bounds(i);
            theta.set(i, theta.get(i).clamp(lo, hi));
        }
    }

    /// Maps coordinate `i` to `[0, 1]`.
    pub fn normalize(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = self.bounds(i);
        (v - lo) / (hi - lo)
    }

    pub fn denormalize(&self, i: usize, u: f64) -> f64 {
        let (lo, hi) = self.bounds(i);
        (lo + u * (hi - lo)).clamp(lo, hi)
    }
}

/// Drift `b_xi: R^d -> R^d` satisfying dissipativity
/// `<b(x) - b(y), x - y> <= -beta |x - y|^2`, Lipschitz bound `K` and
/// polynomial growth `|b(y)| <= c (1 + |y|^r)`.
///
/// Matrices are written row-major into caller-provided buffers.
pub trait DriftModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of drift parameters `m`.
    fn n_params(&self) -> usize;

    fn eval(&self, xi: &[f64], y: &[f64], out: &mut [f64]);

    /// `d x d` Jacobian in `y`.
    fn jac_y(&self, xi: &[f64], y: &[f64], out: &mut [f64]);

    /// `d x m` Jacobian in `xi`.
    fn jac_xi(&self, xi: &[f64], y: &[f64], out: &mut [f64]);

    fn beta(&self, xi: &[f64]) -> f64;

    fn lipschitz_k(&self, xi: &[f64]) -> f64;

    fn growth_c(&self, xi: &[f64]) -> f64;

    fn growth_r(&self) -> u32;

    /// Largest step for which `1 - 2 gamma beta + gamma^2 K^2 < 1`.
    fn gamma0(&self, xi: &[f64]) -> f64 {
        let k = self.lipschitz_k(xi);
        self.beta(xi) / (k * k)
    }

    /// Discarded transient when sampling a stationary law.
    fn burn_in_time(&self, xi: &[f64]) -> f64 {
        (10.0 / self.beta(xi)).max(10.0)
    }
}

/// `b_xi(y) = -xi y` in dimension `dim`, with a single scalar `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuDrift {
    pub dim: usize,
}

impl Default for OuDrift {
    fn default() -> Self {
        Self { dim: 1 }
    }
}

impl DriftModel for OuDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        1
    }

    fn eval(&self, xi: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(y) {
            *o = -xi[0] * v;
        }
    }

    fn jac_y(&self, xi: &[f64], _y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = -xi[0];
        }
    }

    fn jac_xi(&self, _xi: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(y) {
            *o = -v;
        }
    }

    fn beta(&self, xi: &[f64]) -> f64 {
        xi[0]
    }

    fn lipschitz_k(&self, xi: &[f64]) -> f64 {
        xi[0]
    }

    fn growth_c(&self, xi: &[f64]) -> f64 {
        xi[0]
    }

    fn growth_r(&self) -> u32 {
        1
    }
}

/// `b_xi(y) = -xi y + lambda tanh(y)` componentwise, with `0 <= lambda < xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedOuDrift {
    pub dim: usize,
    pub lambda: f64,
}

impl PerturbedOuDrift {
    /// `lambda` must not exceed half the smallest admissible `xi`.
    pub fn new(dim: usize, lambda: f64, xi_min: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda <= 0.5 * xi_min) {
            return domain(format!(
                "perturbation lambda = {lambda} must lie in [0, xi_min / 2 = {}]",
                0.5 * xi_min
            ));
        }
        Ok(Self { dim, lambda })
    }
}

impl DriftModel for PerturbedOuDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        1
    }

    fn eval(&self, xi: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(y) {
            *o = -xi[0] * v + self.lambda * v.tanh();
        }
    }

    fn jac_y(&self, xi: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.fill(0.0);
        for i in 0..d {
            let c = y[i].cosh();
            out[i * d + i] = -xi[0] + self.lambda / (c * c);
        }
    }

    fn jac_xi(&self, _xi: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(y) {
            *o = -v;
        }
    }

    fn beta(&self, xi: &[f64]) -> f64 {
        xi[0] - self.lambda
    }

    fn lipschitz_k(&self, xi: &[f64]) -> f64 {
        xi[0].max((self.lambda - xi[0]).abs())
    }

    fn growth_c(&self, xi: &[f64]) -> f64 {
        xi[0] + self.lambda
    }

    fn growth_r(&self) -> u32 {
        1
    }
}

/// Uniform-grid path in `R^d`, stored point-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub step: f64,
    pub dim: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaVector>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Component `i` of every point.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.values.iter().skip(i).step_by(self.dim).copied().collect()
    }

    /// Drops the first `k` points.
    pub fn skip(&self, k: usize) -> Path {
        Path {
            step: self.step,
            dim: self.dim,
            values: self.values[k.min(self.len()) * self.dim..].to_vec(),
            theta: self.theta.clone(),
        }
    }
}

fn check_noise(noise: &[FbmGrid], dim: usize) -> Result<(f64, usize)> {
    if noise.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: noise.len(),
        });
    }
    let step = noise[0].step;
    let n = noise[0].n();
    if !(step > 0.0 && step.is_finite()) {
        return domain(format!("noise step must be positive, got {step}"));
    }
    if noise.iter().any(|g| g.step != step || g.n() != n) {
        return domain("noise components must share step and length");
    }
    Ok((step, n))
}

fn check_drift(drift: &dyn DriftModel, theta: &ThetaVector, step: f64) -> Result<()> {
    theta.validate()?;
    if theta.xi.len() != drift.n_params() {
        return Err(Error::Dimension {
            expected: drift.n_params(),
            got: theta.xi.len(),
        });
    }
    let gamma0 = drift.gamma0(&theta.xi);
    if step > gamma0 {
        return Err(Error::StepTooLarge { step, gamma0 });
    }
    Ok(())
}

/// `Y_{k+1} = Y_k + gamma b_xi(Y_k) + sigma (B_{k+1} - B_k)`, one independent
/// fBm per coordinate.
pub fn euler_simulate(
    drift: &dyn DriftModel,
    theta: &ThetaVector,
    noise: &[FbmGrid],
    y0: &[f64],
) -> Result<Path> {
    let d = drift.dim();
    if y0.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: y0.len(),
        });
    }
    let (step, n) = check_noise(noise, d)?;
    check_drift(drift, theta, step)?;
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let mut b = vec![0.0; d];
    for k in 0..n {
        drift.eval(&theta.xi, &y, &mut b);
        for i in 0..d {
            y[i] += step * b[i] + theta.sigma * noise[i].increment(k);
            if !(y[i].abs() <= OVERFLOW_LIMIT) {
                return Err(Error::Overflow {
                    step: k + 1,
                    value: y[i].abs(),
                });
            }
        }
        values.extend_from_slice(&y);
    }
    Ok(Path {
        step,
        dim: d,
        values,
        theta: Some(theta.clone()),
    })
}

/// Every `k0`-th point of `path`.
pub fn subsample(path: &Path, k0: usize) -> Result<Path> {
    if k0 == 0 {
        return domain("subsampling factor must be at least 1");
    }
    let n = path.len();
    let out = if n == 0 { 0 } else { (n - 1) / k0 + 1 };
    if out < 2 {
        return Err(Error::Length(format!(
            "subsampling {n} points by {k0} leaves fewer than 2 points"
        )));
    }
    let d = path.dim;
    let mut values = Vec::with_capacity(out * d);
    for k in (0..n).step_by(k0) {
        values.extend_from_slice(path.point(k));
    }
    Ok(Path {
        step: path.step * k0 as f64,
        dim: d,
        values,
        theta: path.theta.clone(),
    })
}

/// Rows `(Y_t, Y_{t+h} - Y_t, ..., Y_{t+qh} - Y_t)`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPath {
    pub lag_h: f64,
    pub q: usize,
    /// `d (q + 1)`.
    pub width: usize,
    pub rows: Vec<f64>,
}

impl AugmentedPath {
    pub fn n_rows(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.rows.len() / self.width
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.width..(k + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.width)
    }
}

/// Number of path steps per lag, if `lag_h` is an integer multiple of `step`.
pub fn lag_ratio(step: f64, lag_h: f64) -> Result<usize> {
    if !(lag_h > 0.0 && step > 0.0) {
        return domain(format!("lag {lag_h} and step {step} must be positive"));
    }
    let r = lag_h / step;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-9 * r.max(1.0) {
        return domain(format!("lag {lag_h} is not an integer multiple of step {step}"));
    }
    Ok(k as usize)
}

pub fn augment(path: &Path, q: usize, lag_h: f64) -> Result<AugmentedPath> {
    let ratio = lag_ratio(path.step, lag_h)?;
    let span = q * ratio;
    let n = path.len();
    if n <= span {
        return Err(Error::Length(format!(
            "path of {n} points is too short for q = {q} lags of {ratio} steps"
        )));
    }
    let rows_n = n - span;
    let d = path.dim;
    let width = d * (q + 1);
    let mut rows = Vec::with_capacity(rows_n * width);
    for k in 0..rows_n {
        let base = path.point(k);
        rows.extend_from_slice(base);
        for i in 1..=q {
            let ahead = path.point(k + i * ratio);
            rows.extend(ahead.iter().zip(base).map(|(a, b)| a - b));
        }
    }
    Ok(AugmentedPath {
        lag_h,
        q,
        width,
        rows,
    })
}

fn check_base(drift: &dyn DriftModel, theta: &ThetaVector, base: &Path) -> Result<()> {
    if base.dim != drift.dim() {
        return Err(Error::Dimension {
            expected: drift.dim(),
            got: base.dim,
        });
    }
    if base.len() < 1 {
        return Err(Error::Length("base path is empty".into()));
    }
    check_drift(drift, theta, base.step)
}

/// `d Y / d xi_j` for each drift parameter `j`, by the recursion
/// `u_{k+1} = u_k + gamma (d_xi b(Y_k) + grad_y b(Y_k) u_k)`, `u_0 = 0`.
pub fn tangent_xi(drift: &dyn DriftModel, theta: &ThetaVector, base: &Path) -> Result<Vec<Path>> {
    check_base(drift, theta, base)?;
    let d = drift.dim();
    let m = drift.n_params();
    let n = base.len();
    let gamma = base.step;
    let mut jy = vec![0.0; d * d];
    let mut jx = vec![0.0; d * m];
    // u[j * d + i] = d Y_i / d xi_j
    let mut u = vec![0.0; d * m];
    let mut next = vec![0.0; d * m];
    let mut out: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut v = Vec::with_capacity(n * d);
            v.extend(std::iter::repeat_n(0.0, d));
            v
        })
        .collect();
    for k in 0..n - 1 {
        let y = base.point(k);
        drift.jac_y(&theta.xi, y, &mut jy);
        drift.jac_xi(&theta.xi, y, &mut jx);
        for j in 0..m {
            for i in 0..d {
                let mut acc = jx[i * m + j];
                for l in 0..d {
                    acc += jy[i * d + l] * u[j * d + l];
                }
                let v = u[j * d + i] + gamma * acc;
                if !(v.abs() <= OVERFLOW_LIMIT) {
                    return Err(Error::Overflow {
                        step: k + 1,
                        value: v.abs(),
                    });
                }
                next[j * d + i] = v;
            }
        }
        std::mem::swap(&mut u, &mut next);
        for j in 0..m {
            out[j].extend_from_slice(&u[j * d..(j + 1) * d]);
        }
    }
    Ok(out
        .into_iter()
        .map(|values| Path {
            step: gamma,
            dim: d,
            values,
            theta: None,
        })
        .collect())
}

/// `d Y / d sigma` by `v_{k+1} = v_k + gamma grad_y b(Y_k) v_k + (B_{k+1} - B_k)`, `v_0 = 0`.
pub fn tangent_sigma(
    drift: &dyn DriftModel,
    theta: &ThetaVector,
    base: &Path,
    noise: &[FbmGrid],
) -> Result<Path> {
    check_base(drift, theta, base)?;
    let d = drift.dim();
    let (step, n) = check_noise(noise, d)?;
    if step != base.step || n + 1 != base.len() {
        return domain("noise does not match the base path");
    }
    let mut jy = vec![0.0; d * d];
    let mut v = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(&v);
    for k in 0..n {
        drift.jac_y(&theta.xi, base.point(k), &mut jy);
        for i in 0..d {
            let mut acc = 0.0;
            for l in 0..d {
                acc += jy[i * d + l] * v[l];
            }
            let w = v[i] + step * acc + noise[i].increment(k);
            if !(w.abs() <= OVERFLOW_LIMIT) {
                return Err(Error::Overflow {
                    step: k + 1,
                    value: w.abs(),
                });
            }
            next[i] = w;
        }
        std::mem::swap(&mut v, &mut next);
        values.extend_from_slice(&v);
    }
    Ok(Path {
        step,
        dim: d,
        values,
        theta: None,
    })
}
