//! Fractional Brownian motion on uniform grids.
//!
//! Paths are produced with the Davies–Harte circulant-embedding method; a
//! Cholesky sampler for short grids is kept as an independent reference.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::RngStream;

/// Relative tolerance for negative circulant eigenvalues.
pub const EMBEDDING_TOL: f64 = 1e-10;

/// Largest grid accepted by the Cholesky reference sampler.
pub const CHOLESKY_MAX_N: usize = 2048;

/// Sample path of a scalar fBm observed at `k * step`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmGrid {
    pub hurst: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl FbmGrid {
    /// Number of increments.
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn increment(&self, k: usize) -> f64 {
        self.values[k + 1] - self.values[k]
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn from_increments(hurst: f64, step: f64, increments: &[f64]) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for dx in increments {
            acc += dx;
            values.push(acc);
        }
        Self { hurst, step, values }
    }
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return domain(format!("Hurst parameter {hurst} outside (0, 1)"));
    }
    Ok(())
}

/// Covariance `E[B_s B_t]` of a standard fBm.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if !(s.is_finite() && t.is_finite()) || s < 0.0 || t < 0.0 {
        return domain(format!("times must be finite and non-negative, got ({s}, {t})"));
    }
    let two_h = 2.0 * hurst;
    Ok(0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-step fractional Gaussian noise at integer lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let two_h = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) + (k - 1.0).abs().powf(two_h) - 2.0 * k.powf(two_h))
}

/// Precomputed circulant embedding for `n` increments of fGn with a given
/// Hurst parameter. Reusable across draws.
pub struct DaviesHarte {
    hurst: f64,
    n: usize,
    half: usize,
    /// `sqrt(lambda_k / M)` for every circulant eigenvalue.
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DaviesHarte {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DaviesHarte")
            .field("hurst", &self.hurst)
            .field("n", &self.n)
            .field("embedding", &(2 * self.half))
            .finish()
    }
}

impl DaviesHarte {
    pub fn new(hurst: f64, n: usize) -> Result<Self> {
        check_hurst(hurst)?;
        if n == 0 {
            return Err(Error::Length("need at least one increment".into()));
        }
        let half = n.next_power_of_two();
        let size = 2 * half;
        let mut row: Vec<Complex64> = Vec::with_capacity(size);
        for j in 0..=half {
            row.push(Complex64::new(fgn_autocovariance(j, hurst), 0.0));
        }
        for j in (1..half).rev() {
            row.push(Complex64::new(fgn_autocovariance(j, hurst), 0.0));
        }
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut row);

        let max = row.iter().map(|c| c.re).fold(f64::MIN, f64::max);
        let min = row.iter().map(|c| c.re).fold(f64::MAX, f64::min);
        if min < -EMBEDDING_TOL * max {
            return Err(Error::Embedding { eigenvalue: min, max });
        }
        let scale = row
            .iter()
            .map(|c| (c.re.max(0.0) / size as f64).sqrt())
            .collect();
        Ok(Self {
            hurst,
            n,
            half,
            scale,
            fft,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Draws `n` unit-step fGn values. Consumes exactly `2 * half` normals.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let half = self.half;
        let size = 2 * half;
        let mut w = vec![Complex64::new(0.0, 0.0); size];
        let z0: f64 = rng.sample(StandardNormal);
        let zm: f64 = rng.sample(StandardNormal);
        w[0] = Complex64::new(self.scale[0] * z0, 0.0);
        w[half] = Complex64::new(self.scale[half] * zm, 0.0);
        let frac = std::f64::consts::FRAC_1_SQRT_2;
        for k in 1..half {
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            let s = self.scale[k] * frac;
            w[k] = Complex64::new(s * u, s * v);
            w[size - k] = w[k].conj();
        }
        self.fft.process(&mut w);
        w.truncate(self.n);
        w.into_iter().map(|c| c.re).collect()
    }

    /// Samples a path on the grid `k * step` from the start of `stream`.
    pub fn sample(&self, step: f64, stream: &RngStream) -> Result<FbmGrid> {
        if !(step > 0.0 && step.is_finite()) {
            return domain(format!("step must be positive, got {step}"));
        }
        let mut rng = stream.rng();
        let scale = step.powf(self.hurst);
        let inc: Vec<f64> = self
            .sample_noise(&mut rng)
            .into_iter()
            .map(|x| x * scale)
            .collect();
        Ok(FbmGrid::from_increments(self.hurst, step, &inc))
    }
}

/// Davies–Harte sample of an fBm path with `n` increments of size `step`.
pub fn sample_fbm(hurst: f64, step: f64, n: usize, stream: &RngStream) -> Result<FbmGrid> {
    DaviesHarte::new(hurst, n)?.sample(step, stream)
}

/// Exact sampler through the Cholesky factor of the fGn covariance matrix.
/// Limited to `n <= CHOLESKY_MAX_N`.
pub fn sample_fbm_cholesky(
    hurst: f64,
    step: f64,
    n: usize,
    stream: &RngStream,
) -> Result<FbmGrid> {
    check_hurst(hurst)?;
    if n == 0 || n > CHOLESKY_MAX_N {
        return Err(Error::Length(format!(
            "Cholesky sampler supports 1..={CHOLESKY_MAX_N} increments, got {n}"
        )));
    }
    let gamma: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, hurst)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| gamma[i.abs_diff(j)]);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Factorization("fGn covariance not positive definite".into()))?;
    let mut rng = stream.rng();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scale = step.powf(hurst);
    let inc: Vec<f64> = (chol.l() * z).iter().map(|x| x * scale).collect();
    Ok(FbmGrid::from_increments(hurst, step, &inc))
}

/// `dim` independent scalar fBms, each driven by its own child stream.
pub fn sample_fbm_multi(
    hurst: f64,
    step: f64,
    n: usize,
    dim: usize,
    stream: &RngStream,
) -> Result<Vec<FbmGrid>> {
    let dh = DaviesHarte::new(hurst, n)?;
    (0..dim)
        .map(|i| dh.sample(step, &stream.child(i as u64)))
        .collect()
}
