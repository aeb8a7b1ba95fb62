//! Characteristic-function distance
//!
//! ```text
//! d_{CF,p}(mu, nu)^2 = int |mu^(chi) - nu^(chi)|^2 g_p(chi) dchi,
//! g_p(chi) = c_p (1 + |chi|^2)^{-p},
//! ```
//!
//! its Monte-Carlo and quadrature evaluations, and the one-dimensional
//! Wasserstein distance.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::fou::quad_form;
use crate::quadrature::integrate_half_line;
use crate::rng::RngStream;
use crate::sde::AugmentedPath;

/// Grid size used when comparing samples of different sizes.
pub const QUANTILE_GRID: usize = 10_000;

/// `Gamma(p) / (pi^{d/2} Gamma(p - d/2))`.
pub fn normalizing_constant(p: f64, d: usize) -> Result<f64> {
    let half = 0.5 * d as f64;
    if d == 0 || !(p > half) || !p.is_finite() {
        return domain(format!("kernel exponent p = {p} must exceed d/2 = {half}"));
    }
    Ok((ln_gamma(p) - ln_gamma(p - half) - half * PI.ln()).exp())
}

/// `E_{g_p} |chi|^2 = (d/2) / (p - d/2 - 1)`, finite for `p > d/2 + 1`.
pub fn kernel_second_moment(p: f64, d: usize) -> Result<f64> {
    let half = 0.5 * d as f64;
    if !(p > half + 1.0) {
        return domain(format!("second moment of g_p requires p > d/2 + 1, got p = {p}"));
    }
    Ok(half / (p - half - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CFConfig {
    pub dim: usize,
    pub p: f64,
    pub c_p: f64,
    pub mc_samples: usize,
    pub rng: RngStream,
}

impl CFConfig {
    pub fn new(dim: usize, p: f64, mc_samples: usize, rng: RngStream) -> Result<Self> {
        if dim == 0 {
            return domain("CF dimension must be positive");
        }
        if !(p > (0.5 * dim as f64).max(1.0)) {
            return domain(format!("p = {p} must exceed max(d/2, 1) for d = {dim}"));
        }
        if mc_samples == 0 {
            return domain("mc_samples must be positive");
        }
        Ok(Self {
            dim,
            p,
            c_p: normalizing_constant(p, dim)?,
            mc_samples,
            rng,
        })
    }

    /// Draws the `mc_samples` frequencies determined by `rng`.
    pub fn batch(&self) -> PhiBatch {
        PhiBatch::sample(self.dim, self.p, self.mc_samples, &self.rng)
    }
}

/// Draw from `g_p` on `R^d`: `chi = R u` with `u` uniform on the sphere and
/// `R^2 = G1 / G2`, `G1 ~ Gamma(d/2)`, `G2 ~ Gamma(p - d/2)`.
pub fn sample_gp<R: Rng + ?Sized>(dim: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let half = 0.5 * dim as f64;
    let g1 = Gamma::new(half, 1.0).expect("positive shape");
    let g2 = Gamma::new(p - half, 1.0).expect("p > d/2");
    let r = (g1.sample(rng) / g2.sample(rng)).sqrt();
    let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut u {
        *v *= r / norm;
    }
    u
}

/// A frozen batch of frequencies, reused across all `theta` inside one
/// minimization so the contrast is a deterministic function of `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiBatch {
    pub dim: usize,
    pub points: Vec<f64>,
}

impl PhiBatch {
    pub fn sample(dim: usize, p: f64, count: usize, stream: &RngStream) -> Self {
        let mut rng = stream.rng();
        let mut points = Vec::with_capacity(dim * count);
        for _ in 0..count {
            points.extend(sample_gp(dim, p, &mut rng));
        }
        Self { dim, points }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// Uniform empirical measure on points of `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    pub points: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Length(format!(
                "{} values do not form a nonempty set of {dim}-dimensional points",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return domain("empirical measure has non-finite points");
        }
        Ok(Self { dim, points })
    }

    pub fn from_augmented(path: &AugmentedPath) -> Result<Self> {
        Self::new(path.width, path.rows.clone())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// `(1/n) sum exp(i <chi, x_k>)`.
    pub fn cf(&self, chi: &[f64]) -> Complex64 {
        let (mut re, mut im) = (0.0, 0.0);
        for x in self.iter() {
            let (s, c) = dot(chi, x).sin_cos();
            re += c;
            im += s;
        }
        let n = self.len() as f64;
        Complex64::new(re / n, im / n)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn empirical_cf(measure: &EmpiricalMeasure, chi: &[f64]) -> Result<Complex64> {
    if chi.len() != measure.dim {
        return Err(Error::Dimension {
            expected: measure.dim,
            got: chi.len(),
        });
    }
    Ok(measure.cf(chi))
}

/// `exp(-chi^T cov chi / 2)`.
pub fn gaussian_cf(cov: &DMatrix<f64>, chi: &[f64]) -> Result<f64> {
    if cov.nrows() != chi.len() || cov.ncols() != chi.len() {
        return Err(Error::Dimension {
            expected: cov.nrows(),
            got: chi.len(),
        });
    }
    Ok((-0.5 * quad_form(cov, chi)).exp())
}

/// Monte-Carlo estimate of `d_{CF,p}^2` with its standard error.
pub fn cf_distance_sq_mc_with_se<A, B>(cf_a: A, cf_b: B, config: &CFConfig) -> (f64, f64)
where
    A: Fn(&[f64]) -> Complex64,
    B: Fn(&[f64]) -> Complex64,
{
    let mut rng = config.rng.rng();
    let n = config.mc_samples as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..config.mc_samples {
        let chi = sample_gp(config.dim, config.p, &mut rng);
        let v = (cf_a(&chi) - cf_b(&chi)).norm_sqr();
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n;
    let se = if config.mc_samples > 1 {
        ((sum_sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    (mean, se)
}

/// Unbiased Monte-Carlo estimate of `d_{CF,p}^2`.
pub fn cf_distance_sq_mc<A, B>(cf_a: A, cf_b: B, config: &CFConfig) -> f64
where
    A: Fn(&[f64]) -> Complex64,
    B: Fn(&[f64]) -> Complex64,
{
    cf_distance_sq_mc_with_se(cf_a, cf_b, config).0
}

/// `d_{CF,p}^2` on the real line by adaptive quadrature.
pub fn cf_distance_sq_quadrature<A, B>(cf_a: A, cf_b: B, p: f64) -> Result<f64>
where
    A: Fn(f64) -> Complex64,
    B: Fn(f64) -> Complex64,
{
    let c = normalizing_constant(p, 1)?;
    let f = |x: f64| {
        let w = c * (1.0 + x * x).powf(-p);
        ((cf_a(x) - cf_b(x)).norm_sqr() + (cf_a(-x) - cf_b(-x)).norm_sqr()) * w
    };
    Ok(integrate_half_line(&f, 1e-15, 1e-8)?.value)
}

fn is_sorted(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] <= w[1])
}

fn sorted(x: &[f64]) -> std::borrow::Cow<'_, [f64]> {
    if is_sorted(x) {
        std::borrow::Cow::Borrowed(x)
    } else {
        let mut v = x.to_vec();
        v.sort_by(f64::total_cmp);
        std::borrow::Cow::Owned(v)
    }
}

/// Empirical quantile `Q(u) = x_(ceil(u n))` of a sorted sample.
fn quantile(x: &[f64], u: f64) -> f64 {
    let n = x.len();
    let k = ((u * n as f64).ceil() as usize).clamp(1, n);
    x[k - 1]
}

/// `W_1` between two empirical measures on the real line. Equal sizes use
/// the sorted coupling; otherwise both quantile functions are compared on a
/// uniform grid of `QUANTILE_GRID` midpoints.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Length("Wasserstein distance of an empty sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return domain("Wasserstein distance of non-finite samples");
    }
    let (a, b) = (sorted(a), sorted(b));
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    let m = QUANTILE_GRID;
    let s: f64 = (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) / m as f64;
            (quantile(&a, u) - quantile(&b, u)).abs()
        })
        .sum();
    Ok(s / m as f64)
}

/// Exact `W_1` between an empirical measure and `N(0, variance)`,
/// integrating `|Q_n(u) - s Phi^{-1}(u)|` piece by piece with
/// `int Phi^{-1} = -phi(Phi^{-1})`.
pub fn wasserstein_to_gaussian(sample: &[f64], variance: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Length("Wasserstein distance of an empty sample".into()));
    }
    if !(variance >= 0.0 && variance.is_finite()) {
        return domain(format!("variance must be non-negative, got {variance}"));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return domain("Wasserstein distance of non-finite samples");
    }
    let x = sorted(sample);
    let n = x.len();
    let s = variance.sqrt();
    if s == 0.0 {
        return Ok(x.iter().map(|v| v.abs()).sum::<f64>() / n as f64);
    }
    let normal = Normal::standard();
    let density = |z: f64| {
        if z.is_finite() {
            (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
        } else {
            0.0
        }
    };
    let inv = |u: f64| {
        if u <= 0.0 {
            f64::NEG_INFINITY
        } else if u >= 1.0 {
            f64::INFINITY
        } else {
            normal.inverse_cdf(u)
        }
    };
    // int_{u1}^{u2} (x - s Phi^{-1}(u)) du
    let signed = |xk: f64, u1: f64, z1: f64, u2: f64, z2: f64| {
        xk * (u2 - u1) + s * (density(z2) - density(z1))
    };
    let mut total = 0.0;
    let mut z_lo = f64::NEG_INFINITY;
    for (k, &xk) in x.iter().enumerate() {
        let u1 = k as f64 / n as f64;
        let u2 = (k + 1) as f64 / n as f64;
        let z_hi = inv(u2);
        let z_star = xk / s;
        total += if z_star <= z_lo {
            -signed(xk, u1, z_lo, u2, z_hi)
        } else if z_star >= z_hi {
            signed(xk, u1, z_lo, u2, z_hi)
        } else {
            let u_star = normal.cdf(z_star);
            signed(xk, u1, z_lo, u_star, z_star) - signed(xk, u_star, z_star, u2, z_hi)
        };
        z_lo = z_hi;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normalizing_constant_examples() {
        assert_relative_eq!(normalizing_constant(1.0, 1).unwrap(), 1.0 / PI, max_relative = 1e-13);
        assert_relative_eq!(normalizing_constant(2.0, 1).unwrap(), 2.0 / PI, max_relative = 1e-13);
        // d = 2: int (1+r^2)^{-p} 2 pi r dr = pi / (p - 1)
        assert_relative_eq!(normalizing_constant(2.0, 2).unwrap(), 1.0 / PI, max_relative = 1e-13);
        assert!(normalizing_constant(0.5, 1).is_err());
        assert!(normalizing_constant(1.0, 2).is_err());
    }

    #[test]
    fn config_validation() {
        let rng = RngStream::new(0, 0);
        let c = CFConfig::new(3, 2.0, 10, rng).unwrap();
        assert_relative_eq!(c.c_p, normalizing_constant(2.0, 3).unwrap(), max_relative = 1e-10);
        assert!(CFConfig::new(1, 1.0, 10, rng).is_err());
        assert!(CFConfig::new(4, 2.0, 10, rng).is_err());
        assert!(CFConfig::new(1, 2.0, 0, rng).is_err());
    }

    #[test]
    fn empirical_cf_examples() {
        let zero = EmpiricalMeasure::new(2, vec![0.0; 6]).unwrap();
        assert_eq!(zero.cf(&[1.3, -2.0]), Complex64::new(1.0, 0.0));
        let single = EmpiricalMeasure::new(1, vec![0.7]).unwrap();
        let c = single.cf(&[2.0]);
        assert_relative_eq!(c.norm(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(c.arg(), 1.4, max_relative = 1e-14);
        let pair = EmpiricalMeasure::new(1, vec![-0.4, 0.4]).unwrap();
        let c = pair.cf(&[3.0]);
        assert_relative_eq!(c.re, (1.2f64).cos(), max_relative = 1e-14);
        assert!(c.im.abs() < 1e-16);
        assert!(empirical_cf(&pair, &[1.0, 2.0]).is_err());
        assert!(EmpiricalMeasure::new(2, vec![1.0]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn gaussian_cf_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(gaussian_cf(&id, &[0.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(gaussian_cf(&id, &[1.0, 1.0]).unwrap(), (-1.0f64).exp(), max_relative = 1e-15);
        assert!(gaussian_cf(&id, &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[-2.5]).unwrap(), 2.5);
        assert_relative_eq!(wasserstein_1d(&[1.0, 2.0, 3.0], &[2.0, 3.0, 5.0]).unwrap(), 4.0 / 3.0);
        assert_relative_eq!(wasserstein_1d(&[3.0, 1.0, 2.0], &[5.0, 2.0, 3.0]).unwrap(), 4.0 / 3.0);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
        // {0, 1} against {0, 0, 1, 1} is the same measure.
        assert!(wasserstein_1d(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap() < 1e-12);
    }

    #[test]
    fn wasserstein_to_gaussian_point_mass() {
        // W1(delta_0, N(0, 1)) = E|Z| = sqrt(2 / pi)
        assert_relative_eq!(
            wasserstein_to_gaussian(&[0.0], 1.0).unwrap(),
            (2.0 / PI).sqrt(),
            max_relative = 1e-12
        );
        // W1(delta_c, N(0, 1)) = E|Z - c| = 2 phi(c) + c (2 Phi(c) - 1)
        let c: f64 = 0.8;
        let normal = Normal::standard();
        let expect = 2.0 * (-0.5 * c * c).exp() / (2.0 * PI).sqrt() + c * (2.0 * normal.cdf(c) - 1.0);
        assert_relative_eq!(wasserstein_to_gaussian(&[c], 1.0).unwrap(), expect, max_relative = 1e-12);
        assert_relative_eq!(wasserstein_to_gaussian(&[-1.0, 1.0], 0.0).unwrap(), 1.0);
    }
}
