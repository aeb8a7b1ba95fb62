//! Stationary law of the fractional Ornstein–Uhlenbeck process
//! `dU = -xi U dt + sigma dB^H`.
//!
//! With the substitution `x = xi y`, the stationary autocovariance reads
//!
//! ```text
//! r(tau) = sigma^2 C(H) xi^{-2H} I(xi tau, H),
//! C(H)   = Gamma(2H + 1) sin(pi H) / pi,
//! I(a,H) = int_0^inf cos(a y) y^{1-2H} / (1 + y^2) dy.
//! ```
//!
//! Parameter derivatives only need two more integrals of the same shape,
//!
//! ```text
//! J(a,H) = int_0^inf cos(a y) y^{1-2H} / (1 + y^2)^2 dy,
//! L(a,H) = int_0^inf cos(a y) ln(y) y^{1-2H} / (1 + y^2) dy,
//! ```
//!
//! through `dr/dxi = -2 sigma^2 C(H) xi^{-2H-1} J` and
//! `dr/dH = sigma^2 C(H) xi^{-2H} [(2 psi(2H+1) + pi cot(pi H) - 2 ln xi) I - 2 L]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma};

use crate::error::{domain, Error, Result};
use crate::quadrature::{Oscillation, PowerIntegrand, QuadratureSpec};

/// Eigenvalues of a covariance above `-PSD_TOL * trace` are clamped to zero.
pub const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    pub xi: f64,
    pub sigma: f64,
    pub hurst: f64,
    pub lag_h: f64,
    pub q: usize,
}

impl OUParams {
    pub fn new(xi: f64, sigma: f64, hurst: f64, lag_h: f64, q: usize) -> Result<Self> {
        let p = Self {
            xi,
            sigma,
            hurst,
            lag_h,
            q,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_params(self.xi, self.sigma, self.hurst)?;
        if !(self.lag_h > 0.0 && self.lag_h.is_finite()) {
            return domain(format!("lag_h must be positive, got {}", self.lag_h));
        }
        Ok(())
    }
}

fn check_params(xi: f64, sigma: f64, hurst: f64) -> Result<()> {
    if !(xi > 0.0 && xi.is_finite()) {
        return domain(format!("xi must be positive, got {xi}"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return domain(format!("sigma must be positive, got {sigma}"));
    }
    if !(hurst > 0.0 && hurst < 1.0) {
        return domain(format!("Hurst parameter {hurst} outside (0, 1)"));
    }
    Ok(())
}

/// `Gamma(2H + 1) sin(pi H) / pi`.
fn prefactor(hurst: f64) -> f64 {
    gamma(2.0 * hurst + 1.0) * (PI * hurst).sin() / PI
}

/// Which of the dimensionless integrals to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    /// `I(a, H)`
    Base,
    /// `J(a, H)`
    Squared,
    /// `L(a, H)`
    Log,
}

fn kernel_integral(kernel: Kernel, a: f64, hurst: f64, spec: &QuadratureSpec) -> Result<f64> {
    let base = |y: f64| 1.0 / (1.0 + y * y);
    let squared = |y: f64| {
        let d = 1.0 + y * y;
        1.0 / (d * d)
    };
    let log = |y: f64| y.ln() / (1.0 + y * y);
    let (h, decay): (&dyn Fn(f64) -> f64, f64) = match kernel {
        Kernel::Base => (&base, 2.0),
        Kernel::Squared => (&squared, 4.0),
        Kernel::Log => (&log, 2.0),
    };
    let integrand = PowerIntegrand {
        alpha: 1.0 - 2.0 * hurst,
        decay,
        h,
    };
    if a == 0.0 {
        integrand.integrate(spec)
    } else {
        integrand.fourier(Oscillation::Cos, a, spec)
    }
}

/// `sigma^2 H Gamma(2H) xi^{-2H}`.
pub fn stationary_variance(xi: f64, sigma: f64, hurst: f64) -> Result<f64> {
    check_params(xi, sigma, hurst)?;
    Ok(sigma * sigma * hurst * gamma(2.0 * hurst) * xi.powf(-2.0 * hurst))
}

/// Stationary autocovariance `E[U_t U_{t+tau}]`, by quadrature.
pub fn stationary_autocov(
    xi: f64,
    sigma: f64,
    hurst: f64,
    tau: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_params(xi, sigma, hurst)?;
    check_tau(tau)?;
    spec.validate()?;
    let i = kernel_integral(Kernel::Base, xi * tau, hurst, spec)?;
    Ok(sigma * sigma * prefactor(hurst) * xi.powf(-2.0 * hurst) * i)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return domain(format!("lag must be finite and non-negative, got {tau}"));
    }
    Ok(())
}

/// Autocovariance at one lag together with its parameter gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutocovGradient {
    pub value: f64,
    pub d_xi: f64,
    pub d_sigma: f64,
    pub d_hurst: f64,
}

pub fn autocov_with_gradient(
    xi: f64,
    sigma: f64,
    hurst: f64,
    tau: f64,
    spec: &QuadratureSpec,
) -> Result<AutocovGradient> {
    check_params(xi, sigma, hurst)?;
    check_tau(tau)?;
    spec.validate()?;
    let a = xi * tau;
    let i = kernel_integral(Kernel::Base, a, hurst, spec)?;
    let j = kernel_integral(Kernel::Squared, a, hurst, spec)?;
    let l = kernel_integral(Kernel::Log, a, hurst, spec)?;
    let c = prefactor(hurst);
    let s2 = sigma * sigma;
    let xi_pow = xi.powf(-2.0 * hurst);
    let value = s2 * c * xi_pow * i;
    let log_c = 2.0 * digamma(2.0 * hurst + 1.0) + PI / (PI * hurst).tan();
    Ok(AutocovGradient {
        value,
        d_xi: -2.0 * s2 * c * xi_pow / xi * j,
        d_sigma: 2.0 * value / sigma,
        d_hurst: s2 * c * xi_pow * ((log_c - 2.0 * xi.ln()) * i - 2.0 * l),
    })
}

/// Closed-form gradient of `r(0) = sigma^2 H Gamma(2H) xi^{-2H}`.
pub fn variance_with_gradient(xi: f64, sigma: f64, hurst: f64) -> Result<AutocovGradient> {
    let v = stationary_variance(xi, sigma, hurst)?;
    Ok(AutocovGradient {
        value: v,
        d_xi: -2.0 * hurst / xi * v,
        d_sigma: 2.0 * v / sigma,
        d_hurst: v * (1.0 / hurst + 2.0 * digamma(2.0 * hurst) - 2.0 * xi.ln()),
    })
}

/// Centered Gaussian law of `(U_t, U_{t+h} - U_t, ..., U_{t+qh} - U_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryGaussian {
    pub cov: DMatrix<f64>,
}

impl StationaryGaussian {
    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// `phi^T Sigma phi`.
    pub fn quad_form(&self, phi: &[f64]) -> f64 {
        quad_form(&self.cov, phi)
    }

    /// Characteristic function `exp(-phi^T Sigma phi / 2)`.
    pub fn cf(&self, phi: &[f64]) -> f64 {
        (-0.5 * self.quad_form(phi)).exp()
    }

    /// Symmetric square root, usable to draw samples `Sigma^{1/2} z`.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let d = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
        );
        &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
    }
}

pub(crate) fn quad_form(m: &DMatrix<f64>, phi: &[f64]) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * phi[j];
        }
        acc += phi[i] * row;
    }
    acc
}

/// Assemble the augmented covariance from autocovariances `r[k] = r(k h)`.
fn assemble(r: &[f64], q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(q + 1, q + 1, |i, j| match (i, j) {
        (0, 0) => r[0],
        (0, k) | (k, 0) => r[k] - r[0],
        (i, j) => r[i.abs_diff(j)] - r[i] - r[j] + r[0],
    })
}

/// Clamp eigenvalues in `[-PSD_TOL * trace, 0)` to zero; reject anything
/// more negative.
pub fn repair_psd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let trace = m.trace();
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(m);
    }
    if min < -PSD_TOL * trace.abs() {
        return Err(Error::NotPsd {
            eigenvalue: min,
            trace,
        });
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

pub fn augmented_cov(params: &OUParams, spec: &QuadratureSpec) -> Result<StationaryGaussian> {
    params.validate()?;
    let r = (0..=params.q)
        .map(|k| match k {
            0 => stationary_variance(params.xi, params.sigma, params.hurst),
            _ => stationary_autocov(
                params.xi,
                params.sigma,
                params.hurst,
                k as f64 * params.lag_h,
                spec,
            ),
        })
        .collect::<Result<Vec<_>>>()?;
    let cov = repair_psd(assemble(&r, params.q))?;
    Ok(StationaryGaussian { cov })
}

/// `dSigma/dxi`, `dSigma/dsigma`, `dSigma/dH`, plus `Sigma` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CovGradient {
    pub cov: DMatrix<f64>,
    pub d_xi: DMatrix<f64>,
    pub d_sigma: DMatrix<f64>,
    pub d_hurst: DMatrix<f64>,
}

impl CovGradient {
    /// Derivative matrix for coordinate `0 = xi`, `1 = sigma`, `2 = H`.
    pub fn component(&self, index: usize) -> &DMatrix<f64> {
        match index {
            0 => &self.d_xi,
            1 => &self.d_sigma,
            2 => &self.d_hurst,
            _ => panic!("coordinate index {index} out of range"),
        }
    }
}

pub fn grad_augmented_cov(params: &OUParams, spec: &QuadratureSpec) -> Result<CovGradient> {
    params.validate()?;
    let g = (0..=params.q)
        .map(|k| match k {
            0 => variance_with_gradient(params.xi, params.sigma, params.hurst),
            _ => autocov_with_gradient(
                params.xi,
                params.sigma,
                params.hurst,
                k as f64 * params.lag_h,
                spec,
            ),
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&AutocovGradient) -> f64| g.iter().map(f).collect::<Vec<_>>();
    Ok(CovGradient {
        cov: repair_psd(assemble(&pick(|x| x.value), params.q))?,
        d_xi: assemble(&pick(|x| x.d_xi), params.q),
        d_sigma: assemble(&pick(|x| x.d_sigma), params.q),
        d_hurst: assemble(&pick(|x| x.d_hurst), params.q),
    })
}

/// `f(theta) = (r(0), r(h))`: variance and lag-`h` covariance.
pub fn injectivity_map(
    xi: f64,
    sigma: f64,
    hurst: f64,
    h: f64,
    spec: &QuadratureSpec,
) -> Result<[f64; 2]> {
    Ok([
        stationary_variance(xi, sigma, hurst)?,
        stationary_autocov(xi, sigma, hurst, h, spec)?,
    ])
}

/// Three-component map `(r(0), r(h), r(2h))`, for diagnostics only.
pub fn injectivity_map3(
    xi: f64,
    sigma: f64,
    hurst: f64,
    h: f64,
    spec: &QuadratureSpec,
) -> Result<[f64; 3]> {
    let [v, r1] = injectivity_map(xi, sigma, hurst, h, spec)?;
    Ok([v, r1, stationary_autocov(xi, sigma, hurst, 2.0 * h, spec)?])
}

/// The two unknown coordinates in a two-parameter identifiability problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentCase {
    SigmaHurst,
    XiHurst,
    XiSigma,
}

impl IdentCase {
    pub const ALL: [IdentCase; 3] = [IdentCase::SigmaHurst, IdentCase::XiHurst, IdentCase::XiSigma];

    pub fn name(self) -> &'static str {
        match self {
            IdentCase::SigmaHurst => "sigma_hurst",
            IdentCase::XiHurst => "xi_hurst",
            IdentCase::XiSigma => "xi_sigma",
        }
    }

    /// Name of the derivative whose sign certifies injectivity.
    pub fn derivative_name(self) -> &'static str {
        match self {
            IdentCase::SigmaHurst => "g'(H)",
            IdentCase::XiHurst => "g_a'(H)",
            IdentCase::XiSigma => "g~'(xi)",
        }
    }
}

/// Grid over which margins are evaluated. `sigma` only matters for the
/// injectivity scan since the margins are scale free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginGrid {
    pub xi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub hurst: Vec<f64>,
}

impl MarginGrid {
    pub fn uniform(
        xi: (f64, f64),
        sigma: (f64, f64),
        hurst: (f64, f64),
        points: usize,
    ) -> Self {
        Self {
            xi: linspace(xi.0, xi.1, points),
            sigma: linspace(sigma.0, sigma.1, points),
            hurst: linspace(hurst.0, hurst.1, points),
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub case: IdentCase,
    pub lag_h: f64,
    /// Minimum of the derivative for the increasing cases, maximum for the
    /// decreasing `(xi, sigma)` case: the grid value closest to a sign change.
    pub extreme_derivative: f64,
    pub passes: bool,
    /// Whether every grid `xi` lies outside the range of
    /// `exp(1/(2H) + psi(2H))` over the Hurst grid. Only set for cases with
    /// an unknown Hurst parameter.
    pub xi_condition: Option<bool>,
    /// Number of grid points where the quadrature failed.
    pub failures: usize,
}

/// `sin(pi H) I(xi h, H)`, whose H-derivative certifies the `(sigma, H)` case.
pub fn g_sigma_hurst(xi: f64, hurst: f64, h: f64, spec: &QuadratureSpec) -> Result<f64> {
    Ok((PI * hurst).sin() * kernel_integral(Kernel::Base, xi * h, hurst, spec)?)
}

/// `g'(H)`, computed after subtracting the vanishing `a = 0` contribution
/// `pi cos(pi H) I(0,H) - 2 sin(pi H) L(0,H) = 0`.
pub fn g_sigma_hurst_derivative(xi: f64, hurst: f64, h: f64, spec: &QuadratureSpec) -> Result<f64> {
    let a = xi * h;
    let (s, c) = (PI * hurst).sin_cos();
    let i0 = PI / (2.0 * s);
    let l0 = PI * PI * c / (4.0 * s * s);
    let i = kernel_integral(Kernel::Base, a, hurst, spec)?;
    let l = kernel_integral(Kernel::Log, a, hurst, spec)?;
    Ok(PI * c * (i - i0) - 2.0 * s * (l - l0))
}

/// `xi` as a function of `H` at fixed stationary variance `var = H Gamma(2H) xi^{-2H}`.
pub fn xi_at_fixed_variance(var: f64, hurst: f64) -> f64 {
    (var / (hurst * gamma(2.0 * hurst))).powf(-1.0 / (2.0 * hurst))
}

/// `g_a(H) = sin(pi H) I(xi(H) h, H)` along a fixed-variance curve.
pub fn g_xi_hurst(var: f64, hurst: f64, h: f64, spec: &QuadratureSpec) -> Result<f64> {
    g_sigma_hurst(xi_at_fixed_variance(var, hurst), hurst, h, spec)
}

/// `g_a'(H)` at the point `(xi, H)`, i.e. with `a = H Gamma(2H) xi^{-2H}`.
pub fn g_xi_hurst_derivative(xi: f64, hurst: f64, h: f64, spec: &QuadratureSpec) -> Result<f64> {
    let a = xi * h;
    let g = g_sigma_hurst_derivative(xi, hurst, h, spec)?;
    let i = kernel_integral(Kernel::Base, a, hurst, spec)?;
    let j = kernel_integral(Kernel::Squared, a, hurst, spec)?;
    // d ln xi / dH along the fixed-variance curve.
    let dlog_xi = (0.5 / hurst + digamma(2.0 * hurst) - xi.ln()) / hurst;
    Ok(g + (PI * hurst).sin() * dlog_xi * (2.0 * hurst * i - 2.0 * j))
}

/// `g~(xi) = I(xi h, H)`.
pub fn g_xi_sigma(xi: f64, hurst: f64, h: f64, spec: &QuadratureSpec) -> Result<f64> {
    kernel_integral(Kernel::Base, xi * h, hurst, spec)
}

/// `g~'(xi) = (2H I - 2J) / xi`, which equals
/// `-h int sin(xi h y) y^{2-2H} / (1 + y^2) dy`.
pub fn g_xi_sigma_derivative(xi: f64, hurst: f64, h: f64, spec: &QuadratureSpec) -> Result<f64> {
    let a = xi * h;
    let i = kernel_integral(Kernel::Base, a, hurst, spec)?;
    let j = kernel_integral(Kernel::Squared, a, hurst, spec)?;
    Ok((2.0 * hurst * i - 2.0 * j) / xi)
}

/// The sine-integral form of `g~'(xi)`, summed as a conditionally
/// convergent alternating series.
pub fn g_xi_sigma_derivative_sine(
    xi: f64,
    hurst: f64,
    h: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let f = |y: f64| 1.0 / (1.0 + y * y);
    let integrand = PowerIntegrand {
        alpha: 2.0 - 2.0 * hurst,
        decay: 2.0,
        h: &f,
    };
    Ok(-h * integrand.fourier(Oscillation::Sin, xi * h, spec)?)
}

/// `exp((Gamma(2H) + 2H Gamma'(2H)) / (2H Gamma(2H))) = exp(1/(2H) + psi(2H))`.
pub fn xi_condition_threshold(hurst: f64) -> f64 {
    (0.5 / hurst + digamma(2.0 * hurst)).exp()
}

/// Whether `xi` stays outside the range of the threshold over `[h_lo, h_hi]`.
pub fn xi_condition_holds(xi: f64, h_lo: f64, h_hi: f64) -> bool {
    let grid = linspace(h_lo, h_hi, 201);
    let values: Vec<f64> = grid.iter().map(|&h| xi_condition_threshold(h)).collect();
    let sup = values.iter().cloned().fold(f64::MIN, f64::max);
    let inf = values.iter().cloned().fold(f64::MAX, f64::min);
    xi > sup || xi < inf
}

/// Evaluates the certifying derivative of `case` over the grid.
///
/// Quadrature failures at individual grid points are counted, not fatal; a
/// report with failures never passes.
pub fn identifiability_margin(
    case: IdentCase,
    grid: &MarginGrid,
    h: f64,
    spec: &QuadratureSpec,
) -> Result<MarginReport> {
    if !(h > 0.0 && h < 1.0) {
        return domain(format!("lag h must lie in (0, 1), got {h}"));
    }
    spec.validate()?;
    let mut values = Vec::new();
    let mut failures = 0;
    for &xi in &grid.xi {
        for &hurst in &grid.hurst {
            let v = match case {
                IdentCase::SigmaHurst => g_sigma_hurst_derivative(xi, hurst, h, spec),
                IdentCase::XiHurst => g_xi_hurst_derivative(xi, hurst, h, spec),
                IdentCase::XiSigma => g_xi_sigma_derivative(xi, hurst, h, spec),
            };
            match v {
                Ok(v) if v.is_finite() => values.push(v),
                _ => failures += 1,
            }
        }
    }
    let (extreme, sign_ok) = match case {
        IdentCase::XiSigma => {
            let m = values.iter().cloned().fold(f64::MIN, f64::max);
            (m, m < 0.0)
        }
        _ => {
            let m = values.iter().cloned().fold(f64::MAX, f64::min);
            (m, m > 0.0)
        }
    };
    let xi_condition = match case {
        IdentCase::XiSigma => None,
        _ => {
            let lo = grid.hurst.iter().cloned().fold(f64::MAX, f64::min);
            let hi = grid.hurst.iter().cloned().fold(f64::MIN, f64::max);
            Some(grid.xi.iter().all(|&xi| xi_condition_holds(xi, lo, hi)))
        }
    };
    Ok(MarginReport {
        case,
        lag_h: h,
        extreme_derivative: extreme,
        passes: sign_ok && failures == 0 && !values.is_empty(),
        xi_condition,
        failures,
    })
}

/// Smallest Euclidean distance between `f(theta_1)` and `f(theta_2)` over
/// distinct pairs of the two-dimensional grid spanned by the free
/// coordinates of `case`; the remaining coordinate is held at `fixed`.
pub fn injectivity_gap(
    case: IdentCase,
    grid: &MarginGrid,
    fixed: (f64, f64, f64),
    h: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let (xi0, sigma0, hurst0) = fixed;
    let mut images = Vec::new();
    let (first, second): (&[f64], &[f64]) = match case {
        IdentCase::SigmaHurst => (&grid.sigma, &grid.hurst),
        IdentCase::XiHurst => (&grid.xi, &grid.hurst),
        IdentCase::XiSigma => (&grid.xi, &grid.sigma),
    };
    for &u in first {
        for &v in second {
            let (xi, sigma, hurst) = match case {
                IdentCase::SigmaHurst => (xi0, u, v),
                IdentCase::XiHurst => (u, sigma0, v),
                IdentCase::XiSigma => (u, v, hurst0),
            };
            images.push(injectivity_map(xi, sigma, hurst, h, spec)?);
        }
    }
    let mut gap = f64::INFINITY;
    for i in 0..images.len() {
        for j in (i + 1)..images.len() {
            let d = ((images[i][0] - images[j][0]).powi(2) + (images[i][1] - images[j][1]).powi(2)).sqrt();
            gap = gap.min(d);
        }
    }
    Ok(gap)
}
