//! Numerical integration on finite intervals and on the half line.
//!
//! The building block is a globally adaptive 21-point Gauss–Kronrod rule.
//! Integrands of the form `w(a y) y^alpha h(y)` on `(0, inf)` with
//! `w = cos` or `sin` are handled by
//!
//! * a power substitution that removes the algebraic singularity at the
//!   origin,
//! * half-period segmentation between consecutive zeros of `w(a y)`,
//! * Euler summation (binomial averaging of partial sums) of the alternating
//!   segment series.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Controls the oscillatory half-line integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Boundary between the origin piece (power substitution) and the rest.
    pub split_point: f64,
    pub rel_tol: f64,
    /// Maximum number of half-period segments summed before giving up.
    pub max_half_periods: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            split_point: 1.0,
            rel_tol: 1e-8,
            max_half_periods: 4000,
        }
    }
}

impl QuadratureSpec {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-12..=1e-4).contains(&self.rel_tol) {
            return Err(Error::Domain(format!(
                "rel_tol {} outside [1e-12, 1e-4]",
                self.rel_tol
            )));
        }
        if !(self.split_point > 0.0 && self.split_point.is_finite()) {
            return Err(Error::Domain(format!(
                "split_point must be positive, got {}",
                self.split_point
            )));
        }
        if self.max_half_periods < 4 {
            return Err(Error::Domain("max_half_periods must be at least 4".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

struct Rule {
    result: f64,
    abserr: f64,
    resabs: f64,
}

fn rescale_error(err: f64, resabs: f64, resasc: f64) -> f64 {
    let mut e = err.abs();
    if resasc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / resasc).powf(1.5);
        e = if scale < 1.0 { resasc * scale } else { resasc };
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * resabs);
    }
    e
}

fn gk21<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> Rule {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = WGK[10] * fc;
    let mut res_g = 0.0;
    let mut resabs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    Rule {
        result: res_k * half,
        abserr: rescale_error((res_k - res_g) * half, resabs * h, resasc * h),
        resabs: resabs * h,
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

const MAX_SUBDIVISIONS: usize = 5000;

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol |I|)`
/// or at the floating-point roundoff floor.
pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    let first = gk21(f, a, b);
    if !first.result.is_finite() {
        return Err(Error::Quadrature(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    let mut heap = BinaryHeap::new();
    let mut value = first.result;
    let mut error = first.abserr;
    let mut resabs = first.resabs;
    heap.push(Piece {
        a,
        b,
        value: first.result,
        error: first.abserr,
    });
    let mut count = 1;
    loop {
        let target = abs_tol.max(rel_tol * value.abs());
        if error <= target || error <= 50.0 * f64::EPSILON * resabs {
            break;
        }
        if count >= MAX_SUBDIVISIONS {
            return Err(Error::Quadrature(format!(
                "no convergence on [{a}, {b}] after {count} subdivisions (error {error:e}, target {target:e})"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(Piece {
                error: 0.0,
                ..worst
            });
            error -= worst.error;
            continue;
        }
        let left = gk21(f, worst.a, mid);
        let right = gk21(f, mid, worst.b);
        if !(left.result.is_finite() && right.result.is_finite()) {
            return Err(Error::Quadrature(format!(
                "non-finite integrand on [{}, {}]",
                worst.a, worst.b
            )));
        }
        value += left.result + right.result - worst.value;
        error += left.abserr + right.abserr - worst.error;
        resabs += left.resabs + right.resabs;
        heap.push(Piece {
            a: worst.a,
            b: mid,
            value: left.result,
            error: left.abserr,
        });
        heap.push(Piece {
            a: mid,
            b: worst.b,
            value: right.result,
            error: right.abserr,
        });
        count += 1;
    }
    // Re-sum to shed accumulated update drift.
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(Estimate { value, error })
}

/// `int_0^inf f`, through the map `x = t / (1 - t)`.
pub fn integrate_half_line<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    let g = |t: f64| {
        let s = 1.0 - t;
        let x = t / s;
        let v = f(x);
        if v == 0.0 {
            0.0
        } else {
            v / (s * s)
        }
    };
    integrate(&g, 0.0, 1.0, abs_tol, rel_tol)
}

/// Oscillating weight of a half-line Fourier integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oscillation {
    Cos,
    Sin,
}

impl Oscillation {
    fn eval(self, x: f64) -> f64 {
        match self {
            Oscillation::Cos => x.cos(),
            Oscillation::Sin => x.sin(),
        }
    }

    /// `k`-th positive zero of `w(a y)`.
    fn zero(self, k: usize, a: f64) -> f64 {
        let pi = std::f64::consts::PI;
        match self {
            Oscillation::Cos => (k as f64 + 0.5) * pi / a,
            Oscillation::Sin => (k as f64 + 1.0) * pi / a,
        }
    }
}

/// Integrand `y^alpha h(y)` on `(0, inf)`, with `h` bounded near the
/// origin up to logarithmic factors and `h(y) = O(y^-decay)` at infinity.
pub struct PowerIntegrand<'a> {
    pub alpha: f64,
    pub decay: f64,
    pub h: &'a dyn Fn(f64) -> f64,
}

impl PowerIntegrand<'_> {
    fn eval(&self, y: f64) -> f64 {
        y.powf(self.alpha) * (self.h)(y)
    }

    /// `int_0^s y^alpha h(y) w(a y) dy` via `y = s t^m`, `m = 1 / (alpha + 1)`.
    fn origin_piece(
        &self,
        weight: impl Fn(f64) -> f64,
        s: f64,
        abs_tol: f64,
        rel_tol: f64,
    ) -> Result<Estimate> {
        let m = 1.0 / (self.alpha + 1.0);
        let pref = s.powf(self.alpha + 1.0) * m;
        let g = |t: f64| {
            let y = s * t.powf(m);
            if y == 0.0 {
                return 0.0;
            }
            (self.h)(y) * weight(y)
        };
        let est = integrate(&g, 0.0, 1.0, abs_tol / pref, rel_tol)?;
        Ok(Estimate {
            value: est.value * pref,
            error: est.error * pref,
        })
    }

    /// Plain adaptive integration on `[lo, hi]` with geometric pre-splitting.
    fn regular_piece(
        &self,
        weight: impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        abs_tol: f64,
        rel_tol: f64,
    ) -> Result<Estimate> {
        let f = |y: f64| self.eval(y) * weight(y);
        let mut value = 0.0;
        let mut error = 0.0;
        let mut a = lo;
        while a < hi {
            let b = if lo > 0.0 { (4.0 * a).min(hi) } else { hi };
            let e = integrate(&f, a, b, abs_tol, rel_tol)?;
            value += e.value;
            error += e.error;
            a = b;
        }
        Ok(Estimate { value, error })
    }

    /// `int_0^inf y^alpha h(y) dy` (non-oscillatory).
    pub fn integrate(&self, spec: &QuadratureSpec) -> Result<f64> {
        if !(self.alpha > -1.0) {
            return Err(Error::Quadrature(format!(
                "exponent {} not integrable at the origin",
                self.alpha
            )));
        }
        let beta = self.decay - self.alpha - 2.0;
        if !(beta > -1.0) {
            return Err(Error::Quadrature(format!(
                "integrand y^{} decays too slowly",
                self.alpha - self.decay
            )));
        }
        let s = spec.split_point;
        let head = self.origin_piece(|_| 1.0, s, 0.0, spec.rel_tol * 1e-2)?;
        // Tail: y = s / u, then u = t^m with m = 1 / (beta + 1).
        let m = 1.0 / (beta + 1.0);
        let g = |t: f64| {
            let u = t.powf(m);
            if u == 0.0 {
                return 0.0;
            }
            let y = s / u;
            // s^{alpha+1} u^{-alpha-2} h(s/u) * m t^{m-1}, with t^{m-1} = u^{-beta} t^{0}.
            let val = (self.h)(y) * y.powf(self.alpha) * s / (u * u) * m * u / t;
            if val.is_finite() {
                val
            } else {
                0.0
            }
        };
        let tail = integrate(&g, 0.0, 1.0, 0.0, spec.rel_tol * 1e-2)?;
        Ok(head.value + tail.value)
    }

    /// `int_0^inf w(a y) y^alpha h(y) dy` for `a > 0`, by Euler-accelerated
    /// summation over half periods of the weight.
    pub fn fourier(&self, kind: Oscillation, a: f64, spec: &QuadratureSpec) -> Result<f64> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Quadrature(format!("frequency must be positive, got {a}")));
        }
        let alpha_origin = match kind {
            Oscillation::Cos => self.alpha,
            Oscillation::Sin => self.alpha + 1.0,
        };
        if !(alpha_origin > -1.0) {
            return Err(Error::Quadrature(format!(
                "exponent {} not integrable at the origin",
                self.alpha
            )));
        }
        let weight = |y: f64| kind.eval(a * y);
        let z0 = kind.zero(0, a);
        let s = spec.split_point.min(z0);

        // Scale of the leading segment fixes absolute tolerances downstream.
        let rough = self.origin_piece(&weight, s, 0.0, 1e-6)?;
        let rough_rest = if s < z0 {
            self.regular_piece(&weight, s, z0, 0.0, 1e-6)?.value
        } else {
            0.0
        };
        let scale = (rough.value.abs() + rough_rest.abs()).max(f64::MIN_POSITIVE);
        let seg_tol = spec.rel_tol * scale * 1e-2;

        let mut first = self.origin_piece(&weight, s, seg_tol, 0.0)?.value;
        if s < z0 {
            first += self.regular_piece(&weight, s, z0, seg_tol, 0.0)?.value;
        }
        let mut partial = vec![first];
        let mut prev: Option<f64> = None;
        let mut passes = 0;
        for k in 1..=spec.max_half_periods {
            let lo = kind.zero(k - 1, a);
            let hi = kind.zero(k, a);
            let t = self.regular_piece(&weight, lo, hi, seg_tol, 0.0)?.value;
            let last = *partial.last().expect("nonempty");
            partial.push(last + t);
            if k < 6 {
                continue;
            }
            let est = euler_average(&partial);
            if let Some(p) = prev {
                let tol = spec.rel_tol * est.abs().max(1e-3 * scale);
                if (est - p).abs() <= tol {
                    passes += 1;
                    if passes >= 2 {
                        return Ok(est);
                    }
                } else {
                    passes = 0;
                }
            }
            prev = Some(est);
        }
        Err(Error::Quadrature(format!(
            "oscillatory tail did not converge within {} half periods (a = {a})",
            spec.max_half_periods
        )))
    }
}

/// Binomially weighted average of the trailing partial sums: the Euler
/// transform of the tail of an alternating series.
fn euler_average(partial: &[f64]) -> f64 {
    let n = partial.len();
    let k = ((n - 1) / 2).min(24);
    let window = &partial[n - 1 - k..];
    let mut buf = window.to_vec();
    for level in 0..k {
        for j in 0..(k - level) {
            buf[j] = 0.5 * (buf[j] + buf[j + 1]);
        }
    }
    buf[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let e = integrate(&|x: f64| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-14, 0.0).unwrap();
        // [x^6/6 - x^3] from -1 to 2 = (64/6 - 8) - (1/6 + 1)
        assert_relative_eq!(e.value, 64.0 / 6.0 - 8.0 - 1.0 / 6.0 - 1.0, max_relative = 1e-14);
    }

    #[test]
    fn log_singularity() {
        // int_0^1 ln x dx = -1
        let e = integrate(&|x: f64| x.ln(), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(e.value, -1.0, max_relative = 1e-10);
    }

    #[test]
    fn half_line_cauchy() {
        let e = integrate_half_line(&|x: f64| 1.0 / (1.0 + x * x), 0.0, 1e-12).unwrap();
        assert_relative_eq!(e.value, PI / 2.0, max_relative = 1e-11);
    }

    #[test]
    fn power_integral_closed_form() {
        // sin(pi H) int y^{1-2H} / (1 + y^2) = pi / 2
        for h in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let f = |y: f64| 1.0 / (1.0 + y * y);
            let p = PowerIntegrand {
                alpha: 1.0 - 2.0 * h,
                decay: 2.0,
                h: &f,
            };
            let v = p.integrate(&QuadratureSpec::with_rel_tol(1e-12)).unwrap();
            assert_relative_eq!(v * (PI * h).sin(), PI / 2.0, max_relative = 1e-11);
        }
    }

    #[test]
    fn fourier_markovian_closed_form() {
        // int cos(a y) / (1 + y^2) dy = (pi / 2) e^{-a}
        let f = |y: f64| 1.0 / (1.0 + y * y);
        let p = PowerIntegrand {
            alpha: 0.0,
            decay: 2.0,
            h: &f,
        };
        for a in [0.01, 0.2, 1.0, 5.0, 40.0] {
            let v = p
                .fourier(Oscillation::Cos, a, &QuadratureSpec::with_rel_tol(1e-11))
                .unwrap();
            assert_relative_eq!(v, PI / 2.0 * (-a).exp(), max_relative = 1e-9, epsilon = 1e-13);
        }
    }

    #[test]
    fn fourier_sine_conditionally_convergent() {
        // int_0^inf sin(a y) y^{-1/2} dy = sqrt(pi / (2a))
        let f = |_: f64| 1.0;
        let p = PowerIntegrand {
            alpha: -0.5,
            decay: 0.0,
            h: &f,
        };
        for a in [0.5, 1.0, 3.0] {
            let v = p
                .fourier(Oscillation::Sin, a, &QuadratureSpec::with_rel_tol(1e-10))
                .unwrap();
            assert_relative_eq!(v, (PI / (2.0 * a)).sqrt(), max_relative = 1e-8);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::with_rel_tol(1e-13).validate().is_err());
        assert!(QuadratureSpec::with_rel_tol(1e-3).validate().is_err());
        assert!(QuadratureSpec::default().validate().is_ok());
    }

    #[test]
    fn euler_average_of_alternating_harmonic() {
        // 1 - 1/2 + 1/3 - ... = ln 2
        let mut partial = Vec::new();
        let mut acc = 0.0;
        for k in 1..=40 {
            acc += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
            partial.push(acc);
        }
        assert_relative_eq!(euler_average(&partial), 2f64.ln(), max_relative = 1e-10);
    }
}
