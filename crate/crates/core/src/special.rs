//! Scalar kernels: standard Gaussian, Owen's T-function and the Skew-Normal
//! distribution.
//!
//! The Skew-Normal cdf is evaluated through `F(x) = Φ(z) − 2 T(z, α)` with
//! `z = (x − ξ)/ω`, so the accuracy of the whole likelihood rests on
//! [`owen_t`]. All functions are pure and allocation free.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// `1/√(2π)`
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const FRAC_1_2PI: f64 = 1.0 / (2.0 * PI);
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this `Φ(z)` is a subnormal or zero; the log-cdf switches to the
/// asymptotic Mills-ratio expansion.
const LOG_CDF_ASYMPTOTIC: f64 = -37.0;

pub fn gaussian_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn gaussian_log_pdf(z: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * z * z
}

/// Standard Gaussian cdf `Φ(z)`.
pub fn gaussian_cdf(z: f64) -> f64 {
    if z < LOG_CDF_ASYMPTOTIC {
        // deep tail: go through the log-scale expansion so the result
        // degrades gracefully through the subnormal range
        return gaussian_log_cdf(z).exp();
    }
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 − Φ(z)`, accurate for large positive `z`.
pub fn gaussian_sf(z: f64) -> f64 {
    gaussian_cdf(-z)
}

/// `log Φ(z)`, finite for every finite `z`.
pub fn gaussian_log_cdf(z: f64) -> f64 {
    if z > 0.0 {
        // 1 − Q with Q small
        return (-0.5 * erfc(z * FRAC_1_SQRT_2)).ln_1p();
    }
    if z >= LOG_CDF_ASYMPTOTIC {
        return (0.5 * erfc(-z * FRAC_1_SQRT_2)).ln();
    }
    // Φ(z) = φ(z)/|z| · (1 − 1/z² + 3/z⁴ − 15/z⁶ + 105/z⁸ …)
    let w = 1.0 / (z * z);
    let series = 1.0 - w * (1.0 - 3.0 * w * (1.0 - 5.0 * w * (1.0 - 7.0 * w)));
    gaussian_log_pdf(z) - (-z).ln() + series.ln()
}

/// Owen's T-function `T(h, a) = (1/2π) ∫₀^a exp(−h²(1+x²)/2)/(1+x²) dx`.
///
/// `a = ±∞` is accepted and returns `±(1 − Φ(|h|))/2`. Absolute error is
/// below 1e-15 over the whole plane.
pub fn owen_t(h: f64, a: f64) -> f64 {
    let h = h.abs();
    let sign = if a < 0.0 { -1.0 } else { 1.0 };
    let a = a.abs();
    if a == 0.0 {
        return 0.0;
    }
    let value = if a <= 1.0 {
        owen_t_unit(h, a)
    } else if a.is_infinite() {
        0.5 * gaussian_sf(h)
    } else {
        // T(h,a) + T(ah,1/a) = ½Φ(h) + ½Φ(ah) − Φ(h)Φ(ah), written with
        // upper tails so nothing cancels for large h
        let ah = a * h;
        let qh = gaussian_sf(h);
        let qah = gaussian_sf(ah);
        0.5 * (qh + qah) - qh * qah - owen_t_unit(ah, 1.0 / a)
    };
    sign * value
}

const OWEN_PMF_LEN: usize = 160;

/// `T(h, a)` for `h ≥ 0` and `0 < a ≤ 1`.
///
/// Uses Owen's series
/// `T = (1/2π)[atan a − Σ_j (−1)^j a^{2j+1}/(2j+1) · P(N > j)]`
/// with `N ~ Poisson(h²/2)`. The Poisson tails are accumulated backwards
/// from the far end so they keep full relative accuracy, which lets the
/// alternating series stop as soon as a term drops below 1e-18.
fn owen_t_unit(h: f64, a: f64) -> f64 {
    let x = 0.5 * h * h;
    // |T| ≤ a e^{-x} / 2π
    if a * (-x).exp() * FRAC_1_2PI < 1e-22 {
        return 0.0;
    }
    if x == 0.0 {
        return a.atan() * FRAC_1_2PI;
    }
    let n = ((x + 10.0 * x.sqrt() + 25.0).ceil() as usize).min(OWEN_PMF_LEN - 1);
    let mut pmf = [0.0f64; OWEN_PMF_LEN];
    pmf[0] = (-x).exp();
    for i in 1..=n {
        pmf[i] = pmf[i - 1] * x / i as f64;
    }
    // tails[j] = P(N > j)
    let mut tail = 0.0;
    let mut tails = [0.0f64; OWEN_PMF_LEN];
    for j in (0..n).rev() {
        tail += pmf[j + 1];
        tails[j] = tail;
    }
    let a2 = a * a;
    let mut power = a;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for (j, &tail_j) in tails.iter().enumerate().take(n) {
        let term = power / (2 * j + 1) as f64 * tail_j;
        sum += sign * term;
        if term < 1e-18 {
            break;
        }
        sign = -sign;
        power *= a2;
    }
    (a.atan() - sum) * FRAC_1_2PI
}

/// Location/scale/shape of a Skew-Normal law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalParams {
    pub xi: f64,
    pub omega: f64,
    pub alpha: f64,
}

impl SkewNormalParams {
    pub fn new(xi: f64, omega: f64, alpha: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Domain(format!("skew-normal scale must be positive, got {omega}")));
        }
        if !xi.is_finite() || !alpha.is_finite() {
            return Err(Error::Domain(format!(
                "skew-normal location/shape must be finite, got xi={xi}, alpha={alpha}"
            )));
        }
        Ok(Self { xi, omega, alpha })
    }

    /// `δ = α/√(1+α²)`
    pub fn delta(&self) -> f64 {
        self.alpha / (1.0 + self.alpha * self.alpha).sqrt()
    }
}

pub fn skew_normal_pdf(x: f64, p: &SkewNormalParams) -> f64 {
    let z = (x - p.xi) / p.omega;
    2.0 / p.omega * gaussian_pdf(z) * gaussian_cdf(p.alpha * z)
}

pub fn skew_normal_cdf(x: f64, p: &SkewNormalParams) -> f64 {
    let z = (x - p.xi) / p.omega;
    (gaussian_cdf(z) - 2.0 * owen_t(z, p.alpha)).clamp(0.0, 1.0)
}

/// `1 − F(x)` computed without the cancellation of the direct form.
pub fn skew_normal_sf(x: f64, p: &SkewNormalParams) -> f64 {
    let z = (x - p.xi) / p.omega;
    (gaussian_sf(z) + 2.0 * owen_t(z, p.alpha)).clamp(0.0, 1.0)
}

/// Mean and standard deviation of the Skew-Normal law.
pub fn skew_normal_moments(p: &SkewNormalParams) -> (f64, f64) {
    let delta = p.delta();
    let mean = p.xi + p.omega * delta * (2.0 / PI).sqrt();
    let sd = p.omega * (1.0 - 2.0 * delta * delta / PI).sqrt();
    (mean, sd)
}
