use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// The series never moved, so no autocorrelation could be estimated.
    pub degenerate: bool,
}

/// Autocorrelations `ρ_0..ρ_{n−1}` via a zero-padded FFT.
pub fn autocorrelation(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs.iter().map(|x| Complex::new(x - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// Effective sample size by Geyer's initial monotone sequence estimator,
/// capped at the series length.
pub fn effective_sample_size(xs: &[f64]) -> Result<Ess> {
    let n = xs.len();
    if n < 10 {
        return Err(Error::Contract(format!("effective sample size needs at least 10 draws, got {n}")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("effective sample size of a non-finite series".into()));
    }
    let first = xs[0];
    if xs.iter().all(|&x| x == first) {
        return Ok(Ess { value: 0.0, degenerate: true });
    }
    let rho = autocorrelation(xs);
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = rho[2 * m] + rho[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ok(Ess { value: (n as f64 / tau).min(n as f64), degenerate: false })
}
