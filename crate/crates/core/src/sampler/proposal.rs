use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Gaussian random-walk proposal whose covariance is learned from the
/// chain during burn-in.
///
/// Every `adapt_interval` iterations the scale is multiplied by
/// `exp(10 γ (acceptance − target))` and the covariance moves a step `γ`
/// towards the empirical covariance of the interval, with
/// `γ = (adaptations + 3)^(−0.8)`. The proposal covariance is
/// `scale · (empirical_cov + ε I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveProposal {
    pub dimension: usize,
    pub scale: f64,
    pub empirical_mean: Vec<f64>,
    /// Row-major `dimension × dimension`.
    pub empirical_cov: Vec<f64>,
    pub epsilon: f64,
    pub target_accept: f64,
    pub times_adapted: u32,
    chol: Vec<f64>,
    interval: Vec<f64>,
    interval_accepted: u32,
}

impl AdaptiveProposal {
    /// Starts from `2.38²/d` times a diagonal with standard deviation
    /// `initial_sd`.
    pub fn new(dimension: usize, initial_sd: f64, epsilon: f64, target_accept: f64) -> Self {
        let mut cov = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            cov[i * dimension + i] = initial_sd * initial_sd;
        }
        let mut p = AdaptiveProposal {
            dimension,
            scale: 2.38 * 2.38 / dimension as f64,
            empirical_mean: vec![0.0; dimension],
            empirical_cov: cov,
            epsilon,
            target_accept,
            times_adapted: 0,
            chol: Vec::new(),
            interval: Vec::new(),
            interval_accepted: 0,
        };
        p.refresh();
        p
    }

    pub fn proposal_covariance(&self) -> Vec<f64> {
        let d = self.dimension;
        let mut c: Vec<f64> = self.empirical_cov.iter().map(|v| v * self.scale).collect();
        for i in 0..d {
            c[i * d + i] += self.scale * self.epsilon;
        }
        c
    }

    fn refresh(&mut self) {
        let c = self.proposal_covariance();
        self.chol = cholesky(&c, self.dimension).unwrap_or_else(|| {
            // fall back to the diagonal if rounding broke positive definiteness
            let d = self.dimension;
            let mut l = vec![0.0; d * d];
            for i in 0..d {
                l[i * d + i] = c[i * d + i].max(self.scale * self.epsilon).sqrt();
            }
            l
        });
    }

    /// Writes `current + L z` into `out`.
    pub fn propose(&self, current: &[f64], rng: &mut impl Rng, out: &mut [f64]) {
        let d = self.dimension;
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            out[i] = current[i] + row.iter().zip(&z).map(|(l, z)| l * z).sum::<f64>();
        }
    }

    /// Logs the block's value after an update, for the next adaptation.
    pub fn record(&mut self, value: &[f64], accepted: bool) {
        self.interval.extend_from_slice(value);
        self.interval_accepted += u32::from(accepted);
    }

    pub fn adapt(&mut self) {
        let d = self.dimension;
        let n = self.interval.len() / d.max(1);
        if n == 0 {
            return;
        }
        let rate = f64::from(self.interval_accepted) / n as f64;
        let gamma = 1.0 / (f64::from(self.times_adapted) + 3.0).powf(0.8);
        self.scale *= (10.0 * gamma * (rate - self.target_accept)).exp();

        let mut mean = vec![0.0; d];
        for row in self.interval.chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![0.0; d * d];
        if n > 1 {
            for row in self.interval.chunks(d) {
                for i in 0..d {
                    for j in 0..=i {
                        cov[i * d + j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1) as f64;
                    }
                }
            }
            for i in 0..d {
                for j in 0..i {
                    cov[j * d + i] = cov[i * d + j];
                }
            }
        }
        for (c, e) in self.empirical_cov.iter_mut().zip(&cov) {
            *c += gamma * (e - *c);
        }
        self.empirical_mean = mean;
        self.times_adapted += 1;
        self.interval.clear();
        self.interval_accepted = 0;
        self.refresh();
    }

    /// Drops anything logged since the last adaptation.
    pub fn freeze(&mut self) {
        self.interval = Vec::new();
        self.interval_accepted = 0;
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix,
/// row-major.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let l = nalgebra::DMatrix::from_row_slice(d, d, a).cholesky()?.unpack();
    Some(l.transpose().as_slice().to_vec())
}
