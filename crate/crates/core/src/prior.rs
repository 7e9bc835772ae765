//! Random walk with drift on the latent states, its hyperpriors, and the
//! conjugate full conditionals of the drift, innovation variance and
//! initial state.
//!
//! Everything is expressed through the increments `d_t = θ̃_t − θ̃_{t−1}`,
//! which are i.i.d. `N(β, η²)` given the drift and variance.

use libm::lgamma;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::model::ModelVariant;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Fixed hyperparameters, one entry per latent coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub m_beta: Vec<f64>,
    pub s_beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Hyperparams {
    /// Initial states centred on adult deaths at 50 and old-age deaths at
    /// 70 with sd 10; drifts `N(0, 1)`; `η² ∼ InvGamma(0.01, 0.01)`.
    pub fn default_for(variant: &ModelVariant) -> Self {
        let k = variant.dim();
        Hyperparams {
            m: variant.coordinates().iter().map(|c| c.default_prior_mean()).collect(),
            s: vec![10.0; k],
            m_beta: vec![0.0; k],
            s_beta: vec![1.0; k],
            a: vec![0.01; k],
            b: vec![0.01; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let fields = [
            ("m", &self.m),
            ("s", &self.s),
            ("m_beta", &self.m_beta),
            ("s_beta", &self.s_beta),
            ("a", &self.a),
            ("b", &self.b),
        ];
        for (name, v) in fields {
            if v.len() != dim {
                return Err(Error::Config(format!(
                    "hyperparameter {name} has {} entries, the model has {dim} coordinates",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("hyperparameter {name} must be finite")));
            }
        }
        for (name, v) in [("s", &self.s), ("s_beta", &self.s_beta), ("a", &self.a), ("b", &self.b)] {
            if let Some(x) = v.iter().find(|&&x| x <= 0.0) {
                return Err(Error::Config(format!("hyperparameter {name} must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

/// Distribution of the scaled innovation `(θ̃_t − θ̃_{t−1} − β)/η`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InnovationLaw {
    #[default]
    Gaussian,
    StudentT { dof: f64 },
}

impl InnovationLaw {
    pub fn student_t() -> Self {
        InnovationLaw::StudentT { dof: 5.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InnovationLaw::StudentT { dof } if !(dof > 2.0) => {
                Err(Error::Config(format!("Student-t innovations need dof > 2, got {dof}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_conjugate(&self) -> bool {
        matches!(self, InnovationLaw::Gaussian)
    }

    /// Log density of `x` under location `mean` and scale `√eta2`.
    pub fn log_density(&self, x: f64, mean: f64, eta2: f64) -> f64 {
        let r2 = (x - mean) * (x - mean) / eta2;
        match *self {
            InnovationLaw::Gaussian => -0.5 * (LN_2PI + eta2.ln() + r2),
            InnovationLaw::StudentT { dof } => {
                lgamma(0.5 * (dof + 1.0)) - lgamma(0.5 * dof) - 0.5 * (dof * PI * eta2).ln()
                    - 0.5 * (dof + 1.0) * (r2 / dof).ln_1p()
            }
        }
    }

    /// One standardized innovation.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        match *self {
            InnovationLaw::Gaussian => z,
            InnovationLaw::StudentT { dof } => {
                let chi2 = Gamma::new(0.5 * dof, 2.0).expect("dof validated").sample(rng);
                z / (chi2 / dof).sqrt()
            }
        }
    }
}

/// Per-country drift, innovation variance, initial state and trajectory;
/// `trajectory[t][k]` holds θ̃ at time `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryDynamics {
    pub beta: Vec<f64>,
    pub eta2: Vec<f64>,
    pub theta0: Vec<f64>,
    pub trajectory: Vec<Vec<f64>>,
}

impl CountryDynamics {
    pub fn increments(&self, k: usize) -> Vec<f64> {
        let mut prev = self.theta0[k];
        self.trajectory
            .iter()
            .map(|row| {
                let d = row[k] - prev;
                prev = row[k];
                d
            })
            .collect()
    }
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

pub fn inv_gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - lgamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Joint log density of one country's initial state, trajectory, drifts
/// and innovation variances. With `flat` the drift prior is an improper
/// constant and `log η²` is uniform, the limit `s_β → ∞`, `a = b → 0`.
pub fn log_state_prior(d: &CountryDynamics, h: &Hyperparams, law: &InnovationLaw, flat: bool) -> f64 {
    let mut total = 0.0;
    for k in 0..d.theta0.len() {
        let mut coord = normal_log_pdf(d.theta0[k], h.m[k], h.s[k] * h.s[k]);
        let mut prev = d.theta0[k];
        for row in &d.trajectory {
            coord += law.log_density(row[k], prev + d.beta[k], d.eta2[k]);
            prev = row[k];
        }
        if flat {
            // uniform on log η²
            coord -= d.eta2[k].ln();
        } else {
            coord += normal_log_pdf(d.beta[k], h.m_beta[k], h.s_beta[k] * h.s_beta[k]);
            coord += inv_gamma_log_pdf(d.eta2[k], h.a[k], h.b[k]);
        }
        total += coord;
    }
    total
}

fn normal_draw(rng: &mut impl Rng, mean: f64, var: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

/// Mean and variance of `β | increments, η²`. An infinite `s_beta` gives
/// the flat-prior limit.
pub fn beta_conditional(increments: &[f64], eta2: f64, m_beta: f64, s_beta: f64) -> (f64, f64) {
    let prior_prec = 1.0 / (s_beta * s_beta);
    let prec = increments.len() as f64 / eta2 + prior_prec;
    let var = 1.0 / prec;
    let sum: f64 = increments.iter().sum();
    let weighted_prior = if prior_prec == 0.0 { 0.0 } else { m_beta * prior_prec };
    (var * (sum / eta2 + weighted_prior), var)
}

pub fn gibbs_update_beta(
    increments: &[f64],
    eta2: f64,
    m_beta: f64,
    s_beta: f64,
    rng: &mut impl Rng,
) -> f64 {
    let (mean, var) = beta_conditional(increments, eta2, m_beta, s_beta);
    normal_draw(rng, mean, var)
}

/// Shape and rate of `η² | increments, β`. The rate is kept strictly
/// positive so the flat-prior limit `a = b = 0` stays proper.
pub fn eta2_conditional(increments: &[f64], beta: f64, a: f64, b: f64) -> (f64, f64) {
    let ss: f64 = increments.iter().map(|d| (d - beta) * (d - beta)).sum();
    let shape = a + 0.5 * increments.len() as f64;
    let rate = (b + 0.5 * ss).max(f64::MIN_POSITIVE);
    (shape, rate)
}

pub fn gibbs_update_eta2(increments: &[f64], beta: f64, a: f64, b: f64, rng: &mut impl Rng) -> f64 {
    let (shape, rate) = eta2_conditional(increments, beta, a, b);
    inv_gamma_draw(rng, shape, rate)
}

pub fn inv_gamma_draw(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    (rate / g).min(f64::MAX)
}

/// Mean and variance of `β | θ̃_{1..T}, η²` with `θ̃₀` integrated out
/// against its `N(m, s²)` prior; only `θ̃₁`, `θ̃_T` and `T` matter. Drawing
/// β from this and then `θ̃₀ | β` samples the pair jointly, which keeps β
/// moving when η² is tiny and the two are pinned to each other.
#[allow(clippy::too_many_arguments)]
pub fn beta_conditional_collapsed(
    first: f64,
    last: f64,
    n_years: usize,
    eta2: f64,
    m: f64,
    s: f64,
    m_beta: f64,
    s_beta: f64,
) -> (f64, f64) {
    let (s2, e, n) = (s * s, eta2, n_years as f64);
    let pb = 1.0 / (s_beta * s_beta);
    let weighted_prior = if pb == 0.0 { 0.0 } else { m_beta * pb };
    // precision determinant and numerator; scaled by η⁴ when η² is small
    // so nothing cancels, left in precision form when it is large so
    // nothing overflows
    if e < 1.0 {
        let det = e * e * pb / s2 + e * (n / s2 + pb) + (n - 1.0);
        let num = e * e * weighted_prior / s2 + e * ((last - m) / s2 + weighted_prior) + (last - first);
        (num / det, (e * e / s2 + e) / det)
    } else {
        let r = 1.0 / e;
        let det = pb / s2 + r * (n / s2 + pb) + (n - 1.0) * r * r;
        let num = weighted_prior / s2 + r * ((last - m) / s2 + weighted_prior) + (last - first) * r * r;
        (num / det, (1.0 / s2 + r) / det)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gibbs_update_beta_collapsed(
    first: f64,
    last: f64,
    n_years: usize,
    eta2: f64,
    m: f64,
    s: f64,
    m_beta: f64,
    s_beta: f64,
    rng: &mut impl Rng,
) -> f64 {
    let (mean, var) = beta_conditional_collapsed(first, last, n_years, eta2, m, s, m_beta, s_beta);
    normal_draw(rng, mean, var)
}

/// Mean and variance of `θ̃₀ | θ̃₁, β, η²`.
pub fn theta0_conditional(theta1: f64, beta: f64, eta2: f64, m: f64, s: f64) -> (f64, f64) {
    let var = 1.0 / (1.0 / (s * s) + 1.0 / eta2);
    (var * (m / (s * s) + (theta1 - beta) / eta2), var)
}

pub fn gibbs_update_theta0(
    theta1: f64,
    beta: f64,
    eta2: f64,
    m: f64,
    s: f64,
    rng: &mut impl Rng,
) -> f64 {
    let (mean, var) = theta0_conditional(theta1, beta, eta2, m, s);
    normal_draw(rng, mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_conditional_hand_case() {
        let (mean, var) = beta_conditional(&[1.0, 2.0, 3.0, 4.0, 5.0], 1.0, 0.0, 1.0);
        assert!((mean - 2.5).abs() < 1e-15);
        assert!((var - 1.0 / 6.0).abs() < 1e-15);
        let (mean, _) = beta_conditional(&[0.7; 4], 0.3, 5.0, f64::INFINITY);
        assert!((mean - 0.7).abs() < 1e-15);
    }

    #[test]
    fn theta0_conditional_hand_case() {
        let (mean, var) = theta0_conditional(2.5, 0.5, 1.0, 0.0, 1.0);
        assert!((mean - 1.0).abs() < 1e-15);
        assert!((var - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eta2_conditional_zero_residuals() {
        assert_eq!(eta2_conditional(&[0.3, 0.3], 0.3, 0.01, 0.01), (1.01, 0.01));
    }

    #[test]
    fn defaults_centre_mu_and_xi() {
        let h = Hyperparams::default_for(&ModelVariant::default());
        assert_eq!(h.m, [0.0, 0.0, 50.0, 0.0, 70.0, 0.0, 0.0]);
        assert!(h.validate(7).is_ok());
        assert!(h.validate(6).is_err());
        let mut bad = h.clone();
        bad.a[2] = 0.0;
        assert!(bad.validate(7).unwrap_err().to_string().contains("a "));
    }

    #[test]
    fn student_t_needs_finite_variance() {
        assert!(InnovationLaw::StudentT { dof: 2.0 }.validate().is_err());
        assert!(InnovationLaw::student_t().validate().is_ok());
    }
}
