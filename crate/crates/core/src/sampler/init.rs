use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ChainState, InitStrategy, Model, SamplerConfig};
use crate::data::DeathPanel;
use crate::model::Coordinate;
use crate::prior::Hyperparams;
use crate::{Error, Result};

const MAX_ATTEMPTS: i32 = 100;
const MIN_ETA2: f64 = 1e-4;

/// A starting point for one chain with a finite log-posterior.
pub fn initialize_states(
    panel: &DeathPanel,
    hyper: &Hyperparams,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<ChainState> {
    let model = Model::from_config(panel, hyper, cfg)?;
    initialize(&model, cfg, rng)
}

pub(crate) fn initialize(model: &Model, cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<ChainState> {
    match cfg.init {
        InitStrategy::Prior => from_prior(model, rng),
        InitStrategy::Empirical => empirical(model),
    }
}

fn default_eta2(model: &Model, k: usize) -> f64 {
    let (a, b) = model.eta2_shape_rate(k);
    (b / (a + 1.0)).max(MIN_ETA2)
}

/// `θ̃₀` drawn from its prior, shrunk towards the prior mean by half on
/// every retry; trajectories flat at `θ̃₀`.
fn from_prior(model: &Model, rng: &mut impl Rng) -> Result<ChainState> {
    let (p, t_len, dim) = (model.panel.n_countries(), model.panel.n_years(), model.dim());
    let h = &model.hyper;
    let z: Vec<f64> = (0..p * dim).map(|_| StandardNormal.sample(rng)).collect();
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let shrink = 0.5f64.powi(attempt);
        let theta0: Vec<f64> = (0..p * dim).map(|i| h.m[i % dim] + shrink * h.s[i % dim] * z[i]).collect();
        let states = (0..p)
            .flat_map(|j| (0..t_len).flat_map(move |_| j * dim..(j + 1) * dim))
            .map(|i| theta0[i])
            .collect();
        let beta = (0..p * dim).map(|i| h.m_beta[i % dim]).collect();
        let eta2 = (0..p * dim).map(|i| default_eta2(model, i % dim)).collect();
        match ChainState::new(model, states, theta0, beta, eta2) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Init(format!(
        "no finite starting point after {MAX_ATTEMPTS} prior draws: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Each country-year fitted on its own by Nelder–Mead from a moment-based
/// start; the dynamics are then read off the fitted trajectory.
fn empirical(model: &Model) -> Result<ChainState> {
    let (p, t_len, dim) = (model.panel.n_countries(), model.panel.n_years(), model.dim());
    let mut fits: Vec<Option<Vec<f64>>> = Vec::with_capacity(p * t_len);
    for j in 0..p {
        for t in 0..t_len {
            fits.push(model.panel.frequencies(j, t).map(|f| {
                let start = moment_start(&f, model);
                refine(model, j, t, start)
            }));
        }
    }
    let mut states = Vec::with_capacity(p * t_len * dim);
    let (mut theta0, mut beta, mut eta2) = (vec![0.0; p * dim], vec![0.0; p * dim], vec![0.0; p * dim]);
    for j in 0..p {
        let row = &fits[j * t_len..(j + 1) * t_len];
        let path: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                // nearest observed year, else the prior mean
                (0..t_len)
                    .filter_map(|u| row[u].as_ref().map(|f| (u.abs_diff(t), f)))
                    .min_by_key(|(d, _)| *d)
                    .map(|(_, f)| f.clone())
                    .unwrap_or_else(|| model.hyper.m.clone())
            })
            .collect();
        for k in 0..dim {
            let inc: Vec<f64> = path.windows(2).map(|w| w[1][k] - w[0][k]).collect();
            let idx = j * dim + k;
            beta[idx] = if inc.is_empty() {
                model.hyper.m_beta[k]
            } else {
                inc.iter().sum::<f64>() / inc.len() as f64
            };
            eta2[idx] = if inc.len() >= 2 {
                let v = inc.iter().map(|d| (d - beta[idx]).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
                v.max(MIN_ETA2)
            } else {
                default_eta2(model, k)
            };
            theta0[idx] = path[0][k] - beta[idx];
        }
        states.extend(path.into_iter().flatten());
    }
    ChainState::new(model, states, theta0, beta, eta2)
}

/// Mass, mean, sd (at least one year) and skewness of `f` over `ages`.
fn weighted_moments(f: &[f64], ages: std::ops::Range<usize>) -> Option<(f64, f64, f64, f64)> {
    let mass: f64 = f[ages.clone()].iter().sum();
    if mass <= 1e-9 {
        return None;
    }
    let central = |p: i32, mean: f64| ages.clone().map(|x| (x as f64 - mean).powi(p) * f[x]).sum::<f64>() / mass;
    let mean = central(1, 0.0);
    let sd = central(2, mean).sqrt().max(1.0);
    Some((mass, mean, sd, central(3, mean) / sd.powi(3)))
}

/// Skew-Normal `(ξ, ω, α)` matching a mean, sd and skewness, with the
/// skewness pulled inside the attainable range.
fn skew_normal_from_moments(mean: f64, sd: f64, skew: f64) -> (f64, f64, f64) {
    let g = skew.abs().min(0.95).powf(2.0 / 3.0);
    let c = ((4.0 - std::f64::consts::PI) / 2.0).powf(2.0 / 3.0);
    let delta = skew.signum() * (std::f64::consts::FRAC_PI_2 * g / (g + c)).sqrt();
    let alpha = delta / (1.0 - delta * delta).sqrt();
    let omega = sd / (1.0 - 2.0 * delta * delta / std::f64::consts::PI).sqrt();
    let xi = mean - omega * delta * std::f64::consts::FRAC_2_SQRT_PI / std::f64::consts::SQRT_2;
    (xi, omega, alpha)
}

/// A rough latent state matching the empirical distribution `f`: ages
/// below 60 are read as adult deaths, the rest as old-age deaths.
fn moment_start(f: &[f64], model: &Model) -> Vec<f64> {
    let n = f.len();
    let split = 60.min(n - 1).max(1);
    let adult = weighted_moments(f, 1..split);
    let old = weighted_moments(f, split..n);
    let has_adult = model.coords.contains(&Coordinate::AdultWeight);
    let mut pi0 = f[0].clamp(1e-4, 0.5);
    let mut pi1 = if has_adult { adult.map_or(0.05, |a| a.0).max(1e-3) } else { 0.0 };
    let mut pi2 = old.map_or(0.5, |o| o.0).max(1e-3) + if has_adult { 0.0 } else { adult.map_or(0.0, |a| a.0) };
    let total = pi0 + pi1 + pi2;
    pi0 /= total;
    pi1 /= total;
    pi2 /= total;

    let sn = old.map(|o| skew_normal_from_moments(o.1, o.2, o.3));
    let beta_shape = || {
        let lo = crate::model::SCALED_BETA_SUPPORT.0 as usize;
        let (_, mean, sd, _) = weighted_moments(f, lo.min(n - 1)..n)?;
        let (a, b) = crate::model::SCALED_BETA_SUPPORT;
        let m = ((mean - a) / (b - a)).clamp(0.05, 0.95);
        let v = (sd / (b - a)).powi(2);
        let c = (m * (1.0 - m) / v - 1.0).max(0.5);
        Some((m * c, (1.0 - m) * c))
    };
    model
        .coords
        .iter()
        .enumerate()
        .map(|(k, c)| match c {
            Coordinate::AdultWeight => (pi1 / (1.0 - pi1)).ln(),
            Coordinate::OldAgeWeight => (pi2 / pi0).ln(),
            Coordinate::AdultMean => adult.map_or(model.hyper.m[k], |a| a.1),
            Coordinate::AdultLogSd => adult.map_or(model.hyper.m[k], |a| a.2.ln()),
            Coordinate::OldAgeLocation => sn.map_or(model.hyper.m[k], |s| s.0),
            Coordinate::OldAgeLogScale => sn.map_or(model.hyper.m[k], |s| s.1.ln()),
            Coordinate::OldAgeShape => sn.map_or(0.0, |s| s.2),
            Coordinate::BetaLogA => beta_shape().map_or(0.0, |s| s.0.ln()),
            Coordinate::BetaLogB => beta_shape().map_or(0.0, |s| s.1.ln()),
            Coordinate::InfantLogScale => 0.5f64.ln(),
        })
        .collect()
}

struct NegKernel<'m, 'p> {
    model: &'m Model<'p>,
    j: usize,
    t: usize,
}

impl CostFunction for NegKernel<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let k = self.model.kernel(self.j, self.t, x);
        Ok(if k.is_finite() { -k } else { f64::MAX })
    }
}

/// Polishes a start by Nelder–Mead on the multinomial kernel, restarting
/// from the best point found; keeps the start if nothing improves on it.
fn refine(model: &Model, j: usize, t: usize, start: Vec<f64>) -> Vec<f64> {
    let mut best = start;
    let mut best_value = model.kernel(j, t, &best);
    for _ in 0..4 {
        let simplex: Vec<Vec<f64>> = std::iter::once(best.clone())
            .chain(model.coords.iter().enumerate().map(|(k, c)| {
                let mut v = best.clone();
                v[k] += match c {
                    Coordinate::AdultMean | Coordinate::OldAgeLocation => 2.0,
                    Coordinate::OldAgeShape => 1.0,
                    _ => 0.2,
                };
                v
            }))
            .collect();
        let found = NelderMead::new(simplex)
            .with_sd_tolerance(1e-10)
            .ok()
            .and_then(|solver| {
                Executor::new(NegKernel { model, j, t }, solver)
                    .configure(|s| s.max_iters(800))
                    .run()
                    .ok()
            })
            .and_then(|res| res.state.best_param.clone());
        match found {
            Some(x) if model.kernel(j, t, &x) > best_value + 1e-6 => {
                best_value = model.kernel(j, t, &x);
                best = x;
            }
            _ => break,
        }
    }
    best
}
