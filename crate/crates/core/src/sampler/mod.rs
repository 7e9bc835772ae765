//! Adaptive Metropolis-within-Gibbs over the latent trajectories, drifts,
//! innovation variances and initial states.

mod draws;
mod ess;
mod init;
mod proposal;

pub use draws::{BlockAcceptance, ChainDraws, DrawLayout, PosteriorDraws};
pub use ess::{autocorrelation, effective_sample_size, Ess};
pub use init::initialize_states;
pub use proposal::AdaptiveProposal;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DeathPanel;
use crate::model::{
    from_unconstrained, log_multinomial_coefficient, multinomial_kernel, ComponentCells, Coordinate,
    ModelVariant,
};
use crate::prior::{
    gibbs_update_beta_collapsed, gibbs_update_eta2, gibbs_update_theta0, inv_gamma_draw, inv_gamma_log_pdf, log_state_prior,
    normal_log_pdf, CountryDynamics, Hyperparams, InnovationLaw,
};
use crate::{Error, Result};

/// How latent states are grouped into Metropolis blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocking {
    /// One block per (year, coordinate), stacking every country.
    #[default]
    PerTkAcrossCountries,
    /// One block per (country, year) holding the whole state vector.
    PerJt,
    /// Every (country, year, coordinate) on its own.
    Scalar,
}

/// Starting point of each chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Initial states drawn from their prior, trajectories flat, drifts at
    /// their prior mean.
    #[default]
    Prior,
    /// Each country-year fitted to its own empirical distribution first;
    /// drifts and variances from the fitted increments.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub blocking: Blocking,
    pub adapt_interval: usize,
    /// Defaults to 0.234 for blocks and 0.44 for one-dimensional updates.
    pub target_accept: Option<f64>,
    pub epsilon: f64,
    /// Proposal standard deviation per coordinate before any adaptation.
    pub initial_proposal_sd: f64,
    pub variant: ModelVariant,
    pub innovation: InnovationLaw,
    pub flat_priors: bool,
    pub init: InitStrategy,
    /// Every this many sweeps, also propose each state block from its
    /// Gaussian prior conditional given its neighbours (0 turns it off).
    /// These moves carry the chain where the data say little and the
    /// innovation variance spans many orders of magnitude.
    pub prior_proposal_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 105_000,
            burn_in: 5_000,
            thin: 5,
            n_chains: 1,
            seed: 0,
            blocking: Blocking::default(),
            adapt_interval: 200,
            target_accept: None,
            epsilon: 1e-6,
            initial_proposal_sd: 0.1,
            variant: ModelVariant::default(),
            innovation: InnovationLaw::Gaussian,
            flat_priors: false,
            init: InitStrategy::default(),
            prior_proposal_every: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_iter == 0 {
            return bad("n_iter must be positive".into());
        }
        if self.burn_in >= self.n_iter {
            return bad(format!("burn_in {} must be below n_iter {}", self.burn_in, self.n_iter));
        }
        if self.thin == 0 || self.thin > self.n_iter {
            return bad(format!("thin must be in 1..=n_iter, got {}", self.thin));
        }
        if self.n_chains == 0 {
            return bad("n_chains must be positive".into());
        }
        if self.adapt_interval == 0 {
            return bad("adapt_interval must be positive".into());
        }
        if let Some(t) = self.target_accept {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("target_accept must be in (0, 1), got {t}"));
            }
        }
        if !(self.epsilon > 0.0) || !(self.initial_proposal_sd > 0.0) {
            return bad("epsilon and initial_proposal_sd must be positive".into());
        }
        self.innovation.validate()
    }

    /// Number of draws each chain keeps.
    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn target_for(&self, dim: usize) -> f64 {
        self.target_accept.unwrap_or(if dim == 1 { 0.44 } else { 0.234 })
    }
}

/// Innovation variances are kept above this so an improper flat prior
/// cannot collapse a random walk onto its drift.
const ETA2_FLOOR: f64 = 1e-12;

/// Everything fixed during a run: data, hyperparameters, model choices.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub panel: &'a DeathPanel,
    pub hyper: Hyperparams,
    pub variant: ModelVariant,
    pub law: InnovationLaw,
    pub flat: bool,
    coords: Vec<Coordinate>,
    log_coef: Vec<f64>,
}

impl<'a> Model<'a> {
    pub fn new(
        panel: &'a DeathPanel,
        hyper: &Hyperparams,
        variant: ModelVariant,
        law: InnovationLaw,
        flat: bool,
    ) -> Result<Self> {
        hyper.validate(variant.dim())?;
        law.validate()?;
        let log_coef = (0..panel.n_countries())
            .flat_map(|j| (0..panel.n_years()).map(move |t| (j, t)))
            .map(|(j, t)| log_multinomial_coefficient(panel.deaths(j, t)))
            .collect();
        Ok(Model {
            panel,
            hyper: hyper.clone(),
            variant,
            law,
            flat,
            coords: variant.coordinates(),
            log_coef,
        })
    }

    pub fn from_config(panel: &'a DeathPanel, hyper: &Hyperparams, cfg: &SamplerConfig) -> Result<Self> {
        Self::new(panel, hyper, cfg.variant, cfg.innovation, cfg.flat_priors)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Multinomial kernel `Σ D_x log p_x` of country-year `(j, t)` under a
    /// latent state; zero for an empty country-year, `−∞` for an invalid
    /// state.
    pub fn kernel(&self, j: usize, t: usize, state: &[f64]) -> f64 {
        if self.panel.total(j, t) == 0 {
            return 0.0;
        }
        match from_unconstrained(state, &self.variant) {
            Ok(p) => {
                let probs = crate::model::discretize(&p, &self.panel.grid());
                finite_or_neg_inf(multinomial_kernel(self.panel.deaths(j, t), &probs))
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Full log-likelihood including multinomial coefficients, recomputed
    /// from scratch.
    pub fn log_likelihood(&self, s: &ChainState) -> f64 {
        let mut total = 0.0;
        for j in 0..s.n_countries {
            for t in 0..s.n_years {
                total += self.log_coef[j * s.n_years + t] + self.kernel(j, t, s.state(j, t));
            }
        }
        total
    }

    /// Unnormalized log posterior of the whole parameter set, recomputed
    /// from scratch.
    pub fn log_joint(&self, s: &ChainState) -> f64 {
        let prior: f64 = (0..s.n_countries)
            .map(|j| log_state_prior(&s.dynamics(j), &self.hyper, &self.law, self.flat))
            .sum();
        self.log_likelihood(s) + prior
    }

    fn beta_prior_sd(&self, k: usize) -> f64 {
        if self.flat {
            f64::INFINITY
        } else {
            self.hyper.s_beta[k]
        }
    }

    fn eta2_shape_rate(&self, k: usize) -> (f64, f64) {
        if self.flat {
            (0.0, 0.0)
        } else {
            (self.hyper.a[k], self.hyper.b[k])
        }
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Current value of every parameter in one chain, plus per-country-year
/// caches of the likelihood kernel and component cell masses.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub n_countries: usize,
    pub n_years: usize,
    pub dim: usize,
    /// `[(j · T + t) · K + k]`
    pub states: Vec<f64>,
    /// `[j · K + k]`
    pub theta0: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta2: Vec<f64>,
    kernels: Vec<f64>,
    cells: Vec<ComponentCells>,
}

impl ChainState {
    /// A state with every cache filled; fails naming the first country-year
    /// whose likelihood is not finite.
    pub fn new(
        model: &Model,
        states: Vec<f64>,
        theta0: Vec<f64>,
        beta: Vec<f64>,
        eta2: Vec<f64>,
    ) -> Result<Self> {
        let (p, t, k) = (model.panel.n_countries(), model.panel.n_years(), model.dim());
        if states.len() != p * t * k || [&theta0, &beta, &eta2].iter().any(|v| v.len() != p * k) {
            return Err(Error::Contract("chain state does not match the panel and variant".into()));
        }
        let n_cells = model.panel.grid().n_cells();
        let mut s = ChainState {
            n_countries: p,
            n_years: t,
            dim: k,
            states,
            theta0,
            beta,
            eta2,
            kernels: vec![0.0; p * t],
            cells: vec![ComponentCells::new(n_cells); p * t],
        };
        let mut probs = vec![0.0; n_cells];
        for j in 0..p {
            for tt in 0..t {
                let idx = j * t + tt;
                if model.panel.total(j, tt) == 0 {
                    continue;
                }
                let params = from_unconstrained(s.state(j, tt), &model.variant)?;
                s.cells[idx].update(&params, [true; 3]);
                s.cells[idx].combine(&params, &mut probs);
                let kernel = multinomial_kernel(model.panel.deaths(j, tt), &probs);
                if !kernel.is_finite() {
                    return Err(Error::Init(format!(
                        "log-likelihood of {} {} is not finite at the initial state",
                        model.panel.countries()[j],
                        model.panel.first_year() + tt as i32
                    )));
                }
                s.kernels[idx] = kernel;
            }
        }
        Ok(s)
    }

    pub fn state(&self, j: usize, t: usize) -> &[f64] {
        let start = (j * self.n_years + t) * self.dim;
        &self.states[start..start + self.dim]
    }

    fn value(&self, j: usize, t: usize, k: usize) -> f64 {
        self.states[(j * self.n_years + t) * self.dim + k]
    }

    /// State of country `j` one step before year `t` (the initial state
    /// when `t = 0`).
    fn previous(&self, j: usize, t: usize, k: usize) -> f64 {
        if t == 0 {
            self.theta0[j * self.dim + k]
        } else {
            self.value(j, t - 1, k)
        }
    }

    /// Gaussian conditional of one state given its neighbours, drift and
    /// innovation variance: the midpoint of its neighbours with half the
    /// variance, or one drift step past the last year's predecessor.
    fn prior_conditional(&self, j: usize, t: usize, k: usize) -> (f64, f64) {
        let idx = j * self.dim + k;
        let prev = self.previous(j, t, k);
        if t + 1 < self.n_years {
            (0.5 * (prev + self.value(j, t + 1, k)), 0.5 * self.eta2[idx])
        } else {
            (prev + self.beta[idx], self.eta2[idx])
        }
    }

    pub fn dynamics(&self, j: usize) -> CountryDynamics {
        let k = self.dim;
        CountryDynamics {
            beta: self.beta[j * k..(j + 1) * k].to_vec(),
            eta2: self.eta2[j * k..(j + 1) * k].to_vec(),
            theta0: self.theta0[j * k..(j + 1) * k].to_vec(),
            trajectory: (0..self.n_years).map(|t| self.state(j, t).to_vec()).collect(),
        }
    }

    /// Cached log-likelihood including multinomial coefficients.
    pub fn log_likelihood(&self, model: &Model) -> f64 {
        self.kernels.iter().zip(&model.log_coef).map(|(k, c)| k + c).sum()
    }

    fn increments(&self, j: usize, k: usize) -> Vec<f64> {
        (0..self.n_years).map(|t| self.value(j, t, k) - self.previous(j, t, k)).collect()
    }

    /// Log of the Metropolis acceptance ratio for moving the latent
    /// coordinates `coords = [(j, t, k)]` to `proposed`: the change in the
    /// multinomial likelihood of every touched country-year plus the change
    /// in the transition densities into and out of each touched year. The
    /// proposal is symmetric and cancels. Pending cache updates are left in
    /// `work` for [`ChainState::commit`].
    pub fn log_ratio(
        &self,
        model: &Model,
        coords: &[(usize, usize, usize)],
        proposed: &[f64],
        work: &mut Work,
    ) -> f64 {
        work.pending.clear();
        let mut ratio = 0.0;
        for (i, &(j, t, k)) in coords.iter().enumerate() {
            let slot = match work.pending.iter().position(|p| p.j == j && p.t == t) {
                Some(slot) => slot,
                None => {
                    work.pending.push(Pending {
                        j,
                        t,
                        state: self.state(j, t).to_vec(),
                        which: [false; 3],
                        kernel: 0.0,
                    });
                    work.pending.len() - 1
                }
            };
            let pending = &mut work.pending[slot];
            pending.state[k] = proposed[i];
            if let Some(c) = model.coords[k].component() {
                pending.which[c] = true;
            }

            let (old, new) = (self.value(j, t, k), proposed[i]);
            let idx = j * self.dim + k;
            let (beta, eta2) = (self.beta[idx], self.eta2[idx]);
            let prev = self.previous(j, t, k);
            ratio += model.law.log_density(new, prev + beta, eta2) - model.law.log_density(old, prev + beta, eta2);
            if t + 1 < self.n_years {
                let next = self.value(j, t + 1, k);
                ratio += model.law.log_density(next, new + beta, eta2)
                    - model.law.log_density(next, old + beta, eta2);
            }
        }
        for slot in 0..work.pending.len() {
            let (j, t) = (work.pending[slot].j, work.pending[slot].t);
            let idx = j * self.n_years + t;
            if model.panel.total(j, t) == 0 {
                continue;
            }
            let kernel = match from_unconstrained(&work.pending[slot].state, &model.variant) {
                Ok(params) => {
                    let cells = &mut work.cells[slot];
                    cells.clone_from(&self.cells[idx]);
                    cells.update(&params, work.pending[slot].which);
                    cells.combine(&params, &mut work.probs);
                    finite_or_neg_inf(multinomial_kernel(model.panel.deaths(j, t), &work.probs))
                }
                Err(_) => f64::NEG_INFINITY,
            };
            work.pending[slot].kernel = kernel;
            ratio += kernel - self.kernels[idx];
        }
        finite_or_neg_inf(ratio)
    }

    /// Applies the move last evaluated by [`ChainState::log_ratio`].
    pub fn commit(&mut self, model: &Model, work: &mut Work) {
        for (slot, p) in work.pending.iter().enumerate() {
            let idx = p.j * self.n_years + p.t;
            let start = idx * self.dim;
            self.states[start..start + self.dim].copy_from_slice(&p.state);
            if model.panel.total(p.j, p.t) > 0 {
                std::mem::swap(&mut self.cells[idx], &mut work.cells[slot]);
                self.kernels[idx] = p.kernel;
            }
        }
        work.pending.clear();
    }
}

#[derive(Debug, Clone)]
struct Pending {
    j: usize,
    t: usize,
    state: Vec<f64>,
    which: [bool; 3],
    kernel: f64,
}

/// Scratch space reused across proposals.
#[derive(Debug, Clone)]
pub struct Work {
    pending: Vec<Pending>,
    cells: Vec<ComponentCells>,
    probs: Vec<f64>,
}

impl Work {
    pub fn new(model: &Model) -> Self {
        let n_cells = model.panel.grid().n_cells();
        let slots = model.panel.n_countries().max(1);
        Work {
            pending: Vec::with_capacity(slots),
            cells: vec![ComponentCells::new(n_cells); slots],
            probs: vec![0.0; n_cells],
        }
    }
}

/// `log q(proposed) − log q(current)` for one Metropolis block, where `q` is
/// the full conditional of the block's latent coordinates.
pub fn metropolis_log_ratio(
    model: &Model,
    state: &ChainState,
    coords: &[(usize, usize, usize)],
    proposed: &[f64],
) -> f64 {
    state.log_ratio(model, coords, proposed, &mut Work::new(model))
}

/// The coordinate groups updated jointly under a blocking scheme.
pub fn blocks(n_countries: usize, n_years: usize, dim: usize, blocking: Blocking) -> Vec<Vec<(usize, usize, usize)>> {
    match blocking {
        Blocking::PerTkAcrossCountries => (0..n_years)
            .flat_map(|t| (0..dim).map(move |k| (0..n_countries).map(|j| (j, t, k)).collect()))
            .collect(),
        Blocking::PerJt => (0..n_countries)
            .flat_map(|j| (0..n_years).map(move |t| (0..dim).map(|k| (j, t, k)).collect()))
            .collect(),
        Blocking::Scalar => (0..n_countries)
            .flat_map(|j| (0..n_years).flat_map(move |t| (0..dim).map(move |k| vec![(j, t, k)])))
            .collect(),
    }
}

struct Block {
    coords: Vec<(usize, usize, usize)>,
    proposal: AdaptiveProposal,
    accepted: u64,
    proposed: u64,
}

fn block_name(model: &Model, coords: &[(usize, usize, usize)], blocking: Blocking) -> String {
    let (j, t, k) = coords[0];
    let country = &model.panel.countries()[j];
    let year = model.panel.first_year() + t as i32;
    let coord = model.coords[k].name();
    match blocking {
        Blocking::PerTkAcrossCountries => format!("theta[{year},{coord}]"),
        Blocking::PerJt => format!("theta[{country},{year}]"),
        Blocking::Scalar => format!("theta[{country},{year},{coord}]"),
    }
}

/// Adaptive scalar random walks used for the drift, log-variance and
/// initial state when the innovation law is not conjugate. `shift` moves
/// `(θ̃₀ + δ, β − δ)`, which leaves the first increment's residual alone
/// and so keeps mixing when η² pins θ̃₀ + β.
struct DynamicsProposals {
    theta0: Vec<AdaptiveProposal>,
    beta: Vec<AdaptiveProposal>,
    log_eta2: Vec<AdaptiveProposal>,
    shift: Vec<AdaptiveProposal>,
    accepted: [Vec<u64>; 5],
    proposed: [Vec<u64>; 5],
}

impl DynamicsProposals {
    fn all_mut(&mut self) -> impl Iterator<Item = &mut AdaptiveProposal> {
        self.theta0.iter_mut().chain(&mut self.beta).chain(&mut self.log_eta2).chain(&mut self.shift)
    }
}

fn metropolis_accept(rng: &mut impl Rng, log_ratio: f64) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() || log_ratio == f64::NEG_INFINITY {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn gibbs_dynamics(model: &Model, s: &mut ChainState, rng: &mut impl Rng) {
    let dim = s.dim;
    for j in 0..s.n_countries {
        for k in 0..dim {
            let idx = j * dim + k;
            let (m, sd) = (model.hyper.m[k], model.hyper.s[k]);
            // (β, θ̃₀) jointly: β with θ̃₀ integrated out, then θ̃₀ given β
            s.beta[idx] = gibbs_update_beta_collapsed(
                s.value(j, 0, k),
                s.value(j, s.n_years - 1, k),
                s.n_years,
                s.eta2[idx],
                m,
                sd,
                model.hyper.m_beta[k],
                model.beta_prior_sd(k),
                rng,
            );
            s.theta0[idx] = gibbs_update_theta0(s.value(j, 0, k), s.beta[idx], s.eta2[idx], m, sd, rng);
            let inc = s.increments(j, k);
            let (a, b) = model.eta2_shape_rate(k);
            let eta2 = gibbs_update_eta2(&inc, s.beta[idx], a, b, rng);
            s.eta2[idx] = if model.flat { eta2.max(ETA2_FLOOR) } else { eta2 };
        }
    }
}

/// Log target of `(θ̃₀, β, log η²)` for one (country, coordinate), up to a
/// constant, on the scale the random walks move on.
fn dynamics_log_target(model: &Model, s: &ChainState, j: usize, k: usize, theta0: f64, beta: f64, log_eta2: f64) -> f64 {
    let eta2 = log_eta2.exp();
    let mut lp = normal_log_pdf(theta0, model.hyper.m[k], model.hyper.s[k] * model.hyper.s[k]);
    let mut prev = theta0;
    for t in 0..s.n_years {
        let v = s.value(j, t, k);
        lp += model.law.log_density(v, prev + beta, eta2);
        prev = v;
    }
    if !model.flat {
        let sb = model.hyper.s_beta[k];
        lp += normal_log_pdf(beta, model.hyper.m_beta[k], sb * sb);
        lp += inv_gamma_log_pdf(eta2, model.hyper.a[k], model.hyper.b[k]) + log_eta2;
    }
    finite_or_neg_inf(lp)
}

fn metropolis_dynamics(
    model: &Model,
    s: &mut ChainState,
    props: &mut DynamicsProposals,
    rng: &mut impl Rng,
    adapting: bool,
) {
    let dim = s.dim;
    for j in 0..s.n_countries {
        for k in 0..dim {
            let idx = j * dim + k;
            for which in 0..4 {
                let start = [s.theta0[idx], s.beta[idx], s.eta2[idx].ln()];
                let before = dynamics_log_target(model, s, j, k, start[0], start[1], start[2]);
                let proposal = match which {
                    0 => &mut props.theta0[idx],
                    1 => &mut props.beta[idx],
                    2 => &mut props.log_eta2[idx],
                    _ => &mut props.shift[idx],
                };
                // the shift walk is centred at zero each time
                let here = if which == 3 { 0.0 } else { start[which] };
                let mut out = [0.0];
                proposal.propose(&[here], rng, &mut out);
                let mut cur = start;
                if which == 3 {
                    cur[0] += out[0];
                    cur[1] -= out[0];
                } else {
                    cur[which] = out[0];
                }
                if which == 2 && model.flat {
                    cur[2] = cur[2].max(ETA2_FLOOR.ln());
                }
                let after = dynamics_log_target(model, s, j, k, cur[0], cur[1], cur[2]);
                let accepted = metropolis_accept(rng, after - before);
                if !accepted {
                    cur = start;
                }
                s.theta0[idx] = cur[0];
                s.beta[idx] = cur[1];
                s.eta2[idx] = cur[2].exp();
                if adapting {
                    let value = if which == 3 { if accepted { out[0] } else { 0.0 } } else { cur[which] };
                    proposal.record(&[value], accepted);
                } else {
                    props.accepted[which][idx] += u64::from(accepted);
                    props.proposed[which][idx] += 1;
                }
            }
            let accepted = eta2_independence(model, s, j, k, rng);
            if !adapting {
                props.accepted[4][idx] += u64::from(accepted);
                props.proposed[4][idx] += 1;
            }
        }
    }
}

/// Independence move for η² from the Gaussian-innovation conditional with
/// the data half-weighted, so the proposal is wider than the heavy-tailed
/// target. Under the diffuse priors η² can sit anywhere over hundreds of
/// orders of magnitude, which a random walk on log η² cannot cross.
fn eta2_independence(model: &Model, s: &mut ChainState, j: usize, k: usize, rng: &mut impl Rng) -> bool {
    let idx = j * s.dim + k;
    let (a, b) = model.eta2_shape_rate(k);
    let inc = s.increments(j, k);
    let ss: f64 = inc.iter().map(|d| (d - s.beta[idx]) * (d - s.beta[idx])).sum();
    let shape = a + 0.25 * inc.len() as f64;
    let rate = (b + 0.25 * ss).max(f64::MIN_POSITIVE);
    let old = s.eta2[idx];
    let new = inv_gamma_draw(rng, shape, rate);
    if !(new.is_finite() && new > 0.0) || (model.flat && new < ETA2_FLOOR) {
        return false;
    }
    // the random-walk target lives on log η²; back to the η² scale
    let target = |e: f64| dynamics_log_target(model, s, j, k, s.theta0[idx], s.beta[idx], e.ln()) - e.ln();
    let log_ratio = target(new) - target(old) + inv_gamma_log_pdf(old, shape, rate) - inv_gamma_log_pdf(new, shape, rate);
    let accepted = metropolis_accept(rng, log_ratio);
    if accepted {
        s.eta2[idx] = new;
    }
    accepted
}

/// Seeds chain `chain` from the run seed: ChaCha20 keyed by the seed, one
/// stream per chain.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// One full Metropolis-within-Gibbs transition: every latent-state block,
/// then the initial states, drifts and innovation variances.
pub struct Kernel {
    blocking: Blocking,
    blocks: Vec<Block>,
    dynamics: Option<DynamicsProposals>,
    work: Work,
    adapt_interval: usize,
    since_adapt: usize,
    prior_proposal_every: usize,
    sweeps: usize,
    prior_accepted: u64,
    prior_proposed: u64,
}

impl Kernel {
    pub fn new(model: &Model, cfg: &SamplerConfig) -> Self {
        let (p, t_len, dim) = (model.panel.n_countries(), model.panel.n_years(), model.dim());
        let blocks = blocks(p, t_len, dim, cfg.blocking)
            .into_iter()
            .map(|coords| Block {
                proposal: AdaptiveProposal::new(
                    coords.len(),
                    cfg.initial_proposal_sd,
                    cfg.epsilon,
                    cfg.target_for(coords.len()),
                ),
                coords,
                accepted: 0,
                proposed: 0,
            })
            .collect();
        let dynamics = (!model.law.is_conjugate()).then(|| {
            let make =
                || vec![AdaptiveProposal::new(1, cfg.initial_proposal_sd, cfg.epsilon, cfg.target_for(1)); p * dim];
            DynamicsProposals {
                theta0: make(),
                beta: make(),
                log_eta2: make(),
                shift: make(),
                accepted: std::array::from_fn(|_| vec![0; p * dim]),
                proposed: std::array::from_fn(|_| vec![0; p * dim]),
            }
        });
        Kernel {
            blocking: cfg.blocking,
            blocks,
            dynamics,
            work: Work::new(model),
            adapt_interval: cfg.adapt_interval,
            since_adapt: 0,
            prior_proposal_every: cfg.prior_proposal_every,
            sweeps: 0,
            prior_accepted: 0,
            prior_proposed: 0,
        }
    }

    /// Advances the chain by one iteration. While `adapting`, moves are
    /// logged and every proposal adapts once per `adapt_interval` sweeps;
    /// otherwise acceptances are counted and the proposals stay fixed.
    pub fn sweep(&mut self, model: &Model, state: &mut ChainState, rng: &mut impl Rng, adapting: bool) {
        let mut current = Vec::new();
        let mut proposed = Vec::new();
        for b in &mut self.blocks {
            current.clear();
            current.extend(b.coords.iter().map(|&(j, t, k)| state.value(j, t, k)));
            proposed.resize(current.len(), 0.0);
            b.proposal.propose(&current, rng, &mut proposed);
            let ratio = state.log_ratio(model, &b.coords, &proposed, &mut self.work);
            let accepted = metropolis_accept(rng, ratio);
            if accepted {
                state.commit(model, &mut self.work);
            }
            if adapting {
                b.proposal.record(if accepted { &proposed } else { &current }, accepted);
            } else {
                b.accepted += u64::from(accepted);
                b.proposed += 1;
            }
        }
        self.sweeps += 1;
        if self.prior_proposal_every > 0 && self.sweeps.is_multiple_of(self.prior_proposal_every) {
            for b in &self.blocks {
                let mut log_q = 0.0;
                proposed.clear();
                for &(j, t, k) in &b.coords {
                    let (mean, var) = state.prior_conditional(j, t, k);
                    let z: f64 = StandardNormal.sample(rng);
                    let x = mean + var.sqrt() * z;
                    log_q += normal_log_pdf(state.value(j, t, k), mean, var) - normal_log_pdf(x, mean, var);
                    proposed.push(x);
                }
                if !proposed.iter().all(|x| x.is_finite()) || !log_q.is_finite() {
                    continue;
                }
                let ratio = state.log_ratio(model, &b.coords, &proposed, &mut self.work) + log_q;
                let accepted = metropolis_accept(rng, ratio);
                if accepted {
                    state.commit(model, &mut self.work);
                }
                self.prior_accepted += u64::from(accepted);
                self.prior_proposed += 1;
            }
        }
        match self.dynamics.as_mut() {
            None => gibbs_dynamics(model, state, rng),
            Some(props) => metropolis_dynamics(model, state, props, rng, adapting),
        }
        if adapting {
            self.since_adapt += 1;
            if self.since_adapt == self.adapt_interval {
                self.since_adapt = 0;
                for b in &mut self.blocks {
                    b.proposal.adapt();
                }
                if let Some(props) = self.dynamics.as_mut() {
                    props.all_mut().for_each(|p| p.adapt());
                }
            }
        }
    }

    /// Ends adaptation, discarding anything logged since the last update.
    pub fn freeze(&mut self) {
        self.since_adapt = 0;
        for b in &mut self.blocks {
            b.proposal.freeze();
        }
        if let Some(props) = self.dynamics.as_mut() {
            props.all_mut().for_each(|p| p.freeze());
        }
    }

    pub fn block_proposals(&self) -> Vec<AdaptiveProposal> {
        self.blocks.iter().map(|b| b.proposal.clone()).collect()
    }

    pub fn acceptance(&self, model: &Model) -> Vec<BlockAcceptance> {
        let mut out: Vec<BlockAcceptance> = self
            .blocks
            .iter()
            .map(|b| BlockAcceptance {
                block: block_name(model, &b.coords, self.blocking),
                accepted: b.accepted,
                proposed: b.proposed,
            })
            .collect();
        if let Some(props) = &self.dynamics {
            let dim = model.dim();
            for (which, label) in ["theta0", "beta", "log_eta2", "theta0_beta_shift", "eta2_independence"].iter().enumerate() {
                for (j, country) in model.panel.countries().iter().enumerate() {
                    for k in 0..dim {
                        out.push(BlockAcceptance {
                            block: format!("{label}[{country},{}]", model.coords[k].name()),
                            accepted: props.accepted[which][j * dim + k],
                            proposed: props.proposed[which][j * dim + k],
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs one chain to completion.
pub fn run_chain(panel: &DeathPanel, hyper: &Hyperparams, cfg: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    cfg.validate()?;
    let model = Model::from_config(panel, hyper, cfg)?;
    let mut rng = chain_rng(cfg.seed, chain);
    let mut state = init::initialize(&model, cfg, &mut rng)?;
    let layout = DrawLayout::new(panel, &cfg.variant);
    let mut kernel = Kernel::new(&model, cfg);

    let n_stored = cfg.n_stored();
    let mut params = Vec::with_capacity(n_stored * layout.n_params());
    let mut loglik = Vec::with_capacity(n_stored);
    let mut frozen = Vec::new();
    for iter in 0..cfg.n_iter {
        if iter == cfg.burn_in {
            kernel.freeze();
            frozen = kernel.block_proposals();
        }
        let adapting = iter < cfg.burn_in;
        kernel.sweep(&model, &mut state, &mut rng, adapting);
        if !adapting && (iter + 1 - cfg.burn_in).is_multiple_of(cfg.thin) {
            layout.push_row(&state, &mut params);
            loglik.push(state.log_likelihood(&model));
        }
    }
    if kernel.prior_proposed > 0 {
        log::debug!(
            "chain {chain}: prior-conditional proposals accepted {:.3}",
            kernel.prior_accepted as f64 / kernel.prior_proposed as f64
        );
    }
    Ok(ChainDraws {
        chain,
        params,
        loglik,
        acceptance: kernel.acceptance(&model),
        proposals_after_burn_in: frozen,
        proposals_final: kernel.block_proposals(),
    })
}

/// Runs every configured chain, in parallel, and collects their draws.
pub fn run_sampler(panel: &DeathPanel, hyper: &Hyperparams, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let chains = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(panel, hyper, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        layout: DrawLayout::new(panel, &cfg.variant),
        innovation: cfg.innovation,
        chains,
    })
}
