use serde::{Deserialize, Serialize};

use super::{effective_sample_size, AdaptiveProposal, ChainState, Ess};
use crate::data::DeathPanel;
use crate::model::ModelVariant;
use crate::prior::InnovationLaw;
use crate::Result;

/// Column layout of one stored draw: every latent state `θ̃[j,t,k]`, then
/// the initial states, drifts and innovation variances per `(j,k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawLayout {
    pub countries: Vec<String>,
    pub first_year: i32,
    pub n_years: usize,
    pub variant: ModelVariant,
    pub max_age: usize,
}

impl DrawLayout {
    pub fn new(panel: &DeathPanel, variant: &ModelVariant) -> Self {
        DrawLayout {
            countries: panel.countries().to_vec(),
            first_year: panel.first_year(),
            n_years: panel.n_years(),
            variant: *variant,
            max_age: panel.grid().max_age,
        }
    }

    pub fn dim(&self) -> usize {
        self.variant.dim()
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    fn n_states(&self) -> usize {
        self.n_countries() * self.n_years * self.dim()
    }

    pub fn n_params(&self) -> usize {
        self.n_states() + 3 * self.n_countries() * self.dim()
    }

    pub fn theta(&self, j: usize, t: usize, k: usize) -> usize {
        (j * self.n_years + t) * self.dim() + k
    }

    pub fn theta0(&self, j: usize, k: usize) -> usize {
        self.n_states() + j * self.dim() + k
    }

    pub fn beta(&self, j: usize, k: usize) -> usize {
        self.theta0(j, k) + self.n_countries() * self.dim()
    }

    pub fn eta2(&self, j: usize, k: usize) -> usize {
        self.theta0(j, k) + 2 * self.n_countries() * self.dim()
    }

    pub fn column_names(&self) -> Vec<String> {
        let coords: Vec<&str> = self.variant.coordinates().iter().map(|c| c.name()).collect();
        let mut names = Vec::with_capacity(self.n_params());
        for c in &self.countries {
            for t in 0..self.n_years {
                let year = self.first_year + t as i32;
                names.extend(coords.iter().map(|k| format!("theta[{c},{year},{k}]")));
            }
        }
        for label in ["theta0", "beta", "eta2"] {
            for c in &self.countries {
                names.extend(coords.iter().map(|k| format!("{label}[{c},{k}]")));
            }
        }
        names
    }

    pub(crate) fn push_row(&self, s: &ChainState, out: &mut Vec<f64>) {
        out.extend_from_slice(&s.states);
        out.extend_from_slice(&s.theta0);
        out.extend_from_slice(&s.beta);
        out.extend_from_slice(&s.eta2);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub block: String,
    pub accepted: u64,
    pub proposed: u64,
}

impl BlockAcceptance {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Output of one chain. Acceptance counts cover post-burn-in iterations
/// only.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    /// Row-major, one row of [`DrawLayout::n_params`] values per stored draw.
    pub params: Vec<f64>,
    /// Total log-likelihood, multinomial coefficients included, per stored
    /// draw.
    pub loglik: Vec<f64>,
    pub acceptance: Vec<BlockAcceptance>,
    /// Block proposals as frozen at the end of burn-in and at the end of the
    /// run; the two agree whenever adaptation stopped at burn-in.
    pub proposals_after_burn_in: Vec<AdaptiveProposal>,
    pub proposals_final: Vec<AdaptiveProposal>,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.loglik.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.params.len() / self.n_draws().max(1);
        &self.params[i * n..(i + 1) * n]
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        let n = self.params.len() / self.n_draws().max(1);
        self.params.iter().skip(idx).step_by(n.max(1)).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub layout: DrawLayout,
    pub innovation: InnovationLaw,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::n_draws).sum()
    }

    /// Every stored draw, chain by chain.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains.iter().flat_map(|c| (0..c.n_draws()).map(move |i| c.row(i)))
    }

    /// One parameter across all chains.
    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.column(idx)).collect()
    }

    pub fn loglik(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.loglik.iter().copied()).collect()
    }

    /// Effective sample size of one parameter, summed over chains.
    pub fn ess(&self, idx: usize) -> Result<Ess> {
        let mut total = Ess { value: 0.0, degenerate: true };
        for c in &self.chains {
            let e = effective_sample_size(&c.column(idx))?;
            total.value += e.value;
            total.degenerate &= e.degenerate;
        }
        Ok(total)
    }
}
