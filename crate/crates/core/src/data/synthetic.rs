use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::DeathPanel;
use crate::model::{discretize_into, from_unconstrained, AgeGrid, ModelVariant};
use crate::prior::InnovationLaw;
use crate::{Error, Result};

/// Known dynamics from which a synthetic panel is simulated. Every country
/// shares the same initial state, drift and innovation variance but gets
/// its own innovations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub variant: ModelVariant,
    pub innovation: InnovationLaw,
    pub theta0: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta2: Vec<f64>,
    pub countries: Vec<String>,
    pub first_year: i32,
    pub n_years: usize,
    /// Deaths per country-year.
    pub deaths_per_year: u64,
    pub max_age: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::example(2, 20, 100_000, 0)
    }
}

impl SyntheticSpec {
    /// A plausible low-mortality population: about 80% of deaths old-age
    /// centred in the mid eighties, a small adult hump, drifting slowly.
    pub fn example(countries: usize, n_years: usize, deaths_per_year: u64, seed: u64) -> Self {
        SyntheticSpec {
            variant: ModelVariant::default(),
            innovation: InnovationLaw::Gaussian,
            // logit π₁, log(π₂/π₀), μ, log σ, ξ, log ω, α
            theta0: vec![-1.7, 3.3, 55.0, 2.5, 88.0, 2.45, -3.0],
            beta: vec![-0.01, 0.02, 0.1, 0.0, 0.15, -0.002, 0.0],
            eta2: vec![1e-3, 1e-3, 0.04, 1e-4, 0.01, 1e-4, 0.01],
            countries: (1..=countries).map(|i| format!("C{i}")).collect(),
            first_year: 2000,
            n_years,
            deaths_per_year,
            max_age: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.variant.dim();
        for (name, v) in [("theta0", &self.theta0), ("beta", &self.beta), ("eta2", &self.eta2)] {
            if v.len() != dim {
                return Err(Error::Config(format!(
                    "synthetic {name} has {} entries, the model has {dim} coordinates",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("synthetic {name} must be finite")));
            }
        }
        if self.eta2.iter().any(|&e| e < 0.0) {
            return Err(Error::Config("synthetic eta2 must be nonnegative".into()));
        }
        if self.deaths_per_year == 0 {
            return Err(Error::Config("synthetic deaths_per_year must be at least 1".into()));
        }
        if self.n_years == 0 || self.countries.is_empty() {
            return Err(Error::Config("synthetic n_years and countries must be nonempty".into()));
        }
        self.innovation.validate()
    }
}

/// The latent trajectories behind a synthetic panel:
/// `states[j][t]` is the state of country `j` in year `t` (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub coordinates: Vec<String>,
    pub states: Vec<Vec<Vec<f64>>>,
}

/// Simulates the random walk with drift, maps every state to its age
/// distribution and draws multinomial death counts by sequential binomials.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DeathPanel, SyntheticTruth)> {
    spec.validate()?;
    let grid = spec.max_age.map(AgeGrid::new).transpose()?.unwrap_or_default();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let dim = spec.variant.dim();
    let mut probs = vec![0.0; grid.n_cells()];
    let mut tables = Vec::with_capacity(spec.countries.len());
    let mut states = Vec::with_capacity(spec.countries.len());
    for _ in &spec.countries {
        let mut state = spec.theta0.clone();
        let mut table = Vec::with_capacity(spec.n_years);
        let mut path = Vec::with_capacity(spec.n_years);
        for _ in 0..spec.n_years {
            for k in 0..dim {
                state[k] += spec.beta[k] + spec.eta2[k].sqrt() * spec.innovation.sample(&mut rng);
            }
            let params = from_unconstrained(&state, &spec.variant)?;
            discretize_into(&params, &mut probs);
            table.push(multinomial(&mut rng, spec.deaths_per_year, &probs)?);
            path.push(state.clone());
        }
        tables.push(table);
        states.push(path);
    }
    let panel = DeathPanel::new(spec.countries.clone(), spec.first_year, grid, &tables)?;
    let coordinates = spec.variant.coordinates().iter().map(|c| c.name().to_string()).collect();
    Ok((panel, SyntheticTruth { coordinates, states }))
}

fn multinomial(rng: &mut impl rand::Rng, n: u64, probs: &[f64]) -> Result<Vec<u64>> {
    let mut out = vec![0; probs.len()];
    let mut left = n;
    let mut mass_left = 1.0;
    for (cell, &p) in out.iter_mut().zip(probs) {
        if left == 0 {
            break;
        }
        if mass_left <= 0.0 {
            break;
        }
        let q = (p / mass_left).clamp(0.0, 1.0);
        let d = Binomial::new(left, q)
            .map_err(|e| Error::Numerical(format!("binomial draw failed: {e}")))?
            .sample(rng);
        *cell = d;
        left -= d;
        mass_left -= p;
    }
    // rounding can strand a few deaths past the last positive cell
    if left > 0 {
        let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1);
        out[last] += left;
    }
    Ok(out)
}
