//! Run configuration: a TOML file whose sections feed the commands, with
//! command-line flags taking precedence over file values.

use std::path::PathBuf;

use agedeath::data::SyntheticSpec;
use agedeath::evaluation::{derive_seed, WindowSpec};
use agedeath::forecast::{ForecastConfig, Quantity};
use agedeath::prior::Hyperparams;
use agedeath::sampler::SamplerConfig;
use agedeath::{Error, Result};
use serde::{Deserialize, Serialize};

/// Stream tags for seeds derived from the top-level seed. Chains use the
/// top-level seed itself (one stream per chain); rolling windows use tags
/// `2·w` and `2·w + 1`.
pub const FORECAST_STREAM: u64 = u64::MAX - 1;
pub const SIMULATE_STREAM: u64 = u64::MAX - 2;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed; every random stream of every command derives from it.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub inputs: Inputs,
    pub simulate: SyntheticSpec,
    pub sampler: SamplerConfig,
    /// Defaults to the standard prior for the sampler's model variant.
    pub hyperparams: Option<Hyperparams>,
    pub forecast: ForecastConfig,
    pub functionals: Functionals,
    pub evaluate: Evaluate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountSource {
    /// The panel holds death counts.
    #[default]
    Raw,
    /// The panel holds life-table `dx`, rescaled to observed totals.
    DxScaled,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub panel: Option<PathBuf>,
    pub counts: CountSource,
    /// `country,year,total`; required with `counts = "dx_scaled"`.
    pub totals: Option<PathBuf>,
    /// A draw store written by `fit`.
    pub draws: Option<PathBuf>,
    /// Competitor forecasts for `evaluate`.
    pub competitors: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Functionals {
    pub quantities: Vec<Quantity>,
}

impl Default for Functionals {
    fn default() -> Self {
        Functionals { quantities: vec![Quantity::AgeAtDeath, Quantity::Qx, Quantity::Mx, Quantity::Ex] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Evaluate {
    pub windows: WindowSpec,
    /// Population label (e.g. sex) attached to every score.
    pub group: String,
}

impl Default for Evaluate {
    fn default() -> Self {
        Evaluate { windows: WindowSpec::default(), group: "all".into() }
    }
}

/// Values given on the command line; each one present wins over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl RunConfig {
    /// Applies flag overrides and pushes the top-level seed into every
    /// section, so the resolved config alone reproduces a run.
    pub fn resolve(mut self, flags: &Overrides) -> Result<RunConfig> {
        if flags.seed.is_some() {
            self.seed = flags.seed;
        }
        if flags.out.is_some() {
            self.out = flags.out.clone();
        }
        if flags.threads.is_some() {
            self.threads = flags.threads;
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if let Some(seed) = self.seed {
            self.sampler.seed = seed;
            self.forecast.seed = derive_seed(seed, FORECAST_STREAM);
            self.simulate.seed = derive_seed(seed, SIMULATE_STREAM);
        }
        self.sampler.validate()?;
        self.forecast.validate()?;
        if let Some(h) = &self.hyperparams {
            h.validate(self.sampler.variant.dim())?;
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyperparams.clone().unwrap_or_else(|| Hyperparams::default_for(&self.sampler.variant))
    }
}
