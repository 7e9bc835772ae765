//! Commands behind the `agedeath` binary. Each one reads a resolved
//! [`RunConfig`], writes its outputs into the run's output directory and
//! finishes with a `<command>.manifest.json` that records the resolved
//! configuration, the artifact version and digests of every file read and
//! written.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use agedeath::data::{
    generate_synthetic, load_draws, load_panel, load_totals, save_draws, scale_to_totals, sha256_hex, DeathPanel,
    InputDigest, MANIFEST_FILE,
};
use agedeath::evaluation::{
    evaluate_rolling, load_external_forecast, relative_report, rolling_windows, score_external, write_external_forecast,
    write_report, write_scores, EvaluationSettings, ScoreRecord,
};
use agedeath::forecast::{forecast_states, functional_bands, state_bands, write_bands, Quantity};
use agedeath::sampler::{run_sampler, PosteriorDraws};
use agedeath::{Error, Result};
use serde::{Deserialize, Serialize};

pub use config::{load_config, parse_config, CountSource, Overrides, RunConfig};

pub const DRAWS_DIR: &str = "draws";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Fit,
    Forecast,
    Functionals,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Forecast => "forecast",
            Command::Functionals => "functionals",
            Command::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: Command,
    pub artifact_version: String,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<InputDigest>,
}

/// Process exit status for an error: 2 configuration, 3 data, 4 numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Version { .. } => 3,
        Error::Numerical(_) | Error::Init(_) | Error::Domain(_) | Error::Contract(_) => 4,
    }
}

/// Output files written so far, digested for the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<InputDigest>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.files.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    fn finish(self, command: Command, config: &RunConfig, inputs: Vec<InputDigest>) -> Result<RunManifest> {
        let manifest = RunManifest {
            command,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs,
            outputs: self.files,
        };
        let path = self.dir.join(format!("{}.manifest.json", command.name()));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(manifest)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source: e }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    path.as_ref().ok_or_else(|| Error::Config(format!("inputs.{what} is not set")))
}

/// Loads the configured panel, rescaling life-table `dx` to observed
/// totals when asked to.
pub fn load_data(config: &RunConfig) -> Result<(DeathPanel, Vec<InputDigest>)> {
    let path = required(&config.inputs.panel, "panel")?;
    let mut digests = vec![InputDigest::of_file(path)?];
    let panel = load_panel(path)?;
    let panel = match config.inputs.counts {
        CountSource::Raw => panel,
        CountSource::DxScaled => {
            let totals_path = config
                .inputs
                .totals
                .as_ref()
                .ok_or_else(|| Error::Config("counts = \"dx_scaled\" needs inputs.totals".into()))?;
            digests.push(InputDigest::of_file(totals_path)?);
            scale_to_totals(&panel, &load_totals(totals_path)?)?
        }
    };
    Ok((panel, digests))
}

fn load_fit(config: &RunConfig) -> Result<(PosteriorDraws, Vec<InputDigest>)> {
    let dir = required(&config.inputs.draws, "draws")?;
    let (draws, _) = load_draws(dir)?;
    Ok((draws, vec![InputDigest::of_file(dir.join(MANIFEST_FILE))?]))
}

fn bands_csv(rows: &[agedeath::forecast::BandRow]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    write_bands(rows, &mut bytes)?;
    Ok(bytes)
}

pub fn simulate(config: &RunConfig) -> Result<RunManifest> {
    let (panel, truth) = generate_synthetic(&config.simulate)?;
    let mut out = Outputs::new(config.out_dir())?;
    let mut bytes = Vec::new();
    panel.write_csv(&mut bytes)?;
    out.write("panel.csv", &bytes)?;
    out.write("truth.json", serde_json::to_string_pretty(&truth)?.as_bytes())?;
    out.finish(Command::Simulate, config, vec![])
}

pub fn fit(config: &RunConfig) -> Result<RunManifest> {
    let (panel, inputs) = load_data(config)?;
    let hyper = config.hyperparams();
    let draws = run_sampler(&panel, &hyper, &config.sampler)?;
    let mut out = Outputs::new(config.out_dir())?;
    let dir = out.dir.join(DRAWS_DIR);
    let manifest = save_draws(&dir, &draws, &config.sampler, &hyper, inputs.clone())?;
    for c in &manifest.chains {
        out.files.push(InputDigest { path: dir.join(&c.file).display().to_string(), sha256: c.sha256.clone() });
        let rates: Vec<f64> = c.acceptance.iter().map(|a| a.rate()).collect();
        let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log::info!("chain {}: {} draws, block acceptance {lo:.3}-{hi:.3}", c.chain, c.rows);
    }
    out.files.push(InputDigest::of_file(dir.join(MANIFEST_FILE))?);
    if let Some(worst) = manifest.ess.iter().filter(|e| !e.degenerate).min_by(|a, b| a.ess.total_cmp(&b.ess)) {
        log::info!("smallest effective sample size {:.1} ({})", worst.ess, worst.name);
    }
    out.finish(Command::Fit, config, inputs)
}

pub fn forecast(config: &RunConfig) -> Result<RunManifest> {
    let (draws, inputs) = load_fit(config)?;
    let f = forecast_states(&draws, &config.forecast)?;
    let mut out = Outputs::new(config.out_dir())?;
    out.write("states.csv", &bands_csv(&state_bands(&draws, Some(&f), &config.forecast)?)?)?;
    let d = functional_bands(&draws, Some(&f), Quantity::AgeAtDeath, &config.forecast)?;
    out.write("age_at_death.csv", &bands_csv(&d)?)?;
    out.finish(Command::Forecast, config, inputs)
}

pub fn functionals(config: &RunConfig) -> Result<RunManifest> {
    if config.functionals.quantities.is_empty() {
        return Err(Error::Config("functionals.quantities is empty".into()));
    }
    let (draws, inputs) = load_fit(config)?;
    let f = forecast_states(&draws, &config.forecast)?;
    let mut out = Outputs::new(config.out_dir())?;
    for &q in &config.functionals.quantities {
        let rows = functional_bands(&draws, Some(&f), q, &config.forecast)?;
        out.write(&format!("{}.csv", q.name()), &bands_csv(&rows)?)?;
    }
    out.finish(Command::Functionals, config, inputs)
}

pub fn evaluate(config: &RunConfig) -> Result<RunManifest> {
    let (panel, mut inputs) = load_data(config)?;
    let hyper = config.hyperparams();
    let settings = EvaluationSettings {
        windows: config.evaluate.windows.clone(),
        sampler: config.sampler.clone(),
        forecast: config.forecast.clone(),
        group: config.evaluate.group.clone(),
    };
    let results = evaluate_rolling(&panel, &hyper, &settings, config.sampler.seed)?;
    let windows = rolling_windows(&settings.windows)?;
    let own: Vec<ScoreRecord> = results.iter().flat_map(|r| r.scores.iter().cloned()).collect();
    let mut all = own.clone();
    for path in &config.inputs.competitors {
        inputs.push(InputDigest::of_file(path)?);
        all.extend(score_external(&load_external_forecast(path)?, &panel, &windows, &settings.group)?);
    }
    let report = relative_report(&own, &all)?;

    let mut out = Outputs::new(config.out_dir())?;
    let mut bytes = Vec::new();
    write_scores(&all, &mut bytes)?;
    out.write("scores.csv", &bytes)?;
    bytes.clear();
    write_report(&report, &mut bytes)?;
    out.write("report.csv", &bytes)?;
    bytes.clear();
    let forecasts = results.iter().flat_map(|r| r.forecasts.clone()).collect();
    write_external_forecast(&forecasts, &mut bytes)?;
    out.write("forecasts.csv", &bytes)?;
    let mut logml = String::from("window,fit_start,fit_end,log_marginal,jackknife_se\n");
    for r in &results {
        let se = r.log_marginal.jackknife_se.map_or_else(|| "NA".to_string(), |s| s.to_string());
        logml.push_str(&format!(
            "{},{},{},{},{se}\n",
            r.window.index, r.window.fit_start, r.window.fit_end, r.log_marginal.estimate
        ));
    }
    out.write("log_marginal.csv", logml.as_bytes())?;
    out.finish(Command::Evaluate, config, inputs)
}

pub fn run(command: Command, config: &RunConfig) -> Result<RunManifest> {
    match command {
        Command::Simulate => simulate(config),
        Command::Fit => fit(config),
        Command::Forecast => forecast(config),
        Command::Functionals => functionals(config),
        Command::Evaluate => evaluate(config),
    }
}
