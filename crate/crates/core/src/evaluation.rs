//! Rolling-window backtests: fit on a block of years, forecast the next
//! block, score point predictions of the age-at-death distribution, and
//! compare against competitor forecasts supplied as data.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DeathPanel;
use crate::forecast::{forecast_states, mean_distributions, quantile_sorted, ForecastConfig};
use crate::prior::Hyperparams;
use crate::sampler::{run_sampler, SamplerConfig};
use crate::{Error, Result};

/// Method label of this model's own predictions in score tables.
pub const SELF_METHOD: &str = "self";

/// Simplex tolerance for ingested forecasts; within it values are
/// renormalized, beyond it the file is rejected.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub fit_length: usize,
    pub horizon: usize,
    pub step: usize,
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { fit_length: 20, horizon: 10, step: 1, first_year: 1960, last_year: 2016 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fit_length == 0 || self.horizon == 0 || self.step == 0 {
            return Err(Error::Config("fit_length, horizon and step must be positive".into()));
        }
        let span = self.last_year as i64 - self.first_year as i64 + 1;
        if span < (self.fit_length + self.horizon) as i64 {
            return Err(Error::Config(format!(
                "years {}-{} cannot hold a {}-year fit block and a {}-year horizon",
                self.first_year, self.last_year, self.fit_length, self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub fit_start: i32,
    pub fit_end: i32,
    pub test_start: i32,
    pub test_end: i32,
}

pub fn rolling_windows(spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    let (fit, horizon) = (spec.fit_length as i32, spec.horizon as i32);
    let windows: Vec<Window> = (spec.first_year..)
        .step_by(spec.step)
        .take_while(|&start| start + fit + horizon - 1 <= spec.last_year)
        .enumerate()
        .map(|(index, start)| Window {
            index,
            fit_start: start,
            fit_end: start + fit - 1,
            test_start: start + fit,
            test_end: start + fit + horizon - 1,
        })
        .collect();
    if windows.is_empty() {
        return Err(Error::Config("window specification yields no windows".into()));
    }
    Ok(windows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Mse,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Mse => "mse",
        }
    }
}

/// Mean absolute or squared error over every (year, age) cell.
pub fn score(predicted: &[Vec<f64>], observed: &[Vec<f64>], metric: Metric) -> Result<f64> {
    if predicted.len() != observed.len() || predicted.iter().zip(observed).any(|(p, o)| p.len() != o.len()) {
        return Err(Error::Contract("predicted and observed distributions differ in shape".into()));
    }
    let cells: usize = predicted.iter().map(Vec::len).sum();
    if cells == 0 {
        return Err(Error::Contract("nothing to score".into()));
    }
    let total: f64 = predicted
        .iter()
        .zip(observed)
        .flat_map(|(p, o)| p.iter().zip(o))
        .map(|(p, o)| match metric {
            Metric::Mae => (p - o).abs(),
            Metric::Mse => (p - o).powi(2),
        })
        .sum();
    Ok(total / cells as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sample {
    InSample,
    OutOfSample,
}

impl Sample {
    pub fn name(self) -> &'static str {
        match self {
            Sample::InSample => "in_sample",
            Sample::OutOfSample => "out_of_sample",
        }
    }
}

/// One row of the long score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub method: String,
    pub group: String,
    pub country: String,
    pub window: usize,
    pub sample: Sample,
    pub mae: f64,
    pub mse: f64,
}

impl ScoreRecord {
    fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mae => self.mae,
            Metric::Mse => self.mse,
        }
    }
}

/// Median and quartiles, over countries and windows, of competitor error
/// divided by this model's error; values above 1 favour this model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRow {
    pub method: String,
    pub group: String,
    pub sample: Sample,
    pub metric: Metric,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

fn ratio(competitor: f64, own: f64) -> f64 {
    if competitor == own {
        1.0
    } else {
        competitor / own
    }
}

pub fn relative_report(own: &[ScoreRecord], competitors: &[ScoreRecord]) -> Result<Vec<RelativeRow>> {
    type Key<'a> = (&'a str, &'a str, usize, Sample);
    let base: BTreeMap<Key, &ScoreRecord> =
        own.iter().map(|r| ((r.group.as_str(), r.country.as_str(), r.window, r.sample), r)).collect();
    let mut missing = BTreeSet::new();
    let mut ratios: BTreeMap<(&str, &str, Sample, Metric), Vec<f64>> = BTreeMap::new();
    for r in competitors {
        let Some(b) = base.get(&(r.group.as_str(), r.country.as_str(), r.window, r.sample)) else {
            missing.insert(format!(
                "{} {} window {} {}",
                r.group,
                r.country,
                r.window,
                r.sample.name()
            ));
            continue;
        };
        for metric in [Metric::Mae, Metric::Mse] {
            ratios
                .entry((r.method.as_str(), r.group.as_str(), r.sample, metric))
                .or_default()
                .push(ratio(r.value(metric), b.value(metric)));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "competitor scores without a matching own score: {}",
            missing.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(ratios
        .into_iter()
        .map(|((method, group, sample, metric), mut v)| {
            v.sort_by(f64::total_cmp);
            RelativeRow {
                method: method.to_string(),
                group: group.to_string(),
                sample,
                metric,
                median: quantile_sorted(&v, 0.5),
                q1: quantile_sorted(&v, 0.25),
                q3: quantile_sorted(&v, 0.75),
                n: v.len(),
            }
        })
        .collect())
}

pub fn write_scores<W: Write>(records: &[ScoreRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "group", "country", "window", "sample", "mae", "mse"])?;
    for r in records {
        w.write_record([
            r.method.as_str(),
            &r.group,
            &r.country,
            &r.window.to_string(),
            r.sample.name(),
            &r.mae.to_string(),
            &r.mse.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<score writer>", e))?;
    Ok(())
}

/// Writes the relative table as `median [q1, q3]` cells, one row per
/// method, group and sample, a column per metric.
pub fn write_report<W: Write>(rows: &[RelativeRow], writer: W) -> Result<()> {
    let mut table: BTreeMap<(&str, &str, Sample), BTreeMap<Metric, &RelativeRow>> = BTreeMap::new();
    for r in rows {
        table.entry((&r.method, &r.group, r.sample)).or_default().insert(r.metric, r);
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "group", "sample", "mae", "mse", "n"])?;
    let cell = |r: Option<&&RelativeRow>| {
        r.map_or_else(|| "NA".to_string(), |r| format!("{:.2} [{:.2}, {:.2}]", r.median, r.q1, r.q3))
    };
    for ((method, group, sample), metrics) in &table {
        let n = metrics.values().next().map_or(0, |r| r.n);
        w.write_record([
            *method,
            *group,
            sample.name(),
            &cell(metrics.get(&Metric::Mae)),
            &cell(metrics.get(&Metric::Mse)),
            &n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<report writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMarginal {
    pub estimate: f64,
    /// Jackknife over draws; absent with a single draw.
    pub jackknife_se: Option<f64>,
}

/// Harmonic-mean estimate of the log marginal likelihood from per-draw
/// total log-likelihoods, `−log(B⁻¹ Σ exp(−ℓ_b))`, in log space.
pub fn harmonic_mean_logml(loglik: &[f64]) -> Result<LogMarginal> {
    if loglik.is_empty() {
        return Err(Error::Contract("harmonic mean needs at least one draw".into()));
    }
    if let Some(i) = loglik.iter().position(|l| !l.is_finite()) {
        return Err(Error::Numerical(format!(
            "draw {i} has log-likelihood {}; the harmonic-mean estimator is undefined",
            loglik[i]
        )));
    }
    let estimate = harmonic(loglik);
    let b = loglik.len();
    if b < 2 {
        return Ok(LogMarginal { estimate, jackknife_se: None });
    }
    // leave-one-out sums from prefix and suffix sums of exp(−ℓ − m); all
    // terms are positive, so nothing cancels
    let m = loglik.iter().map(|l| -l).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = loglik.iter().map(|l| (-l - m).exp()).collect();
    let mut prefix = vec![0.0; b + 1];
    for i in 0..b {
        prefix[i + 1] = prefix[i] + w[i];
    }
    let mut suffix = vec![0.0; b + 1];
    for i in (0..b).rev() {
        suffix[i] = suffix[i + 1] + w[i];
    }
    let n = (b - 1) as f64;
    // leave-one-out estimates, offset by m so large log-likelihoods do not
    // swamp their spread
    let loo: Vec<f64> = (0..b)
        .map(|i| {
            let rest = prefix[i] + suffix[i + 1];
            if rest > 0.0 {
                -(rest / n).ln()
            } else {
                // every other term underflowed: recompute without draw i
                let others: Vec<f64> = loglik.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, l)| *l).collect();
                harmonic(&others) + m
            }
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / b as f64;
    let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * n / b as f64;
    Ok(LogMarginal { estimate, jackknife_se: Some(var.sqrt()) })
}

fn harmonic(loglik: &[f64]) -> f64 {
    let m = loglik.iter().map(|l| -l).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = loglik.iter().map(|l| (-l - m).exp()).sum();
    -m - (s / loglik.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ForecastKey {
    pub method: String,
    /// Rolling window the forecast belongs to; `None` applies to any window.
    pub window: Option<usize>,
    pub country: String,
    pub year: i32,
}

/// Point forecasts of age-at-death distributions produced elsewhere.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalForecasts {
    pub max_age: usize,
    pub entries: BTreeMap<ForecastKey, Vec<f64>>,
    /// Distributions that were renormalized on ingest.
    pub renormalized: Vec<ForecastKey>,
}

impl ExternalForecasts {
    pub fn methods(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|k| k.method.as_str()).collect()
    }

    /// The window-specific forecast if present, else the window-free one.
    pub fn get(&self, method: &str, window: usize, country: &str, year: i32) -> Option<&[f64]> {
        let mut key = ForecastKey { method: method.into(), window: Some(window), country: country.into(), year };
        if let Some(v) = self.entries.get(&key) {
            return Some(v);
        }
        key.window = None;
        self.entries.get(&key).map(Vec::as_slice)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalRecord {
    method: String,
    country: String,
    year: i32,
    age: String,
    value: f64,
    #[serde(default)]
    window: Option<usize>,
}

const OLDEST_AGE: usize = 150;

/// Parses `method,country,year,age,value[,window]` rows. Every
/// (method, window, country) must cover contiguous years and every year
/// the full age range; distributions off the simplex by at most
/// [`SIMPLEX_TOLERANCE`] are renormalized with a warning.
pub fn parse_external_forecast<R: Read>(reader: R) -> Result<ExternalForecasts> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let base = ["method", "country", "year", "age", "value"];
    if header != base && header != ["method", "country", "year", "age", "value", "window"] {
        return Err(Error::Data(format!(
            "expected header method,country,year,age,value[,window], found {}",
            header.join(",")
        )));
    }
    let mut cells: BTreeMap<ForecastKey, BTreeMap<usize, f64>> = BTreeMap::new();
    for (line, rec) in rdr.deserialize::<ExternalRecord>().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let age: usize = rec
            .age
            .trim_end_matches('+')
            .parse()
            .ok()
            .filter(|&a| a <= OLDEST_AGE)
            .ok_or_else(|| Error::Data(format!("line {row}: unreadable age {:?}", rec.age)))?;
        if !rec.value.is_finite() || rec.value < 0.0 {
            return Err(Error::Data(format!("line {row}: value {} is not a nonnegative number", rec.value)));
        }
        let key = ForecastKey { method: rec.method, window: rec.window, country: rec.country, year: rec.year };
        if cells.entry(key).or_default().insert(age, rec.value).is_some() {
            return Err(Error::Data(format!("line {row}: duplicate age {age}")));
        }
    }
    if cells.is_empty() {
        return Err(Error::Data("forecast file has no rows".into()));
    }
    let max_age = cells.values().filter_map(|a| a.keys().next_back().copied()).max().unwrap_or(0);

    let mut gaps = Vec::new();
    let mut series: BTreeMap<(&str, Option<usize>, &str), Vec<i32>> = BTreeMap::new();
    for k in cells.keys() {
        series.entry((&k.method, k.window, &k.country)).or_default().push(k.year);
    }
    for ((method, window, country), years) in &series {
        for w in years.windows(2).filter(|w| w[1] != w[0] + 1) {
            let label = window.map_or(String::new(), |w| format!(" window {w}"));
            gaps.push(format!("{method}{label} {country} years {}-{}", w[0] + 1, w[1] - 1));
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Data(format!("forecast file has missing years: {}", gaps.join(", "))));
    }

    let mut out = ExternalForecasts { max_age, ..Default::default() };
    for (key, ages) in cells {
        let missing: Vec<String> = (0..=max_age).filter(|x| !ages.contains_key(x)).map(|x| x.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "{} {} {}: missing ages {}",
                key.method,
                key.country,
                key.year,
                missing.join(" ")
            )));
        }
        let mut d: Vec<f64> = ages.into_values().collect();
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Data(format!(
                "{} {} {}: values sum to {total}, not 1 within {SIMPLEX_TOLERANCE}",
                key.method, key.country, key.year
            )));
        }
        // leave float-rounding noise alone so re-ingested exports are exact
        if (total - 1.0).abs() > 1e-12 {
            log::warn!("{} {} {}: values sum to {total}; renormalized", key.method, key.country, key.year);
            d.iter_mut().for_each(|v| *v /= total);
            out.renormalized.push(key.clone());
        }
        out.entries.insert(key, d);
    }
    Ok(out)
}

pub fn load_external_forecast(path: impl AsRef<std::path::Path>) -> Result<ExternalForecasts> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_external_forecast(std::io::BufReader::new(file))
}

/// Writes forecasts in the ingest format (with a `window` column when any
/// entry has one); values round-trip exactly.
pub fn write_external_forecast<W: Write>(entries: &BTreeMap<ForecastKey, Vec<f64>>, writer: W) -> Result<()> {
    let windowed = entries.keys().any(|k| k.window.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["method", "country", "year", "age", "value"];
    if windowed {
        header.push("window");
    }
    w.write_record(&header)?;
    for (k, d) in entries {
        for (x, v) in d.iter().enumerate() {
            let mut rec = vec![k.method.clone(), k.country.clone(), k.year.to_string(), x.to_string(), v.to_string()];
            if windowed {
                rec.push(k.window.map_or_else(String::new, |w| w.to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<forecast writer>", e))?;
    Ok(())
}

/// A seed for an independent stream `tag` derived from a top-level seed.
/// Windows use tag `2·w` for sampling and `2·w + 1` for forecasting.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(tag.wrapping_add(1 << 32));
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub windows: WindowSpec,
    pub sampler: SamplerConfig,
    pub forecast: ForecastConfig,
    /// Label for the population (e.g. sex) this panel describes.
    pub group: String,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            windows: WindowSpec::default(),
            sampler: SamplerConfig::default(),
            forecast: ForecastConfig::default(),
            group: "all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub window: Window,
    pub scores: Vec<ScoreRecord>,
    /// Posterior-mean forecasts for the test years, as [`SELF_METHOD`].
    pub forecasts: BTreeMap<ForecastKey, Vec<f64>>,
    pub log_marginal: LogMarginal,
}

fn observed(panel: &DeathPanel, j: usize, from: i32, to: i32) -> Result<Vec<Vec<f64>>> {
    (from..=to)
        .map(|y| {
            let t = (y - panel.first_year()) as usize;
            panel.frequencies(j, t).ok_or_else(|| {
                Error::Data(format!("{} {y} has no deaths to score against", panel.countries()[j]))
            })
        })
        .collect()
}

/// Fits, forecasts and scores every window in parallel. Each window gets
/// its own seeds derived from `seed`, so results do not depend on
/// scheduling.
pub fn evaluate_rolling(
    panel: &DeathPanel,
    hyper: &Hyperparams,
    settings: &EvaluationSettings,
    seed: u64,
) -> Result<Vec<WindowResult>> {
    let windows = rolling_windows(&settings.windows)?;
    if panel.first_year() > settings.windows.first_year || panel.last_year() < settings.windows.last_year {
        return Err(Error::Data(format!(
            "panel covers {}-{} but the windows need {}-{}",
            panel.first_year(),
            panel.last_year(),
            settings.windows.first_year,
            settings.windows.last_year
        )));
    }
    windows
        .par_iter()
        .map(|w| {
            let fit = panel.years_between(w.fit_start, w.fit_end)?;
            let sampler = SamplerConfig { seed: derive_seed(seed, 2 * w.index as u64), ..settings.sampler.clone() };
            let draws = run_sampler(&fit, hyper, &sampler)?;
            let fcfg = ForecastConfig {
                horizon: settings.windows.horizon,
                seed: derive_seed(seed, 2 * w.index as u64 + 1),
                ..settings.forecast.clone()
            };
            let forecast = forecast_states(&draws, &fcfg)?;
            let means = mean_distributions(&draws, Some(&forecast), &fcfg)?;
            let mut scores = Vec::new();
            let mut forecasts = BTreeMap::new();
            for (j, country) in panel.countries().iter().enumerate() {
                let mine: Vec<&(String, i32, Vec<f64>)> = means.iter().filter(|m| &m.0 == country).collect();
                for (sample, from, to) in
                    [(Sample::InSample, w.fit_start, w.fit_end), (Sample::OutOfSample, w.test_start, w.test_end)]
                {
                    let pred: Vec<Vec<f64>> =
                        mine.iter().filter(|m| (from..=to).contains(&m.1)).map(|m| m.2.clone()).collect();
                    let obs = observed(panel, j, from, to)?;
                    scores.push(ScoreRecord {
                        method: SELF_METHOD.into(),
                        group: settings.group.clone(),
                        country: country.clone(),
                        window: w.index,
                        sample,
                        mae: score(&pred, &obs, Metric::Mae)?,
                        mse: score(&pred, &obs, Metric::Mse)?,
                    });
                }
                for m in mine.iter().filter(|m| m.1 >= w.test_start) {
                    let key = ForecastKey {
                        method: SELF_METHOD.into(),
                        window: Some(w.index),
                        country: country.clone(),
                        year: m.1,
                    };
                    forecasts.insert(key, m.2.clone());
                }
            }
            Ok(WindowResult { window: *w, scores, forecasts, log_marginal: harmonic_mean_logml(&draws.loglik())? })
        })
        .collect()
}

/// Out-of-sample scores of every external method on the given windows.
/// A forecast missing for any scored country and test year is an error
/// listing all gaps.
pub fn score_external(
    external: &ExternalForecasts,
    panel: &DeathPanel,
    windows: &[Window],
    group: &str,
) -> Result<Vec<ScoreRecord>> {
    if external.max_age != panel.grid().max_age {
        return Err(Error::Data(format!(
            "external forecasts end at age {}, the panel at {}",
            external.max_age,
            panel.grid().max_age
        )));
    }
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for method in external.methods() {
        for w in windows {
            for (j, country) in panel.countries().iter().enumerate() {
                let mut pred = Vec::new();
                for y in w.test_start..=w.test_end {
                    match external.get(method, w.index, country, y) {
                        Some(d) => pred.push(d.to_vec()),
                        None => missing.push(format!("{method} window {} {country} {y}", w.index)),
                    }
                }
                if pred.len() as i32 != w.test_end - w.test_start + 1 {
                    continue;
                }
                let obs = observed(panel, j, w.test_start, w.test_end)?;
                out.push(ScoreRecord {
                    method: method.to_string(),
                    group: group.to_string(),
                    country: country.clone(),
                    window: w.index,
                    sample: Sample::OutOfSample,
                    mae: score(&pred, &obs, Metric::Mae)?,
                    mse: score(&pred, &obs, Metric::Mse)?,
                });
            }
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(20).cloned().collect();
        let more = if missing.len() > 20 { format!(" and {} more", missing.len() - 20) } else { String::new() };
        return Err(Error::Data(format!("external forecasts missing for {}{more}", shown.join(", "))));
    }
    Ok(out)
}
