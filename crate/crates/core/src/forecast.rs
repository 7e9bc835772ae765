//! Posterior-predictive forecasts of the latent states and their
//! post-processing into life-table functionals with credible bands.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{discretize, from_unconstrained, AgeGrid};
use crate::sampler::PosteriorDraws;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Years beyond the last observed one.
    pub horizon: usize,
    pub quantiles: Vec<f64>,
    pub seed: u64,
    /// Fraction of the year lived at age 0 by those dying there.
    pub a0: f64,
    /// Evenly thin the stored draws down to at most this many.
    pub max_draws: Option<usize>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig { horizon: 10, quantiles: vec![0.05, 0.5, 0.95], seed: 0, a0: 0.5, max_draws: None }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(format!(
                "quantiles must be strictly increasing inside (0, 1), got {:?}",
                self.quantiles
            )));
        }
        if !(0.0..=1.0).contains(&self.a0) {
            return Err(Error::Config(format!("a0 must lie in [0, 1], got {}", self.a0)));
        }
        if self.max_draws == Some(0) {
            return Err(Error::Config("max_draws must be positive".into()));
        }
        Ok(())
    }
}

/// The stored draws used for post-processing, evenly thinned to at most
/// `max` rows.
pub fn select_draws(draws: &PosteriorDraws, max: Option<usize>) -> Vec<&[f64]> {
    let rows: Vec<&[f64]> = draws.rows().collect();
    match max {
        Some(m) if m < rows.len() => (0..m).map(|i| rows[i * rows.len() / m]).collect(),
        _ => rows,
    }
}

/// Forecast states `θ̃[b, j, T+h, k]` for `h = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateForecast {
    pub n_draws: usize,
    pub n_countries: usize,
    pub horizon: usize,
    pub dim: usize,
    /// First forecast year.
    pub first_year: i32,
    values: Vec<f64>,
}

impl StateForecast {
    /// State of draw `b`, country `j`, `h` years ahead (`h ≥ 1`).
    pub fn state(&self, b: usize, j: usize, h: usize) -> &[f64] {
        let start = ((b * self.n_countries + j) * self.horizon + h - 1) * self.dim;
        &self.values[start..start + self.dim]
    }
}

/// Propagates every selected draw forward by the random walk with drift,
/// using the run's innovation law.
pub fn forecast_states(draws: &PosteriorDraws, cfg: &ForecastConfig) -> Result<StateForecast> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    forecast_states_with(draws, &select_draws(draws, cfg.max_draws), cfg.horizon, &mut rng)
}

pub fn forecast_states_with(
    draws: &PosteriorDraws,
    rows: &[&[f64]],
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<StateForecast> {
    if rows.is_empty() {
        return Err(Error::Contract("forecasting needs at least one draw".into()));
    }
    let l = &draws.layout;
    let (p, dim, last) = (l.n_countries(), l.dim(), l.n_years - 1);
    let mut values = Vec::with_capacity(rows.len() * p * horizon * dim);
    let mut state = vec![0.0; dim];
    for row in rows {
        for j in 0..p {
            for (k, s) in state.iter_mut().enumerate() {
                *s = row[l.theta(j, last, k)];
            }
            for _ in 0..horizon {
                for (k, s) in state.iter_mut().enumerate() {
                    *s += row[l.beta(j, k)] + row[l.eta2(j, k)].sqrt() * draws.innovation.sample(rng);
                }
                values.extend_from_slice(&state);
            }
        }
    }
    Ok(StateForecast {
        n_draws: rows.len(),
        n_countries: p,
        horizon,
        dim,
        first_year: l.first_year + l.n_years as i32,
        values,
    })
}

/// Period life table from an age-at-death distribution. Functionals that
/// divide by zero survivors are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    pub d: Vec<f64>,
    /// Survivors to exact age x; `l[0] = 1`.
    pub l: Vec<f64>,
    pub q: Vec<Option<f64>>,
    /// Person-years lived in `[x, x+1)`.
    pub big_l: Vec<f64>,
    pub m: Vec<Option<f64>>,
    pub e: Vec<Option<f64>>,
    /// Average fraction of the year lived by those dying at age x.
    pub a: Vec<f64>,
}

/// Builds the life table with `a_x = 0.5` except `a_0 = a0`; person-years
/// are `L_x = l_{x+1} + a_x d_x`, so `e_0` equals the mean of `x + a_x`
/// under `d`.
pub fn life_table(d: &[f64], a0: f64) -> Result<LifeTable> {
    if d.is_empty() || d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Contract("life table needs finite nonnegative masses".into()));
    }
    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Contract(format!("life table input sums to {total}, not 1")));
    }
    let n = d.len();
    let d: Vec<f64> = d.iter().map(|v| v / total).collect();
    let mut a = vec![0.5; n];
    a[0] = a0;
    // survivors as tail sums keep l nonnegative and l_x ≥ d_x exactly
    let mut l = vec![0.0; n + 1];
    for x in (0..n).rev() {
        l[x] = l[x + 1] + d[x];
    }
    l[0] = 1.0;
    // rounding in the tail sums must not let l rise
    for x in 1..n {
        l[x] = l[x].min(l[x - 1]);
    }
    let big_l: Vec<f64> = (0..n).map(|x| l[x + 1] + a[x] * d[x]).collect();
    let q = (0..n).map(|x| (l[x] > 0.0).then(|| (d[x] / l[x]).min(1.0))).collect();
    let m = (0..n).map(|x| (big_l[x] > 0.0).then(|| d[x] / big_l[x])).collect();
    let mut e = vec![None; n];
    let mut tail = 0.0;
    for x in (0..n).rev() {
        tail += big_l[x];
        if l[x] > 0.0 {
            e[x] = Some(tail / l[x]);
        }
    }
    l.truncate(n);
    Ok(LifeTable { d, l, q, big_l, m, e, a })
}

/// Hazen quantile of sorted data: the `k`-th order statistic sits at
/// probability `(k − ½)/n`, linear in between, clamped at the ends.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = n as f64 * p + 0.5;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor();
    let i = lo as usize - 1;
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

/// Quantiles of `values` at each probability; non-finite values are
/// ignored and an empty set gives NaN.
pub fn summarize(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&v, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    AgeAtDeath,
    Qx,
    Mx,
    Ex,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::AgeAtDeath => "age_at_death",
            Quantity::Qx => "qx",
            Quantity::Mx => "mx",
            Quantity::Ex => "ex",
        }
    }

    fn extract(self, t: &LifeTable) -> Vec<f64> {
        let opt = |v: &[Option<f64>]| v.iter().map(|x| x.unwrap_or(f64::NAN)).collect();
        match self {
            Quantity::AgeAtDeath => t.d.clone(),
            Quantity::Qx => opt(&t.q),
            Quantity::Mx => opt(&t.m),
            Quantity::Ex => opt(&t.e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub country: String,
    pub year: i32,
    pub age: Option<usize>,
    pub quantity: String,
    pub quantile: f64,
    pub value: f64,
}

/// Observed-period draws followed by their forecasts.
struct Paths<'a> {
    draws: &'a PosteriorDraws,
    rows: Vec<&'a [f64]>,
    forecast: Option<&'a StateForecast>,
}

impl<'a> Paths<'a> {
    fn new(draws: &'a PosteriorDraws, forecast: Option<&'a StateForecast>, cfg: &ForecastConfig) -> Result<Self> {
        let rows = select_draws(draws, cfg.max_draws);
        if rows.is_empty() {
            return Err(Error::Contract("no draws to summarize".into()));
        }
        if let Some(f) = forecast {
            if f.n_draws != rows.len() || f.n_countries != draws.layout.n_countries() || f.dim != draws.layout.dim() {
                return Err(Error::Contract("forecast does not match the selected draws".into()));
            }
        }
        Ok(Paths { draws, rows, forecast })
    }

    fn n_times(&self) -> usize {
        self.draws.layout.n_years + self.forecast.map_or(0, |f| f.horizon)
    }

    fn year(&self, t: usize) -> i32 {
        self.draws.layout.first_year + t as i32
    }

    fn state(&self, b: usize, j: usize, t: usize) -> &[f64] {
        let l = &self.draws.layout;
        if t < l.n_years {
            let start = l.theta(j, t, 0);
            &self.rows[b][start..start + l.dim()]
        } else {
            self.forecast.expect("t within range").state(b, j, t + 1 - l.n_years)
        }
    }
}

/// Quantile bands of every latent coordinate per country and year,
/// observed years first, then forecasts.
pub fn state_bands(
    draws: &PosteriorDraws,
    forecast: Option<&StateForecast>,
    cfg: &ForecastConfig,
) -> Result<Vec<BandRow>> {
    cfg.validate()?;
    let paths = Paths::new(draws, forecast, cfg)?;
    let coords = draws.layout.variant.coordinates();
    let mut out = Vec::new();
    for (j, country) in draws.layout.countries.iter().enumerate() {
        for t in 0..paths.n_times() {
            for (k, c) in coords.iter().enumerate() {
                let values: Vec<f64> = (0..paths.rows.len()).map(|b| paths.state(b, j, t)[k]).collect();
                for (&q, v) in cfg.quantiles.iter().zip(summarize(&values, &cfg.quantiles)) {
                    out.push(BandRow {
                        country: country.clone(),
                        year: paths.year(t),
                        age: None,
                        quantity: c.name().to_string(),
                        quantile: q,
                        value: v,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Maps every draw through the mixture, its discretization and the life
/// table, then summarizes `quantity` per country, year and age.
pub fn functional_bands(
    draws: &PosteriorDraws,
    forecast: Option<&StateForecast>,
    quantity: Quantity,
    cfg: &ForecastConfig,
) -> Result<Vec<BandRow>> {
    cfg.validate()?;
    let paths = Paths::new(draws, forecast, cfg)?;
    let grid = AgeGrid::new(draws.layout.max_age)?;
    let variant = draws.layout.variant;
    let cells: Vec<(usize, usize)> = (0..draws.layout.n_countries())
        .flat_map(|j| (0..paths.n_times()).map(move |t| (j, t)))
        .collect();
    let blocks = cells
        .par_iter()
        .map(|&(j, t)| {
            let per_draw = paths
                .rows
                .iter()
                .enumerate()
                .map(|(b, _)| {
                    let params = from_unconstrained(paths.state(b, j, t), &variant)?;
                    Ok(quantity.extract(&life_table(&discretize(&params, &grid), cfg.a0)?))
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let mut rows = Vec::with_capacity(grid.n_cells() * cfg.quantiles.len());
            let mut column = vec![0.0; per_draw.len()];
            for x in 0..grid.n_cells() {
                for (c, v) in column.iter_mut().zip(&per_draw) {
                    *c = v[x];
                }
                for (&q, v) in cfg.quantiles.iter().zip(summarize(&column, &cfg.quantiles)) {
                    rows.push(BandRow {
                        country: draws.layout.countries[j].clone(),
                        year: paths.year(t),
                        age: Some(x),
                        quantity: quantity.name().to_string(),
                        quantile: q,
                        value: v,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

/// Writes bands as `country,year,age,quantity,quantile,value`, with `NA`
/// for a missing age or an undefined value.
pub fn write_bands<W: Write>(rows: &[BandRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["country", "year", "age", "quantity", "quantile", "value"])?;
    for r in rows {
        let age = r.age.map_or_else(|| "NA".to_string(), |a| a.to_string());
        let value = if r.value.is_finite() { r.value.to_string() } else { "NA".to_string() };
        w.write_record([r.country.as_str(), &r.year.to_string(), &age, &r.quantity, &r.quantile.to_string(), &value])?;
    }
    w.flush().map_err(|e| Error::io("<band writer>", e))?;
    Ok(())
}

/// Posterior-mean age-at-death distribution per country and year (observed
/// years, then forecasts), as `(country, year, d)`.
pub fn mean_distributions(
    draws: &PosteriorDraws,
    forecast: Option<&StateForecast>,
    cfg: &ForecastConfig,
) -> Result<Vec<(String, i32, Vec<f64>)>> {
    let paths = Paths::new(draws, forecast, cfg)?;
    let grid = AgeGrid::new(draws.layout.max_age)?;
    let variant = draws.layout.variant;
    let cells: Vec<(usize, usize)> = (0..draws.layout.n_countries())
        .flat_map(|j| (0..paths.n_times()).map(move |t| (j, t)))
        .collect();
    cells
        .par_iter()
        .map(|&(j, t)| {
            let mut mean = vec![0.0; grid.n_cells()];
            for b in 0..paths.rows.len() {
                let d = discretize(&from_unconstrained(paths.state(b, j, t), &variant)?, &grid);
                mean.iter_mut().zip(&d).for_each(|(m, v)| *m += v);
            }
            let n = paths.rows.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            Ok((draws.layout.countries[j].clone(), paths.year(t), mean))
        })
        .collect()
}
