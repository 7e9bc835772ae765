use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::model::AgeGrid;
use crate::{Error, Result};

/// Death counts `D[x, j, t]` for a set of countries over a contiguous run
/// of years, on a common age grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeathPanel {
    countries: Vec<String>,
    first_year: i32,
    n_years: usize,
    grid: AgeGrid,
    /// `[country][year][age]`, row-major.
    deaths: Vec<u64>,
    totals: Vec<u64>,
}

impl DeathPanel {
    /// Builds a panel from `deaths[country][year][age]`.
    pub fn new(
        countries: Vec<String>,
        first_year: i32,
        grid: AgeGrid,
        deaths: &[Vec<Vec<u64>>],
    ) -> Result<Self> {
        if countries.is_empty() {
            return Err(Error::Data("panel has no countries".into()));
        }
        if deaths.len() != countries.len() {
            return Err(Error::Data(format!(
                "{} countries but {} death tables",
                countries.len(),
                deaths.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = countries.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::Data(format!("country {dup:?} listed twice")));
        }
        let n_years = deaths[0].len();
        if n_years == 0 {
            return Err(Error::Data("panel has no years".into()));
        }
        let mut flat = Vec::with_capacity(countries.len() * n_years * grid.n_cells());
        for (c, table) in countries.iter().zip(deaths) {
            if table.len() != n_years {
                return Err(Error::Data(format!(
                    "country {c:?} has {} years, expected {n_years}",
                    table.len()
                )));
            }
            for (t, row) in table.iter().enumerate() {
                if row.len() != grid.n_cells() {
                    return Err(Error::Data(format!(
                        "country {c:?} year {} has {} age cells, expected {}",
                        first_year + t as i32,
                        row.len(),
                        grid.n_cells()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::from_flat(countries, first_year, n_years, grid, flat)
    }

    fn from_flat(
        countries: Vec<String>,
        first_year: i32,
        n_years: usize,
        grid: AgeGrid,
        deaths: Vec<u64>,
    ) -> Result<Self> {
        let totals = deaths
            .chunks(grid.n_cells())
            .map(|row| {
                row.iter()
                    .try_fold(0u64, |acc, &d| acc.checked_add(d))
                    .ok_or_else(|| Error::Data("death total overflows 64 bits".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DeathPanel { countries, first_year, n_years, grid, deaths, totals })
    }

    /// A panel with no recorded deaths at all.
    pub fn empty(countries: Vec<String>, first_year: i32, n_years: usize, grid: AgeGrid) -> Result<Self> {
        let tables = vec![vec![vec![0; grid.n_cells()]; n_years]; countries.len()];
        Self::new(countries, first_year, grid, &tables)
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_years as i32 - 1
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first_year..=self.last_year()
    }

    pub fn grid(&self) -> AgeGrid {
        self.grid
    }

    /// Counts by age for country `j` in the `t`-th year (0-based).
    pub fn deaths(&self, j: usize, t: usize) -> &[u64] {
        let n = self.grid.n_cells();
        let start = (j * self.n_years + t) * n;
        &self.deaths[start..start + n]
    }

    pub fn total(&self, j: usize, t: usize) -> u64 {
        self.totals[j * self.n_years + t]
    }

    /// Empirical age-at-death frequencies `D_x / n`, or `None` for an empty
    /// country-year.
    pub fn frequencies(&self, j: usize, t: usize) -> Option<Vec<f64>> {
        let n = self.total(j, t);
        (n > 0).then(|| self.deaths(j, t).iter().map(|&d| d as f64 / n as f64).collect())
    }

    /// Sub-panel restricted to the calendar years `from..=to`.
    pub fn years_between(&self, from: i32, to: i32) -> Result<Self> {
        if from < self.first_year || to > self.last_year() || from > to {
            return Err(Error::Data(format!(
                "years {from}-{to} are not inside the panel's {}-{}",
                self.first_year,
                self.last_year()
            )));
        }
        let (t0, t1) = ((from - self.first_year) as usize, (to - self.first_year) as usize);
        let tables: Vec<Vec<Vec<u64>>> = (0..self.n_countries())
            .map(|j| (t0..=t1).map(|t| self.deaths(j, t).to_vec()).collect())
            .collect();
        Self::new(self.countries.clone(), from, self.grid, &tables)
    }

    /// Sub-panel of the listed countries, in the given order.
    pub fn select_countries(&self, names: &[String]) -> Result<Self> {
        let tables = names
            .iter()
            .map(|name| {
                let j = self
                    .countries
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Data(format!("country {name:?} is not in the panel")))?;
                Ok((0..self.n_years).map(|t| self.deaths(j, t).to_vec()).collect())
            })
            .collect::<Result<Vec<Vec<Vec<u64>>>>>()?;
        Self::new(names.to_vec(), self.first_year, self.grid, &tables)
    }

    /// Writes the panel as long CSV with header `country,year,age,deaths`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["country", "year", "age", "deaths"])?;
        for (j, country) in self.countries.iter().enumerate() {
            for (t, year) in self.years().enumerate() {
                for (x, d) in self.deaths(j, t).iter().enumerate() {
                    w.write_record([country.as_str(), &year.to_string(), &x.to_string(), &d.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<panel writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    country: String,
    year: i32,
    age: String,
    #[serde(alias = "dx")]
    deaths: f64,
}

/// Ages past this are rejected as implausible rather than allocated.
const OLDEST_AGE: usize = 150;

fn parse_age(label: &str) -> Option<(usize, bool)> {
    let label = label.trim();
    match label.strip_suffix('+') {
        Some(open) => open.trim().parse().ok().map(|a| (a, true)),
        None => label.parse().ok().map(|a| (a, false)),
    }
}

/// Parses a long CSV (`country,year,age,deaths`) into a validated panel.
/// The last age may be written open-ended (`110+`). Non-integer counts are
/// rounded half-to-even, then nudged so each country-year keeps its rounded
/// total. A life-table `dx` column is accepted in place of `deaths`; see
/// [`scale_to_totals`].
pub fn parse_panel<R: Read>(reader: R) -> Result<DeathPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["country", "year", "age", "deaths"] && names != ["country", "year", "age", "dx"] {
        return Err(Error::Data(format!(
            "expected header country,year,age,deaths (or dx), found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, BTreeMap<i32, BTreeMap<usize, f64>>> = HashMap::new();
    let mut open_age: Option<usize> = None;
    for (line, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let (age, open) = parse_age(&rec.age)
            .ok_or_else(|| Error::Data(format!("line {row}: unreadable age {:?}", rec.age)))?;
        if age > OLDEST_AGE {
            return Err(Error::Data(format!("line {row}: age {age} is beyond {OLDEST_AGE}")));
        }
        if open {
            match open_age {
                Some(a) if a != age => {
                    return Err(Error::Data(format!(
                        "line {row}: open age group {age}+ conflicts with {a}+"
                    )))
                }
                _ => open_age = Some(age),
            }
        }
        if !rec.deaths.is_finite() || rec.deaths < 0.0 {
            return Err(Error::Data(format!(
                "line {row}: death count {} for {} {} age {age} is not a nonnegative number",
                rec.deaths, rec.country, rec.year
            )));
        }
        if !cells.contains_key(&rec.country) {
            order.push(rec.country.clone());
        }
        let slot = cells.entry(rec.country.clone()).or_default().entry(rec.year).or_default();
        if slot.insert(age, rec.deaths).is_some() {
            return Err(Error::Data(format!(
                "line {row}: duplicate entry for {} {} age {age}",
                rec.country, rec.year
            )));
        }
    }
    if order.is_empty() {
        return Err(Error::Data("panel file has no rows".into()));
    }

    let max_age = cells
        .values()
        .flat_map(|years| years.values())
        .filter_map(|ages| ages.keys().next_back().copied())
        .max()
        .unwrap_or(0);
    if let Some(a) = open_age {
        if a != max_age {
            return Err(Error::Data(format!("open age group {a}+ is not the oldest age {max_age}")));
        }
    }
    let grid = AgeGrid::new(max_age)?;

    let years: Vec<i32> = cells[&order[0]].keys().copied().collect();
    for c in &order {
        let ys: Vec<i32> = cells[c].keys().copied().collect();
        if ys != years {
            return Err(Error::Data(format!(
                "ragged panel: {c:?} covers years {} while {:?} covers {}",
                span(&ys),
                order[0],
                span(&years)
            )));
        }
    }
    if let Some(w) = years.windows(2).find(|w| w[1] != w[0] + 1) {
        return Err(Error::Data(format!("years are not contiguous: {} is followed by {}", w[0], w[1])));
    }

    let mut gaps = Vec::new();
    let mut tables = Vec::with_capacity(order.len());
    for c in &order {
        let mut table = Vec::with_capacity(years.len());
        for (year, ages) in &cells[c] {
            let mut raw = vec![0.0; grid.n_cells()];
            for x in 0..grid.n_cells() {
                match ages.get(&x) {
                    Some(&v) => raw[x] = v,
                    None => gaps.push(format!("{c} {year} age {x}")),
                }
            }
            if raw.iter().any(|v| v.fract() != 0.0) {
                log::warn!("{c} {year}: non-integer death counts rounded half-to-even");
            }
            table.push(round_preserving_total(&raw));
        }
        tables.push(table);
    }
    if !gaps.is_empty() {
        let shown: Vec<_> = gaps.iter().take(20).cloned().collect();
        let more = if gaps.len() > 20 { format!(" and {} more", gaps.len() - 20) } else { String::new() };
        return Err(Error::Data(format!("missing panel cells: {}{more}", shown.join(", "))));
    }
    DeathPanel::new(order, years[0], grid, &tables)
}

fn span(years: &[i32]) -> String {
    match (years.first(), years.last()) {
        (Some(a), Some(b)) => format!("{a}-{b} ({} years)", years.len()),
        _ => "nothing".into(),
    }
}

/// Reads a panel CSV from disk.
pub fn load_panel(path: impl AsRef<Path>) -> Result<DeathPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_panel(std::io::BufReader::new(file))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TotalRecord {
    country: String,
    year: i32,
    total: u64,
}

/// Reads observed death totals, `country,year,total`.
pub fn parse_totals<R: Read>(reader: R) -> Result<BTreeMap<(String, i32), u64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names != ["country", "year", "total"] {
        return Err(Error::Data(format!("expected header country,year,total, found {}", names.join(","))));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in rdr.deserialize::<TotalRecord>().enumerate() {
        let rec = rec?;
        if out.insert((rec.country.clone(), rec.year), rec.total).is_some() {
            return Err(Error::Data(format!("line {}: duplicate total for {} {}", line + 2, rec.country, rec.year)));
        }
    }
    Ok(out)
}

pub fn load_totals(path: impl AsRef<Path>) -> Result<BTreeMap<(String, i32), u64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_totals(std::io::BufReader::new(file))
}

/// Rescales a panel of life-table `dx` values (any radix) so each
/// country-year sums to its observed total of deaths.
pub fn scale_to_totals(dx: &DeathPanel, totals: &BTreeMap<(String, i32), u64>) -> Result<DeathPanel> {
    let mut missing = Vec::new();
    let mut tables = Vec::with_capacity(dx.n_countries());
    for (j, country) in dx.countries().iter().enumerate() {
        let mut table = Vec::with_capacity(dx.n_years());
        for (t, year) in dx.years().enumerate() {
            let Some(&total) = totals.get(&(country.clone(), year)) else {
                missing.push(format!("{country} {year}"));
                continue;
            };
            let radix = dx.total(j, t);
            if radix == 0 && total > 0 {
                return Err(Error::Data(format!("{country} {year}: dx is all zero but {total} deaths were observed")));
            }
            let scale = if radix == 0 { 0.0 } else { total as f64 / radix as f64 };
            let scaled: Vec<f64> = dx.deaths(j, t).iter().map(|&d| d as f64 * scale).collect();
            let mut counts = round_preserving_total(&scaled);
            // the float sum may round to one off the integer total
            let sum: u64 = counts.iter().sum();
            if sum != total {
                let x = (0..counts.len()).max_by_key(|&x| counts[x]).unwrap_or(0);
                counts[x] = (counts[x] + total).saturating_sub(sum);
            }
            table.push(counts);
        }
        tables.push(table);
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("no observed total for {}", missing.join(", "))));
    }
    DeathPanel::new(dx.countries().to_vec(), dx.first_year(), dx.grid(), &tables)
}

/// Rounds each value half-to-even, then moves single units between cells
/// with the largest rounding residuals until the integers sum to the
/// rounded total.
pub fn round_preserving_total(values: &[f64]) -> Vec<u64> {
    let mut out: Vec<u64> = values.iter().map(|v| v.round_ties_even() as u64).collect();
    let target = values.iter().sum::<f64>().round_ties_even() as i128;
    let mut diff = target - out.iter().map(|&v| v as i128).sum::<i128>();
    if diff == 0 {
        return out;
    }
    // residual > 0 means the cell was rounded down
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let residual = |i: usize, out: &[u64]| values[i] - out[i] as f64;
    if diff > 0 {
        idx.sort_by(|&a, &b| residual(b, &out).total_cmp(&residual(a, &out)).then(a.cmp(&b)));
        for &i in idx.iter().cycle().take(diff as usize) {
            out[i] += 1;
        }
    } else {
        idx.sort_by(|&a, &b| residual(a, &out).total_cmp(&residual(b, &out)).then(a.cmp(&b)));
        for &i in idx.iter().cycle() {
            if diff == 0 {
                break;
            }
            if out[i] > 0 {
                out[i] -= 1;
                diff += 1;
            }
        }
    }
    out
}
