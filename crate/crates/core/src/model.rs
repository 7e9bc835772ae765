//! Age-at-death mixture, its discretization onto an integer age grid and
//! the multinomial likelihood of observed death counts.
//!
//! The default mixture has three parts: a point mass at age 0 for infant
//! deaths, a Gaussian for adult deaths and a Skew-Normal for old-age
//! deaths. [`ModelVariant`] swaps any of them for an alternative component.
//! Every variant is mapped to an unconstrained coordinate vector
//! ([`LatentState`]) on which the dynamic prior operates.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};
use libm::{erf, lgamma};
use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};
use crate::special::{
    gaussian_cdf, gaussian_pdf, gaussian_sf, owen_t, skew_normal_pdf, SkewNormalParams,
};

/// Support of the rescaled Beta old-age component, in years.
pub const SCALED_BETA_SUPPORT: (f64, f64) = (75.0, 110.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeGrid {
    pub max_age: usize,
}

impl Default for AgeGrid {
    fn default() -> Self {
        Self { max_age: 110 }
    }
}

impl AgeGrid {
    pub fn new(max_age: usize) -> Result<Self> {
        if max_age < 1 {
            return Err(Error::Domain("age grid needs max_age >= 1".into()));
        }
        Ok(Self { max_age })
    }

    pub fn n_cells(&self) -> usize {
        self.max_age + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfantKind {
    #[default]
    Dirac,
    HalfNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdultKind {
    #[default]
    Gaussian,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OldAgeKind {
    #[default]
    SkewNormal,
    ScaledBeta,
}

/// Which component family is used for each phase of life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelVariant {
    pub infant: InfantKind,
    pub adult: AdultKind,
    pub old_age: OldAgeKind,
}

/// One unconstrained coordinate of the latent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinate {
    /// `log(π₁/(1−π₁))`
    AdultWeight,
    /// `log(π₂/(1−π₁−π₂))`
    OldAgeWeight,
    AdultMean,
    AdultLogSd,
    OldAgeLocation,
    OldAgeLogScale,
    OldAgeShape,
    BetaLogA,
    BetaLogB,
    InfantLogScale,
}

impl Coordinate {
    pub fn name(self) -> &'static str {
        match self {
            Coordinate::AdultWeight => "logit_pi1",
            Coordinate::OldAgeWeight => "logit_pi2",
            Coordinate::AdultMean => "mu",
            Coordinate::AdultLogSd => "log_sigma",
            Coordinate::OldAgeLocation => "xi",
            Coordinate::OldAgeLogScale => "log_omega",
            Coordinate::OldAgeShape => "alpha",
            Coordinate::BetaLogA => "log_beta_a",
            Coordinate::BetaLogB => "log_beta_b",
            Coordinate::InfantLogScale => "log_gamma",
        }
    }

    /// Index of the component (0 infant, 1 adult, 2 old-age) whose shape
    /// this coordinate sets; `None` for the mixture weights.
    pub fn component(self) -> Option<usize> {
        match self {
            Coordinate::AdultWeight | Coordinate::OldAgeWeight => None,
            Coordinate::InfantLogScale => Some(0),
            Coordinate::AdultMean | Coordinate::AdultLogSd => Some(1),
            Coordinate::OldAgeLocation
            | Coordinate::OldAgeLogScale
            | Coordinate::OldAgeShape
            | Coordinate::BetaLogA
            | Coordinate::BetaLogB => Some(2),
        }
    }

    /// Prior centre of the initial state: adult deaths around 50 years,
    /// old-age deaths around 70, everything else at zero.
    pub fn default_prior_mean(self) -> f64 {
        match self {
            Coordinate::AdultMean => 50.0,
            Coordinate::OldAgeLocation => 70.0,
            _ => 0.0,
        }
    }
}

impl ModelVariant {
    /// Coordinate layout of the latent state. For the default variant this
    /// is `(logit π₁, logit π₂, μ, log σ, ξ, log ω, α)`.
    pub fn coordinates(&self) -> Vec<Coordinate> {
        let mut coords = Vec::with_capacity(8);
        if self.adult == AdultKind::Gaussian {
            coords.push(Coordinate::AdultWeight);
        }
        coords.push(Coordinate::OldAgeWeight);
        if self.adult == AdultKind::Gaussian {
            coords.push(Coordinate::AdultMean);
            coords.push(Coordinate::AdultLogSd);
        }
        match self.old_age {
            OldAgeKind::SkewNormal => coords.extend([
                Coordinate::OldAgeLocation,
                Coordinate::OldAgeLogScale,
                Coordinate::OldAgeShape,
            ]),
            OldAgeKind::ScaledBeta => coords.extend([Coordinate::BetaLogA, Coordinate::BetaLogB]),
        }
        if self.infant == InfantKind::HalfNormal {
            coords.push(Coordinate::InfantLogScale);
        }
        coords
    }

    pub fn dim(&self) -> usize {
        let adult = if self.adult == AdultKind::Gaussian { 3 } else { 0 };
        let old = match self.old_age {
            OldAgeKind::SkewNormal => 3,
            OldAgeKind::ScaledBeta => 2,
        };
        let infant = usize::from(self.infant == InfantKind::HalfNormal);
        1 + adult + old + infant
    }

    pub fn coordinate_index(&self, c: Coordinate) -> Option<usize> {
        self.coordinates().iter().position(|&x| x == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infant {
    Dirac,
    HalfNormal { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adult {
    Gaussian { mean: f64, sd: f64 },
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OldAge {
    SkewNormal(SkewNormalParams),
    ScaledBeta { a: f64, b: f64 },
}

/// Natural parameters of one country-year mixture. The infant weight is
/// implicit: `π₀ = 1 − π₁ − π₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi1: f64,
    pub pi2: f64,
    pub infant: Infant,
    pub adult: Adult,
    pub old_age: OldAge,
}

impl MixtureParams {
    /// Dirac + Gaussian + Skew-Normal mixture.
    pub fn standard(pi1: f64, pi2: f64, mu: f64, sigma: f64, sn: SkewNormalParams) -> Self {
        Self {
            pi1,
            pi2,
            infant: Infant::Dirac,
            adult: Adult::Gaussian { mean: mu, sd: sigma },
            old_age: OldAge::SkewNormal(sn),
        }
    }

    pub fn pi0(&self) -> f64 {
        1.0 - self.pi1 - self.pi2
    }

    pub fn variant(&self) -> ModelVariant {
        ModelVariant {
            infant: match self.infant {
                Infant::Dirac => InfantKind::Dirac,
                Infant::HalfNormal { .. } => InfantKind::HalfNormal,
            },
            adult: match self.adult {
                Adult::Gaussian { .. } => AdultKind::Gaussian,
                Adult::Absent => AdultKind::Absent,
            },
            old_age: match self.old_age {
                OldAge::SkewNormal(_) => OldAgeKind::SkewNormal,
                OldAge::ScaledBeta { .. } => OldAgeKind::ScaledBeta,
            },
        }
    }

    fn components(&self) -> [(f64, Option<Component>); 3] {
        let infant = match self.infant {
            Infant::Dirac => Component::Dirac,
            Infant::HalfNormal { scale } => Component::HalfNormal { scale },
        };
        let adult = match self.adult {
            Adult::Gaussian { mean, sd } => Some(Component::Gaussian { mean, sd }),
            Adult::Absent => None,
        };
        let old = match self.old_age {
            OldAge::SkewNormal(sn) => Component::SkewNormal(sn),
            OldAge::ScaledBeta { a, b } => Component::ScaledBeta { a, b },
        };
        [(self.pi0(), Some(infant)), (self.pi1, adult), (self.pi2, Some(old))]
    }
}

/// Unconstrained coordinates of a [`MixtureParams`], laid out as
/// [`ModelVariant::coordinates`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState(pub Vec<f64>);

impl std::ops::Deref for LatentState {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn positive(name: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value.ln())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {value}")))
    }
}

pub fn to_unconstrained(p: &MixtureParams) -> Result<LatentState> {
    let variant = p.variant();
    let mut out = Vec::with_capacity(variant.dim());
    let in_open_unit = |name: &str, w: f64| {
        if w > 0.0 && w < 1.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!("mixture weight {name} = {w} is not inside (0, 1)")))
        }
    };
    match p.adult {
        Adult::Gaussian { .. } => in_open_unit("pi1", p.pi1)?,
        Adult::Absent if p.pi1 != 0.0 => {
            return Err(Error::Domain(format!(
                "pi1 must be 0 when the adult component is absent, got {}",
                p.pi1
            )))
        }
        Adult::Absent => {}
    }
    in_open_unit("pi2", p.pi2)?;
    let pi0 = p.pi0();
    in_open_unit("pi0", pi0)?;

    if let Adult::Gaussian { .. } = p.adult {
        out.push((p.pi1 / (1.0 - p.pi1)).ln());
    }
    out.push((p.pi2 / pi0).ln());
    if let Adult::Gaussian { mean, sd } = p.adult {
        if !mean.is_finite() {
            return Err(Error::Domain(format!("adult mean must be finite, got {mean}")));
        }
        out.push(mean);
        out.push(positive("sigma", sd)?);
    }
    match p.old_age {
        OldAge::SkewNormal(sn) => {
            if !sn.xi.is_finite() || !sn.alpha.is_finite() {
                return Err(Error::Domain("skew-normal location/shape must be finite".into()));
            }
            out.push(sn.xi);
            out.push(positive("omega", sn.omega)?);
            out.push(sn.alpha);
        }
        OldAge::ScaledBeta { a, b } => {
            out.push(positive("beta shape a", a)?);
            out.push(positive("beta shape b", b)?);
        }
    }
    if let Infant::HalfNormal { scale } = p.infant {
        out.push(positive("gamma", scale)?);
    }
    Ok(LatentState(out))
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn from_unconstrained(state: &[f64], variant: &ModelVariant) -> Result<MixtureParams> {
    if state.len() != variant.dim() {
        return Err(Error::Contract(format!(
            "latent state has {} coordinates, variant needs {}",
            state.len(),
            variant.dim()
        )));
    }
    if let Some(bad) = state.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("latent coordinate {bad} is not finite")));
    }
    let mut it = state.iter().copied();
    let mut next = || it.next().unwrap_or_default();
    let pi1 = if variant.adult == AdultKind::Gaussian { logistic(next()) } else { 0.0 };
    let pi2 = (1.0 - pi1) * logistic(next());
    let adult = match variant.adult {
        AdultKind::Gaussian => {
            let mean = next();
            Adult::Gaussian { mean, sd: next().exp() }
        }
        AdultKind::Absent => Adult::Absent,
    };
    let old_age = match variant.old_age {
        OldAgeKind::SkewNormal => {
            let xi = next();
            let omega = next().exp();
            OldAge::SkewNormal(SkewNormalParams { xi, omega, alpha: next() })
        }
        OldAgeKind::ScaledBeta => {
            let a = next().exp();
            OldAge::ScaledBeta { a, b: next().exp() }
        }
    };
    let infant = match variant.infant {
        InfantKind::Dirac => Infant::Dirac,
        InfantKind::HalfNormal => Infant::HalfNormal { scale: next().exp() },
    };
    Ok(MixtureParams { pi1, pi2, infant, adult, old_age })
}

#[derive(Debug, Clone, Copy)]
enum Component {
    Dirac,
    HalfNormal { scale: f64 },
    Gaussian { mean: f64, sd: f64 },
    SkewNormal(SkewNormalParams),
    ScaledBeta { a: f64, b: f64 },
}

impl Component {
    /// `(F(x), 1 − F(x))`, each computed on the side where it is accurate.
    fn cdf_sf(&self, x: f64) -> (f64, f64) {
        match *self {
            Component::Dirac => {
                if x >= 0.0 {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            Component::HalfNormal { scale } => {
                if x <= 0.0 {
                    (0.0, 1.0)
                } else {
                    let z = x / scale;
                    let sf = 2.0 * gaussian_sf(z);
                    if sf < 0.5 {
                        (1.0 - sf, sf)
                    } else {
                        let cdf = erf(z * FRAC_1_SQRT_2);
                        (cdf, 1.0 - cdf)
                    }
                }
            }
            Component::Gaussian { mean, sd } => split_tails((x - mean) / sd),
            Component::SkewNormal(sn) => {
                let z = (x - sn.xi) / sn.omega;
                let (phi, q) = split_tails(z);
                let t2 = 2.0 * owen_t(z, sn.alpha);
                ((phi - t2).clamp(0.0, 1.0), (q + t2).clamp(0.0, 1.0))
            }
            Component::ScaledBeta { a, b } => {
                let (lo, hi) = SCALED_BETA_SUPPORT;
                if x <= lo {
                    (0.0, 1.0)
                } else if x >= hi {
                    (1.0, 0.0)
                } else {
                    let u = (x - lo) / (hi - lo);
                    let cdf = checked_beta_reg(a, b, u).unwrap_or(f64::NAN);
                    if cdf <= 0.5 {
                        (cdf, 1.0 - cdf)
                    } else {
                        let sf = checked_beta_reg(b, a, 1.0 - u).unwrap_or(f64::NAN);
                        (1.0 - sf, sf)
                    }
                }
            }
        }
    }

    /// Continuous density; the Dirac atom has none.
    fn pdf(&self, x: f64) -> f64 {
        match *self {
            Component::Dirac => 0.0,
            Component::HalfNormal { scale } => {
                if x < 0.0 {
                    0.0
                } else {
                    2.0 * gaussian_pdf(x / scale) / scale
                }
            }
            Component::Gaussian { mean, sd } => gaussian_pdf((x - mean) / sd) / sd,
            Component::SkewNormal(sn) => skew_normal_pdf(x, &sn),
            Component::ScaledBeta { a, b } => {
                let (lo, hi) = SCALED_BETA_SUPPORT;
                if x <= lo || x >= hi {
                    return 0.0;
                }
                let width = hi - lo;
                let u = (x - lo) / width;
                let log_beta = lgamma(a) + lgamma(b) - lgamma(a + b);
                ((a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() - log_beta).exp() / width
            }
        }
    }

    /// Mass of each closed-boundary age cell, written into `out`.
    fn cell_masses(&self, out: &mut [f64]) {
        out.fill(0.0);
        if let Component::Dirac = self {
            out[0] = 1.0;
            return;
        }
        let last = out.len() - 1;
        let (mut prev_cdf, mut prev_sf) = self.cdf_sf(0.5);
        out[0] = prev_cdf;
        for (x, cell) in out.iter_mut().enumerate().take(last).skip(1) {
            let (cdf, sf) = self.cdf_sf(x as f64 + 0.5);
            let mass = if cdf <= 0.5 { cdf - prev_cdf } else { prev_sf - sf };
            *cell = mass.max(0.0);
            prev_cdf = cdf;
            prev_sf = sf;
        }
        out[last] = prev_sf;
    }
}

fn split_tails(z: f64) -> (f64, f64) {
    if z < 0.0 {
        let cdf = gaussian_cdf(z);
        (cdf, 1.0 - cdf)
    } else {
        let sf = gaussian_sf(z);
        (1.0 - sf, sf)
    }
}

/// Mixture cdf `F(x) = π₀H₀(x) + π₁G(x) + π₂S(x)`.
pub fn mixture_cdf(x: f64, p: &MixtureParams) -> f64 {
    let f: f64 = p
        .components()
        .iter()
        .filter_map(|(w, c)| c.map(|c| w * c.cdf_sf(x).0))
        .sum();
    f.clamp(0.0, 1.0)
}

/// Continuous part of the mixture density (the age-0 atom excluded).
pub fn mixture_pdf(x: f64, p: &MixtureParams) -> f64 {
    p.components().iter().filter_map(|(w, c)| c.map(|c| w * c.pdf(x))).sum()
}

/// Probability of death in each age cell `(x − ½, x + ½]`, with the lower
/// tail folded into cell 0 and the upper tail into the last cell so the
/// result is an exact simplex.
pub fn discretize(p: &MixtureParams, grid: &AgeGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.n_cells()];
    discretize_into(p, &mut out);
    out
}

/// [`discretize`] into a caller-owned buffer whose length fixes the grid.
pub fn discretize_into(p: &MixtureParams, out: &mut [f64]) {
    let mut cells = ComponentCells::new(out.len());
    cells.update(p, [true; 3]);
    cells.combine(p, out);
}

/// Unweighted cell masses of the infant, adult and old-age components, so
/// a mixture can be re-discretized after changing only some of its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCells {
    parts: [Vec<f64>; 3],
}

impl ComponentCells {
    pub fn new(n_cells: usize) -> Self {
        assert!(n_cells >= 2, "age grid needs at least two cells");
        ComponentCells { parts: std::array::from_fn(|_| vec![0.0; n_cells]) }
    }

    /// Recomputes the components flagged in `which` (infant, adult,
    /// old-age). An absent component is left untouched.
    pub fn update(&mut self, p: &MixtureParams, which: [bool; 3]) {
        for ((part, (_, component)), redo) in self.parts.iter_mut().zip(p.components()).zip(which) {
            if let (true, Some(c)) = (redo, component) {
                c.cell_masses(part);
            }
        }
    }

    /// Weighted sum of the cached components.
    pub fn combine(&self, p: &MixtureParams, out: &mut [f64]) {
        out.fill(0.0);
        for (part, (weight, component)) in self.parts.iter().zip(p.components()) {
            if weight == 0.0 || component.is_none() {
                continue;
            }
            for (o, m) in out.iter_mut().zip(part) {
                *o += weight * m;
            }
        }
    }
}

/// `log n! − Σ log D_x!`
fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        lgamma(n as f64 + 1.0)
    }
}

pub fn log_multinomial_coefficient(deaths: &[u64]) -> f64 {
    let n: u64 = deaths.iter().sum();
    ln_factorial(n) - deaths.iter().map(|&d| ln_factorial(d)).sum::<f64>()
}

/// `Σ_x D_x log p_x`, skipping empty cells. `−∞` if a death falls in a
/// zero-probability cell.
pub fn multinomial_kernel(deaths: &[u64], probs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&d, &p) in deaths.iter().zip(probs) {
        if d > 0 {
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += d as f64 * p.ln();
        }
    }
    acc
}

/// Multinomial log-probability of `deaths` under cell probabilities `probs`,
/// including the multinomial coefficient.
pub fn multinomial_loglik(deaths: &[u64], probs: &[f64]) -> Result<f64> {
    if deaths.len() != probs.len() {
        return Err(Error::Contract(format!(
            "deaths has {} cells but probabilities have {}",
            deaths.len(),
            probs.len()
        )));
    }
    Ok(log_multinomial_coefficient(deaths) + multinomial_kernel(deaths, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sn(xi: f64, omega: f64, alpha: f64) -> SkewNormalParams {
        SkewNormalParams::new(xi, omega, alpha).unwrap()
    }

    #[test]
    fn default_layout_is_seven_dimensional() {
        let v = ModelVariant::default();
        assert_eq!(v.dim(), 7);
        let names: Vec<_> = v.coordinates().iter().map(|c| c.name()).collect();
        assert_eq!(names, ["logit_pi1", "logit_pi2", "mu", "log_sigma", "xi", "log_omega", "alpha"]);
        for variant in [
            ModelVariant { adult: AdultKind::Absent, ..Default::default() },
            ModelVariant { infant: InfantKind::HalfNormal, ..Default::default() },
            ModelVariant { old_age: OldAgeKind::ScaledBeta, ..Default::default() },
        ] {
            assert_eq!(variant.dim(), variant.coordinates().len());
        }
    }

    #[test]
    fn to_unconstrained_equal_weights() {
        let p = MixtureParams::standard(1.0 / 3.0, 1.0 / 3.0, 50.0, 1.0, sn(70.0, 1.0, 0.0));
        let s = to_unconstrained(&p).unwrap();
        let expected = [-std::f64::consts::LN_2, 0.0, 50.0, 0.0, 70.0, 0.0, 0.0];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let p = MixtureParams::standard(0.2, 0.7, 50.0, std::f64::consts::E, sn(70.0, 1.0, 0.0));
        assert!((to_unconstrained(&p).unwrap()[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_weight_is_named() {
        let p = MixtureParams::standard(0.0, 0.5, 50.0, 1.0, sn(70.0, 1.0, 0.0));
        let err = to_unconstrained(&p).unwrap_err().to_string();
        assert!(err.contains("pi1"), "{err}");
        let p = MixtureParams::standard(0.5, 0.5, 50.0, 1.0, sn(70.0, 1.0, 0.0));
        let err = to_unconstrained(&p).unwrap_err().to_string();
        assert!(err.contains("pi0"), "{err}");
    }

    #[test]
    fn zero_state_maps_to_half_quarter_quarter() {
        let p = from_unconstrained(&[0.0; 7], &ModelVariant::default()).unwrap();
        assert_eq!(p.pi1, 0.5);
        assert_eq!(p.pi2, 0.25);
        assert_eq!(p.pi0(), 0.25);
        assert_eq!(p.adult, Adult::Gaussian { mean: 0.0, sd: 1.0 });
        assert_eq!(p.old_age, OldAge::SkewNormal(sn(0.0, 1.0, 0.0)));
        let p = from_unconstrained(&[-800.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &ModelVariant::default())
            .unwrap();
        assert_eq!(p.pi1, 0.0);
    }

    #[test]
    fn wrong_dimension_rejected() {
        assert!(from_unconstrained(&[0.0; 6], &ModelVariant::default()).is_err());
        assert!(from_unconstrained(&[f64::NAN; 7], &ModelVariant::default()).is_err());
    }

    #[test]
    fn dirac_only_cdf_and_cells() {
        let p = MixtureParams::standard(1e-300, 1e-300, 50.0, 5.0, sn(70.0, 5.0, 0.0));
        let p = MixtureParams { pi1: 0.0, pi2: 0.0, ..p };
        assert_eq!(mixture_cdf(0.0, &p), 1.0);
        assert_eq!(mixture_cdf(3.0, &p), 1.0);
        assert_eq!(mixture_cdf(-0.1, &p), 0.0);
        let d = discretize(&p, &AgeGrid::default());
        assert_eq!(d[0], 1.0);
        assert!(d[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_gaussian_cells() {
        let p = MixtureParams::standard(1.0, 0.0, 55.0, 10.0, sn(70.0, 5.0, 0.0));
        assert_eq!(p.pi0(), 0.0);
        assert!((mixture_cdf(55.0, &p) - 0.5).abs() < 1e-16);
        let d = discretize(&p, &AgeGrid::default());
        assert!((d[55] - 0.039_877_611_676_744_92).abs() < 1e-15);
    }

    #[test]
    fn tiny_grid_closes_both_ends() {
        let p = MixtureParams::standard(0.3, 0.5, 1.0, 2.0, sn(2.0, 3.0, 1.0));
        let d = discretize(&p, &AgeGrid::new(1).unwrap());
        assert_eq!(d.len(), 2);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(AgeGrid::new(0).is_err());
    }

    #[test]
    fn multinomial_closed_forms() {
        let probs = [0.1, 0.2, 0.7];
        let ll = multinomial_loglik(&[0, 1, 0], &probs).unwrap();
        assert!((ll - 0.2f64.ln()).abs() < 1e-15);

        let ll = multinomial_loglik(&[2, 1], &[0.25, 0.75]).unwrap();
        assert!((ll - 0.140_625f64.ln()).abs() < 1e-12);

        let uniform = vec![1.0 / 111.0; 111];
        let mut deaths = vec![0u64; 111];
        deaths[3] = 4;
        deaths[50] = 2;
        let n = 6.0;
        let ll = multinomial_loglik(&deaths, &uniform).unwrap();
        let expected = log_multinomial_coefficient(&deaths) - n * 111f64.ln();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn multinomial_zero_cells() {
        assert_eq!(multinomial_loglik(&[0, 3], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(multinomial_loglik(&[1, 3], &[0.0, 1.0]).unwrap(), f64::NEG_INFINITY);
        assert!(multinomial_loglik(&[1, 3], &[1.0]).is_err());
    }
}
