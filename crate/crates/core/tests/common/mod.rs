//! Test-only oracles, kept independent of the library's numerical paths.
#![allow(dead_code)]

use std::sync::OnceLock;

/// Gauss–Legendre nodes/weights on [-1, 1], found by Newton iteration on
/// the Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let legendre = |x: f64| {
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
    };
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(24))
}

fn gl(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (x, w) = rule();
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    x.iter().zip(w).map(|(xi, wi)| wi * f(c + h * xi)).sum::<f64>() * h
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = gl(f, a, m);
    let right = gl(f, m, b);
    let halves = left + right;
    let diff = (halves - whole).abs();
    if depth == 0 || !diff.is_finite() || diff <= tol || diff <= 1e-15 * halves.abs() {
        return halves;
    }
    adapt(f, a, m, left, 0.5 * tol, depth - 1) + adapt(f, m, b, right, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Legendre quadrature of `f` over `[a, b]` to absolute
/// tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let f: &dyn Fn(f64) -> f64 = &f;
    adapt(f, a, b, gl(f, a, b), tol, 30)
}

/// Integrates over consecutive pieces split at `breaks`.
pub fn integrate_pieces(f: impl Fn(f64) -> f64, breaks: &[f64], tol: f64) -> f64 {
    breaks
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], tol / breaks.len() as f64))
        .sum()
}

/// Owen's T by direct quadrature of its defining integral.
pub fn owen_t_quadrature(h: f64, a: f64) -> f64 {
    let f = |x: f64| (-0.5 * h * h * (1.0 + x * x)).exp() / (1.0 + x * x);
    integrate(f, 0.0, a, 1e-17) / (2.0 * std::f64::consts::PI)
}

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard error of the sample variance for roughly Gaussian draws.
pub fn var_se(var: f64, n: usize) -> f64 {
    var * (2.0 / (n as f64 - 1.0)).sqrt()
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous cdf.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value `P(K > √n D)`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let n = n as f64;
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut sum = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Normal cdf by quadrature, for oracles that must not touch the library.
pub fn normal_cdf_quadrature(z: f64) -> f64 {
    if z <= -40.0 {
        0.0
    } else if z < 0.0 {
        integrate(phi, -40.0, z, 1e-18)
    } else {
        0.5 + integrate(phi, 0.0, z, 1e-18)
    }
}

/// Skew-Normal draw via `ξ + ω(δ|Z₀| + √(1−δ²) Z₁)`.
pub fn skew_normal_draw(rng: &mut impl rand::Rng, xi: f64, omega: f64, alpha: f64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    xi + omega * (delta * z0.abs() + (1.0 - delta * delta).sqrt() * z1)
}

use agedeath::model::{
    Adult, AdultKind, Infant, InfantKind, MixtureParams, ModelVariant, OldAge, OldAgeKind,
    SCALED_BETA_SUPPORT,
};

/// Every combination of component kinds.
pub fn all_variants() -> Vec<ModelVariant> {
    let mut out = Vec::new();
    for infant in [InfantKind::Dirac, InfantKind::HalfNormal] {
        for adult in [AdultKind::Gaussian, AdultKind::Absent] {
            for old_age in [OldAgeKind::SkewNormal, OldAgeKind::ScaledBeta] {
                out.push(ModelVariant { infant, adult, old_age });
            }
        }
    }
    out
}

/// A random latent state, wide enough to hit extreme but finite mixtures.
pub fn random_state(rng: &mut impl rand::Rng, variant: &ModelVariant) -> Vec<f64> {
    use agedeath::model::Coordinate::*;
    variant
        .coordinates()
        .iter()
        .map(|c| match c {
            AdultWeight | OldAgeWeight => rng.random_range(-8.0..8.0),
            AdultMean => rng.random_range(-20.0..130.0),
            OldAgeLocation => rng.random_range(0.0..140.0),
            AdultLogSd | OldAgeLogScale => rng.random_range(-2.0..4.0),
            OldAgeShape => rng.random_range(-15.0..15.0),
            BetaLogA | BetaLogB => rng.random_range(-1.5..3.5),
            InfantLogScale => rng.random_range(-3.0..3.0),
        })
        .collect()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Continuous part of the mixture density, written out from the textbook
/// formulas.
pub fn oracle_pdf(x: f64, p: &MixtureParams) -> f64 {
    let mut f = 0.0;
    if let Infant::HalfNormal { scale } = p.infant {
        if x >= 0.0 {
            f += p.pi0() * 2.0 * phi(x / scale) / scale;
        }
    }
    if let Adult::Gaussian { mean, sd } = p.adult {
        f += p.pi1 * phi((x - mean) / sd) / sd;
    }
    match p.old_age {
        OldAge::SkewNormal(sn) => {
            let z = (x - sn.xi) / sn.omega;
            f += p.pi2 * 2.0 / sn.omega * phi(z) * normal_cdf(sn.alpha * z);
        }
        OldAge::ScaledBeta { a, b } => {
            let (lo, hi) = SCALED_BETA_SUPPORT;
            if x > lo && x < hi {
                let u = (x - lo) / (hi - lo);
                let lb = libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
                f += p.pi2 * ((a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() - lb).exp() / (hi - lo);
            }
        }
    }
    f
}

/// Mass of age cell `x` on a grid ending at `max_age`, by quadrature of
/// [`oracle_pdf`] plus the age-0 atom, with both tails folded in.
pub fn oracle_cell(x: usize, max_age: usize, p: &MixtureParams) -> f64 {
    let far = 2000.0;
    let lo = if x == 0 { -far } else { x as f64 - 0.5 };
    let hi = if x == max_age { far } else { x as f64 + 0.5 };
    let mut breaks = vec![lo, hi];
    let mut kinks = vec![0.0, SCALED_BETA_SUPPORT.0, SCALED_BETA_SUPPORT.1];
    if let Adult::Gaussian { mean, sd } = p.adult {
        kinks.extend((-12..=12).map(|k| mean + sd * k as f64));
    }
    if let OldAge::SkewNormal(sn) = p.old_age {
        kinks.extend((-12..=12).map(|k| sn.xi + sn.omega * k as f64));
    }
    if let Infant::HalfNormal { scale } = p.infant {
        kinks.extend((1..=12).map(|k| scale * k as f64));
    }
    breaks.extend(kinks.into_iter().filter(|k| *k > lo && *k < hi));
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let atom = if x == 0 && p.infant == Infant::Dirac { p.pi0() } else { 0.0 };
    atom + integrate_pieces(|t| oracle_pdf(t, p), &breaks, 1e-13)
}

/// Multinomial draw by sequential binomials.
pub fn multinomial(rng: &mut impl rand::Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    use rand_distr::{Binomial, Distribution};
    let mut out = vec![0; probs.len()];
    let (mut left, mut mass) = (n, 1.0);
    for (o, &p) in out.iter_mut().zip(probs) {
        if left == 0 || mass <= 0.0 {
            break;
        }
        *o = Binomial::new(left, (p / mass).clamp(0.0, 1.0)).unwrap().sample(rng);
        left -= *o;
        mass -= p;
    }
    if left > 0 {
        let last = probs.iter().rposition(|&p| p > 0.0).unwrap();
        out[last] += left;
    }
    out
}

pub fn names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("C{i}")).collect()
}
