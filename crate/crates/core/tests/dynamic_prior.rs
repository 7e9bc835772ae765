mod common;

use agedeath::prior::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, InverseGamma, Normal, StudentsT};

fn scalar_dynamics(theta0: f64, beta: f64, eta2: f64, traj: &[f64]) -> CountryDynamics {
    CountryDynamics {
        beta: vec![beta],
        eta2: vec![eta2],
        theta0: vec![theta0],
        trajectory: traj.iter().map(|&v| vec![v]).collect(),
    }
}

fn scalar_hyper(m: f64, s: f64, m_beta: f64, s_beta: f64, a: f64, b: f64) -> Hyperparams {
    Hyperparams { m: vec![m], s: vec![s], m_beta: vec![m_beta], s_beta: vec![s_beta], a: vec![a], b: vec![b] }
}

#[test]
fn zero_residual_innovation_term() {
    let eta2 = 0.37;
    let d = scalar_dynamics(1.0, 0.25, eta2, &[1.25]);
    let h = scalar_hyper(0.0, 10.0, 0.0, 1.0, 0.01, 0.01);
    let flat = log_state_prior(&d, &h, &InnovationLaw::Gaussian, true);
    let init = Normal::new(0.0, 10.0).unwrap().ln_pdf(1.0);
    let expected = init + (1.0 / (2.0 * std::f64::consts::PI * eta2).sqrt()).ln() - eta2.ln();
    assert!((flat - expected).abs() < 1e-14, "{flat} vs {expected}");
}

#[test]
fn student_t_approaches_gaussian() {
    // the gap is (r⁴ − 2r² − 1)/4ν for standardized residual r, so stay
    // within |r| ≤ 1
    let t = InnovationLaw::StudentT { dof: 1e6 };
    for (x, mean, eta2) in [(0.3, 0.1, 0.5), (-1.0, 0.0, 1.0), (4.0, 3.95, 0.01)] {
        let g = InnovationLaw::Gaussian.log_density(x, mean, eta2);
        assert!((t.log_density(x, mean, eta2) - g).abs() < 1e-6);
    }
}

#[test]
fn log_prior_matches_term_by_term_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for law in [InnovationLaw::Gaussian, InnovationLaw::student_t()] {
        for _ in 0..50 {
            let k = 3;
            let d = CountryDynamics {
                beta: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
                eta2: (0..k).map(|_| rng.random_range(0.01..2.0)).collect(),
                theta0: (0..k).map(|_| rng.random_range(-5.0..5.0)).collect(),
                trajectory: (0..3).map(|_| (0..k).map(|_| rng.random_range(-5.0..5.0)).collect()).collect(),
            };
            let h = Hyperparams {
                m: vec![0.0, 50.0, 70.0],
                s: vec![10.0, 3.0, 0.5],
                m_beta: vec![0.0, 0.2, -0.1],
                s_beta: vec![1.0, 0.5, 2.0],
                a: vec![0.01, 2.0, 3.0],
                b: vec![0.01, 1.0, 0.5],
            };
            let mut oracle = 0.0;
            for j in 0..k {
                oracle += Normal::new(h.m[j], h.s[j]).unwrap().ln_pdf(d.theta0[j]);
                let mut prev = d.theta0[j];
                for row in &d.trajectory {
                    let loc = prev + d.beta[j];
                    oracle += match law {
                        InnovationLaw::Gaussian => Normal::new(loc, d.eta2[j].sqrt()).unwrap().ln_pdf(row[j]),
                        InnovationLaw::StudentT { dof } => {
                            StudentsT::new(loc, d.eta2[j].sqrt(), dof).unwrap().ln_pdf(row[j])
                        }
                    };
                    prev = row[j];
                }
                oracle += Normal::new(h.m_beta[j], h.s_beta[j]).unwrap().ln_pdf(d.beta[j]);
                oracle += InverseGamma::new(h.a[j], h.b[j]).unwrap().ln_pdf(d.eta2[j]);
            }
            let got = log_state_prior(&d, &h, &law, false);
            assert!((got - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }
}

#[test]
fn log_prior_decomposes_over_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..100 {
        let one = |rng: &mut ChaCha8Rng| {
            let traj: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            scalar_dynamics(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..2.0), &traj)
        };
        let (x, y) = (one(&mut rng), one(&mut rng));
        let hx = scalar_hyper(1.0, 2.0, 0.5, 1.5, 0.5, 0.7);
        let hy = scalar_hyper(-1.0, 4.0, 0.0, 1.0, 0.01, 0.01);
        let joint = CountryDynamics {
            beta: vec![x.beta[0], y.beta[0]],
            eta2: vec![x.eta2[0], y.eta2[0]],
            theta0: vec![x.theta0[0], y.theta0[0]],
            trajectory: x.trajectory.iter().zip(&y.trajectory).map(|(a, b)| vec![a[0], b[0]]).collect(),
        };
        let hj = Hyperparams {
            m: vec![1.0, -1.0],
            s: vec![2.0, 4.0],
            m_beta: vec![0.5, 0.0],
            s_beta: vec![1.5, 1.0],
            a: vec![0.5, 0.01],
            b: vec![0.7, 0.01],
        };
        for law in [InnovationLaw::Gaussian, InnovationLaw::student_t()] {
            for flat in [false, true] {
                let sum = log_state_prior(&x, &hx, &law, flat) + log_state_prior(&y, &hy, &law, flat);
                assert_eq!(log_state_prior(&joint, &hj, &law, flat), sum);
            }
        }
    }
}

/// −2 log density of θ̃_{1..T} | θ̃₀ via the tridiagonal precision
/// `η⁻² · tridiag(−1; 2,…,2,1; −1)` around the mean `θ̃₀ + tβ`.
fn minus_two_log_density_matrix(theta0: f64, beta: f64, eta2: f64, traj: &[f64]) -> f64 {
    let t = traj.len();
    let mut q = vec![vec![0.0; t]; t];
    for i in 0..t {
        q[i][i] = if i + 1 == t { 1.0 } else { 2.0 } / eta2;
        if i + 1 < t {
            q[i][i + 1] = -1.0 / eta2;
            q[i + 1][i] = -1.0 / eta2;
        }
    }
    let r: Vec<f64> = (0..t).map(|i| traj[i] - theta0 - (i + 1) as f64 * beta).collect();
    let quad: f64 = (0..t).map(|i| (0..t).map(|j| r[i] * q[i][j] * r[j]).sum::<f64>()).sum();
    // the precision has determinant η^{−2T}
    t as f64 * ((2.0 * std::f64::consts::PI).ln() + eta2.ln()) + quad
}

#[test]
fn increments_form_equals_tridiagonal_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let traj: Vec<f64> = (0..t).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (theta0, beta, eta2) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.05..3.0));
        let d = scalar_dynamics(theta0, beta, eta2, &traj);
        let increments: f64 = d
            .increments(0)
            .iter()
            .map(|&x| -2.0 * InnovationLaw::Gaussian.log_density(x, beta, eta2))
            .sum();
        let matrix = minus_two_log_density_matrix(theta0, beta, eta2, &traj);
        assert!((increments - matrix).abs() < 1e-10, "T={t}: {increments} vs {matrix}");
    }
}

/// Mean and variance of an unnormalized log density by quadrature.
fn grid_moments(log_f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let pieces: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let z = common::integrate_pieces(|x| log_f(x).exp(), &pieces, 1e-14);
    let m1 = common::integrate_pieces(|x| x * log_f(x).exp(), &pieces, 1e-14) / z;
    let m2 = common::integrate_pieces(|x| (x - m1).powi(2) * log_f(x).exp(), &pieces, 1e-14) / z;
    (m1, m2)
}

#[test]
fn beta_conditional_matches_grid_posterior() {
    let inc = [1.0, 2.0, 3.0, 4.0, 5.0];
    let (eta2, m_beta, s_beta) = (1.0, 0.0, 1.0);
    let log_post = |b: f64| {
        inc.iter().map(|&d| InnovationLaw::Gaussian.log_density(d, b, eta2)).sum::<f64>()
            + Normal::new(m_beta, s_beta).unwrap().ln_pdf(b)
    };
    let (gm, gv) = grid_moments(log_post, -10.0, 15.0);
    let (mean, var) = beta_conditional(&inc, eta2, m_beta, s_beta);
    assert!((mean - 2.5).abs() < 1e-12 && (var - 1.0 / 6.0).abs() < 1e-12);
    assert!((gm - mean).abs() < 1e-6 && (gv - var).abs() < 1e-6, "{gm} {gv}");

    let (flat_mean, _) = beta_conditional(&[0.4; 6], 0.2, 0.0, 1e6);
    assert!((flat_mean - 0.4).abs() < 1e-4);
}

#[test]
fn eta2_conditional_matches_grid_posterior() {
    // residual sum of squares 8 over four increments
    let inc = [2.0, -2.0, 0.0, 0.0];
    for (a, b) in [(0.01, 0.01), (3.0, 1.0)] {
        let (shape, rate) = eta2_conditional(&inc, 0.0, a, b);
        assert_eq!((shape, rate), (a + 2.0, b + 4.0));
        // integrate over u = log η² so the heavy right tail is cheap
        let log_post = |e: f64| {
            inc.iter().map(|&d| InnovationLaw::Gaussian.log_density(d, 0.0, e)).sum::<f64>()
                + InverseGamma::new(a, b).unwrap().ln_pdf(e)
        };
        let pieces: Vec<f64> = (0..=400).map(|i| -20.0 + 0.2 * i as f64).collect();
        let w = |u: f64, g: &dyn Fn(f64) -> f64| {
            let e = u.exp();
            g(e) * (log_post(e) + u).exp()
        };
        let z = common::integrate_pieces(|u| w(u, &|_| 1.0), &pieces, 1e-16);
        let m1 = common::integrate_pieces(|u| w(u, &|e| e), &pieces, 1e-16) / z;
        let mean = rate / (shape - 1.0);
        assert!((m1 - mean).abs() < 1e-6 * mean, "{m1} vs {mean}");
        if shape > 3.0 {
            let m2 = common::integrate_pieces(|u| w(u, &|e| (e - m1).powi(2)), &pieces, 1e-16) / z;
            let var = rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0));
            assert!((m2 - var).abs() < 1e-6, "{m2} vs {var}");
        }
    }
}

#[test]
fn theta0_conditional_matches_grid_posterior() {
    let (theta1, beta, eta2, m, s) = (2.5, 0.5, 1.0, 0.0, 1.0);
    let log_post = |x: f64| {
        InnovationLaw::Gaussian.log_density(theta1, x + beta, eta2) + Normal::new(m, s).unwrap().ln_pdf(x)
    };
    let (gm, gv) = grid_moments(log_post, -12.0, 14.0);
    let (mean, var) = theta0_conditional(theta1, beta, eta2, m, s);
    assert!((mean - 1.0).abs() < 1e-12 && (var - 0.5).abs() < 1e-12);
    assert!((gm - mean).abs() < 1e-6 && (gv - var).abs() < 1e-6);

    let (wide, _) = theta0_conditional(theta1, beta, eta2, m, 1e8);
    assert!((wide - 2.0).abs() < 1e-10);
    let (tight, _) = theta0_conditional(theta1, beta, 1e12, 3.0, s);
    assert!((tight - 3.0).abs() < 1e-10);
}

/// Sample mean and variance with their standard errors from the first four
/// moments.
fn moments_with_se(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, (m2 / n).sqrt(), m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).sqrt())
}

#[test]
fn gibbs_draws_match_conditional_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let n = 100_000;
    let inc = [1.0, 2.0, 3.0, 4.0, 5.0];

    let xs: Vec<f64> = (0..n).map(|_| gibbs_update_beta(&inc, 1.0, 0.0, 1.0, &mut rng)).collect();
    let (m, se_m, v, se_v) = moments_with_se(&xs);
    assert!((m - 2.5).abs() < 4.0 * se_m && (v - 1.0 / 6.0).abs() < 4.0 * se_v, "beta {m} {v}");

    let xs: Vec<f64> = (0..n).map(|_| gibbs_update_beta(&[], 1.0, 0.3, 2.0, &mut rng)).collect();
    let (m, se_m, v, se_v) = moments_with_se(&xs);
    assert!((m - 0.3).abs() < 3.0 * se_m && (v - 4.0).abs() < 4.0 * se_v, "beta prior {m} {v}");

    let xs: Vec<f64> =
        (0..n).map(|_| gibbs_update_theta0(2.5, 0.5, 1.0, 0.0, 1.0, &mut rng)).collect();
    let (m, se_m, v, se_v) = moments_with_se(&xs);
    assert!((m - 1.0).abs() < 4.0 * se_m && (v - 0.5).abs() < 4.0 * se_v, "theta0 {m} {v}");

    let inc = [2.0, -2.0, 0.0, 0.0];
    let xs: Vec<f64> = (0..n).map(|_| gibbs_update_eta2(&inc, 0.0, 3.0, 1.0, &mut rng)).collect();
    let (m, se_m, v, se_v) = moments_with_se(&xs);
    assert!((m - 1.25).abs() < 4.0 * se_m, "eta2 mean {m}");
    assert!((v - 25.0 / 48.0).abs() < 4.0 * se_v, "eta2 var {v}");

    // default hyperparameters: shape 2.01 has a finite mean but a barely
    // finite variance, so the standard error comes from the analytic variance
    let xs: Vec<f64> = (0..n).map(|_| gibbs_update_eta2(&inc, 0.0, 0.01, 0.01, &mut rng)).collect();
    let mean = 4.01 / 1.01;
    let var: f64 = 4.01f64.powi(2) / (1.01f64.powi(2) * 0.01);
    let m = xs.iter().sum::<f64>() / n as f64;
    assert!((m - mean).abs() < 3.0 * (var / n as f64).sqrt(), "{m} vs {mean}");
}
