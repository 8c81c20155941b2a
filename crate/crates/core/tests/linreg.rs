use alphavb::divergence::{gaussian_divergence, DivergenceKind, GaussianDensity};
use alphavb::linreg::*;
use alphavb::math::{logistic, logit};
use alphavb::objective::AlphaConfig;
use alphavb::rng::CounterRng;
use alphavb::synth::{linreg_s21, LinregParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const ALPHAS: [f64; 4] = [0.5, 0.7, 0.95, 1.0];
const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn cfg(alpha: f64) -> AlphaConfig {
    AlphaConfig::with_alpha(alpha)
}

/// Sparse design: the first `s` coefficients alternate in sign, the rest are zero.
fn sparse_design(n: usize, d: usize, s: usize, sigma: f64, seed: u64) -> (RegressionData, DVector<f64>) {
    let mut rng = CounterRng::new(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.normal(0.0, 1.5));
    let beta = DVector::from_fn(d, |j, _| if j < s { if j % 2 == 0 { 3.0 } else { -2.5 } } else { 0.0 });
    let y = &x * &beta + DVector::from_fn(n, |_, _| rng.normal(0.0, sigma));
    (RegressionData::new(x, y, sigma).unwrap(), beta)
}

#[test]
fn huge_slab_variance_gives_least_squares() {
    let mut rng = CounterRng::new(4);
    let x = DMatrix::from_fn(30, 4, |_, _| rng.normal(0.0, 1.0));
    let y = DVector::from_fn(30, |_, _| rng.normal(0.0, 2.0));
    let data = RegressionData::new(x.clone(), y.clone(), 1.0).unwrap();
    let mu = solve_coefficients(&data, &DVector::from_element(4, 1.0), 1e12).unwrap();
    let ols = x.svd(true, true).solve(&y, 1e-14).unwrap();
    assert!((&mu - &ols).norm() / ols.norm() < 1e-4);
}

#[test]
fn singular_coefficient_system_is_an_error() {
    let x = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let data = RegressionData::new(x, DVector::from_vec(vec![1.0, 2.0]), 1.0).unwrap();
    assert!(solve_coefficients(&data, &DVector::zeros(3), 1.0).is_err());
}

/// Spike-and-slab bound by enumerating the inclusion pattern, with each
/// Gaussian KL taken from the divergence module.
fn enumerated_elbo(data: &RegressionData, state: &SpikeSlabState, alpha: f64, rho: f64) -> f64 {
    let (n, d) = (data.n(), data.d());
    let s2 = data.sigma * data.sigma;
    let slab = state.nu1 * s2 / alpha;
    let mut fit = 0.0;
    for pattern in 0..(1usize << d) {
        let on = |j: usize| pattern >> j & 1 == 1;
        let weight: f64 = (0..d).map(|j| if on(j) { state.phi[j] } else { 1.0 - state.phi[j] }).product();
        let mean = DVector::from_fn(d, |j, _| if on(j) { state.mu[j] } else { 0.0 });
        let spread: f64 = (0..d)
            .filter(|&j| on(j))
            .map(|j| data.x.column(j).norm_squared() * state.sigma_sq[j])
            .sum();
        let sq = (&data.y - &data.x * mean).norm_squared() + spread;
        fit += weight * (-0.5 * n as f64 * (LN_2PI + s2.ln()) - sq / (2.0 * s2));
    }
    let kl: f64 = (0..d)
        .map(|j| {
            let p = state.phi[j];
            let bern = p * (p / rho).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - rho)).ln();
            let q = GaussianDensity::scalar(state.mu[j], state.sigma_sq[j]).unwrap();
            let prior = GaussianDensity::scalar(0.0, slab).unwrap();
            bern + p * gaussian_divergence(DivergenceKind::Kl, &q, &prior).unwrap()
        })
        .sum();
    alpha * fit - kl
}

#[test]
fn spike_and_slab_bound_matches_enumeration() {
    let (data, _) = sparse_design(12, 3, 1, 0.8, 7);
    let state = SpikeSlabState {
        mu: DVector::from_vec(vec![2.1, -0.4, 0.3]),
        sigma_sq: DVector::from_vec(vec![0.05, 0.2, 0.7]),
        phi: DVector::from_vec(vec![0.9, 0.3, 0.05]),
        nu1: 4.0,
    };
    for alpha in ALPHAS {
        let rho = 0.2;
        let closed = hdr_elbo(&data, &state, data.sigma, alpha, rho);
        assert!((closed - enumerated_elbo(&data, &state, alpha, rho)).abs() < 1e-10);
    }
}

#[test]
fn converged_fit_is_a_local_maximum_of_the_bound() {
    let (data, _) = sparse_design(40, 8, 2, 1.0, 3);
    let mut rng = CounterRng::new(12);
    for alpha in ALPHAS {
        let fit = fit_hdr(&data, &HdrSettings::default(), &cfg(alpha)).unwrap();
        let rho = 1.0 / 8.0;
        let best = hdr_elbo(&data, &fit.state, data.sigma, alpha, rho);
        for _ in 0..50 {
            let mut moved = fit.state.clone();
            let j = rng.below(8);
            moved.mu[j] += rng.normal(0.0, 0.02);
            moved.sigma_sq[j] *= rng.normal(0.0, 0.05).exp();
            moved.phi[j] = logistic(logit(moved.phi[j]) + rng.normal(0.0, 0.05));
            assert!(hdr_elbo(&data, &moved, data.sigma, alpha, rho) <= best + 1e-9);
        }
    }
}

#[test]
fn zero_response_gives_closed_form_inclusion_after_one_sweep() {
    let mut rng = CounterRng::new(1);
    let (n, d, nu1) = (20, 6, 3.0);
    let x = DMatrix::from_fn(n, d, |_, _| rng.normal(0.0, 1.0));
    let data = RegressionData::new(x.clone(), DVector::zeros(n), 1.0).unwrap();
    for schedule in [HdrSchedule::Coordinate, HdrSchedule::Batch] {
        let settings = HdrSettings {
            nu1,
            schedule,
            ..HdrSettings::default()
        };
        let one = AlphaConfig {
            max_iters: 1,
            ..cfg(0.7)
        };
        let fit = fit_hdr(&data, &settings, &one).unwrap();
        assert!(fit.state.mu.iter().all(|&m| m == 0.0));
        for j in 0..d {
            let diag = x.column(j).norm_squared();
            let expected = logistic(logit(1.0 / d as f64) - 0.5 * (nu1 * diag + 1.0).ln());
            assert!((fit.state.phi[j] - expected).abs() < 1e-14);
            assert!(fit.state.phi[j] < 1.0 / d as f64);
        }
    }
}

#[test]
fn batch_sweep_is_the_printed_update_pair() {
    let (data, _) = sparse_design(30, 10, 2, 1.0, 5);
    let gram_diag = DVector::from_fn(10, |j, _| data.x.column(j).norm_squared());
    let settings = HdrSettings {
        nu1: 2.0,
        schedule: HdrSchedule::Batch,
        ..HdrSettings::default()
    };
    let alpha = 0.7;
    let mut phi = DVector::from_element(10, 1.0);
    for sweeps in 1..=3 {
        let mu = solve_coefficients(&data, &phi, 2.0).unwrap();
        let (sigma_sq, next) = update_local(&gram_diag, &mu, &phi, 2.0, data.sigma, alpha, 0.1);
        phi = next;
        let fit = fit_hdr(&data, &settings, &AlphaConfig { max_iters: sweeps, elbo_tol: 1e-300, ..cfg(alpha) }).unwrap();
        assert!((fit.state.mu - mu).amax() < 1e-12);
        assert!((fit.state.sigma_sq - sigma_sq).amax() < 1e-12);
        assert!((fit.state.phi - &phi).amax() < 1e-12);
    }
}

#[test]
fn unit_temperature_uses_the_untempered_noise_variance() {
    let diag = DVector::from_vec(vec![2.0, 5.0]);
    let mu = DVector::from_vec(vec![1.2, -0.3]);
    let phi = DVector::from_vec(vec![0.6, 0.2]);
    let (sigma, nu1, rho) = (1.7, 3.0, 0.1);
    let (s2, new_phi) = update_local(&diag, &mu, &phi, nu1, sigma, 1.0, rho);
    for j in 0..2 {
        let v = sigma * sigma / (diag[j] + phi[j] / nu1);
        assert!((s2[j] - v).abs() < 1e-15);
        let z = (rho / (1.0 - rho)).ln() + 0.5 * (v / (nu1 * sigma * sigma)).ln() + mu[j] * mu[j] / (2.0 * v);
        assert!((new_phi[j] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }
}

#[test]
fn traces_are_nondecreasing_and_states_valid() {
    for seed in 0..20u64 {
        let (data, _) = sparse_design(50, 120, 3, 1.0, seed);
        for alpha in ALPHAS {
            let fit = fit_hdr(&data, &HdrSettings::default(), &cfg(alpha)).unwrap();
            assert!(fit.trace.is_nondecreasing(1e-8), "seed {seed} α {alpha}: {}", fit.trace.max_decrease());
            assert!(fit.state.phi.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!(fit.state.sigma_sq.iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn recovers_the_support_on_the_simulation_design() {
    let bundle = linreg_s21(&LinregParams::default(), 0).unwrap();
    let fit = fit_hdr(&bundle.data, &HdrSettings::default(), &cfg(0.95)).unwrap();
    let phi = &fit.state.phi;
    assert!((0..4).all(|j| phi[j] > 0.9));
    assert!((4..phi.len()).all(|j| phi[j] < 0.1));
    assert!(fit.trace.converged_at.is_some_and(|c| c < 20));
    assert!((0..4).all(|j| (fit.state.mu[j] - bundle.beta[j]).abs() < 0.5));
    assert_eq!(fit.state.selected(0.5), vec![0, 1, 2, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_are_scale_equivariant(seed in 0u64..1000, c in 0.1f64..10.0, alpha in 0.3f64..1.0) {
        let (data, _) = sparse_design(40, 60, 2, 1.0, seed);
        let scaled = RegressionData::new(data.x.clone(), &data.y * c, data.sigma * c).unwrap();
        let a = fit_hdr(&data, &HdrSettings::default(), &cfg(alpha)).unwrap();
        let b = fit_hdr(&scaled, &HdrSettings::default(), &cfg(alpha)).unwrap();
        prop_assert_eq!(a.trace.sweeps(), b.trace.sweeps());
        prop_assert!((&a.state.phi - &b.state.phi).amax() < 1e-8);
        prop_assert!((&a.state.mu - &b.state.mu / c).amax() < 1e-8);
    }
}

fn blm_prior_known_sigma(d: usize, sigma: f64) -> BlmPrior {
    // A very concentrated inverse-gamma pins E[1/σ²] to 1/σ².
    let shape = 1e10;
    BlmPrior::isotropic(d, 4.0, shape, shape * sigma * sigma)
}

#[test]
fn concentrated_noise_prior_gives_the_ridge_posterior() {
    let mut rng = CounterRng::new(8);
    let (n, d, sigma) = (60, 3, 0.7);
    let x = DMatrix::from_fn(n, d, |_, _| rng.normal(0.0, 1.0));
    let y = &x * DVector::from_vec(vec![1.0, -2.0, 0.5]) + DVector::from_fn(n, |_, _| rng.normal(0.0, sigma));
    let prior = blm_prior_known_sigma(d, sigma);
    for alpha in [0.5, 1.0] {
        let fit = fit_blm(&x, &y, &prior, &cfg(alpha)).unwrap();
        let w = alpha / (sigma * sigma);
        let precision = DMatrix::from_diagonal_element(d, d, 0.25) + x.transpose() * &x * w;
        let cov = precision.clone().try_inverse().unwrap();
        let mean = &cov * (x.transpose() * &y * w);
        assert!((&fit.state.beta_mean - mean).amax() < 1e-6);
        assert!((&fit.state.beta_cov - cov).amax() < 1e-8);
    }
}

#[test]
fn orthonormal_design_with_flat_prior_gives_projection() {
    let mut rng = CounterRng::new(2);
    let raw = DMatrix::from_fn(50, 3, |_, _| rng.normal(0.0, 1.0));
    let x = raw.qr().q();
    let y = DVector::from_fn(50, |_, _| rng.normal(0.0, 1.0));
    let prior = BlmPrior::isotropic(3, 1e10, 1.0, 1.0);
    let fit = fit_blm(&x, &y, &prior, &cfg(1.0)).unwrap();
    assert!((&fit.state.beta_mean - x.transpose() * &y).amax() < 1e-6);
}

#[test]
fn blm_traces_are_nondecreasing_and_optimal() {
    let mut rng = CounterRng::new(30);
    for seed in 0..20u64 {
        let mut data_rng = CounterRng::new(seed);
        let x = DMatrix::from_fn(40, 4, |_, _| data_rng.normal(0.0, 1.0));
        let y = &x * DVector::from_vec(vec![1.0, 0.0, -1.0, 2.0]) + DVector::from_fn(40, |_, _| data_rng.normal(0.0, 1.3));
        let prior = BlmPrior::isotropic(4, 10.0, 2.0, 2.0);
        for alpha in ALPHAS {
            let fit = fit_blm(&x, &y, &prior, &cfg(alpha)).unwrap();
            assert!(fit.trace.is_nondecreasing(1e-8), "seed {seed} α {alpha}");
            let best = blm_elbo(&x, &y, &prior, &fit.state, alpha).unwrap();
            let mut moved = fit.state.clone();
            moved.inv_gamma_rate *= rng.normal(0.0, 0.05).exp();
            moved.beta_mean[0] += rng.normal(0.0, 0.05);
            assert!(blm_elbo(&x, &y, &prior, &moved, alpha).unwrap() <= best + 1e-9);
        }
    }
}

#[test]
fn blm_risk_decays_at_the_parametric_rate() {
    let beta = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
    let prior = BlmPrior::isotropic(4, 10.0, 2.0, 2.0);
    let grid = [100usize, 200, 400, 800, 1600];
    let mut points = Vec::new();
    for &n in &grid {
        let mut total = 0.0;
        for seed in 0..40u64 {
            let mut rng = CounterRng::stream(seed, n as u64);
            let x = DMatrix::from_fn(n, 4, |_, _| rng.normal(0.0, 1.0));
            let y = &x * &beta + DVector::from_fn(n, |_, _| rng.normal(0.0, 1.0));
            total += fit_blm(&x, &y, &prior, &cfg(0.7)).unwrap().state.squared_risk(&beta);
        }
        points.push(((n as f64).ln(), (total / 40.0).ln()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 5.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 5.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((-1.35..=-0.65).contains(&slope), "slope {slope}");
}
