use alphavb::divergence::{gaussian_divergence, DiscreteDistribution, DivergenceKind};
use alphavb::location::{GaussianFactor, GaussianLocationModel};
use alphavb::math;
use alphavb::objective::*;
use alphavb::rng::CounterRng;
use alphavb::tiny::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn bernoulli_model() -> TinyDiscreteModel {
    TinyDiscreteModel::bernoulli_mixture(
        &[vec![0.15, 0.8], vec![0.35, 0.6]],
        &[vec![0.4, 0.6], vec![0.7, 0.3]],
        DiscreteDistribution::new(vec![0.55, 0.45]).unwrap(),
        0,
    )
    .unwrap()
}

fn binary(p: f64) -> DiscreteDistribution {
    DiscreteDistribution::new(vec![p, 1.0 - p]).unwrap()
}

/// Jensen gap computed straight from the definition with no library helpers.
fn jensen_gap_oracle(m: &TinyDiscreteModel, data: &[usize], q_theta: &[f64], q_s: &[DiscreteDistribution]) -> f64 {
    let mut total = 0.0;
    for (t, &w) in q_theta.iter().enumerate() {
        let p = &m.grid()[t];
        for (&y, q) in data.iter().zip(q_s) {
            let joint: Vec<f64> = (0..2).map(|s| p.weights.probs()[s] * p.emissions[s].probs()[y]).collect();
            let exact = joint.iter().sum::<f64>().ln();
            let bound: f64 = (0..2)
                .filter(|&s| q.probs()[s] > 0.0)
                .map(|s| q.probs()[s] * (joint[s] / q.probs()[s]).ln())
                .sum();
            total += w * (exact - bound);
        }
    }
    total
}

#[test]
fn jensen_gap_vanishes_for_conditional_latent_factors() {
    let m = bernoulli_model();
    let data = [1, 0, 1, 1];
    for theta0 in 0..2 {
        let q_s: Vec<_> = data
            .iter()
            .map(|&y| {
                let w: Vec<f64> = (0..2)
                    .map(|s| m.grid()[theta0].weights.probs()[s] * m.grid()[theta0].emissions[s].probs()[y])
                    .collect();
                DiscreteDistribution::from_weights(&w).unwrap()
            })
            .collect();
        let q = FactorizedVariational::new(PointMass(theta0), q_s);
        let gap = jensen_gap(&m, &data, &q, 10, 0).unwrap();
        assert!(gap.value.abs() < 1e-14, "gap {}", gap.value);
        assert_eq!(gap.std_error, 0.0);
    }
}

#[test]
fn jensen_gap_is_zero_with_a_single_latent_state() {
    let m = TinyDiscreteModel::bernoulli_mixture(
        &[vec![0.3], vec![0.6], vec![0.9]],
        &[vec![1.0], vec![1.0], vec![1.0]],
        DiscreteDistribution::uniform(3),
        1,
    )
    .unwrap();
    let data = [0, 1, 1];
    let q = FactorizedVariational::new(
        GridFactor(DiscreteDistribution::new(vec![0.2, 0.5, 0.3]).unwrap()),
        vec![DiscreteDistribution::uniform(1); 3],
    );
    assert!(jensen_gap(&m, &data, &q, 10, 0).unwrap().value.abs() < 1e-14);
}

#[test]
fn jensen_gap_with_uniform_latents_matches_enumeration() {
    let m = bernoulli_model();
    let data = [1, 1, 0, 1, 0];
    let q_theta = [0.3, 0.7];
    let q_s = vec![DiscreteDistribution::uniform(2); data.len()];
    let q = FactorizedVariational::new(GridFactor(DiscreteDistribution::new(q_theta.to_vec()).unwrap()), q_s.clone());
    let gap = jensen_gap(&m, &data, &q, 10, 0).unwrap();
    let oracle = jensen_gap_oracle(&m, &data, &q_theta, &q_s);
    assert!(gap.within(oracle, 3.0));
    assert!((gap.value - oracle).abs() < 1e-12);
}

#[test]
fn objective_with_prior_factor_is_the_fit_term_alone() {
    let m = bernoulli_model();
    let data = [0, 1, 1];
    let q_s = vec![DiscreteDistribution::uniform(2); 3];
    let q = FactorizedVariational::new(GridFactor(m.prior().clone()), q_s.clone());
    let fit: f64 = (0..2)
        .map(|t| -m.prior().probs()[t] * latent_bound(&m, &data, &t, &q_s))
        .sum();
    for alpha in [0.2, 0.7, 1.0] {
        let v = alpha_objective(&m, &data, &q, &AlphaConfig::with_alpha(alpha), 10, 0).unwrap();
        assert!((v.value - fit).abs() < 1e-13);
    }
}

#[test]
fn objective_at_exact_posterior_is_negative_evidence() {
    let m = GaussianLocationModel::new(1.5, DVector::from_vec(vec![0.0, 1.0]), 4.0).unwrap();
    let mut rng = CounterRng::new(11);
    let data = m.sample(&DVector::from_vec(vec![0.8, -0.5]), 25, &mut rng);
    let post = m.fractional_posterior(&data, 1.0).unwrap();
    let q = FactorizedVariational::latent_free(GaussianFactor(post.clone()));
    let cfg = AlphaConfig::with_alpha(1.0);
    let evidence = m.log_evidence(&data).unwrap();

    // Closed form: the expected log-likelihood is exact, so the identity holds to rounding.
    let closed = -m.expected_log_lik(&data, &post) + gaussian_divergence(DivergenceKind::Kl, &post, m.prior()).unwrap();
    assert!((closed + evidence).abs() < 1e-9);

    // Monte-Carlo route agrees within its standard error.
    let mc = alpha_objective(&m, &data, &q, &cfg, 20_000, 3).unwrap();
    assert!(mc.within(-evidence, 3.0), "{mc:?} vs {}", -evidence);
    assert_eq!(jensen_gap(&m, &data, &q, 10, 0).unwrap().value, 0.0);
}

#[test]
fn elbo_decomposition_matches_enumerated_kl_to_posterior() {
    // log p(Y) − L(q) = KL(q ‖ p(θ, S | Y)) for every product q.
    let m = bernoulli_model();
    let data = [1, 0, 1, 1, 0, 1];
    let post = fractional_posterior_exact(&m, &data, 1.0).unwrap();
    let mut rng = CounterRng::new(2);
    for _ in 0..25 {
        let q_theta = binary(rng.uniform());
        let q_s: Vec<_> = data.iter().map(|_| binary(rng.uniform())).collect();
        let q = FactorizedVariational::new(GridFactor(q_theta.clone()), q_s.clone());
        let l = elbo(&m, &data, &q, 1, 0).unwrap().value;
        let kl = post.kl_from_product(&q_theta, &q_s).unwrap();
        assert!((post.log_normalizer() - l - kl).abs() < 1e-8);
    }
}

#[test]
fn fractional_posterior_identity_and_shared_minimizer() {
    let m = bernoulli_model();
    let data = [1, 0, 1];
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    for alpha in [0.3, 0.6, 0.9] {
        let cfg = AlphaConfig::with_alpha(alpha);
        let post = fractional_posterior_exact(&m, &data, alpha).unwrap();
        let mut best_psi = (f64::INFINITY, 0usize);
        let mut best_kl = (f64::INFINITY, 0usize);
        let mut index = 0;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    for &d in &grid {
                        let q_theta = binary(a);
                        let q_s = vec![binary(b), binary(c), binary(d)];
                        let q = FactorizedVariational::new(GridFactor(q_theta.clone()), q_s.clone());
                        let psi = alpha_objective(&m, &data, &q, &cfg, 1, 0).unwrap().value;
                        let kl = post.kl_from_product(&q_theta, &q_s).unwrap() + (1.0 - alpha) * latent_entropy(&q_s);
                        assert!((kl - (alpha * psi + post.log_normalizer())).abs() < 1e-10);
                        if psi < best_psi.0 {
                            best_psi = (psi, index);
                        }
                        if kl < best_kl.0 {
                            best_kl = (kl, index);
                        }
                        index += 1;
                    }
                }
            }
        }
        assert_eq!(best_psi.1, best_kl.1, "alpha {alpha}");
    }
}

#[test]
fn cavi_optimum_beats_random_factors() {
    let m = bernoulli_model();
    let data = [1, 1, 0, 1, 0, 0, 1];
    for alpha in [0.4, 1.0] {
        let cfg = AlphaConfig::with_alpha(alpha);
        let (opt, trace) = alpha_vb_cavi(&m, &data, &cfg).unwrap();
        assert!(trace.converged());
        assert!(trace.is_nondecreasing(1e-12));
        let best = alpha_objective(&m, &data, &opt, &cfg, 1, 0).unwrap().value;
        let mut rng = CounterRng::new(77);
        for _ in 0..50 {
            let q = FactorizedVariational::new(
                GridFactor(binary(rng.uniform())),
                data.iter().map(|_| binary(rng.uniform())).collect(),
            );
            assert!(best <= alpha_objective(&m, &data, &q, &cfg, 1, 0).unwrap().value + 1e-12);
        }
    }
}

#[test]
fn latent_free_elbo_is_bounded_by_evidence() {
    let e = |p: f64| DiscreteDistribution::new(vec![1.0 - p, p]).unwrap();
    let m = TinyDiscreteModel::latent_free(
        vec![e(0.1), e(0.4), e(0.7)],
        DiscreteDistribution::new(vec![0.2, 0.3, 0.5]).unwrap(),
        2,
    )
    .unwrap();
    let data = [1, 1, 0, 1];
    let post = fractional_posterior_exact(&m, &data, 1.0).unwrap();
    let evidence = post.log_normalizer();
    let exact = FactorizedVariational::latent_free(GridFactor(
        DiscreteDistribution::from_weights(&post.theta_marginal()).unwrap(),
    ));
    assert!((elbo(&m, &data, &exact, 1, 0).unwrap().value - evidence).abs() < 1e-12);
    let mut rng = CounterRng::new(4);
    for _ in 0..40 {
        let w: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
        let q = FactorizedVariational::latent_free(GridFactor(DiscreteDistribution::from_weights(&w).unwrap()));
        assert!(elbo(&m, &data, &q, 1, 0).unwrap().value < evidence);
    }
}

#[test]
fn marginal_likelihood_is_log_sum_exp_of_joint() {
    let m = bernoulli_model();
    let mut rng = CounterRng::new(9);
    for _ in 0..100 {
        let (theta, y) = (rng.below(2), rng.below(2));
        let direct: f64 = (0..2)
            .map(|s| (m.log_lik(&y, &theta, s) + m.log_latent_prior(&theta, s)).exp())
            .sum();
        assert!((m.log_marginal_lik(&y, &theta).exp() - direct).abs() < 1e-10);
    }
}

#[test]
fn infinite_kl_is_an_error() {
    let m = bernoulli_model();
    let q = FactorizedVariational::new(PointMass(0usize), vec![DiscreteDistribution::uniform(2)]);
    assert!(alpha_objective(&m, &[1], &q, &AlphaConfig::default(), 1, 0).is_err());
}

fn simplex(k: usize) -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|w| DiscreteDistribution::from_weights(&w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn jensen_gap_is_nonnegative(
        mu in prop::collection::vec(0.02f64..0.98, 6),
        pi in prop::collection::vec(0.05f64..0.95, 3),
        q_theta in simplex(3),
        q_s in prop::collection::vec(simplex(2), 1..7),
        seed in any::<u64>(),
    ) {
        let success: Vec<Vec<f64>> = mu.chunks(2).map(|c| c.to_vec()).collect();
        let weights: Vec<Vec<f64>> = pi.iter().map(|&p| vec![p, 1.0 - p]).collect();
        let m = TinyDiscreteModel::bernoulli_mixture(&success, &weights, DiscreteDistribution::uniform(3), 0).unwrap();
        let mut rng = CounterRng::new(seed);
        let (data, _) = m.sample(q_s.len(), &mut rng);
        let q = FactorizedVariational::new(GridFactor(q_theta), q_s);
        let gap = jensen_gap(&m, &data, &q, 10, seed).unwrap();
        prop_assert!(gap.value + 3.0 * gap.std_error >= -1e-12);
    }

    #[test]
    fn latent_entropy_is_bounded(q_s in prop::collection::vec(simplex(4), 0..8)) {
        let h = latent_entropy(&q_s);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= q_s.len() as f64 * 4f64.ln() + 1e-12);
        let direct: f64 = q_s.iter().map(|q| math::entropy(q.probs())).sum();
        prop_assert!((h - direct).abs() < 1e-12);
    }
}
