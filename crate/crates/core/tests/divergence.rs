use alphavb::divergence::*;
use alphavb::math;
use alphavb::rng::CounterRng;
use alphavb::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Composite Simpson rule on [lo, hi] with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn integrate_1d(kind: DivergenceKind, a: &GaussianDensity, b: &GaussianDensity) -> f64 {
    let pa = |x: f64| a.pdf(&DVector::from_element(1, x));
    let pb = |x: f64| b.pdf(&DVector::from_element(1, x));
    let (lo, hi, n) = (-40.0, 40.0, 400_000);
    match kind {
        DivergenceKind::Kl => simpson(|x| pa(x) * (a.log_pdf(&DVector::from_element(1, x)) - b.log_pdf(&DVector::from_element(1, x))), lo, hi, n),
        DivergenceKind::V => simpson(
            |x| {
                let l = a.log_pdf(&DVector::from_element(1, x)) - b.log_pdf(&DVector::from_element(1, x));
                pa(x) * l * l
            },
            lo,
            hi,
            n,
        ),
        DivergenceKind::HellingerSq => simpson(|x| (pa(x).sqrt() - pb(x).sqrt()).powi(2), lo, hi, n),
        DivergenceKind::Renyi(r) => simpson(|x| pa(x).powf(r) * pb(x).powf(1.0 - r), lo, hi, n).ln() / (r - 1.0),
    }
}

#[test]
fn gaussian_closed_forms_match_quadrature_in_one_dimension() {
    let pairs = [
        (GaussianDensity::scalar(0.0, 1.0).unwrap(), GaussianDensity::scalar(1.0, 1.0).unwrap()),
        (GaussianDensity::scalar(-0.5, 0.7).unwrap(), GaussianDensity::scalar(0.8, 2.3).unwrap()),
        (GaussianDensity::scalar(2.0, 3.0).unwrap(), GaussianDensity::scalar(1.5, 0.9).unwrap()),
    ];
    for (a, b) in &pairs {
        for kind in [DivergenceKind::Kl, DivergenceKind::V, DivergenceKind::HellingerSq] {
            let closed = gaussian_divergence(kind, a, b).unwrap();
            let numeric = integrate_1d(kind, a, b);
            assert!((closed - numeric).abs() < 1e-6, "{kind:?}: {closed} vs {numeric}");
        }
    }
    let (a, b) = &pairs[0];
    let half = DivergenceKind::renyi(0.5).unwrap();
    let closed = gaussian_divergence(half, a, b).unwrap();
    assert!((closed - 0.25).abs() < 1e-15);
    assert!((closed - integrate_1d(half, a, b)).abs() < 1e-6);
    let h2 = gaussian_divergence(DivergenceKind::HellingerSq, a, b).unwrap();
    assert!((h2 - 2.0 * (1.0 - (-0.125f64).exp())).abs() < 1e-15);
    assert!((gaussian_divergence(DivergenceKind::V, a, b).unwrap() - 1.25).abs() < 1e-14);
}

#[test]
fn gaussian_closed_forms_match_quadrature_in_two_dimensions() {
    let a = GaussianDensity::new(DVector::from_vec(vec![0.3, -0.2]), DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.4, 0.8]))
        .unwrap();
    let b = GaussianDensity::new(DVector::from_vec(vec![-0.4, 0.5]), DMatrix::from_row_slice(2, 2, &[0.9, -0.2, -0.2, 1.5]))
        .unwrap();
    let (lo, hi, n) = (-12.0, 12.0, 1200usize);
    let h = (hi - lo) / n as f64;
    let (mut kl, mut v, mut hell) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        for j in 0..=n {
            let x = DVector::from_vec(vec![lo + i as f64 * h, lo + j as f64 * h]);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 } * if j == 0 || j == n { 0.5 } else { 1.0 };
            let (la, lb) = (a.log_pdf(&x), b.log_pdf(&x));
            let pa = la.exp();
            kl += w * pa * (la - lb);
            v += w * pa * (la - lb).powi(2);
            hell += w * (pa.sqrt() - lb.exp().sqrt()).powi(2);
        }
    }
    let area = h * h;
    for (kind, numeric) in [
        (DivergenceKind::Kl, kl * area),
        (DivergenceKind::V, v * area),
        (DivergenceKind::HellingerSq, hell * area),
    ] {
        let closed = gaussian_divergence(kind, &a, &b).unwrap();
        assert!((closed - numeric).abs() < 1e-6, "{kind:?}: {closed} vs {numeric}");
    }
}

#[test]
fn monte_carlo_renyi_matches_closed_form() {
    let a = GaussianDensity::scalar(0.0, 1.0).unwrap();
    let b = GaussianDensity::scalar(1.0, 1.0).unwrap();
    let est = monte_carlo_renyi(
        |x: &DVector<f64>| a.log_pdf(x),
        |x: &DVector<f64>| b.log_pdf(x),
        0.5,
        |rng| b.sample(rng),
        1_000_000,
        17,
    )
    .unwrap();
    assert!(est.within(0.25, 3.0), "{est:?}");
}

#[test]
fn monte_carlo_renyi_is_label_permutation_invariant() {
    let comps: [(f64, f64); 2] = [(-1.5, 0.3), (2.0, 0.7)];
    let log_mix = |order: [usize; 2]| {
        move |x: &f64| {
            let terms: Vec<f64> = order
                .iter()
                .map(|&k| {
                    let (m, w) = comps[k];
                    w.ln() - 0.5 * (x - m).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln()
                })
                .collect();
            math::log_sum_exp(&terms)
        }
    };
    let sampler = |rng: &mut CounterRng| {
        let k = rng.categorical(&[0.3, 0.7]);
        rng.normal(comps[k].0, 1.0)
    };
    let est = monte_carlo_renyi(log_mix([0, 1]), log_mix([1, 0]), 0.5, sampler, 10_000, 3).unwrap();
    assert!(est.within(0.0, 3.0), "{est:?}");
}

#[test]
fn monte_carlo_error_shrinks_at_root_n() {
    let a = GaussianDensity::scalar(0.0, 1.0).unwrap();
    let b = GaussianDensity::scalar(0.8, 1.0).unwrap();
    let truth = gaussian_divergence(DivergenceKind::Renyi(0.5), &a, &b).unwrap();
    let rmse = |n: usize| {
        let sq: f64 = (0..60u64)
            .map(|seed| {
                let e = monte_carlo_renyi(
                    |x: &DVector<f64>| a.log_pdf(x),
                    |x: &DVector<f64>| b.log_pdf(x),
                    0.5,
                    |rng| b.sample(rng),
                    n,
                    seed,
                )
                .unwrap();
                (e.value - truth).powi(2)
            })
            .sum();
        (sq / 60.0).sqrt()
    };
    let ratio = rmse(500) / rmse(8000);
    // Sixteen times the samples should cut the error by about four.
    assert!((2.5..6.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn discrete_kl_example() {
    let p = DiscreteDistribution::new(vec![0.5, 0.5]).unwrap();
    let q = DiscreteDistribution::new(vec![0.25, 0.75]).unwrap();
    let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((discrete_divergence(DivergenceKind::Kl, &p, &q).unwrap() - expected).abs() < 1e-15);
    let a = DiscreteDistribution::point_mass(2, 0);
    let b = DiscreteDistribution::point_mass(2, 1);
    assert_eq!(discrete_divergence(DivergenceKind::Renyi(0.5), &a, &b), Err(Error::MutuallySingular));
}

fn pair(k: usize) -> impl Strategy<Value = (DiscreteDistribution, DiscreteDistribution)> {
    (
        prop::collection::vec(1e-3f64..1.0, k),
        prop::collection::vec(1e-3f64..1.0, k),
    )
        .prop_map(|(a, b)| {
            (
                DiscreteDistribution::from_weights(&a).unwrap(),
                DiscreteDistribution::from_weights(&b).unwrap(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hellinger_and_half_order_renyi_agree((p, q) in (2usize..8).prop_flat_map(pair)) {
        let h2 = discrete_divergence(DivergenceKind::HellingerSq, &p, &q).unwrap();
        let d = discrete_divergence(DivergenceKind::Renyi(0.5), &p, &q).unwrap();
        prop_assert!((d - (-2.0 * (1.0 - h2 / 2.0).ln())).abs() < 1e-10);
        prop_assert!(d >= h2 - 1e-12);
    }

    #[test]
    fn renyi_is_monotone_in_order((p, q) in (2usize..8).prop_flat_map(pair), a in 0.01f64..0.98, step in 0.001f64..0.5) {
        let b = (a + step).min(0.99);
        let da = discrete_divergence(DivergenceKind::Renyi(a), &p, &q).unwrap();
        let db = discrete_divergence(DivergenceKind::Renyi(b), &p, &q).unwrap();
        prop_assert!(da <= db + 1e-12);
    }

    #[test]
    fn divergences_are_nonnegative_and_vanish_on_identity((p, q) in (2usize..8).prop_flat_map(pair), r in 0.05f64..0.95) {
        for kind in [DivergenceKind::Kl, DivergenceKind::V, DivergenceKind::HellingerSq, DivergenceKind::Renyi(r)] {
            prop_assert!(discrete_divergence(kind, &p, &q).unwrap() >= 0.0);
            prop_assert!(discrete_divergence(kind, &p, &p).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn equal_covariance_renyi_is_quadratic(mu in prop::collection::vec(-3.0f64..3.0, 3), var in 0.1f64..4.0, r in 0.05f64..0.95) {
        let a = GaussianDensity::isotropic(DVector::from_vec(mu.clone()), var).unwrap();
        let b = GaussianDensity::isotropic(DVector::zeros(3), var).unwrap();
        let expected = r * DVector::from_vec(mu).norm_squared() / (2.0 * var);
        prop_assert!((gaussian_divergence(DivergenceKind::Renyi(r), &a, &b).unwrap() - expected).abs() < 1e-10);
    }
}
