use alphavb::lda::*;
use alphavb::objective::AlphaConfig;
use alphavb::rng::CounterRng;
use alphavb::synth::{lda_synth, LdaParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statrs::function::gamma::digamma;

fn cfg(alpha: f64, seed: u64) -> AlphaConfig {
    AlphaConfig {
        alpha,
        seed,
        ..AlphaConfig::default()
    }
}

fn random_corpus(docs: usize, vocab: usize, words: u32, seed: u64) -> LdaCorpus {
    let mut rng = CounterRng::new(seed);
    let triplets = (0..docs).flat_map(|d| {
        let mut out = Vec::new();
        for _ in 0..words {
            out.push((d, rng.below(vocab), 1u32));
        }
        out
    });
    let triplets: Vec<_> = triplets.collect();
    LdaCorpus::from_triplets(docs, vocab, triplets).unwrap()
}

/// Damped fixed-point iteration for one document, written out scalar by scalar.
fn damped_fixed_point(doc: &[(usize, u32)], elog_beta: &DMatrix<f64>, eta: f64, alpha: f64) -> DVector<f64> {
    let k = elog_beta.nrows();
    let mut gamma = vec![1.0; k];
    for _ in 0..20_000 {
        let total: f64 = gamma.iter().sum();
        let mut target = vec![eta; k];
        for &(w, c) in doc {
            let logits: Vec<f64> = (0..k)
                .map(|j| elog_beta[(j, w)] + alpha * (digamma(gamma[j]) - digamma(total)))
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for j in 0..k {
                target[j] += c as f64 * (logits[j] - m).exp() / z;
            }
        }
        for j in 0..k {
            gamma[j] = 0.5 * gamma[j] + 0.5 * target[j];
        }
    }
    DVector::from_vec(gamma)
}

#[test]
fn e_step_matches_a_damped_fixed_point_oracle() {
    let elog_beta = expected_log_beta(&DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 0.5, 2.5]));
    let doc = vec![(0usize, 3u32), (1, 2)];
    let start = DVector::from_element(2, 1.0);
    for alpha in [0.3, 0.7, 1.0] {
        let oracle = damped_fixed_point(&doc, &elog_beta, 0.5, alpha);
        let (phi, gamma) = e_step_doc_until(&doc, &elog_beta, &start, 0.5, alpha, 1e-12, 10_000);
        assert!((&gamma - &oracle).amax() < 1e-6, "{gamma} vs {oracle}");
        for n in 0..2 {
            assert!((phi.row(n).sum() - 1.0).abs() < 1e-12);
        }
        // The default stopping rule leaves an error of the order of its tolerance.
        let (_, rough) = e_step_doc(&doc, &elog_beta, &start, 0.5, alpha);
        assert!((&rough - &oracle).amax() < 1e-4);
    }
}

#[test]
fn one_word_document_has_a_closed_fixed_point() {
    // With a single token the fixed point satisfies γ = η + φ(γ) exactly.
    let lambda = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let corpus = LdaCorpus::new(2, vec![vec![(0, 1)]]).unwrap();
    let hyper = LdaHyper {
        k: 2,
        eta_beta: 0.5,
        eta_gamma: 0.5,
        c_exponent: None,
    };
    let state = LdaVariationalState {
        lambda,
        gamma: DMatrix::from_element(1, 2, 1.0),
        phi: vec![DMatrix::from_element(1, 2, 0.5)],
    };
    let elog_beta = expected_log_beta(&state.lambda);
    let doc = &corpus.docs()[0];
    let start = state.gamma.row(0).transpose();
    let (phi, gamma) = e_step_doc_until(doc, &elog_beta, &start, 0.5, 0.8, 1e-12, 10_000);
    let oracle = damped_fixed_point(doc, &elog_beta, 0.5, 0.8);
    assert!((&gamma - &oracle).amax() < 1e-6);
    assert!((gamma.sum() - 2.0).abs() < 1e-12);
    assert!((&gamma - (phi.row(0).transpose() + DVector::from_element(2, 0.5))).amax() < 1e-12);
    // A fit sweep on the one-document corpus lands on the same point.
    let one = AlphaConfig { max_iters: 1, ..cfg(0.8, 0) };
    let fit = fit_lda_from(&corpus, &hyper, &one, state).unwrap();
    assert!((fit.state.gamma.row(0).transpose() - &oracle).amax() < 1e-4);
}

#[test]
fn small_alpha_flattens_the_document_topic_influence() {
    let elog_beta = expected_log_beta(&DMatrix::from_row_slice(2, 3, &[2.0, 1.0, 1.0, 1.0, 1.0, 2.0]));
    let doc = vec![(1usize, 1u32)];
    let gamma = DVector::from_vec(vec![8.0, 0.3]);
    let likelihood_only = update_phi(&doc, &elog_beta, &gamma, 0.0);
    let mut last = f64::INFINITY;
    for alpha in [1.0, 0.5, 0.1, 0.01] {
        let phi = update_phi(&doc, &elog_beta, &gamma, alpha);
        let gap = (phi - &likelihood_only).amax();
        assert!(gap < last);
        last = gap;
    }
    assert!(last < 0.02);
}

/// Standard mean-field LDA written independently: digamma expectations,
/// per-token softmax, count-weighted sufficient statistics.
fn reference_sweep(corpus: &LdaCorpus, lambda: &DMatrix<f64>, gamma: &DMatrix<f64>, eb: f64, eg: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (k, v) = (lambda.nrows(), lambda.ncols());
    let mut elog_beta = DMatrix::zeros(k, v);
    for j in 0..k {
        let total: f64 = (0..v).map(|w| lambda[(j, w)]).sum();
        for w in 0..v {
            elog_beta[(j, w)] = digamma(lambda[(j, w)]) - digamma(total);
        }
    }
    let mut new_gamma = gamma.clone();
    let mut new_lambda = DMatrix::from_element(k, v, eb);
    for (d, doc) in corpus.docs().iter().enumerate() {
        let mut g: Vec<f64> = (0..k).map(|j| gamma[(d, j)]).collect();
        let mut resp = vec![vec![0.0; k]; doc.len()];
        for _ in 0..E_STEP_MAX_ITERS {
            let total: f64 = g.iter().sum();
            for (n, &(w, _)) in doc.iter().enumerate() {
                let logits: Vec<f64> = (0..k).map(|j| elog_beta[(j, w)] + digamma(g[j]) - digamma(total)).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                resp[n] = logits.iter().map(|l| (l - m).exp() / z).collect();
            }
            let next: Vec<f64> = (0..k)
                .map(|j| eg + doc.iter().zip(&resp).map(|(&(_, c), r)| c as f64 * r[j]).sum::<f64>())
                .collect();
            let change = next.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
            g = next;
            if change < E_STEP_TOL {
                break;
            }
        }
        for j in 0..k {
            new_gamma[(d, j)] = g[j];
        }
        for (&(w, c), r) in doc.iter().zip(&resp) {
            for j in 0..k {
                new_lambda[(j, w)] += c as f64 * r[j];
            }
        }
    }
    (new_lambda, new_gamma)
}

#[test]
fn unit_temperature_sweep_matches_standard_lda() {
    let corpus = random_corpus(6, 12, 30, 4);
    let hyper = LdaHyper::new(3, 12);
    let (eb, eg) = hyper.resolved(12).unwrap();
    let mut state = initial_state(&corpus, 3, eb, eg, 7);
    for _ in 0..3 {
        let (lambda, gamma) = reference_sweep(&corpus, &state.lambda, &state.gamma, eb, eg);
        let one = AlphaConfig { max_iters: 1, ..cfg(1.0, 0) };
        state = fit_lda_from(&corpus, &hyper, &one, state).unwrap().state;
        assert!((&state.lambda - lambda).amax() < 1e-9);
        assert!((&state.gamma - gamma).amax() < 1e-9);
    }
}

#[test]
fn only_the_assignment_update_depends_on_alpha() {
    let corpus = random_corpus(5, 10, 25, 9);
    let hyper = LdaHyper::new(2, 10);
    let (eb, eg) = hyper.resolved(10).unwrap();
    let init = initial_state(&corpus, 2, eb, eg, 1);
    for alpha in [0.2, 0.6, 1.0] {
        let one = AlphaConfig { max_iters: 1, ..cfg(alpha, 0) };
        let fit = fit_lda_from(&corpus, &hyper, &one, init.clone()).unwrap();
        // γ and λ are the α-free maps applied to the returned φ, bit for bit.
        for (d, doc) in corpus.docs().iter().enumerate() {
            let gamma = update_gamma(doc, &fit.state.phi[d], eg);
            assert_eq!(gamma, fit.state.gamma.row(d).transpose());
        }
        assert_eq!(m_step(&corpus, &fit.state.phi, 2, eb), fit.state.lambda);
    }
}

#[test]
fn converged_fit_is_a_local_maximum_of_the_bound() {
    let corpus = random_corpus(8, 15, 40, 2);
    let hyper = LdaHyper::new(3, 15);
    let (eb, eg) = hyper.resolved(15).unwrap();
    let mut rng = CounterRng::new(5);
    for alpha in [0.5, 1.0] {
        let fit = fit_lda(&corpus, &hyper, &AlphaConfig { elbo_tol: 1e-10, ..cfg(alpha, 3) }).unwrap();
        let best = objective(&corpus, &fit.state, eb, eg, alpha);
        for _ in 0..20 {
            let mut moved = fit.state.clone();
            let (j, w) = (rng.below(3), rng.below(15));
            moved.lambda[(j, w)] *= rng.normal(0.0, 0.05).exp();
            let d = rng.below(8);
            moved.gamma[(d, j)] *= rng.normal(0.0, 0.05).exp();
            assert!(objective(&corpus, &moved, eb, eg, alpha) <= best + 1e-7);
        }
    }
}

#[test]
fn permuting_initial_topics_permutes_the_fit() {
    let corpus = random_corpus(6, 12, 30, 13);
    let hyper = LdaHyper::new(3, 12);
    let (eb, eg) = hyper.resolved(12).unwrap();
    let init = initial_state(&corpus, 3, eb, eg, 2);
    let perm = [1usize, 2, 0];
    let permute = |s: &LdaVariationalState| LdaVariationalState {
        lambda: DMatrix::from_fn(3, 12, |j, w| s.lambda[(perm[j], w)]),
        gamma: DMatrix::from_fn(6, 3, |d, j| s.gamma[(d, perm[j])]),
        phi: s.phi.iter().map(|p| DMatrix::from_fn(p.nrows(), 3, |n, j| p[(n, perm[j])])).collect(),
    };
    let a = fit_lda_from(&corpus, &hyper, &cfg(0.7, 0), init.clone()).unwrap();
    let b = fit_lda_from(&corpus, &hyper, &cfg(0.7, 0), permute(&init)).unwrap();
    let expected = permute(&a.state);
    assert!((expected.lambda - b.state.lambda).amax() < 1e-9);
    assert!((expected.gamma - b.state.gamma).amax() < 1e-9);
}

#[test]
fn recovers_topics_on_a_synthetic_corpus() {
    let bundle = lda_synth(&LdaParams::default(), 3).unwrap();
    let hyper = LdaHyper::new(3, bundle.corpus.vocab_size());
    let fit = fit_lda(&bundle.corpus, &hyper, &cfg(0.95, 3)).unwrap();
    let estimated = topic_means(&fit.state.lambda);
    let matched = match_topics(&estimated, &bundle.topics);
    for (t, &e) in matched.iter().enumerate() {
        let truth: Vec<f64> = bundle.topics.row(t).iter().copied().collect();
        let est: Vec<f64> = estimated.row(e).iter().copied().collect();
        let hits = top_words(&est, 10).iter().filter(|w| top_words(&truth, 10).contains(w)).count();
        assert!(hits >= 8, "topic {t}: {hits} of 10");
    }
}

#[test]
fn corpus_csv_round_trips() {
    let corpus = random_corpus(4, 9, 12, 1);
    let path = std::env::temp_dir().join(format!("alphavb-lda-{}.csv", std::process::id()));
    corpus.write_csv(&path).unwrap();
    let back = LdaCorpus::read_csv(&path, Some(4), Some(9)).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(back, corpus);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn fits_stay_valid_and_monotone(seed in any::<u64>(), k in 2usize..5, alpha in 0.2f64..1.0) {
        let corpus = random_corpus(6, 14, 25, seed);
        let hyper = LdaHyper::new(k, 14);
        let (eb, eg) = hyper.resolved(14).unwrap();
        let fit = fit_lda(&corpus, &hyper, &cfg(alpha, seed)).unwrap();
        prop_assert!(fit.trace.is_nondecreasing(1e-8), "max decrease {}", fit.trace.max_decrease());
        prop_assert!(fit.state.lambda.iter().all(|&l| l >= eb));
        prop_assert!(fit.state.gamma.iter().all(|&g| g >= eg));
        for phi in &fit.state.phi {
            for n in 0..phi.nrows() {
                prop_assert!((phi.row(n).sum() - 1.0).abs() < 1e-10);
            }
        }
    }
}
