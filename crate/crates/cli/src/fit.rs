//! One model fit at one α, its recovery metrics and the state record.

use std::collections::BTreeMap;

use alphavb::gmm::{fit_gmm, match_labels, GmmVariationalState};
use alphavb::lda::{fit_lda, match_topics, top_words, topic_means, LdaHyper, LdaVariationalState};
use alphavb::linreg::{fit_blm, fit_hdr, BlmPrior, LowDimState, SpikeSlabState};
use alphavb::objective::{AlphaConfig, ElboTrace};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, ResolvedConfig};
use crate::data::Dataset;
use crate::CliError;

/// Inclusion probabilities above this count as recovered support; below
/// `1 − RECOVERY_PHI` as a recovered null.
pub const RECOVERY_PHI: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelState {
    Gmm(GmmVariationalState),
    SpikeSlab(SpikeSlabState),
    Blm(LowDimState),
    Lda(LdaVariationalState),
}

/// The state JSON written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    pub model: ModelKind,
    pub alpha: f64,
    pub seed: u64,
    pub sweeps: usize,
    pub converged: bool,
    pub objective: f64,
    /// Recovery metrics against the truth, when the truth is known.
    pub metrics: BTreeMap<String, f64>,
    pub state: ModelState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub record: FitRecord,
    pub trace: ElboTrace,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn rows_are_distributions(m: &DMatrix<f64>) -> bool {
    m.row_iter()
        .all(|r| r.iter().all(|&p| (0.0..=1.0).contains(&p)) && (r.sum() - 1.0).abs() < 1e-8)
}

impl FitRecord {
    /// Checks shapes, ranges and normalization of the stored state.
    pub fn validate(&self) -> Result<(), String> {
        ensure(self.alpha > 0.0 && self.alpha <= 1.0, || format!("alpha {} outside (0, 1]", self.alpha))?;
        ensure(self.sweeps > 0, || "no sweeps recorded".into())?;
        ensure(self.objective.is_finite(), || "objective is not finite".into())?;
        ensure(self.metrics.values().all(|v| v.is_finite()), || "metric is not finite".into())?;
        let kind_matches = matches!(
            (&self.state, self.model),
            (ModelState::Gmm(_), ModelKind::Gmm)
                | (ModelState::SpikeSlab(_), ModelKind::SpikeSlab)
                | (ModelState::Blm(_), ModelKind::Blm)
                | (ModelState::Lda(_), ModelKind::Lda)
        );
        ensure(kind_matches, || "state does not match the model".into())?;
        match &self.state {
            ModelState::Gmm(s) => {
                ensure(s.resp.ncols() == s.mu_tilde.nrows(), || "responsibilities and means disagree on K".into())?;
                ensure(s.sigma_tilde_sq.len() == s.mu_tilde.nrows(), || "one variance per component".into())?;
                ensure(s.sigma_tilde_sq.iter().all(|&v| v > 0.0 && v.is_finite()), || "variances must be positive".into())?;
                ensure(finite(&s.mu_tilde), || "means must be finite".into())?;
                ensure(rows_are_distributions(&s.resp), || "responsibility rows must be distributions".into())
            }
            ModelState::SpikeSlab(s) => {
                let d = s.mu.len();
                ensure(s.phi.len() == d && s.sigma_sq.len() == d, || "coefficient vectors differ in length".into())?;
                ensure(s.phi.iter().all(|&p| (0.0..=1.0).contains(&p)), || "phi outside [0, 1]".into())?;
                ensure(s.sigma_sq.iter().all(|&v| v > 0.0 && v.is_finite()), || "slab variances must be positive".into())?;
                ensure(s.mu.iter().all(|v| v.is_finite()), || "slab means must be finite".into())
            }
            ModelState::Blm(s) => {
                let d = s.beta_mean.len();
                ensure(s.beta_cov.shape() == (d, d), || "covariance shape".into())?;
                ensure((&s.beta_cov - s.beta_cov.transpose()).amax() < 1e-8, || "covariance is not symmetric".into())?;
                ensure(s.beta_cov.diagonal().iter().all(|&v| v > 0.0), || "covariance diagonal must be positive".into())?;
                ensure(s.inv_gamma_shape > 0.0 && s.inv_gamma_rate > 0.0, || "noise factor must be proper".into())
            }
            ModelState::Lda(s) => {
                ensure(s.lambda.iter().all(|&v| v > 0.0 && v.is_finite()), || "lambda must be positive".into())?;
                ensure(s.gamma.iter().all(|&v| v > 0.0 && v.is_finite()), || "gamma must be positive".into())?;
                ensure(s.gamma.nrows() == s.phi.len(), || "one phi block per document".into())?;
                ensure(s.phi.iter().all(rows_are_distributions), || "phi rows must be distributions".into())
            }
        }
    }
}

fn compute(e: alphavb::Error) -> CliError {
    CliError::Compute(e.to_string())
}

pub fn lda_hyper(cfg: &ResolvedConfig, vocab_size: usize, truth: Option<&DMatrix<f64>>) -> LdaHyper {
    let k = cfg.solver.lda.k.or(truth.map(|t| t.nrows())).unwrap_or(3);
    LdaHyper {
        c_exponent: cfg.solver.lda.c_exponent,
        ..LdaHyper::new(k, vocab_size)
    }
}

/// Fits `model` to `data` at one α.
pub fn fit_model(data: &Dataset, model: ModelKind, alpha: f64, cfg: &ResolvedConfig) -> Result<FitOutcome, CliError> {
    let acfg = AlphaConfig {
        alpha,
        max_iters: cfg.solver.max_iters,
        elbo_tol: cfg.solver.elbo_tol,
        seed: cfg.seed,
        ..AlphaConfig::default()
    };
    let mut metrics = BTreeMap::new();
    let (state, trace) = match (data, model) {
        (Dataset::Mixture { y, prior, truth }, ModelKind::Gmm) => {
            let fit = fit_gmm(y, prior, &acfg, cfg.solver.gmm.rule, None).map_err(compute)?;
            if let Some(t) = truth {
                metrics.insert("max_mean_error".into(), match_labels(&fit.state.mu_tilde, t).1);
            }
            (ModelState::Gmm(fit.state), fit.trace)
        }
        (Dataset::Regression { data, truth }, ModelKind::SpikeSlab) => {
            let fit = fit_hdr(data, &cfg.solver.hdr, &acfg).map_err(compute)?;
            spike_slab_metrics(&fit.state, truth.as_ref(), cfg.report.threshold, &mut metrics);
            (ModelState::SpikeSlab(fit.state), fit.trace)
        }
        (Dataset::Regression { data, truth }, ModelKind::Blm) => {
            let b = &cfg.solver.blm;
            let prior = BlmPrior::isotropic(data.d(), b.prior_var, b.shape, b.rate);
            let fit = fit_blm(&data.x, &data.y, &prior, &acfg).map_err(compute)?;
            if let Some(t) = truth {
                metrics.insert("squared_risk".into(), fit.state.squared_risk(t));
            }
            (ModelState::Blm(fit.state), fit.trace)
        }
        (Dataset::Corpus { corpus, truth }, ModelKind::Lda) => {
            let hyper = lda_hyper(cfg, corpus.vocab_size(), truth.as_ref());
            let fit = fit_lda(corpus, &hyper, &acfg).map_err(compute)?;
            if let Some(t) = truth {
                let overlaps = top_word_overlaps(&topic_means(&fit.state.lambda), t, cfg.report.top_words);
                let min = overlaps.iter().copied().min().unwrap_or(0);
                let mean = overlaps.iter().sum::<usize>() as f64 / overlaps.len().max(1) as f64;
                metrics.insert("min_top_word_overlap".into(), min as f64);
                metrics.insert("mean_top_word_overlap".into(), mean);
            }
            (ModelState::Lda(fit.state), fit.trace)
        }
        _ => return Err(CliError::Config(format!("data does not suit model {}", model.name()))),
    };
    let record = FitRecord {
        model,
        alpha,
        seed: cfg.seed,
        sweeps: trace.sweeps(),
        converged: trace.converged(),
        objective: trace.last().unwrap_or(f64::NAN),
        metrics,
        state,
    };
    Ok(FitOutcome { record, trace })
}

/// For each true topic, how many of its top `n` words appear among the top
/// `n` of its matched estimate.
pub fn top_word_overlaps(estimated: &DMatrix<f64>, truth: &DMatrix<f64>, n: usize) -> Vec<usize> {
    let matched = match_topics(estimated, truth);
    (0..truth.nrows())
        .map(|t| {
            let want = top_words(truth.row(t).iter().copied().collect::<Vec<_>>().as_slice(), n);
            let got = top_words(estimated.row(matched[t]).iter().copied().collect::<Vec<_>>().as_slice(), n);
            want.iter().filter(|w| got.contains(w)).count()
        })
        .collect()
}

fn spike_slab_metrics(
    s: &SpikeSlabState,
    truth: Option<&DVector<f64>>,
    threshold: f64,
    metrics: &mut BTreeMap<String, f64>,
) {
    let selected = s.selected(threshold);
    metrics.insert("selected".into(), selected.len() as f64);
    let Some(beta) = truth else { return };
    let support: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    let tp = selected.iter().filter(|j| support.contains(j)).count();
    let min_support_phi = support.iter().map(|&j| s.phi[j]).fold(1.0, f64::min);
    let max_null_phi = (0..beta.len())
        .filter(|j| !support.contains(j))
        .map(|j| s.phi[j])
        .fold(0.0, f64::max);
    let mean = s.mean();
    let max_coef_error = support.iter().map(|&j| (mean[j] - beta[j]).abs()).fold(0.0, f64::max);
    let recovered = min_support_phi > RECOVERY_PHI && max_null_phi < 1.0 - RECOVERY_PHI;
    metrics.insert("true_positives".into(), tp as f64);
    metrics.insert("false_positives".into(), (selected.len() - tp) as f64);
    metrics.insert("min_support_phi".into(), min_support_phi);
    metrics.insert("max_null_phi".into(), max_null_phi);
    metrics.insert("max_coef_error".into(), max_coef_error);
    metrics.insert("support_recovered".into(), if recovered { 1.0 } else { 0.0 });
}
