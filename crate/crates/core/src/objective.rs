//! The α-VB objective and its pieces.
//!
//! For a latent-variable model `p(y | θ) = Σ_s π_s p(y | μ, s)` and a
//! mean-field variational distribution `q_θ(θ) Π_i q_{S_i}(s_i)`, the
//! implementable α-VB objective is
//!
//! ```text
//! −E_{q_θ}[ Σ_i Σ_s q_{S_i}(s) log( p(y_i | μ, s) π_s / q_{S_i}(s) ) ] + α⁻¹ KL(q_θ ‖ p_θ)
//! ```
//!
//! which differs from the truth-anchored objective only by the constant
//! `log p(Y | θ*)`. At α = 1 it is the negative ELBO. The Jensen gap is the
//! average shortfall of the inner latent-variable bound below the exact
//! log-likelihood.
//!
//! Expectations over `q_θ` run on [`ThetaNodes`]: exact weighted atoms when the
//! factor has finite support, seeded Monte-Carlo draws otherwise.

use serde::{Deserialize, Serialize};

use crate::divergence::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::math::{self, McEstimate};
use crate::rng::CounterRng;

/// Default number of `q_θ` draws for Monte-Carlo expectations.
pub const DEFAULT_THETA_SAMPLES: usize = 1000;

/// Likelihood and prior hooks a model exposes to the objective.
///
/// Latent-free models report `n_states() == 0`; `log_lik(y, θ, 0)` is then the
/// full per-observation log-likelihood and the latent factor list is empty.
pub trait LatentModel {
    type Param;
    type Obs;

    fn n_states(&self) -> usize;

    /// `log p(y | μ, s)`.
    fn log_lik(&self, y: &Self::Obs, theta: &Self::Param, s: usize) -> f64;

    /// `log π_s`.
    fn log_latent_prior(&self, _theta: &Self::Param, _s: usize) -> f64 {
        0.0
    }

    /// `log p(y | θ)`, by default a log-sum-exp over latent states.
    fn log_marginal_lik(&self, y: &Self::Obs, theta: &Self::Param) -> f64 {
        let k = self.n_states();
        if k == 0 {
            return self.log_lik(y, theta, 0);
        }
        let terms: Vec<f64> = (0..k)
            .map(|s| self.log_lik(y, theta, s) + self.log_latent_prior(theta, s))
            .collect();
        math::log_sum_exp(&terms)
    }

    fn prior_log_density(&self, theta: &Self::Param) -> f64;

    fn sample_prior(&self, rng: &mut CounterRng) -> Self::Param;
}

/// Weighted evaluation points for an expectation over `q_θ`.
#[derive(Debug, Clone)]
pub struct ThetaNodes<P> {
    pub points: Vec<P>,
    pub weights: Vec<f64>,
    /// True when the nodes integrate exactly (finite support).
    pub exact: bool,
}

impl<P> ThetaNodes<P> {
    pub fn sampled(points: Vec<P>) -> Self {
        let w = 1.0 / points.len() as f64;
        Self {
            weights: vec![w; points.len()],
            points,
            exact: false,
        }
    }

    /// Weighted mean of per-node values, with a Monte-Carlo standard error
    /// unless the nodes are exact.
    pub fn expectation(&self, values: &[f64]) -> McEstimate {
        if self.exact {
            let v = values.iter().zip(&self.weights).map(|(v, w)| v * w).sum();
            McEstimate {
                value: v,
                std_error: 0.0,
                n_samples: values.len(),
            }
        } else {
            McEstimate::from_samples(values)
        }
    }
}

/// The parameter block `q_θ` of a factorized variational distribution.
pub trait ThetaFactor<M: LatentModel> {
    fn nodes(&self, n_samples: usize, rng: &mut CounterRng) -> ThetaNodes<M::Param>;

    /// `KL(q_θ ‖ p_θ)` in closed form against the model's prior.
    fn kl_to_prior(&self, model: &M) -> Result<f64>;
}

/// A point mass `δ_θ₀`. Its KL to a continuous prior is infinite.
#[derive(Debug, Clone)]
pub struct PointMass<P>(pub P);

impl<M> ThetaFactor<M> for PointMass<M::Param>
where
    M: LatentModel,
    M::Param: Clone,
{
    fn nodes(&self, _n: usize, _rng: &mut CounterRng) -> ThetaNodes<M::Param> {
        ThetaNodes {
            points: vec![self.0.clone()],
            weights: vec![1.0],
            exact: true,
        }
    }

    fn kl_to_prior(&self, _model: &M) -> Result<f64> {
        Err(Error::InfiniteKl)
    }
}

/// `q_θ × Π_i q_{S_i}`.
#[derive(Debug, Clone)]
pub struct FactorizedVariational<Q> {
    pub q_theta: Q,
    pub q_latent: Vec<DiscreteDistribution>,
}

impl<Q> FactorizedVariational<Q> {
    pub fn new(q_theta: Q, q_latent: Vec<DiscreteDistribution>) -> Self {
        Self { q_theta, q_latent }
    }

    pub fn latent_free(q_theta: Q) -> Self {
        Self {
            q_theta,
            q_latent: Vec::new(),
        }
    }
}

/// Temperature and solver controls shared by every fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaConfig {
    pub alpha: f64,
    pub max_iters: usize,
    /// Absolute change in the tracked objective that counts as converged.
    pub elbo_tol: f64,
    pub seed: u64,
    pub n_theta_samples: usize,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            max_iters: 500,
            elbo_tol: 1e-6,
            seed: 0,
            n_theta_samples: DEFAULT_THETA_SAMPLES,
        }
    }
}

impl AlphaConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.elbo_tol > 0.0) {
            return Err(Error::InvalidParameter("elbo_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if self.n_theta_samples == 0 {
            return Err(Error::InvalidParameter("n_theta_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Objective values recorded after every CAVI sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTrace {
    pub values: Vec<f64>,
    /// Number of sweeps after which the convergence test first passed.
    pub converged_at: Option<usize>,
}

impl ElboTrace {
    /// Records a sweep; returns true once two consecutive values are within `tol`.
    pub fn push(&mut self, value: f64, tol: f64) -> bool {
        let done = matches!(self.values.last(), Some(prev) if (value - prev).abs() < tol);
        self.values.push(value);
        if done && self.converged_at.is_none() {
            self.converged_at = Some(self.values.len());
        }
        done
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    pub fn sweeps(&self) -> usize {
        self.values.len()
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Largest decrease between consecutive sweeps (0 if monotone).
    pub fn max_decrease(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }

    pub fn is_nondecreasing(&self, tol: f64) -> bool {
        self.max_decrease() <= tol
    }
}

fn check_latent<M: LatentModel>(model: &M, n_obs: usize, q_latent: &[DiscreteDistribution]) -> Result<()> {
    let k = model.n_states();
    if k == 0 {
        if !q_latent.is_empty() {
            return Err(Error::InvalidParameter("latent-free model takes no latent factors".into()));
        }
        return Ok(());
    }
    if q_latent.len() != n_obs {
        return Err(Error::DimensionMismatch {
            expected: n_obs,
            got: q_latent.len(),
        });
    }
    if let Some(bad) = q_latent.iter().find(|q| q.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: bad.len(),
        });
    }
    Ok(())
}

/// `Σ_i Σ_s q_{S_i}(s) log( p(y_i | μ, s) π_s / q_{S_i}(s) )`, the latent
/// lower bound on `log p(Y | θ)`.
pub fn latent_bound<M: LatentModel>(
    model: &M,
    data: &[M::Obs],
    theta: &M::Param,
    q_latent: &[DiscreteDistribution],
) -> f64 {
    if model.n_states() == 0 {
        return data.iter().map(|y| model.log_lik(y, theta, 0)).sum();
    }
    data.iter()
        .zip(q_latent)
        .map(|(y, q)| {
            q.probs()
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(s, &w)| w * (model.log_lik(y, theta, s) + model.log_latent_prior(theta, s) - w.ln()))
                .sum::<f64>()
        })
        .sum()
}

/// Exact log-likelihood `Σ_i log p(y_i | θ)`.
pub fn log_likelihood<M: LatentModel>(model: &M, data: &[M::Obs], theta: &M::Param) -> f64 {
    data.iter().map(|y| model.log_marginal_lik(y, theta)).sum()
}

/// Average Jensen gap `E_{q_θ}[ℓ_n(θ) − ℓ̂_n(θ)]`.
pub fn jensen_gap<M, Q>(
    model: &M,
    data: &[M::Obs],
    q: &FactorizedVariational<Q>,
    n_theta_samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    M: LatentModel,
    Q: ThetaFactor<M>,
{
    check_latent(model, data.len(), &q.q_latent)?;
    if model.n_states() == 0 {
        return Ok(McEstimate::exact(0.0));
    }
    let mut rng = CounterRng::new(seed);
    let nodes = q.q_theta.nodes(n_theta_samples, &mut rng);
    let gaps: Vec<f64> = nodes
        .points
        .iter()
        .map(|theta| log_likelihood(model, data, theta) - latent_bound(model, data, theta, &q.q_latent))
        .collect();
    Ok(nodes.expectation(&gaps))
}

/// The α-VB objective without the `log p(Y | θ*)` anchor.
pub fn alpha_objective<M, Q>(
    model: &M,
    data: &[M::Obs],
    q: &FactorizedVariational<Q>,
    cfg: &AlphaConfig,
    n_theta_samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    M: LatentModel,
    Q: ThetaFactor<M>,
{
    cfg.validate()?;
    check_latent(model, data.len(), &q.q_latent)?;
    let kl = q.q_theta.kl_to_prior(model)?;
    if !kl.is_finite() {
        return Err(Error::InfiniteKl);
    }
    let mut rng = CounterRng::new(seed);
    let nodes = q.q_theta.nodes(n_theta_samples, &mut rng);
    let fits: Vec<f64> = nodes
        .points
        .iter()
        .map(|theta| -latent_bound(model, data, theta, &q.q_latent))
        .collect();
    let mut est = nodes.expectation(&fits);
    est.value += kl / cfg.alpha;
    Ok(est)
}

/// `L(q) = E_q[ℓ̂_n(θ)] − KL(q_θ ‖ p_θ)`.
pub fn elbo<M, Q>(
    model: &M,
    data: &[M::Obs],
    q: &FactorizedVariational<Q>,
    n_theta_samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    M: LatentModel,
    Q: ThetaFactor<M>,
{
    let cfg = AlphaConfig::with_alpha(1.0);
    let mut est = alpha_objective(model, data, q, &cfg, n_theta_samples, seed)?;
    est.value = -est.value;
    Ok(est)
}

/// Total entropy of the latent factors, `Σ_i H(q_{S_i})`.
pub fn latent_entropy(q_latent: &[DiscreteDistribution]) -> f64 {
    q_latent.iter().map(|q| q.entropy()).sum()
}

/// The coordinate-optimal latent factors for fixed `q_θ`:
/// `q_{S_i}(s) ∝ exp(E_{q_θ}[log p(y_i | μ, s) + log π_s])`.
pub fn optimal_latent_factors<M>(model: &M, data: &[M::Obs], nodes: &ThetaNodes<M::Param>) -> Vec<DiscreteDistribution>
where
    M: LatentModel,
{
    let k = model.n_states();
    if k == 0 {
        return Vec::new();
    }
    data.iter()
        .map(|y| {
            let mut logits: Vec<f64> = (0..k)
                .map(|s| {
                    nodes
                        .points
                        .iter()
                        .zip(&nodes.weights)
                        .map(|(theta, w)| w * (model.log_lik(y, theta, s) + model.log_latent_prior(theta, s)))
                        .sum::<f64>()
                })
                .collect();
            math::normalize_log_weights(&mut logits);
            DiscreteDistribution::from_weights(&logits).expect("normalized logits form a distribution")
        })
        .collect()
}
