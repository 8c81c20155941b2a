//! Fully enumerable models: a finite parameter grid, finite latent states and a
//! finite observation alphabet. Everything about them, including the exact
//! α-fractional posterior, can be computed by brute force.

use serde::{Deserialize, Serialize};

use crate::divergence::{discrete_divergence, DiscreteDistribution, DivergenceKind};
use crate::error::{Error, Result};
use crate::math;
use crate::objective::{
    alpha_objective, latent_bound, optimal_latent_factors, AlphaConfig, ElboTrace, FactorizedVariational, LatentModel,
    ThetaFactor, ThetaNodes,
};
use crate::rng::CounterRng;

/// Largest `|grid| · Kⁿ` table the exact routines will build.
pub const ENUMERATION_BUDGET: f64 = 1e7;

/// One grid point θ = (μ, π): an emission distribution per latent state and
/// the latent-state weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyParam {
    pub emissions: Vec<DiscreteDistribution>,
    pub weights: DiscreteDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyDiscreteModel {
    grid: Vec<TinyParam>,
    prior: DiscreteDistribution,
    n_symbols: usize,
    truth_index: usize,
    latent_free: bool,
}

impl TinyDiscreteModel {
    pub fn new(grid: Vec<TinyParam>, prior: DiscreteDistribution, truth_index: usize) -> Result<Self> {
        Self::build(grid, prior, truth_index, false)
    }

    /// A model without latent variables: one emission distribution per grid point.
    pub fn latent_free(
        emissions: Vec<DiscreteDistribution>,
        prior: DiscreteDistribution,
        truth_index: usize,
    ) -> Result<Self> {
        let grid = emissions
            .into_iter()
            .map(|e| TinyParam {
                emissions: vec![e],
                weights: DiscreteDistribution::point_mass(1, 0),
            })
            .collect();
        Self::build(grid, prior, truth_index, true)
    }

    /// Two-symbol emissions: grid point `g` has per-state success probabilities
    /// `success[g]` and state weights `weights[g]`.
    pub fn bernoulli_mixture(
        success: &[Vec<f64>],
        weights: &[Vec<f64>],
        prior: DiscreteDistribution,
        truth_index: usize,
    ) -> Result<Self> {
        if success.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: success.len(),
                got: weights.len(),
            });
        }
        let grid = success
            .iter()
            .zip(weights)
            .map(|(mu, pi)| {
                let emissions = mu
                    .iter()
                    .map(|&p| DiscreteDistribution::new(vec![1.0 - p, p]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TinyParam {
                    emissions,
                    weights: DiscreteDistribution::new(pi.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, prior, truth_index)
    }

    fn build(grid: Vec<TinyParam>, prior: DiscreteDistribution, truth_index: usize, latent_free: bool) -> Result<Self> {
        let first = grid
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty parameter grid".into()))?;
        if prior.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: prior.len(),
            });
        }
        if truth_index >= grid.len() {
            return Err(Error::InvalidParameter(format!("truth index {truth_index} out of range")));
        }
        let k = first.weights.len();
        let n_symbols = first.emissions[0].len();
        for p in &grid {
            if p.weights.len() != k || p.emissions.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: p.emissions.len(),
                });
            }
            if let Some(e) = p.emissions.iter().find(|e| e.len() != n_symbols) {
                return Err(Error::DimensionMismatch {
                    expected: n_symbols,
                    got: e.len(),
                });
            }
        }
        Ok(Self {
            grid,
            prior,
            n_symbols,
            truth_index,
            latent_free,
        })
    }

    pub fn grid(&self) -> &[TinyParam] {
        &self.grid
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn prior(&self) -> &DiscreteDistribution {
        &self.prior
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn truth_index(&self) -> usize {
        self.truth_index
    }

    /// Latent states used for enumeration (1 for latent-free models).
    pub fn effective_states(&self) -> usize {
        self.grid[0].weights.len()
    }

    /// Per-observation marginal `p(· | θ) = Σ_s π_s p(· | μ, s)`.
    pub fn marginal(&self, theta: usize) -> DiscreteDistribution {
        let p = &self.grid[theta];
        let mut probs = vec![0.0; self.n_symbols];
        for (e, &w) in p.emissions.iter().zip(p.weights.probs()) {
            for (acc, &x) in probs.iter_mut().zip(e.probs()) {
                *acc += w * x;
            }
        }
        DiscreteDistribution::from_weights(&probs).expect("mixture of distributions is a distribution")
    }

    /// `D(p(· | θ) ‖ p(· | θ*))` for the given kind.
    pub fn divergence_to_truth(&self, theta: usize, kind: DivergenceKind) -> Result<f64> {
        discrete_divergence(kind, &self.marginal(theta), &self.marginal(self.truth_index))
    }

    /// Draws `n` observations (and their latent states) from the truth.
    pub fn sample(&self, n: usize, rng: &mut CounterRng) -> (Vec<usize>, Vec<usize>) {
        let truth = &self.grid[self.truth_index];
        (0..n)
            .map(|_| {
                let s = rng.categorical(truth.weights.probs());
                (rng.categorical(truth.emissions[s].probs()), s)
            })
            .unzip()
    }

    /// Enumeration size `|grid| · Kⁿ`, checked against the budget.
    pub fn check_budget(&self, n: usize) -> Result<usize> {
        let required = self.grid.len() as f64 * (self.effective_states() as f64).powi(n as i32);
        if required > ENUMERATION_BUDGET {
            return Err(Error::BudgetExceeded {
                required,
                budget: ENUMERATION_BUDGET,
            });
        }
        Ok(required as usize)
    }
}

impl LatentModel for TinyDiscreteModel {
    type Param = usize;
    type Obs = usize;

    fn n_states(&self) -> usize {
        if self.latent_free {
            0
        } else {
            self.effective_states()
        }
    }

    fn log_lik(&self, y: &usize, theta: &usize, s: usize) -> f64 {
        self.grid[*theta].emissions[s].probs()[*y].ln()
    }

    fn log_latent_prior(&self, theta: &usize, s: usize) -> f64 {
        if self.latent_free {
            0.0
        } else {
            self.grid[*theta].weights.probs()[s].ln()
        }
    }

    fn prior_log_density(&self, theta: &usize) -> f64 {
        self.prior.probs()[*theta].ln()
    }

    fn sample_prior(&self, rng: &mut CounterRng) -> usize {
        rng.categorical(self.prior.probs())
    }
}

/// A variational factor over the parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFactor(pub DiscreteDistribution);

impl GridFactor {
    pub fn exact_nodes(&self) -> ThetaNodes<usize> {
        let (points, weights) = self
            .0
            .probs()
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i, w))
            .unzip();
        ThetaNodes {
            points,
            weights,
            exact: true,
        }
    }
}

impl ThetaFactor<TinyDiscreteModel> for GridFactor {
    fn nodes(&self, _n: usize, _rng: &mut CounterRng) -> ThetaNodes<usize> {
        self.exact_nodes()
    }

    fn kl_to_prior(&self, model: &TinyDiscreteModel) -> Result<f64> {
        discrete_divergence(DivergenceKind::Kl, &self.0, model.prior()).map_err(|e| match e {
            Error::NotAbsolutelyContinuous { .. } => Error::InfiniteKl,
            other => other,
        })
    }
}

/// Exact joint α-fractional posterior over (θ, sⁿ), proportional to
/// `[p(Yⁿ | μ, sⁿ) π_{sⁿ}]^α p_θ(θ)`.
///
/// Latent configurations are indexed in base K with observation 0 as the
/// most significant digit.
#[derive(Debug, Clone)]
pub struct FractionalPosterior {
    n_grid: usize,
    n_states: usize,
    n_obs: usize,
    probs: Vec<f64>,
    log_normalizer: f64,
}

impl FractionalPosterior {
    pub fn configs(&self) -> usize {
        self.probs.len() / self.n_grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `log ∫ Σ_{sⁿ} [p(Yⁿ | μ, sⁿ) π_{sⁿ}]^α p_θ(θ)`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn prob(&self, theta: usize, states: &[usize]) -> f64 {
        self.probs[theta * self.configs() + self.config_index(states)]
    }

    pub fn config_index(&self, states: &[usize]) -> usize {
        debug_assert_eq!(states.len(), self.n_obs);
        states.iter().fold(0, |acc, &s| acc * self.n_states + s)
    }

    pub fn decode_config(&self, mut index: usize) -> Vec<usize> {
        let mut states = vec![0; self.n_obs];
        for slot in states.iter_mut().rev() {
            *slot = index % self.n_states;
            index /= self.n_states;
        }
        states
    }

    pub fn theta_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.configs()).map(|c| c.iter().sum()).collect()
    }

    /// `KL(q_θ × Π_i q_{S_i} ‖ p_α)` by enumeration.
    pub fn kl_from_product(&self, q_theta: &DiscreteDistribution, q_latent: &[DiscreteDistribution]) -> Result<f64> {
        if q_theta.len() != self.n_grid {
            return Err(Error::DimensionMismatch {
                expected: self.n_grid,
                got: q_theta.len(),
            });
        }
        let latent_free = self.n_states == 1 && q_latent.is_empty();
        if !latent_free && q_latent.len() != self.n_obs {
            return Err(Error::DimensionMismatch {
                expected: self.n_obs,
                got: q_latent.len(),
            });
        }
        let configs = self.configs();
        let mut kl = 0.0;
        for (theta, &qt) in q_theta.probs().iter().enumerate() {
            if qt == 0.0 {
                continue;
            }
            for c in 0..configs {
                let qs: f64 = if latent_free {
                    1.0
                } else {
                    self.decode_config(c)
                        .iter()
                        .zip(q_latent)
                        .map(|(&s, q)| q.probs()[s])
                        .product()
                };
                let q = qt * qs;
                if q == 0.0 {
                    continue;
                }
                let p = self.probs[theta * configs + c];
                if p == 0.0 {
                    return Err(Error::NotAbsolutelyContinuous {
                        index: theta * configs + c,
                    });
                }
                kl += q * (q / p).ln();
            }
        }
        Ok(kl)
    }
}

/// Enumerates the α-fractional posterior of a tiny model. With `α = 1` this is
/// the ordinary augmented posterior; with no data it is the prior.
pub fn fractional_posterior_exact(model: &TinyDiscreteModel, data: &[usize], alpha: f64) -> Result<FractionalPosterior> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1]")));
    }
    if let Some(&y) = data.iter().find(|&&y| y >= model.n_symbols()) {
        return Err(Error::InvalidData(format!("symbol {y} outside alphabet")));
    }
    let size = model.check_budget(data.len())?;
    let k = model.effective_states();
    let n_grid = model.grid_len();
    let configs = size / n_grid;
    let mut log_w = Vec::with_capacity(size);
    let mut states = vec![0usize; data.len()];
    for theta in 0..n_grid {
        let log_prior = model.prior_log_density(&theta);
        for c in 0..configs {
            let mut idx = c;
            for slot in states.iter_mut().rev() {
                *slot = idx % k;
                idx /= k;
            }
            let joint: f64 = data
                .iter()
                .zip(&states)
                .map(|(y, &s)| model.log_lik(y, &theta, s) + model.log_latent_prior(&theta, s))
                .sum();
            log_w.push(if log_prior == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                alpha * joint + log_prior
            });
        }
    }
    let log_normalizer = math::log_sum_exp(&log_w);
    let probs = log_w.iter().map(|l| (l - log_normalizer).exp()).collect();
    Ok(FractionalPosterior {
        n_grid,
        n_states: k,
        n_obs: data.len(),
        probs,
        log_normalizer,
    })
}

/// Coordinate descent on the α-VB objective over the grid family
/// `q_θ × Π_i q_{S_i}`. Both updates are exact block minimizers:
/// `q_θ(θ) ∝ p_θ(θ) exp(α ℓ̂(θ))` and `q_{S_i}(s) ∝ exp(E_{q_θ}[log p(y_i | μ, s) π_s])`.
///
/// The trace records the negated objective, so it is nondecreasing.
pub fn alpha_vb_cavi(
    model: &TinyDiscreteModel,
    data: &[usize],
    cfg: &AlphaConfig,
) -> Result<(FactorizedVariational<GridFactor>, ElboTrace)> {
    cfg.validate()?;
    let mut q = FactorizedVariational::new(GridFactor(model.prior().clone()), Vec::new());
    q.q_latent = optimal_latent_factors(model, data, &q.q_theta.exact_nodes());
    let mut trace = ElboTrace::default();
    for _ in 0..cfg.max_iters {
        let log_w: Vec<f64> = (0..model.grid_len())
            .map(|t| model.prior_log_density(&t) + cfg.alpha * latent_bound(model, data, &t, &q.q_latent))
            .collect();
        let mut w = log_w;
        math::normalize_log_weights(&mut w);
        q.q_theta = GridFactor(DiscreteDistribution::from_weights(&w)?);
        q.q_latent = optimal_latent_factors(model, data, &q.q_theta.exact_nodes());
        let psi = alpha_objective(model, data, &q, cfg, 1, cfg.seed)?.value;
        if trace.push(-psi, cfg.elbo_tol) {
            break;
        }
    }
    Ok((q, trace))
}
