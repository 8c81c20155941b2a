//! α-VB for Gaussian mixtures with identity component covariance and known
//! mixing weights.
//!
//! Model: `y_i | s_i = k ~ N(μ_k, I_d)`, `P(s_i = k) = π_k`, `μ_k ~ N(μ₀, σ₀² I_d)`.
//! Variational family: `q(μ_k) = N(μ̃_k, σ̃_k² I_d)` and a categorical `q(s_i)`.
//!
//! The traced objective is
//!
//! ```text
//! G(q) = α E_q[log p(Y, S | μ)] + H(q_S) − Σ_k KL(q(μ_k) ‖ p(μ_k))
//! ```
//!
//! which equals `log Z_α − KL(q ‖ p_α)` for the joint α-fractional posterior.
//! The responsibility step maximizes it exactly. With [`UpdateRule::Derived`]
//! the component step does too, so the trace is monotone. [`UpdateRule::Paper`]
//! scales the data precision by `1/α` instead; the two rules agree at α = 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::{DiscreteDistribution, GaussianDensity};
use crate::error::{Error, Result};
use crate::math;
use crate::objective::{AlphaConfig, ElboTrace, LatentModel, ThetaFactor, ThetaNodes};
use crate::rng::{derive_seed, CounterRng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    pub mu0: DVector<f64>,
    pub sigma0_sq: f64,
    pub pi: DiscreteDistribution,
}

impl GmmPrior {
    pub fn new(mu0: DVector<f64>, sigma0_sq: f64, pi: DiscreteDistribution) -> Result<Self> {
        let prior = Self { mu0, sigma0_sq, pi };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma0_sq {} must be positive", self.sigma0_sq)));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Precision `1/σ₀² + N_k/α`, data sum unscaled.
    Paper,
    /// Precision `1/σ₀² + α N_k`, data sum scaled by α: exact coordinate ascent on G.
    #[default]
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmVariationalState {
    /// K × d matrix of component means μ̃_k.
    pub mu_tilde: DMatrix<f64>,
    pub sigma_tilde_sq: Vec<f64>,
    /// n × K responsibilities q(s_i = k).
    pub resp: DMatrix<f64>,
}

impl GmmVariationalState {
    pub fn k(&self) -> usize {
        self.mu_tilde.nrows()
    }

    /// Applies a label permutation: new component `j` is old component `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k();
        Self {
            mu_tilde: DMatrix::from_fn(k, self.mu_tilde.ncols(), |j, c| self.mu_tilde[(perm[j], c)]),
            sigma_tilde_sq: perm.iter().map(|&p| self.sigma_tilde_sq[p]).collect(),
            resp: DMatrix::from_fn(self.resp.nrows(), k, |i, j| self.resp[(i, perm[j])]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub state: GmmVariationalState,
    pub trace: ElboTrace,
}

fn check_data(data: &DMatrix<f64>, prior: &GmmPrior) -> Result<()> {
    prior.validate()?;
    if data.ncols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            got: data.ncols(),
        });
    }
    if data.nrows() == 0 {
        return Err(Error::InvalidData("no observations".into()));
    }
    Ok(())
}

/// `q(s_i = k) ∝ exp{α[log π_k + ⟨y_i, μ̃_k⟩ − (‖μ̃_k‖² + d σ̃_k²)/2]}`.
pub fn update_responsibilities(
    data: &DMatrix<f64>,
    state: &GmmVariationalState,
    prior: &GmmPrior,
    alpha: f64,
) -> DMatrix<f64> {
    let (n, k, d) = (data.nrows(), state.k(), data.ncols() as f64);
    let offsets: Vec<f64> = (0..k)
        .map(|j| {
            prior.pi.probs()[j].ln()
                - 0.5 * (state.mu_tilde.row(j).norm_squared() + d * state.sigma_tilde_sq[j])
        })
        .collect();
    let cross = data * state.mu_tilde.transpose();
    let mut resp = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            row[j] = alpha * (offsets[j] + cross[(i, j)]);
        }
        math::normalize_log_weights(&mut row);
        for j in 0..k {
            resp[(i, j)] = row[j];
        }
    }
    resp
}

/// Component means and variances given responsibilities.
pub fn update_components(
    data: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    prior: &GmmPrior,
    alpha: f64,
    rule: UpdateRule,
) -> (DMatrix<f64>, Vec<f64>) {
    let (k, d) = (resp.ncols(), data.ncols());
    let sums = resp.transpose() * data;
    let prior_prec = 1.0 / prior.sigma0_sq;
    let mut mu = DMatrix::zeros(k, d);
    let mut var = vec![0.0; k];
    for j in 0..k {
        let nk: f64 = resp.column(j).sum();
        let (prec_scale, sum_scale) = match rule {
            UpdateRule::Paper => (1.0 / alpha, 1.0),
            UpdateRule::Derived => (alpha, alpha),
        };
        var[j] = 1.0 / (prior_prec + prec_scale * nk);
        for c in 0..d {
            mu[(j, c)] = var[j] * (prior.mu0[c] * prior_prec + sum_scale * sums[(j, c)]);
        }
    }
    (mu, var)
}

/// `KL(N(m, s² I) ‖ N(μ₀, σ₀² I))`.
fn component_kl(m: &DVector<f64>, s2: f64, prior: &GmmPrior) -> f64 {
    let d = prior.dim() as f64;
    let ratio = s2 / prior.sigma0_sq;
    0.5 * d * (ratio - 1.0 - ratio.ln()) + (m - &prior.mu0).norm_squared() / (2.0 * prior.sigma0_sq)
}

/// The tempered evidence bound G(q) described in the module docs.
pub fn objective(data: &DMatrix<f64>, state: &GmmVariationalState, prior: &GmmPrior, alpha: f64) -> f64 {
    let (n, k, d) = (data.nrows(), state.k(), data.ncols() as f64);
    let mut fit = 0.0;
    let mut entropy = 0.0;
    for i in 0..n {
        let y = data.row(i);
        for j in 0..k {
            let r = state.resp[(i, j)];
            if r == 0.0 {
                continue;
            }
            let sq = (y - state.mu_tilde.row(j)).norm_squared() + d * state.sigma_tilde_sq[j];
            fit += r * (prior.pi.probs()[j].ln() - 0.5 * (d * LN_2PI + sq));
            entropy -= r * r.ln();
        }
    }
    let kl: f64 = (0..k)
        .map(|j| component_kl(&state.mu_tilde.row(j).transpose(), state.sigma_tilde_sq[j], prior))
        .sum();
    alpha * fit + entropy - kl
}

/// Seeded k-means++ seeding: the first centre uniformly, later ones with
/// probability proportional to squared distance from the nearest chosen centre.
pub fn initial_state(data: &DMatrix<f64>, prior: &GmmPrior, seed: u64) -> Result<GmmVariationalState> {
    check_data(data, prior)?;
    let (n, k, d) = (data.nrows(), prior.k(), data.ncols());
    let mut rng = CounterRng::new(seed);
    let mut centres = Vec::with_capacity(k);
    centres.push(rng.below(n));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| (data.row(i) - data.row(centres[0])).norm_squared())
        .collect();
    while centres.len() < k {
        let next = if dist.iter().any(|&x| x > 0.0) {
            rng.categorical(&dist)
        } else {
            rng.below(n)
        };
        centres.push(next);
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min((data.row(i) - data.row(next)).norm_squared());
        }
    }
    Ok(GmmVariationalState {
        mu_tilde: DMatrix::from_fn(k, d, |j, c| data[(centres[j], c)]),
        sigma_tilde_sq: vec![prior.sigma0_sq; k],
        resp: DMatrix::from_element(n, k, 1.0 / k as f64),
    })
}

/// Number of seeded starts tried when no initial state is supplied.
pub const DEFAULT_RESTARTS: usize = 5;

/// Alternates responsibility and component updates until the change in G
/// falls below `cfg.elbo_tol` or `cfg.max_iters` sweeps have run. Without an
/// explicit `init`, runs [`DEFAULT_RESTARTS`] seeded starts and keeps the fit
/// with the largest final G.
pub fn fit_gmm(
    data: &DMatrix<f64>,
    prior: &GmmPrior,
    cfg: &AlphaConfig,
    rule: UpdateRule,
    init: Option<GmmVariationalState>,
) -> Result<GmmFit> {
    cfg.validate()?;
    check_data(data, prior)?;
    if let Some(s) = init {
        if s.k() != prior.k() || s.mu_tilde.ncols() != prior.dim() || s.resp.nrows() != data.nrows() {
            return Err(Error::InvalidParameter("initial state does not match data and prior".into()));
        }
        return Ok(run_cavi(data, prior, cfg, rule, s));
    }
    let mut best: Option<GmmFit> = None;
    for r in 0..DEFAULT_RESTARTS {
        let start = initial_state(data, prior, derive_seed(cfg.seed, r as u64))?;
        let fit = run_cavi(data, prior, cfg, rule, start);
        let score = fit.trace.last().unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| score > b.trace.last().unwrap_or(f64::NEG_INFINITY)) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_cavi(data: &DMatrix<f64>, prior: &GmmPrior, cfg: &AlphaConfig, rule: UpdateRule, mut state: GmmVariationalState) -> GmmFit {
    let mut trace = ElboTrace::default();
    for _ in 0..cfg.max_iters {
        state.resp = update_responsibilities(data, &state, prior, cfg.alpha);
        let (mu, var) = update_components(data, &state.resp, prior, cfg.alpha, rule);
        state.mu_tilde = mu;
        state.sigma_tilde_sq = var;
        if trace.push(objective(data, &state, prior, cfg.alpha), cfg.elbo_tol) {
            break;
        }
    }
    GmmFit { state, trace }
}

/// Plug-in mixture density `Σ_k π_k N(y; μ_k, I)` with means as rows.
pub fn predictive_density(means: &DMatrix<f64>, pi: &DiscreteDistribution, y: &DVector<f64>) -> f64 {
    let d = y.len() as f64;
    (0..means.nrows())
        .map(|k| {
            let sq = (y - means.row(k).transpose()).norm_squared();
            pi.probs()[k] * (-0.5 * (d * LN_2PI + sq)).exp()
        })
        .sum()
}

/// Best label alignment of estimated means to true means by exhaustive search
/// over permutations (K is small). Returns `perm` with estimate row `perm[k]`
/// matched to truth row `k`, and the largest matched Euclidean distance.
pub fn match_labels(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let k = truth.nrows();
    let dist = DMatrix::from_fn(k, k, |t, e| (truth.row(t) - estimate.row(e)).norm());
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (perm.clone(), f64::INFINITY, f64::INFINITY);
    permute(&mut perm, 0, &mut |p| {
        let worst = (0..k).map(|t| dist[(t, p[t])]).fold(0.0, f64::max);
        let total: f64 = (0..k).map(|t| dist[(t, p[t])]).sum();
        if (total, worst) < (best.2, best.1) {
            best = (p.to_vec(), worst, total);
        }
    });
    (best.0, best.1)
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// The mixture as a [`LatentModel`] over θ = μ (a K × d matrix).
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub prior: GmmPrior,
}

impl LatentModel for GmmModel {
    type Param = DMatrix<f64>;
    type Obs = DVector<f64>;

    fn n_states(&self) -> usize {
        self.prior.k()
    }

    fn log_lik(&self, y: &DVector<f64>, theta: &DMatrix<f64>, s: usize) -> f64 {
        let d = y.len() as f64;
        -0.5 * (d * LN_2PI + (y - theta.row(s).transpose()).norm_squared())
    }

    fn log_latent_prior(&self, _theta: &DMatrix<f64>, s: usize) -> f64 {
        self.prior.pi.probs()[s].ln()
    }

    fn prior_log_density(&self, theta: &DMatrix<f64>) -> f64 {
        let d = self.prior.dim() as f64;
        let s2 = self.prior.sigma0_sq;
        (0..theta.nrows())
            .map(|k| {
                let sq = (theta.row(k).transpose() - &self.prior.mu0).norm_squared();
                -0.5 * (d * (LN_2PI + s2.ln()) + sq / s2)
            })
            .sum()
    }

    fn sample_prior(&self, rng: &mut CounterRng) -> DMatrix<f64> {
        let sd = self.prior.sigma0_sq.sqrt();
        DMatrix::from_fn(self.prior.k(), self.prior.dim(), |_, c| rng.normal(self.prior.mu0[c], sd))
    }
}

/// The component-mean block of a fitted state, `Π_k N(μ̃_k, σ̃_k² I)`.
#[derive(Debug, Clone)]
pub struct GmmMeanFactor {
    pub mu_tilde: DMatrix<f64>,
    pub sigma_tilde_sq: Vec<f64>,
}

impl GmmMeanFactor {
    pub fn from_state(state: &GmmVariationalState) -> Self {
        Self {
            mu_tilde: state.mu_tilde.clone(),
            sigma_tilde_sq: state.sigma_tilde_sq.clone(),
        }
    }

    pub fn component(&self, k: usize) -> Result<GaussianDensity> {
        GaussianDensity::isotropic(self.mu_tilde.row(k).transpose(), self.sigma_tilde_sq[k])
    }

    pub fn sample(&self, rng: &mut CounterRng) -> DMatrix<f64> {
        let sd: Vec<f64> = self.sigma_tilde_sq.iter().map(|v| v.sqrt()).collect();
        DMatrix::from_fn(self.mu_tilde.nrows(), self.mu_tilde.ncols(), |k, c| {
            rng.normal(self.mu_tilde[(k, c)], sd[k])
        })
    }
}

impl ThetaFactor<GmmModel> for GmmMeanFactor {
    fn nodes(&self, n: usize, rng: &mut CounterRng) -> ThetaNodes<DMatrix<f64>> {
        ThetaNodes::sampled((0..n).map(|_| self.sample(rng)).collect())
    }

    fn kl_to_prior(&self, model: &GmmModel) -> Result<f64> {
        Ok((0..self.mu_tilde.nrows())
            .map(|k| component_kl(&self.mu_tilde.row(k).transpose(), self.sigma_tilde_sq[k], &model.prior))
            .sum())
    }
}

/// Responsibilities as per-observation latent factors.
pub fn latent_factors(resp: &DMatrix<f64>) -> Result<Vec<DiscreteDistribution>> {
    (0..resp.nrows())
        .map(|i| DiscreteDistribution::from_weights(&resp.row(i).iter().copied().collect::<Vec<_>>()))
        .collect()
}
