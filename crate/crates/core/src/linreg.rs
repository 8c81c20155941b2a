//! α-VB for linear regression `y = Xβ + w`, `w ~ N(0, σ² I)`.
//!
//! Two solvers:
//!
//! * [`fit_hdr`]: spike-and-slab selection for `d ≫ n` with known σ. Each
//!   coordinate has `q(β_j, z_j) = φ_j N(β_j; μ_j, σ_j²) + (1 − φ_j) δ₀(β_j)`.
//!   Tempering enters only through `σ̃² = σ²/α`.
//! * [`fit_blm`]: the low-dimensional conjugate model with unknown σ², fitted
//!   by two-block coordinate ascent on a Gaussian `q(β)` and an inverse-gamma
//!   `q(σ²)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::divergence::{gaussian_divergence, DivergenceKind, GaussianDensity};
use crate::error::{Error, Result};
use crate::math::{logistic, logit, xlogx};
use crate::objective::{AlphaConfig, ElboTrace};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Noise standard deviation (ignored by [`fit_blm`], which learns it).
    pub sigma: f64,
}

impl RegressionData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, sigma: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma {sigma} must be positive")));
        }
        Ok(Self { x, y, sigma })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabState {
    pub mu: DVector<f64>,
    pub sigma_sq: DVector<f64>,
    pub phi: DVector<f64>,
    pub nu1: f64,
}

impl SpikeSlabState {
    /// Posterior mean of β, `φ_j μ_j`.
    pub fn mean(&self) -> DVector<f64> {
        self.phi.component_mul(&self.mu)
    }

    /// Coordinates with inclusion probability above `threshold`.
    pub fn selected(&self, threshold: f64) -> Vec<usize> {
        (0..self.phi.len()).filter(|&j| self.phi[j] > threshold).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdrSettings {
    /// Slab variance multiplier ν₁: the slab is `N(0, ν₁ σ̃²)`.
    pub nu1: f64,
    /// Prior inclusion probability; `None` means `1/d`.
    pub inclusion_prob: Option<f64>,
    /// Re-estimate σ from the residuals of the posterior mean after every
    /// sweep. Breaks the monotonicity guarantee, so it is off by default.
    pub plug_in_sigma: bool,
    /// Update order within a sweep.
    pub schedule: HdrSchedule,
}

/// How a spike-and-slab sweep visits the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HdrSchedule {
    /// One coordinate at a time against the current residual. Each step is an
    /// exact maximizer of the bound, so the trace never decreases.
    #[default]
    Coordinate,
    /// Joint solve for μ followed by all local updates. With d > n this can
    /// diverge: once most φ_j are small the ridge term vanishes and X'X has
    /// rank n.
    Batch,
}

impl Default for HdrSettings {
    fn default() -> Self {
        Self {
            nu1: 10.0,
            inclusion_prob: None,
            plug_in_sigma: false,
            schedule: HdrSchedule::Coordinate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdrFit {
    pub state: SpikeSlabState,
    pub trace: ElboTrace,
    /// Noise sd in force at the end (differs from the input only with the plug-in).
    pub sigma: f64,
}

/// `μ = (X'X + Φ/ν₁)⁻¹ X'y` through a Cholesky factorization.
///
/// The tempering cancels here: both sides of the normal equations carry σ̃².
pub fn solve_coefficients(data: &RegressionData, phi: &DVector<f64>, nu1: f64) -> Result<DVector<f64>> {
    let xtx = data.x.transpose() * &data.x;
    let xty = data.x.transpose() * &data.y;
    solve_with_gram(&xtx, &xty, phi, nu1)
}

fn solve_with_gram(xtx: &DMatrix<f64>, xty: &DVector<f64>, phi: &DVector<f64>, nu1: f64) -> Result<DVector<f64>> {
    let mut a = xtx.clone();
    for j in 0..a.nrows() {
        a[(j, j)] += phi[j] / nu1;
    }
    let chol = a.clone().cholesky().ok_or(Error::SingularSystem)?;
    let mu = chol.solve(xty);
    let residual = (&a * &mu - xty).norm();
    if !residual.is_finite() || residual > 1e-8 * xty.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::SingularSystem);
    }
    Ok(mu)
}

/// Slab variances and inclusion probabilities given the coefficient means.
///
/// `σ_j² = σ̃²/(diag_j + φ_j/ν₁)` uses the incoming φ, then
/// `φ_j = logistic(logit ρ + ½ log(σ_j²/(ν₁σ̃²)) + μ_j²/(2σ_j²))`.
pub fn update_local(
    gram_diag: &DVector<f64>,
    mu: &DVector<f64>,
    phi: &DVector<f64>,
    nu1: f64,
    sigma: f64,
    alpha: f64,
    inclusion_prob: f64,
) -> (DVector<f64>, DVector<f64>) {
    let tilde_sq = sigma * sigma / alpha;
    let prior_logit = logit(inclusion_prob);
    let sigma_sq = DVector::from_fn(mu.len(), |j, _| tilde_sq / (gram_diag[j] + phi[j] / nu1));
    let new_phi = DVector::from_fn(mu.len(), |j, _| {
        let s2 = sigma_sq[j];
        logistic(prior_logit + 0.5 * (s2 / (nu1 * tilde_sq)).ln() + mu[j] * mu[j] / (2.0 * s2))
    });
    (sigma_sq, new_phi)
}

/// Tempered evidence bound for the spike-and-slab family:
/// `α E log p(y | β) − Σ_j KL(q(β_j, z_j) ‖ p(β_j, z_j))` with slab `N(0, ν₁σ̃²)`.
pub fn hdr_elbo(
    data: &RegressionData,
    state: &SpikeSlabState,
    sigma: f64,
    alpha: f64,
    inclusion_prob: f64,
) -> f64 {
    let gram_diag = DVector::from_fn(data.d(), |j, _| data.x.column(j).norm_squared());
    hdr_elbo_with(data, &gram_diag, state, sigma, alpha, inclusion_prob)
}

fn hdr_elbo_with(
    data: &RegressionData,
    gram_diag: &DVector<f64>,
    state: &SpikeSlabState,
    sigma: f64,
    alpha: f64,
    rho: f64,
) -> f64 {
    let s2 = sigma * sigma;
    let slab = state.nu1 * s2 / alpha;
    let mean = state.mean();
    let resid = (&data.y - &data.x * &mean).norm_squared();
    let spread: f64 = (0..data.d())
        .map(|j| {
            let (p, m, v) = (state.phi[j], state.mu[j], state.sigma_sq[j]);
            gram_diag[j] * (p * (m * m + v) - p * p * m * m)
        })
        .sum();
    let fit = -0.5 * data.n() as f64 * (LN_2PI + s2.ln()) - (resid + spread) / (2.0 * s2);
    let kl: f64 = (0..data.d())
        .map(|j| {
            let (p, m, v) = (state.phi[j], state.mu[j], state.sigma_sq[j]);
            let bern = xlogx(p) - p * rho.ln() + xlogx(1.0 - p) - (1.0 - p) * (1.0 - rho).ln();
            bern + p * 0.5 * ((slab / v).ln() + (v + m * m) / slab - 1.0)
        })
        .sum();
    alpha * fit - kl
}

/// Spike-and-slab α-VB: starting from `μ = 0, φ = 1`, runs sweeps of the
/// chosen schedule until the bound changes by less than `cfg.elbo_tol`.
pub fn fit_hdr(data: &RegressionData, settings: &HdrSettings, cfg: &AlphaConfig) -> Result<HdrFit> {
    cfg.validate()?;
    let d = data.d();
    if d < 2 {
        return Err(Error::InvalidParameter("spike-and-slab selection needs d >= 2".into()));
    }
    if !(settings.nu1 > 0.0) {
        return Err(Error::InvalidParameter("nu1 must be positive".into()));
    }
    let rho = settings.inclusion_prob.unwrap_or(1.0 / d as f64);
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("inclusion probability {rho} outside (0, 1)")));
    }
    let gram_diag = DVector::from_fn(d, |j, _| data.x.column(j).norm_squared());
    let normal_eqs = match settings.schedule {
        HdrSchedule::Batch => Some((data.x.transpose() * &data.x, data.x.transpose() * &data.y)),
        HdrSchedule::Coordinate => None,
    };
    let mut sigma = data.sigma;
    let mut state = SpikeSlabState {
        mu: DVector::zeros(d),
        sigma_sq: DVector::from_element(d, sigma * sigma / cfg.alpha),
        phi: DVector::from_element(d, 1.0),
        nu1: settings.nu1,
    };
    let mut trace = ElboTrace::default();
    for _ in 0..cfg.max_iters {
        match &normal_eqs {
            Some((xtx, xty)) => {
                state.mu = solve_with_gram(xtx, xty, &state.phi, settings.nu1)?;
                let (sigma_sq, phi) =
                    update_local(&gram_diag, &state.mu, &state.phi, settings.nu1, sigma, cfg.alpha, rho);
                state.sigma_sq = sigma_sq;
                state.phi = phi;
            }
            None => coordinate_sweep(data, &gram_diag, &mut state, sigma, cfg.alpha, rho),
        }
        if settings.plug_in_sigma {
            let resid = (&data.y - &data.x * state.mean()).norm_squared();
            sigma = (resid / data.n() as f64).sqrt().max(1e-8);
        }
        if trace.push(hdr_elbo_with(data, &gram_diag, &state, sigma, cfg.alpha, rho), cfg.elbo_tol) {
            break;
        }
    }
    Ok(HdrFit { state, trace, sigma })
}

/// One pass of exact coordinate updates. For coefficient j, with `r_j` the
/// residual excluding j: `σ_j² = σ̃²/(diag_j + 1/ν₁)`, `μ_j = σ_j² X_j'r_j/σ̃²`,
/// and φ_j from the same logistic rule as [`update_local`].
fn coordinate_sweep(
    data: &RegressionData,
    gram_diag: &DVector<f64>,
    state: &mut SpikeSlabState,
    sigma: f64,
    alpha: f64,
    rho: f64,
) {
    let tilde_sq = sigma * sigma / alpha;
    let nu1 = state.nu1;
    let prior_logit = logit(rho);
    let mut fitted = &data.x * state.mean();
    for j in 0..data.d() {
        let col = data.x.column(j);
        fitted.axpy(-state.phi[j] * state.mu[j], &col, 1.0);
        let s2 = tilde_sq / (gram_diag[j] + 1.0 / nu1);
        let m = s2 / tilde_sq * col.dot(&(&data.y - &fitted));
        state.sigma_sq[j] = s2;
        state.mu[j] = m;
        state.phi[j] = logistic(prior_logit + 0.5 * (s2 / (nu1 * tilde_sq)).ln() + m * m / (2.0 * s2));
        fitted.axpy(state.phi[j] * m, &col, 1.0);
    }
}

/// Conjugate priors `β ~ N(m₀, S₀)` and `σ² ~ IG(a₀, b₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlmPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub shape: f64,
    pub rate: f64,
}

impl BlmPrior {
    /// `N(0, v I)` and `IG(a, b)`.
    pub fn isotropic(d: usize, var: f64, shape: f64, rate: f64) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::from_diagonal_element(d, d, var),
            shape,
            rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDimState {
    pub beta_mean: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub inv_gamma_shape: f64,
    pub inv_gamma_rate: f64,
}

impl LowDimState {
    /// `E_q ‖β − β*‖² = ‖m − β*‖² + tr S`.
    pub fn squared_risk(&self, beta_star: &DVector<f64>) -> f64 {
        (&self.beta_mean - beta_star).norm_squared() + self.beta_cov.trace()
    }

    pub fn expected_precision(&self) -> f64 {
        self.inv_gamma_shape / self.inv_gamma_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlmFit {
    pub state: LowDimState,
    pub trace: ElboTrace,
}

/// `KL(IG(a, b) ‖ IG(a₀, b₀))`, equal to the KL between the precision gammas.
fn inv_gamma_kl(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln()) + a * (b0 - b) / b
}

/// `α E log p(y | β, σ²) − KL(q(β) ‖ p(β)) − KL(q(σ²) ‖ p(σ²))`.
pub fn blm_elbo(x: &DMatrix<f64>, y: &DVector<f64>, prior: &BlmPrior, state: &LowDimState, alpha: f64) -> Result<f64> {
    let n = y.len() as f64;
    let (a, b) = (state.inv_gamma_shape, state.inv_gamma_rate);
    let sq = (y - x * &state.beta_mean).norm_squared() + (x.transpose() * x * &state.beta_cov).trace();
    let e_log_var = b.ln() - digamma(a);
    let fit = -0.5 * n * (LN_2PI + e_log_var) - 0.5 * (a / b) * sq;
    let q_beta = GaussianDensity::new(state.beta_mean.clone(), state.beta_cov.clone())?;
    let p_beta = GaussianDensity::new(prior.mean.clone(), prior.cov.clone())?;
    let kl_beta = gaussian_divergence(DivergenceKind::Kl, &q_beta, &p_beta)?;
    Ok(alpha * fit - kl_beta - inv_gamma_kl(a, b, prior.shape, prior.rate))
}

/// Two-block coordinate ascent for the conjugate linear model:
/// `S = (S₀⁻¹ + α E[σ⁻²] X'X)⁻¹`, `m = S(S₀⁻¹m₀ + α E[σ⁻²] X'y)`,
/// `a = a₀ + αn/2`, `b = b₀ + (α/2) E‖y − Xβ‖²`.
pub fn fit_blm(x: &DMatrix<f64>, y: &DVector<f64>, prior: &BlmPrior, cfg: &AlphaConfig) -> Result<BlmFit> {
    cfg.validate()?;
    let (n, d) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if prior.mean.len() != d || prior.cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: prior.mean.len(),
        });
    }
    if !(prior.shape > 0.0 && prior.rate > 0.0) {
        return Err(Error::InvalidParameter("inverse-gamma prior must be proper".into()));
    }
    let prior_prec = prior
        .cov
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let prior_shift = &prior_prec * &prior.mean;
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let alpha = cfg.alpha;
    let mut state = LowDimState {
        beta_mean: prior.mean.clone(),
        beta_cov: prior.cov.clone(),
        inv_gamma_shape: prior.shape + 0.5 * alpha * n as f64,
        inv_gamma_rate: prior.rate,
    };
    let mut trace = ElboTrace::default();
    for _ in 0..cfg.max_iters {
        let w = alpha * state.expected_precision();
        let chol = (&prior_prec + &xtx * w).cholesky().ok_or(Error::NotPositiveDefinite)?;
        state.beta_cov = chol.inverse();
        state.beta_mean = chol.solve(&(&prior_shift + &xty * w));
        let sq = (y - x * &state.beta_mean).norm_squared() + (&xtx * &state.beta_cov).trace();
        state.inv_gamma_rate = prior.rate + 0.5 * alpha * sq;
        if trace.push(blm_elbo(x, y, prior, &state, alpha)?, cfg.elbo_tol) {
            break;
        }
    }
    Ok(BlmFit { state, trace })
}
