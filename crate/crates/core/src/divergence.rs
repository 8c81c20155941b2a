//! Divergences between probability distributions.
//!
//! Four kinds are supported, following the usual measure-theoretic
//! definitions with respect to a common dominating measure:
//!
//! | kind          | definition                                 |
//! |---------------|--------------------------------------------|
//! | `Kl`          | ∫ p log(p/q)                               |
//! | `V`           | ∫ p log²(p/q)                              |
//! | `HellingerSq` | ∫ (√p − √q)², in [0, 2]                    |
//! | `Renyi(a)`    | (a − 1)⁻¹ log ∫ pᵃ q¹⁻ᵃ,  a ∈ (0, 1)        |
//!
//! With this Hellinger normalization, `D_½ = −2 log(1 − h²/2) ≥ h²`.
//!
//! Discrete distributions use the convention `0 · log(0/·) = 0`; mass of `p`
//! where `q` vanishes makes KL and V infinite, which is reported as
//! [`Error::NotAbsolutelyContinuous`] rather than as a number.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::McEstimate;
use crate::rng::CounterRng;

const SIMPLEX_TOL: f64 = 1e-12;

/// A probability vector on a finite set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // Push the rounding residue onto the largest entry.
        let residue = 1.0 - probs.iter().sum::<f64>();
        if let Some(imax) = argmax(&probs) {
            probs[imax] += residue;
        }
        Self::new(probs)
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn point_mass(k: usize, at: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[at] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        crate::math::entropy(&self.probs)
    }
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Self {
        d.probs
    }
}

fn argmax(xs: &[f64]) -> Option<usize> {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

/// Which divergence to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order")]
pub enum DivergenceKind {
    Kl,
    V,
    HellingerSq,
    Renyi(f64),
}

impl DivergenceKind {
    /// Rényi divergence of order `alpha`, which must lie strictly inside (0, 1).
    pub fn renyi(alpha: f64) -> Result<Self> {
        let kind = DivergenceKind::Renyi(alpha);
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceKind::Renyi(a) if !(a > 0.0 && a < 1.0) => Err(Error::InvalidParameter(
                format!("Rényi order {a} outside (0, 1)"),
            )),
            _ => Ok(()),
        }
    }
}

/// Divergence between two distributions on the same finite set.
pub fn discrete_divergence(
    kind: DivergenceKind,
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
) -> Result<f64> {
    kind.validate()?;
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let pairs = p.probs().iter().zip(q.probs());
    match kind {
        DivergenceKind::Kl | DivergenceKind::V => {
            let mut acc = 0.0;
            for (index, (&pi, &qi)) in pairs.enumerate() {
                if pi == 0.0 {
                    continue;
                }
                if qi == 0.0 {
                    return Err(Error::NotAbsolutelyContinuous { index });
                }
                let l = (pi / qi).ln();
                acc += if kind == DivergenceKind::Kl { pi * l } else { pi * l * l };
            }
            Ok(acc.max(0.0))
        }
        DivergenceKind::HellingerSq => Ok(pairs
            .map(|(&pi, &qi)| (pi.sqrt() - qi.sqrt()).powi(2))
            .sum()),
        DivergenceKind::Renyi(a) => {
            let affinity: f64 = pairs
                .filter(|(&pi, &qi)| pi > 0.0 && qi > 0.0)
                .map(|(&pi, &qi)| pi.powf(a) * qi.powf(1.0 - a))
                .sum();
            if affinity == 0.0 {
                return Err(Error::MutuallySingular);
            }
            Ok((affinity.ln() / (a - 1.0)).max(0.0))
        }
    }
}

/// Multivariate normal density with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { mean, cov, chol })
    }

    /// `N(mean, var · I)`.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let d = mean.len();
        Self::new(mean, DMatrix::from_diagonal_element(d, d, var))
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::isotropic(DVector::from_element(1, mean), var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
    }

    /// Quadratic form `v' Σ⁻¹ v`.
    pub fn mahalanobis_sq(&self, v: &DVector<f64>) -> f64 {
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal");
        w.norm_squared()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let d = self.dim() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det() + self.mahalanobis_sq(&(x - &self.mean)))
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn sample(&self, rng: &mut CounterRng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.standard_normal());
        &self.mean + self.chol.l() * z
    }

    /// Differential entropy.
    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        0.5 * (d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + self.log_det())
    }

    fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

fn check_dims(a: &GaussianDensity, b: &GaussianDensity) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Closed-form divergence between two Gaussians.
///
/// Rényi is only available in closed form when both covariances agree; use
/// [`monte_carlo_renyi`] otherwise.
pub fn gaussian_divergence(kind: DivergenceKind, a: &GaussianDensity, b: &GaussianDensity) -> Result<f64> {
    kind.validate()?;
    check_dims(a, b)?;
    let d = a.dim() as f64;
    let delta = a.mean() - b.mean();
    let b_inv = b.inverse();
    let kl = || {
        let trace = (&b_inv * a.cov()).trace();
        (0.5 * (trace + b.mahalanobis_sq(&delta) - d + b.log_det() - a.log_det())).max(0.0)
    };
    match kind {
        DivergenceKind::Kl => Ok(kl()),
        DivergenceKind::V => {
            // log a − log b at x = μa + z is ½ z'Mz + z'Σb⁻¹δ + const with
            // M = Σb⁻¹ − Σa⁻¹, so V = KL² + ½ tr((MΣa)²) + δ'Σb⁻¹ΣaΣb⁻¹δ.
            let m = &b_inv - a.inverse();
            let ms = &m * a.cov();
            let g = &b_inv * &delta;
            let quad = (g.transpose() * a.cov() * &g)[(0, 0)];
            Ok(kl().powi(2) + 0.5 * (&ms * &ms).trace() + quad)
        }
        DivergenceKind::HellingerSq => {
            let avg = GaussianDensity::new(delta.clone() * 0.0, (a.cov() + b.cov()) * 0.5)?;
            let log_bc = 0.25 * a.log_det() + 0.25 * b.log_det() - 0.5 * avg.log_det()
                - 0.125 * avg.mahalanobis_sq(&delta);
            Ok((2.0 * (1.0 - log_bc.exp())).max(0.0))
        }
        DivergenceKind::Renyi(alpha) => {
            let scale = a.cov().amax().max(b.cov().amax()).max(1.0);
            if (a.cov() - b.cov()).amax() > 1e-12 * scale {
                return Err(Error::NoClosedForm(
                    "Rényi divergence between Gaussians with different covariances".into(),
                ));
            }
            Ok(0.5 * alpha * b.mahalanobis_sq(&delta))
        }
    }
}

/// Monte-Carlo Rényi divergence `D_α(p ‖ p*)` from draws of `p*`.
///
/// Uses `∫ pᵅ p*¹⁻ᵅ = E_{p*}[(p/p*)ᵅ]`; the standard error is the delta-method
/// error of `log` of the sample mean.
pub fn monte_carlo_renyi<T, LP, LS, S>(
    log_p: LP,
    log_pstar: LS,
    alpha: f64,
    mut sampler_from_pstar: S,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    LP: Fn(&T) -> f64,
    LS: Fn(&T) -> f64,
    S: FnMut(&mut CounterRng) -> T,
{
    DivergenceKind::renyi(alpha)?;
    if n_samples < 2 {
        return Err(Error::InvalidParameter("monte_carlo_renyi needs at least 2 samples".into()));
    }
    let mut rng = CounterRng::new(seed);
    let log_w: Vec<f64> = (0..n_samples)
        .map(|_| {
            let x = sampler_from_pstar(&mut rng);
            let (lp, ls) = (log_p(&x), log_pstar(&x));
            if lp == ls {
                0.0
            } else {
                alpha * (lp - ls)
            }
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::WeightUnderflow);
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let stats = McEstimate::from_samples(&w);
    if stats.value <= 0.0 {
        return Err(Error::WeightUnderflow);
    }
    Ok(McEstimate {
        value: (max + stats.value.ln()) / (alpha - 1.0),
        std_error: stats.std_error / (stats.value * (1.0 - alpha)),
        n_samples,
    })
}
