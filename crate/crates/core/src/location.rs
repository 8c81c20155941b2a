//! Conjugate Gaussian location model: `y_i ~ N(θ, σ² I)`, `θ ~ N(m₀, τ² I)`.
//!
//! Latent-free and fully closed form, so it serves as an oracle for the
//! objective, the risk estimators and the Gaussian variational family.

use nalgebra::{DMatrix, DVector};

use crate::divergence::{gaussian_divergence, DivergenceKind, GaussianDensity};
use crate::error::{Error, Result};
use crate::objective::{LatentModel, ThetaFactor, ThetaNodes};
use crate::rng::CounterRng;

#[derive(Debug, Clone)]
pub struct GaussianLocationModel {
    noise_var: f64,
    prior: GaussianDensity,
}

impl GaussianLocationModel {
    pub fn new(noise_var: f64, prior_mean: DVector<f64>, prior_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance {noise_var} must be positive")));
        }
        Ok(Self {
            noise_var,
            prior: GaussianDensity::isotropic(prior_mean, prior_var)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior(&self) -> &GaussianDensity {
        &self.prior
    }

    fn prior_var(&self) -> f64 {
        self.prior.cov()[(0, 0)]
    }

    fn check(&self, data: &[DVector<f64>]) -> Result<()> {
        match data.iter().find(|y| y.len() != self.dim()) {
            Some(y) => Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            }),
            None => Ok(()),
        }
    }

    /// The α-fractional posterior, proportional to `p(Y | θ)^α p(θ)`. At α = 1
    /// this is the ordinary posterior, and it is also the exact α-VB solution.
    pub fn fractional_posterior(&self, data: &[DVector<f64>], alpha: f64) -> Result<GaussianDensity> {
        self.check(data)?;
        let tau2 = self.prior_var();
        let precision = 1.0 / tau2 + alpha * data.len() as f64 / self.noise_var;
        let sum = data.iter().fold(DVector::zeros(self.dim()), |acc, y| acc + y);
        let mean = (self.prior.mean() / tau2 + sum * (alpha / self.noise_var)) / precision;
        GaussianDensity::isotropic(mean, 1.0 / precision)
    }

    /// Closed-form `log p(Y)`.
    pub fn log_evidence(&self, data: &[DVector<f64>]) -> Result<f64> {
        self.check(data)?;
        let n = data.len() as f64;
        let (s2, t2) = (self.noise_var, self.prior_var());
        let shared = s2 + n * t2;
        let log_det = (n - 1.0) * s2.ln() + shared.ln();
        let mut total = 0.0;
        for j in 0..self.dim() {
            let m = self.prior.mean()[j];
            let (ss, sum) = data.iter().fold((0.0, 0.0), |(ss, sum), y| {
                let r = y[j] - m;
                (ss + r * r, sum + r)
            });
            let quad = (ss - t2 * sum * sum / shared) / s2;
            total += -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + quad);
        }
        Ok(total)
    }

    /// `E_q[Σ_i log N(y_i; θ, σ² I)]` in closed form.
    pub fn expected_log_lik(&self, data: &[DVector<f64>], q: &GaussianDensity) -> f64 {
        let d = self.dim() as f64;
        let tr = q.cov().trace();
        data.iter()
            .map(|y| {
                let r = (y - q.mean()).norm_squared();
                -0.5 * (d * (2.0 * std::f64::consts::PI * self.noise_var).ln() + (r + tr) / self.noise_var)
            })
            .sum()
    }

    /// Per-observation `D(N(θ, σ²I) ‖ N(θ*, σ²I))`.
    pub fn divergence(&self, kind: DivergenceKind, theta: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
        let a = GaussianDensity::isotropic(theta.clone(), self.noise_var)?;
        let b = GaussianDensity::isotropic(truth.clone(), self.noise_var)?;
        gaussian_divergence(kind, &a, &b)
    }

    /// Closed form of `E_{θ∼q}[D_α(N(θ, σ²I) ‖ N(θ*, σ²I))]`.
    pub fn expected_renyi(&self, q: &GaussianDensity, truth: &DVector<f64>, alpha: f64) -> f64 {
        alpha * ((q.mean() - truth).norm_squared() + q.cov().trace()) / (2.0 * self.noise_var)
    }

    pub fn sample(&self, theta: &DVector<f64>, n: usize, rng: &mut CounterRng) -> Vec<DVector<f64>> {
        let sd = self.noise_var.sqrt();
        (0..n)
            .map(|_| DVector::from_fn(self.dim(), |j, _| rng.normal(theta[j], sd)))
            .collect()
    }
}

impl LatentModel for GaussianLocationModel {
    type Param = DVector<f64>;
    type Obs = DVector<f64>;

    fn n_states(&self) -> usize {
        0
    }

    fn log_lik(&self, y: &DVector<f64>, theta: &DVector<f64>, _s: usize) -> f64 {
        let d = self.dim() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI * self.noise_var).ln() + (y - theta).norm_squared() / self.noise_var)
    }

    fn prior_log_density(&self, theta: &DVector<f64>) -> f64 {
        self.prior.log_pdf(theta)
    }

    fn sample_prior(&self, rng: &mut CounterRng) -> DVector<f64> {
        self.prior.sample(rng)
    }
}

/// A full-covariance Gaussian `q_θ`.
#[derive(Debug, Clone)]
pub struct GaussianFactor(pub GaussianDensity);

impl GaussianFactor {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(Self(GaussianDensity::new(mean, cov)?))
    }
}

impl ThetaFactor<GaussianLocationModel> for GaussianFactor {
    fn nodes(&self, n: usize, rng: &mut CounterRng) -> ThetaNodes<DVector<f64>> {
        ThetaNodes::sampled((0..n).map(|_| self.0.sample(rng)).collect())
    }

    fn kl_to_prior(&self, model: &GaussianLocationModel) -> Result<f64> {
        gaussian_divergence(DivergenceKind::Kl, &self.0, model.prior())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GaussianLocationModel {
        GaussianLocationModel::new(2.0, DVector::from_vec(vec![0.5, -1.0]), 3.0).unwrap()
    }

    fn data() -> Vec<DVector<f64>> {
        vec![
            DVector::from_vec(vec![1.0, 0.2]),
            DVector::from_vec(vec![-0.3, 1.1]),
            DVector::from_vec(vec![0.7, -0.4]),
        ]
    }

    #[test]
    fn evidence_matches_bayes_identity() {
        // log p(Y) = log p(Y | θ) + log p(θ) − log p(θ | Y) for any θ.
        let (m, y) = (model(), data());
        let post = m.fractional_posterior(&y, 1.0).unwrap();
        for theta in [DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![2.0, -3.0])] {
            let lik: f64 = y.iter().map(|yi| m.log_lik(yi, &theta, 0)).sum();
            let direct = lik + m.prior_log_density(&theta) - post.log_pdf(&theta);
            assert!((direct - m.log_evidence(&y).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn fractional_posterior_interpolates_prior_and_posterior() {
        let (m, y) = (model(), data());
        let tiny = m.fractional_posterior(&y, 1e-12).unwrap();
        assert!((tiny.mean() - m.prior().mean()).norm() < 1e-9);
        let half = m.fractional_posterior(&y, 0.5).unwrap();
        // Tempering by 0.5 is the same as halving the data weight: precision 1/3 + 0.75.
        assert!((half.cov()[(0, 0)] - 1.0 / (1.0 / 3.0 + 0.75)).abs() < 1e-14);
        assert!(m.fractional_posterior(&[DVector::zeros(3)], 1.0).is_err());
    }

    #[test]
    fn expected_log_lik_matches_sampling() {
        let (m, y) = (model(), data());
        let q = GaussianDensity::new(DVector::from_vec(vec![0.3, 0.1]), DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]))
            .unwrap();
        let mut rng = CounterRng::new(5);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let t = q.sample(&mut rng);
                y.iter().map(|yi| m.log_lik(yi, &t, 0)).sum()
            })
            .collect();
        let est = crate::math::McEstimate::from_samples(&draws);
        assert!(est.within(m.expected_log_lik(&y, &q), 4.0));
    }
}
