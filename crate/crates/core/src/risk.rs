//! Empirical checks of the variational risk bounds and rate experiments.
//!
//! The α-VB risk of `q̂` is `∫ D_α[p(· | θ) ‖ p(· | θ*)] q̂(dθ)` with the
//! per-observation Rényi divergence. With probability at least `1 − ζ`, for
//! every `q` in the family at once,
//!
//! ```text
//! risk(q̂) ≤ α / (n (1 − α)) · Ψ(q) + log(1/ζ) / (n (1 − α)),
//! ```
//!
//! where `Ψ(q) = −E_q[ℓ̂_n(θ) − ℓ_n(θ*)] + KL(q_θ ‖ p_θ) / α` is the
//! truth-anchored objective and `q̂` minimizes it. Any upper bound `Ψ̄ ≥ Ψ`
//! may replace Ψ as long as `q̂` minimizes `Ψ̄`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{monte_carlo_renyi, DiscreteDistribution, DivergenceKind};
use crate::error::{Error, Result};
use crate::gaussian_vi::{alpha_surrogate, fit_gaussian_vi, GaussianComponentSet, GaussianViOptions, LocationTarget, SaaNodes};
use crate::gmm::{predictive_density, GmmMeanFactor, GmmVariationalState};
use crate::location::GaussianLocationModel;
use crate::math::McEstimate;
use crate::objective::{
    alpha_objective, log_likelihood, optimal_latent_factors, AlphaConfig, FactorizedVariational, LatentModel,
};
use crate::rng::{derive_seed, CounterRng};
use crate::linreg::{fit_blm, BlmPrior};
use crate::synth::{fmt_f64, linreg_s21, LinregParams};
use crate::tiny::{alpha_vb_cavi, GridFactor, TinyDiscreteModel};

/// A Monte-Carlo estimate of the variational risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub divergence: DivergenceKind,
    pub n_theta_samples: usize,
    pub seed: u64,
}

/// Averages `divergence(θ, draw_seed)` over `θ ∼ q̂`. The second argument is a
/// per-draw seed for divergences that are themselves sampled.
pub fn estimate_variational_risk<P, S, D>(
    mut sample: S,
    divergence: D,
    kind: DivergenceKind,
    n_theta_samples: usize,
    seed: u64,
) -> Result<RiskEstimate>
where
    S: FnMut(&mut CounterRng) -> P,
    D: Fn(&P, u64) -> Result<f64>,
{
    kind.validate()?;
    if n_theta_samples == 0 {
        return Err(Error::InvalidParameter("n_theta_samples must be positive".into()));
    }
    let mut rng = CounterRng::new(seed);
    let values = (0..n_theta_samples)
        .map(|i| divergence(&sample(&mut rng), derive_seed(seed, i as u64)))
        .collect::<Result<Vec<f64>>>()?;
    let est = McEstimate::from_samples(&values);
    Ok(RiskEstimate {
        value: est.value,
        standard_error: if n_theta_samples > 1 { est.std_error } else { 0.0 },
        divergence: kind,
        n_theta_samples,
        seed,
    })
}

/// Exact risk of a distribution over a finite grid.
pub fn exact_variational_risk(q: &DiscreteDistribution, divergences: &[f64]) -> Result<f64> {
    if q.len() != divergences.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            got: divergences.len(),
        });
    }
    Ok(q.probs()
        .iter()
        .zip(divergences)
        .filter(|(&w, _)| w > 0.0)
        .map(|(w, d)| w * d)
        .sum())
}

/// `log Σ_k π_k N(y; μ_k, I)`.
fn gmm_log_density(means: &DMatrix<f64>, pi: &DiscreteDistribution, y: &DVector<f64>) -> f64 {
    predictive_density(means, pi, y).ln()
}

/// Rényi risk of a fitted mixture state against the true means, with both the
/// θ-expectation and each divergence estimated by Monte Carlo.
pub fn gmm_variational_risk(
    state: &GmmVariationalState,
    truth: &DMatrix<f64>,
    pi: &DiscreteDistribution,
    alpha: f64,
    n_theta_samples: usize,
    n_mc: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if truth.shape() != state.mu_tilde.shape() {
        return Err(Error::DimensionMismatch {
            expected: state.mu_tilde.nrows(),
            got: truth.nrows(),
        });
    }
    let factor = GmmMeanFactor::from_state(state);
    let kind = DivergenceKind::renyi(alpha)?;
    estimate_variational_risk(
        |rng| factor.sample(rng),
        |theta: &DMatrix<f64>, draw_seed| {
            let est = monte_carlo_renyi(
                |y: &DVector<f64>| gmm_log_density(theta, pi, y),
                |y: &DVector<f64>| gmm_log_density(truth, pi, y),
                alpha,
                |rng: &mut CounterRng| {
                    let s = rng.categorical(pi.probs());
                    DVector::from_fn(truth.ncols(), |c, _| rng.normal(truth[(s, c)], 1.0))
                },
                n_mc,
                draw_seed,
            )?;
            Ok(est.value)
        },
        kind,
        n_theta_samples,
        seed,
    )
}

/// One replicated data set in a risk-inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    /// Risk of the family member with the smallest objective.
    pub lhs: f64,
    /// Smallest right-hand side over the family.
    pub rhs: f64,
    /// Family index attaining `rhs`.
    pub q_index: usize,
    pub violated: bool,
    /// Right-hand side for every family member, in family order.
    #[serde(skip)]
    pub rhs_by_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCheckReport {
    pub n: usize,
    pub alpha: f64,
    pub zeta: f64,
    pub family_size: usize,
    pub violations: usize,
    pub violation_rate: f64,
    /// `sqrt(ζ (1 − ζ) / R)`, the binomial standard error at the nominal rate.
    pub binomial_se: f64,
    pub records: Vec<ReplicationRecord>,
}

impl RiskCheckReport {
    fn from_records(n: usize, alpha: f64, zeta: f64, family_size: usize, records: Vec<ReplicationRecord>) -> Self {
        let violations = records.iter().filter(|r| r.violated).count();
        let reps = records.len().max(1) as f64;
        Self {
            n,
            alpha,
            zeta,
            family_size,
            violations,
            violation_rate: violations as f64 / reps,
            binomial_se: (zeta * (1.0 - zeta) / reps).sqrt(),
            records,
        }
    }

    /// Whether the violation rate is within `ζ + k` binomial standard errors.
    pub fn within_nominal(&self, k: f64) -> bool {
        self.violation_rate <= self.zeta + k * self.binomial_se
    }

    /// Writes `replication,seed,lhs,rhs,q_index,violated`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replication", "seed", "lhs", "rhs", "q_index", "violated"])?;
        for r in &self.records {
            w.write_record([
                r.replication.to_string(),
                r.seed.to_string(),
                fmt_f64(r.lhs),
                fmt_f64(r.rhs),
                r.q_index.to_string(),
                r.violated.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `α / (n (1 − α)) · Ψ + log(1/ζ) / (n (1 − α))`.
pub fn risk_bound(psi: f64, n: usize, alpha: f64, zeta: f64) -> f64 {
    let scale = n as f64 * (1.0 - alpha);
    alpha / scale * psi + (1.0 / zeta).ln() / scale
}

fn check_bound_inputs(n: usize, alpha: f64, zeta: f64, n_replications: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "the risk bound needs α in (0, 1), got {alpha}"
        )));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidParameter(format!("ζ {zeta} outside (0, 1)")));
    }
    if n == 0 || n_replications == 0 {
        return Err(Error::InvalidParameter("need n ≥ 1 and at least one replication".into()));
    }
    Ok(())
}

/// Chooses `q̂` as the family member with the smallest objective and compares
/// its risk with the smallest right-hand side.
fn assess(replication: usize, seed: u64, psi: &[f64], risks: &[f64], n: usize, alpha: f64, zeta: f64) -> ReplicationRecord {
    let argmin = |xs: &[f64]| {
        xs.iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("family is nonempty")
    };
    let best = argmin(psi);
    let rhs_by_q: Vec<f64> = psi.iter().map(|&p| risk_bound(p, n, alpha, zeta)).collect();
    let q_index = argmin(&rhs_by_q);
    let (lhs, rhs) = (risks[best], rhs_by_q[q_index]);
    ReplicationRecord {
        replication,
        seed,
        lhs,
        rhs,
        q_index,
        violated: lhs > rhs + 1e-12 * rhs.abs().max(1.0),
        rhs_by_q,
    }
}

/// Distributions on `g` points whose probabilities are multiples of `1/steps`.
pub fn simplex_lattice(g: usize, steps: usize) -> Vec<DiscreteDistribution> {
    fn fill(prefix: &mut Vec<usize>, left: usize, slots: usize, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            fill(prefix, left - c, slots - 1, out);
            prefix.pop();
        }
    }
    let mut counts = Vec::new();
    fill(&mut Vec::new(), steps, g, &mut counts);
    counts
        .into_iter()
        .map(|c| DiscreteDistribution::new(c.iter().map(|&k| k as f64 / steps as f64).collect()).expect("lattice point is a distribution"))
        .collect()
}

/// One member of the enumerated tiny-model family with its anchored objective.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub q: FactorizedVariational<GridFactor>,
    pub psi: f64,
}

/// The finite variational family used by [`check_risk_inequality`], in order:
/// the CAVI optimum; the prior with uniform latent factors; then every lattice
/// `q_θ` with uniform and with optimal latent factors.
pub fn enumerate_family(
    model: &TinyDiscreteModel,
    data: &[usize],
    alpha: f64,
    lattice_steps: usize,
) -> Result<Vec<FamilyMember>> {
    let cfg = AlphaConfig {
        elbo_tol: 1e-12,
        ..AlphaConfig::with_alpha(alpha)
    };
    let anchor = log_likelihood(model, data, &model.truth_index());
    let uniform_latent = |_: &GridFactor| -> Vec<DiscreteDistribution> {
        if model.n_states() == 0 {
            Vec::new()
        } else {
            vec![DiscreteDistribution::uniform(model.n_states()); data.len()]
        }
    };
    let mut members = Vec::new();
    let (cavi, _) = alpha_vb_cavi(model, data, &cfg)?;
    members.push(cavi);
    let prior = GridFactor(model.prior().clone());
    members.push(FactorizedVariational::new(prior.clone(), uniform_latent(&prior)));
    for q_theta in simplex_lattice(model.grid_len(), lattice_steps) {
        let factor = GridFactor(q_theta);
        members.push(FactorizedVariational::new(factor.clone(), uniform_latent(&factor)));
        if model.n_states() > 0 {
            let optimal = optimal_latent_factors(model, data, &factor.exact_nodes());
            members.push(FactorizedVariational::new(factor, optimal));
        }
    }
    members
        .into_iter()
        .map(|q| {
            let psi = alpha_objective(model, data, &q, &cfg, 1, 0)?.value + anchor;
            Ok(FamilyMember { q, psi })
        })
        .collect()
}

/// Lattice resolution of the enumerated `q_θ` family.
pub const DEFAULT_LATTICE_STEPS: usize = 10;

/// Replicates `Yⁿ ∼ P_θ*` and checks the risk bound over the enumerated family
/// on each data set, everything by exact enumeration. Latent-free models give
/// the no-latent-variable case.
pub fn check_risk_inequality(
    model: &TinyDiscreteModel,
    n: usize,
    alpha: f64,
    zeta: f64,
    n_replications: usize,
    seed: u64,
) -> Result<RiskCheckReport> {
    check_bound_inputs(n, alpha, zeta, n_replications)?;
    model.check_budget(n)?;
    let kind = DivergenceKind::renyi(alpha)?;
    let divergences = (0..model.grid_len())
        .map(|g| model.divergence_to_truth(g, kind))
        .collect::<Result<Vec<f64>>>()?;
    let records = (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, r as u64);
            let (data, _) = model.sample(n, &mut CounterRng::new(rep_seed));
            let family = enumerate_family(model, &data, alpha, DEFAULT_LATTICE_STEPS)?;
            let psi: Vec<f64> = family.iter().map(|m| m.psi).collect();
            let risks = family
                .iter()
                .map(|m| exact_variational_risk(&m.q.q_theta.0, &divergences))
                .collect::<Result<Vec<f64>>>()?;
            Ok(assess(r, rep_seed, &psi, &risks, n, alpha, zeta))
        })
        .collect::<Result<Vec<_>>>()?;
    let family_size = records.first().map_or(0, |r: &ReplicationRecord| r.rhs_by_q.len());
    Ok(RiskCheckReport::from_records(n, alpha, zeta, family_size, records))
}

/// The replacement-rule variant on the conjugate Gaussian location model:
/// mixtures are scored with the surrogate objective
/// `Ψ̄(q) = −E_q[ℓ_n(θ) − ℓ_n(θ*)] + (−H̄(q) − E_q[log p_θ]) / α ≥ Ψ(q)`.
///
/// The family is the `J`-component Gaussian VI fit, the prior and the exact
/// fractional posterior, all scored in closed form.
#[allow(clippy::too_many_arguments)]
pub fn check_surrogate_risk_inequality(
    model: &GaussianLocationModel,
    truth: &DVector<f64>,
    n: usize,
    alpha: f64,
    zeta: f64,
    n_replications: usize,
    seed: u64,
    j: usize,
    opts: &GaussianViOptions,
) -> Result<RiskCheckReport> {
    check_bound_inputs(n, alpha, zeta, n_replications)?;
    if truth.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: truth.len(),
        });
    }
    let records = (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, r as u64);
            let data = model.sample(truth, n, &mut CounterRng::new(rep_seed));
            let target = LocationTarget {
                model: model.clone(),
                data,
            };
            let cfg = AlphaConfig {
                seed: rep_seed,
                ..AlphaConfig::with_alpha(alpha)
            };
            let fit = fit_gaussian_vi(&target, j, &cfg, opts)?;
            let family = [
                fit.q,
                GaussianComponentSet::single(model.prior().clone()),
                GaussianComponentSet::single(model.fractional_posterior(&target.data, alpha)?),
            ];
            let psi: Vec<f64> = family.iter().map(|q| surrogate_psi(q, &target, truth, alpha)).collect();
            let risks: Vec<f64> = family
                .iter()
                .map(|q| {
                    q.components()
                        .iter()
                        .zip(q.weights().probs())
                        .map(|(c, w)| w * model.expected_renyi(c, truth, alpha))
                        .sum()
                })
                .collect();
            Ok(assess(r, rep_seed, &psi, &risks, n, alpha, zeta))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskCheckReport::from_records(n, alpha, zeta, 3, records))
}

/// `Ψ̄(q)` for the location model, exact because the target has closed-form
/// Gaussian expectations.
pub fn surrogate_psi(q: &GaussianComponentSet, target: &LocationTarget, truth: &DVector<f64>, alpha: f64) -> f64 {
    let nodes = SaaNodes::new(target.model.dim(), 1, 0);
    let anchor = log_likelihood(&target.model, &target.data, truth);
    -(alpha_surrogate(q, target, alpha, &nodes) - alpha * anchor) / alpha
}

/// Radii of the two KL neighbourhoods of the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KLNeighborhoodSpec {
    pub eps_pi: f64,
    pub eps_mu: f64,
}

impl KLNeighborhoodSpec {
    pub fn new(eps_pi: f64, eps_mu: f64) -> Result<Self> {
        for eps in [eps_pi, eps_mu] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::InvalidParameter(format!("radius {eps} outside (0, 1)")));
            }
        }
        Ok(Self { eps_pi, eps_mu })
    }
}

/// Membership in `{D ≤ ε², V ≤ ε²}`.
pub fn in_kl_neighborhood(kl: f64, v: f64, eps: f64) -> bool {
    kl <= eps * eps && v <= eps * eps
}

/// KL and V divergences between `N(a, σ²I)` and `N(b, σ²I)` given
/// `δ² = ‖a − b‖² / σ²`: `KL = δ²/2`, `V = δ² + δ⁴/4`.
pub fn gaussian_shift_kl_v(delta_sq: f64) -> (f64, f64) {
    (0.5 * delta_sq, delta_sq + 0.25 * delta_sq * delta_sq)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Prior probability of a neighbourhood, estimated by sampling the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub hits: usize,
    pub n_mc: usize,
    pub mass: f64,
    /// 95% Wilson interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MassEstimate {
    /// The exact mass of a set known to hold all prior probability.
    pub fn certain() -> Self {
        Self {
            hits: 1,
            n_mc: 1,
            mass: 1.0,
            ci_low: 1.0,
            ci_high: 1.0,
        }
    }

    /// `−log mass`, or `None` when no draw landed in the set.
    pub fn neg_log_mass(&self) -> Option<f64> {
        (self.hits > 0).then(|| -self.mass.ln())
    }

    /// A lower bound on `−log mass` from the upper end of the interval.
    pub fn neg_log_lower(&self) -> f64 {
        -self.ci_high.ln()
    }
}

pub fn neighborhood_mass<P, S, M>(mut sample_prior: S, member: M, n_mc: usize, seed: u64) -> Result<MassEstimate>
where
    S: FnMut(&mut CounterRng) -> P,
    M: Fn(&P) -> bool,
{
    if n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be positive".into()));
    }
    let mut rng = CounterRng::new(seed);
    let hits = (0..n_mc).filter(|_| member(&sample_prior(&mut rng))).count();
    let (ci_low, ci_high) = wilson_interval(hits, n_mc, 1.959963984540054);
    Ok(MassEstimate {
        hits,
        n_mc,
        mass: hits as f64 / n_mc as f64,
        ci_low,
        ci_high,
    })
}

/// The assembled prior-mass risk bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorMassBound {
    /// `D α (ε_π² + ε_μ²) / (1 − α)`.
    pub radius_term: f64,
    pub pi_term: f64,
    pub mu_term: f64,
    pub rhs: f64,
    /// Lower bound on the probability that the bound holds.
    pub probability: f64,
    /// True when a neighbourhood had no hits; the mass terms are then lower
    /// bounds from the Wilson interval.
    pub lower_bound_only: bool,
}

/// Default multiplier `D > 1` of the radius term.
pub const DEFAULT_D: f64 = 2.0;

/// `D α (ε_π² + ε_μ²)/(1 − α) − log P_π[B_π] / (n(1 − α)) − log P_μ[B_μ] / (n(1 − α))`,
/// holding with probability at least `1 − 5 / ((D − 1)² n (ε_π² + ε_μ²))`.
///
/// `mu` lists independent factors of the μ-neighbourhood (one per component
/// under a product prior); their negative log masses add.
pub fn prior_mass_bound(
    spec: &KLNeighborhoodSpec,
    pi: &MassEstimate,
    mu: &[MassEstimate],
    d_const: f64,
    alpha: f64,
    n: usize,
) -> Result<PriorMassBound> {
    if !(d_const > 1.0) {
        return Err(Error::InvalidParameter(format!("D = {d_const} must exceed 1")));
    }
    if !(alpha > 0.0 && alpha < 1.0) || n == 0 {
        return Err(Error::InvalidParameter("need α in (0, 1) and n ≥ 1".into()));
    }
    let mut lower_bound_only = false;
    let mut term = |m: &MassEstimate| match m.neg_log_mass() {
        Some(v) => v,
        None => {
            lower_bound_only = true;
            m.neg_log_lower()
        }
    };
    let scale = n as f64 * (1.0 - alpha);
    let pi_term = term(pi) / scale;
    let mu_term = mu.iter().map(&mut term).sum::<f64>() / scale;
    let radius = spec.eps_pi.powi(2) + spec.eps_mu.powi(2);
    let radius_term = d_const * alpha * radius / (1.0 - alpha);
    Ok(PriorMassBound {
        radius_term,
        pi_term,
        mu_term,
        rhs: radius_term + pi_term + mu_term,
        probability: (1.0 - 5.0 / ((d_const - 1.0).powi(2) * n as f64 * radius)).max(0.0),
        lower_bound_only,
    })
}

/// Least-squares fit of `log risk` on `log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn rate_slope(ns: &[f64], risks: &[f64]) -> Result<RateFit> {
    if ns.len() != risks.len() {
        return Err(Error::DimensionMismatch {
            expected: ns.len(),
            got: risks.len(),
        });
    }
    if ns.len() < 4 {
        return Err(Error::InvalidParameter("a rate fit needs at least 4 grid points".into()));
    }
    if let Some(bad) = risks.iter().chain(ns).find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidData(format!("rate fit needs positive values, got {bad}")));
    }
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = risks.iter().map(|v| v.ln()).collect();
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidData("rate fit needs distinct sample sizes".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Median of a nonempty slice.
/// Posterior squared risk of one regression fit in a rate experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRun {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub risk: f64,
}

/// Median and mean risk at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub median_risk: f64,
    pub mean_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub alpha: f64,
    pub points: Vec<RatePoint>,
    pub fit: RateFit,
    pub runs: Vec<RateRun>,
}

/// Fits the low-dimensional regression model on `replicates` datasets per
/// sample size and regresses the log median of `E_q̂‖β − β*‖²` on log n.
/// Dataset `r` at size `n` uses seed `derive_seed(derive_seed(seed, n), r)`.
pub fn regression_rate_experiment(
    params: &LinregParams,
    ns: &[usize],
    replicates: usize,
    prior: &BlmPrior,
    cfg: &AlphaConfig,
    seed: u64,
) -> Result<RateExperiment> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    let jobs: Vec<(usize, usize)> = ns.iter().flat_map(|&n| (0..replicates).map(move |r| (n, r))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(n, r)| {
            let run_seed = derive_seed(derive_seed(seed, n as u64), r as u64);
            let bundle = linreg_s21(&LinregParams { n, ..params.clone() }, run_seed)?;
            let fit = fit_blm(&bundle.data.x, &bundle.data.y, prior, cfg)?;
            Ok(RateRun {
                n,
                replicate: r,
                seed: run_seed,
                risk: fit.state.squared_risk(&bundle.beta),
            })
        })
        .collect::<Result<Vec<RateRun>>>()?;
    let points: Vec<RatePoint> = ns
        .iter()
        .map(|&n| {
            let risks: Vec<f64> = runs.iter().filter(|r| r.n == n).map(|r| r.risk).collect();
            RatePoint {
                n,
                median_risk: median(&risks),
                mean_risk: risks.iter().sum::<f64>() / risks.len() as f64,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_risk).collect();
    let fit = rate_slope(&xs, &ys)?;
    Ok(RateExperiment {
        alpha: cfg.alpha,
        points,
        fit,
        runs,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_has_the_stars_and_bars_count() {
        assert_eq!(simplex_lattice(2, 10).len(), 11);
        assert_eq!(simplex_lattice(3, 4).len(), 15);
        for q in simplex_lattice(3, 4) {
            assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wilson_interval_covers_the_proportion() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        let (lo0, hi0) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.05);
    }

    #[test]
    fn median_of_even_and_odd_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
