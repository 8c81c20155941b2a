//! Gaussian and Gaussian-mixture variational families for latent-free models.
//!
//! The entropy of a mixture has no closed form, so mixtures are scored with the
//! surrogate
//!
//! ```text
//! L̄(q) = E_q[log p(Yⁿ, θ)] − Σ_j w_j log E_{q_j}[q(θ)]  ≤  L(q)
//! ```
//!
//! whose second term is exact through
//! `E_{N(μ_a, Σ_a)}[N(θ; μ_b, Σ_b)] = N(μ_a; μ_b, Σ_a + Σ_b)`.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient, TerminationReason, TerminationStatus};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::BFGS;
use finitediff::FiniteDiff;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::{DiscreteDistribution, GaussianDensity};
use crate::error::{Error, Result};
use crate::location::GaussianLocationModel;
use crate::math::{self, McEstimate};
use crate::objective::AlphaConfig;
use crate::rng::{derive_seed, CounterRng};

/// `log N(μ_a; μ_b, Σ_a + Σ_b)`.
pub fn log_cross_density(a: &GaussianDensity, b: &GaussianDensity) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let sum = GaussianDensity::new(b.mean().clone(), a.cov() + b.cov())?;
    Ok(sum.log_pdf(a.mean()))
}

/// `E_{θ∼a}[b(θ)] = N(μ_a; μ_b, Σ_a + Σ_b)`, symmetric in its arguments.
pub fn gaussian_cross_density(a: &GaussianDensity, b: &GaussianDensity) -> Result<f64> {
    Ok(log_cross_density(a, b)?.exp())
}

/// A finite Gaussian mixture `Σ_j w_j N(μ_j, Σ_j)`.
#[derive(Debug, Clone)]
pub struct GaussianComponentSet {
    weights: DiscreteDistribution,
    components: Vec<GaussianDensity>,
}

impl GaussianComponentSet {
    pub fn new(weights: DiscreteDistribution, components: Vec<GaussianDensity>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("a mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        Ok(Self { weights, components })
    }

    pub fn single(component: GaussianDensity) -> Self {
        Self {
            weights: DiscreteDistribution::uniform(1),
            components: vec![component],
        }
    }

    /// Builds a mixture from a `J × d` matrix of means and `J` covariances.
    pub fn from_parts(weights: DiscreteDistribution, means: &DMatrix<f64>, covs: &[DMatrix<f64>]) -> Result<Self> {
        if means.nrows() != covs.len() {
            return Err(Error::DimensionMismatch {
                expected: means.nrows(),
                got: covs.len(),
            });
        }
        let components = covs
            .iter()
            .enumerate()
            .map(|(j, cov)| GaussianDensity::new(means.row(j).transpose(), cov.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, components)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &DiscreteDistribution {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianDensity] {
        &self.components
    }

    /// `J × d` matrix of component means.
    pub fn means(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |j, k| self.components[j].mean()[k])
    }

    /// Mean of the mixture.
    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .zip(self.weights.probs())
            .fold(DVector::zeros(self.dim()), |acc, (c, &w)| acc + c.mean() * w)
    }

    pub fn log_pdf(&self, theta: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(self.weights.probs())
            .map(|(c, &w)| w.ln() + c.log_pdf(theta))
            .collect();
        math::log_sum_exp(&terms)
    }

    pub fn sample(&self, rng: &mut CounterRng) -> DVector<f64> {
        let j = rng.categorical(self.weights.probs());
        self.components[j].sample(rng)
    }

    /// `−Σ_j w_j log Σ_l w_l N(μ_j; μ_l, Σ_j + Σ_l)`, a lower bound on the entropy.
    pub fn surrogate_entropy(&self) -> f64 {
        let w = self.weights.probs();
        let mut total = 0.0;
        for (j, cj) in self.components.iter().enumerate() {
            if w[j] == 0.0 {
                continue;
            }
            let terms: Vec<f64> = self
                .components
                .iter()
                .zip(w)
                .map(|(cl, &wl)| wl.ln() + log_cross_density(cj, cl).expect("components share a dimension"))
                .collect();
            total -= w[j] * math::log_sum_exp(&terms);
        }
        total
    }

    /// Monte-Carlo estimate of the entropy `−E_q[log q(θ)]`.
    pub fn entropy_mc(&self, n_samples: usize, seed: u64) -> McEstimate {
        let mut rng = CounterRng::new(seed);
        let draws: Vec<f64> = (0..n_samples).map(|_| -self.log_pdf(&self.sample(&mut rng))).collect();
        McEstimate::from_samples(&draws)
    }
}

/// Plain-data form of a [`GaussianComponentSet`] for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponentRecord {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

impl From<&GaussianComponentSet> for GaussianComponentRecord {
    fn from(q: &GaussianComponentSet) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
        Self {
            weights: q.weights.probs().to_vec(),
            means: q.components.iter().map(|c| c.mean().iter().copied().collect()).collect(),
            covs: q.components.iter().map(|c| rows(c.cov())).collect(),
        }
    }
}

impl TryFrom<&GaussianComponentRecord> for GaussianComponentSet {
    type Error = Error;

    fn try_from(r: &GaussianComponentRecord) -> Result<Self> {
        let components = r
            .means
            .iter()
            .zip(&r.covs)
            .map(|(m, c)| {
                let d = m.len();
                if c.len() != d || c.iter().any(|row| row.len() != d) {
                    return Err(Error::DimensionMismatch { expected: d, got: c.len() });
                }
                GaussianDensity::new(DVector::from_column_slice(m), DMatrix::from_fn(d, d, |i, k| c[i][k]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(DiscreteDistribution::new(r.weights.clone())?, components)
    }
}

/// A latent-free parametric model with data already bound in.
///
/// Targets may supply closed-form Gaussian expectations of either term; the
/// defaults return `None` and callers fall back to sampling.
pub trait ParametricTarget {
    fn dim(&self) -> usize;

    /// `ℓ_n(θ) = log p(Yⁿ | θ)`.
    fn log_lik(&self, theta: &DVector<f64>) -> f64;

    fn prior_log_density(&self, theta: &DVector<f64>) -> f64;

    /// `log p(Yⁿ, θ)`.
    fn log_joint(&self, theta: &DVector<f64>) -> f64 {
        self.log_lik(theta) + self.prior_log_density(theta)
    }

    fn expected_log_lik(&self, _q: &GaussianDensity) -> Option<f64> {
        None
    }

    fn expected_log_prior(&self, _q: &GaussianDensity) -> Option<f64> {
        None
    }
}

/// The conjugate Gaussian location model bound to a data set.
#[derive(Debug, Clone)]
pub struct LocationTarget {
    pub model: GaussianLocationModel,
    pub data: Vec<DVector<f64>>,
}

impl ParametricTarget for LocationTarget {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_lik(&self, theta: &DVector<f64>) -> f64 {
        crate::objective::log_likelihood(&self.model, &self.data, theta)
    }

    fn prior_log_density(&self, theta: &DVector<f64>) -> f64 {
        self.model.prior().log_pdf(theta)
    }

    fn expected_log_lik(&self, q: &GaussianDensity) -> Option<f64> {
        Some(self.model.expected_log_lik(&self.data, q))
    }

    fn expected_log_prior(&self, q: &GaussianDensity) -> Option<f64> {
        Some(expected_gaussian_log_density(q, self.model.prior()))
    }
}

/// A target given by two closures.
pub struct FnTarget<L, P> {
    pub dim: usize,
    pub log_lik: L,
    pub log_prior: P,
}

impl<L, P> ParametricTarget for FnTarget<L, P>
where
    L: Fn(&DVector<f64>) -> f64,
    P: Fn(&DVector<f64>) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_lik(&self, theta: &DVector<f64>) -> f64 {
        (self.log_lik)(theta)
    }

    fn prior_log_density(&self, theta: &DVector<f64>) -> f64 {
        (self.log_prior)(theta)
    }
}

/// `E_{θ∼q}[log p(θ)]` for Gaussian `q` and `p`.
pub fn expected_gaussian_log_density(q: &GaussianDensity, p: &GaussianDensity) -> f64 {
    let d = q.dim() as f64;
    let p_inv = p.cov().clone().cholesky().expect("density covariance is SPD").inverse();
    let diff = q.mean() - p.mean();
    let quad = (&p_inv * q.cov()).trace() + diff.dot(&(&p_inv * &diff));
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + p.log_det() + quad)
}

/// Fixed standard-normal nodes for a sample-average approximation. Nodes come
/// in antithetic pairs, so odd moments of the base measure vanish exactly.
#[derive(Debug, Clone)]
pub struct SaaNodes {
    points: Vec<DVector<f64>>,
}

impl SaaNodes {
    pub fn new(dim: usize, n_pairs: usize, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed);
        let mut points = Vec::with_capacity(2 * n_pairs);
        for _ in 0..n_pairs {
            let z = DVector::from_fn(dim, |_, _| rng.standard_normal());
            points.push(-&z);
            points.push(z);
        }
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Average of `f(μ + L z)` over the nodes.
    fn average<F: Fn(&DVector<f64>) -> f64>(&self, q: &GaussianDensity, f: F) -> f64 {
        let l = q.chol_factor();
        self.points.iter().map(|z| f(&(q.mean() + &l * z))).sum::<f64>() / self.len() as f64
    }
}

/// `α E_{q_j}[ℓ_n] + E_{q_j}[log p_θ]`, closed form where the target has one.
fn component_energy<T: ParametricTarget + ?Sized>(target: &T, q: &GaussianDensity, alpha: f64, nodes: &SaaNodes) -> f64 {
    let ll = target
        .expected_log_lik(q)
        .unwrap_or_else(|| nodes.average(q, |t| target.log_lik(t)));
    let lp = target
        .expected_log_prior(q)
        .unwrap_or_else(|| nodes.average(q, |t| target.prior_log_density(t)));
    alpha * ll + lp
}

/// The α-scaled surrogate `α E_q[ℓ_n] + E_q[log p_θ] − Σ_j w_j log E_{q_j}[q]`
/// on fixed nodes. At α = 1 it is L̄(q).
pub fn alpha_surrogate<T: ParametricTarget + ?Sized>(
    q: &GaussianComponentSet,
    target: &T,
    alpha: f64,
    nodes: &SaaNodes,
) -> f64 {
    let energy: f64 = q
        .components()
        .iter()
        .zip(q.weights().probs())
        .filter(|(_, &w)| w > 0.0)
        .map(|(c, &w)| w * component_energy(target, c, alpha, nodes))
        .sum();
    energy + q.surrogate_entropy()
}

/// Samples `E_q[log p(Yⁿ, θ)]` with `n_mc` draws per component (closed form
/// where the target supplies one).
fn expected_log_joint<T: ParametricTarget + ?Sized>(
    q: &GaussianComponentSet,
    target: &T,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be positive".into()));
    }
    let (mut value, mut var) = (0.0, 0.0);
    for (j, (c, &w)) in q.components().iter().zip(q.weights().probs()).enumerate() {
        if w == 0.0 {
            continue;
        }
        let est = match (target.expected_log_lik(c), target.expected_log_prior(c)) {
            (Some(ll), Some(lp)) => McEstimate::exact(ll + lp),
            _ => {
                let mut rng = CounterRng::new(derive_seed(seed, j as u64));
                let draws: Vec<f64> = (0..n_mc).map(|_| target.log_joint(&c.sample(&mut rng))).collect();
                McEstimate::from_samples(&draws)
            }
        };
        if !est.value.is_finite() {
            return Err(Error::InvalidData("log joint is not finite under q".into()));
        }
        value += w * est.value;
        var += (w * est.std_error).powi(2);
    }
    Ok(McEstimate {
        value,
        std_error: var.sqrt(),
        n_samples: n_mc * q.len(),
    })
}

/// L̄(q). The entropy surrogate is exact; only the log-joint term is sampled.
pub fn surrogate_elbo<T: ParametricTarget + ?Sized>(
    q: &GaussianComponentSet,
    target: &T,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let mut est = expected_log_joint(q, target, n_mc, seed)?;
    est.value += q.surrogate_entropy();
    Ok(est)
}

/// L(q) with a Monte-Carlo entropy. The two sampled terms use independent streams.
pub fn elbo_mc<T: ParametricTarget + ?Sized>(
    q: &GaussianComponentSet,
    target: &T,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let joint = expected_log_joint(q, target, n_mc, seed)?;
    let entropy = q.entropy_mc(n_mc * q.len(), derive_seed(seed, u64::MAX));
    Ok(McEstimate {
        value: joint.value + entropy.value,
        std_error: joint.std_error.hypot(entropy.std_error),
        n_samples: joint.n_samples,
    })
}

/// Optimizer controls for [`fit_gaussian_vi`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianViOptions {
    /// Objective evaluations per restart, gradients included.
    pub budget: usize,
    /// Antithetic node pairs for the sample-average approximation.
    pub n_node_pairs: usize,
    pub restarts: usize,
    /// Centre and spread of the random initial means.
    pub init_center: Option<Vec<f64>>,
    pub init_spread: f64,
    /// Initial component variance.
    pub init_var: f64,
}

impl Default for GaussianViOptions {
    fn default() -> Self {
        Self {
            budget: 2000,
            n_node_pairs: 100,
            restarts: 4,
            init_center: None,
            init_spread: 3.0,
            init_var: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianViFit {
    pub q: GaussianComponentSet,
    /// The maximized α-surrogate.
    pub objective: f64,
    /// Best objective value after each improving evaluation; nondecreasing.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    /// False when the best run stopped on its evaluation budget or stalled.
    pub converged: bool,
}

/// Unconstrained coordinates: `J − 1` softmax logits (the last is pinned at
/// 0), then per component the mean and the row-major lower triangle of the
/// Cholesky factor with log-diagonal.
struct Layout {
    j: usize,
    d: usize,
}

impl Layout {
    fn tri(&self) -> usize {
        self.d * (self.d + 1) / 2
    }

    fn len(&self) -> usize {
        self.j - 1 + self.j * (self.d + self.tri())
    }

    fn decode(&self, p: &[f64]) -> Result<GaussianComponentSet> {
        let mut logits = p[..self.j - 1].to_vec();
        logits.push(0.0);
        math::normalize_log_weights(&mut logits);
        let weights = DiscreteDistribution::from_weights(&logits)?;
        let mut at = self.j - 1;
        let mut components = Vec::with_capacity(self.j);
        for _ in 0..self.j {
            let mean = DVector::from_column_slice(&p[at..at + self.d]);
            at += self.d;
            let mut l = DMatrix::zeros(self.d, self.d);
            for r in 0..self.d {
                for c in 0..=r {
                    l[(r, c)] = if r == c { p[at].exp() } else { p[at] };
                    at += 1;
                }
            }
            let cov = &l * l.transpose();
            components.push(GaussianDensity::new(mean, (&cov + cov.transpose()) * 0.5)?);
        }
        GaussianComponentSet::new(weights, components)
    }

    fn encode(&self, means: &[DVector<f64>], sd: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.j - 1];
        for m in means {
            p.extend(m.iter());
            for r in 0..self.d {
                for c in 0..=r {
                    p.push(if r == c { sd.ln() } else { 0.0 });
                }
            }
        }
        p
    }
}

struct Tracker {
    evaluations: usize,
    budget: usize,
    best: Option<(f64, Vec<f64>)>,
    trace: Vec<f64>,
}

/// Evaluation cost reported for parameters whose objective is not finite.
const PENALTY: f64 = 1e100;

struct SurrogateProblem<'a, T: ?Sized> {
    target: &'a T,
    layout: &'a Layout,
    alpha: f64,
    nodes: &'a SaaNodes,
    tracker: &'a RefCell<Tracker>,
}

impl<T: ParametricTarget + ?Sized> SurrogateProblem<'_, T> {
    fn exhausted(&self) -> bool {
        let t = self.tracker.borrow();
        t.evaluations >= t.budget
    }

    fn negative_objective(&self, p: &Vec<f64>) -> f64 {
        let mut t = self.tracker.borrow_mut();
        if t.evaluations >= t.budget {
            return PENALTY;
        }
        t.evaluations += 1;
        let value = match self.layout.decode(p) {
            Ok(q) => alpha_surrogate(&q, self.target, self.alpha, self.nodes),
            Err(_) => f64::NAN,
        };
        if !value.is_finite() {
            return PENALTY;
        }
        if t.best.as_ref().is_none_or(|(b, _)| value > *b) {
            t.best = Some((value, p.clone()));
            t.trace.push(value);
        }
        -value
    }
}

impl<T: ParametricTarget + ?Sized> CostFunction for SurrogateProblem<'_, T> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if self.exhausted() {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        Ok(self.negative_objective(p))
    }
}

impl<T: ParametricTarget + ?Sized> Gradient for SurrogateProblem<'_, T> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let g = p.central_diff(&|x: &Vec<f64>| self.negative_objective(x));
        if self.exhausted() {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        Ok(g)
    }
}

struct RunOutcome {
    best: (f64, Vec<f64>),
    trace: Vec<f64>,
    evaluations: usize,
    converged: bool,
}

fn run_bfgs<T: ParametricTarget + ?Sized>(
    target: &T,
    layout: &Layout,
    alpha: f64,
    nodes: &SaaNodes,
    budget: usize,
    start: Vec<f64>,
) -> Option<RunOutcome> {
    let tracker = RefCell::new(Tracker {
        evaluations: 0,
        budget,
        best: None,
        trace: Vec::new(),
    });
    let problem = SurrogateProblem {
        target,
        layout,
        alpha,
        nodes,
        tracker: &tracker,
    };
    let n = layout.len();
    let inv_hessian: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|k| if i == k { 1.0 } else { 0.0 }).collect())
        .collect();
    let solver = BFGS::new(MoreThuenteLineSearch::new())
        .with_tolerance_grad(1e-7)
        .expect("positive tolerance")
        .with_tolerance_cost(1e-12)
        .expect("positive tolerance");
    let result = Executor::new(problem, solver)
        .configure(|s| s.param(start).inv_hessian(inv_hessian).max_iters(budget as u64))
        .run();
    let converged = match &result {
        Ok(r) => matches!(
            r.state.termination_status,
            TerminationStatus::Terminated(TerminationReason::SolverConverged)
        ),
        Err(_) => false,
    };
    let t = tracker.into_inner();
    Some(RunOutcome {
        best: t.best?,
        trace: t.trace,
        evaluations: t.evaluations,
        converged,
    })
}

/// Maximizes `α E_q[ℓ_n] + E_q[log p_θ] − Σ_j w_j log E_{q_j}[q]` over
/// `J`-component Gaussian mixtures by BFGS with central-difference gradients
/// on a fixed-seed sample-average objective.
///
/// The first start places every mean at `init_center` (when `J = 1`); the
/// others draw means around it with sd `init_spread`. The run with the largest
/// objective is kept.
pub fn fit_gaussian_vi<T: ParametricTarget + ?Sized>(
    target: &T,
    j: usize,
    cfg: &AlphaConfig,
    opts: &GaussianViOptions,
) -> Result<GaussianViFit> {
    cfg.validate()?;
    let d = target.dim();
    if j == 0 || d == 0 {
        return Err(Error::InvalidParameter("need J ≥ 1 and d ≥ 1".into()));
    }
    if opts.budget < 4 * d || opts.n_node_pairs == 0 || !(opts.init_var > 0.0) {
        return Err(Error::InvalidParameter("optimizer budget, node count or initial variance too small".into()));
    }
    let center = match &opts.init_center {
        Some(c) if c.len() != d => return Err(Error::DimensionMismatch { expected: d, got: c.len() }),
        Some(c) => DVector::from_column_slice(c),
        None => DVector::zeros(d),
    };
    let layout = Layout { j, d };
    let nodes = SaaNodes::new(d, opts.n_node_pairs, derive_seed(cfg.seed, 0));
    let restarts = opts.restarts.max(1);
    let mut best: Option<RunOutcome> = None;
    let mut evaluations = 0;
    for r in 0..restarts {
        let mut rng = CounterRng::new(derive_seed(cfg.seed, 1 + r as u64));
        let means: Vec<DVector<f64>> = (0..j)
            .map(|_| {
                if r == 0 && j == 1 {
                    center.clone()
                } else {
                    &center + DVector::from_fn(d, |_, _| opts.init_spread * rng.standard_normal())
                }
            })
            .collect();
        let start = layout.encode(&means, opts.init_var.sqrt());
        let Some(run) = run_bfgs(target, &layout, cfg.alpha, &nodes, opts.budget, start) else {
            continue;
        };
        evaluations += run.evaluations;
        if best.as_ref().is_none_or(|b| run.best.0 > b.best.0) {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| Error::InvalidData("surrogate objective is not finite at any start".into()))?;
    Ok(GaussianViFit {
        q: layout.decode(&best.best.1)?,
        objective: best.best.0,
        trace: best.trace,
        evaluations,
        converged: best.converged,
    })
}
