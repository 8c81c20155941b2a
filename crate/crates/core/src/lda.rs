//! Mean-field α-VB for latent Dirichlet allocation.
//!
//! Model: `β_k ~ Dir(η_β)`, `θ_d ~ Dir(η_γ)`, `z_dn | θ_d ~ Cat(θ_d)`,
//! `w_dn | z_dn ~ Cat(β_{z_dn})`. Variational factors are `q(β_k) = Dir(λ_k)`,
//! `q(θ_d) = Dir(γ_d)` and `q(z_dn) = Cat(φ_dn)`.
//!
//! Tempering multiplies only the document-topic term by α:
//!
//! ```text
//! F = E log p(w | z, β) + α E log p(z | θ) + H(φ) − α Σ_d KL(q(θ_d) ‖ p(θ_d)) − Σ_k KL(q(β_k) ‖ p(β_k))
//! ```
//!
//! so the `φ` update picks up `α (ψ(γ_dk) − ψ(Σ_k γ_dk))` while the `γ` and `λ`
//! updates are the untempered conjugate ones. Every update maximizes F in its
//! own block, so the trace is monotone.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::objective::{AlphaConfig, ElboTrace};
use crate::rng::CounterRng;

pub const E_STEP_TOL: f64 = 1e-5;
pub const E_STEP_MAX_ITERS: usize = 100;

/// A bag-of-words corpus: per document, distinct `(word_id, count)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaCorpus {
    vocab_size: usize,
    docs: Vec<Vec<(usize, u32)>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Triplet {
    doc_id: usize,
    word_id: usize,
    count: u32,
}

impl LdaCorpus {
    pub fn new(vocab_size: usize, docs: Vec<Vec<(usize, u32)>>) -> Result<Self> {
        for (d, doc) in docs.iter().enumerate() {
            if let Some(&(w, c)) = doc.iter().find(|&&(w, c)| w >= vocab_size || c == 0) {
                return Err(Error::InvalidData(format!(
                    "document {d}: word {w} with count {c} (vocabulary size {vocab_size})"
                )));
            }
        }
        Ok(Self { vocab_size, docs })
    }

    /// Builds a corpus from `(doc_id, word_id, count)` triplets. Repeated pairs
    /// are summed; documents with no triplets are empty.
    pub fn from_triplets(
        n_docs: usize,
        vocab_size: usize,
        triplets: impl IntoIterator<Item = (usize, usize, u32)>,
    ) -> Result<Self> {
        let mut docs = vec![Vec::<(usize, u32)>::new(); n_docs];
        for (d, w, c) in triplets {
            let doc = docs
                .get_mut(d)
                .ok_or_else(|| Error::InvalidData(format!("doc_id {d} out of range")))?;
            match doc.iter_mut().find(|(word, _)| *word == w) {
                Some(entry) => entry.1 += c,
                None => doc.push((w, c)),
            }
        }
        for doc in &mut docs {
            doc.sort_unstable();
        }
        Self::new(vocab_size, docs)
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn docs(&self) -> &[Vec<(usize, u32)>] {
        &self.docs
    }

    pub fn total_words(&self) -> u64 {
        self.docs.iter().flatten().map(|&(_, c)| c as u64).sum()
    }

    /// Reads the `doc_id,word_id,count` CSV format. Sizes default to one past
    /// the largest id seen.
    pub fn read_csv(path: &Path, n_docs: Option<usize>, vocab_size: Option<usize>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let triplets = reader
            .deserialize::<Triplet>()
            .map(|r| r.map(|t| (t.doc_id, t.word_id, t.count)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let max_doc = triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0);
        let max_word = triplets.iter().map(|t| t.1 + 1).max().unwrap_or(0);
        Self::from_triplets(n_docs.unwrap_or(max_doc), vocab_size.unwrap_or(max_word), triplets)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("doc_id,word_id,count\n");
        for (d, doc) in self.docs.iter().enumerate() {
            for &(w, c) in doc {
                out.push_str(&format!("{d},{w},{c}\n"));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }
}

/// Reads a vocabulary file: one token per line, line index = word id.
pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(str::to_owned).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaHyper {
    pub k: usize,
    pub eta_beta: f64,
    pub eta_gamma: f64,
    /// When set, `η_β = 1/V^c` and `η_γ = 1/K^c` override the explicit values.
    #[serde(default)]
    pub c_exponent: Option<f64>,
}

impl LdaHyper {
    /// `η_γ = 1/K`, `η_β = 1/V`.
    pub fn new(k: usize, vocab_size: usize) -> Self {
        Self {
            k,
            eta_beta: 1.0 / vocab_size as f64,
            eta_gamma: 1.0 / k as f64,
            c_exponent: None,
        }
    }

    /// Effective `(η_β, η_γ)` for a vocabulary of the given size.
    pub fn resolved(&self, vocab_size: usize) -> Result<(f64, f64)> {
        if self.k < 2 {
            return Err(Error::InvalidParameter("LDA needs at least two topics".into()));
        }
        let (eb, eg) = match self.c_exponent {
            Some(c) if c > 1.0 => ((vocab_size as f64).powf(-c), (self.k as f64).powf(-c)),
            Some(c) => return Err(Error::InvalidParameter(format!("c_exponent {c} must exceed 1"))),
            None => (self.eta_beta, self.eta_gamma),
        };
        if !(eb > 0.0 && eg > 0.0) {
            return Err(Error::InvalidParameter("Dirichlet hyperparameters must be positive".into()));
        }
        Ok((eb, eg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaVariationalState {
    /// K × V topic-word Dirichlet parameters.
    pub lambda: DMatrix<f64>,
    /// D × K document-topic Dirichlet parameters.
    pub gamma: DMatrix<f64>,
    /// Per document, a (distinct words) × K matrix of topic assignments.
    pub phi: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaFit {
    pub state: LdaVariationalState,
    pub trace: ElboTrace,
}

/// `E[log β_kv] = ψ(λ_kv) − ψ(Σ_v λ_kv)`.
pub fn expected_log_beta(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = lambda.map(digamma);
    for k in 0..lambda.nrows() {
        let total = digamma(lambda.row(k).sum());
        out.row_mut(k).add_scalar_mut(-total);
    }
    out
}

/// `E[log θ_k] = ψ(γ_k) − ψ(Σ γ)`.
fn expected_log_theta(gamma: &DVector<f64>) -> DVector<f64> {
    let total = digamma(gamma.sum());
    gamma.map(|g| digamma(g) - total)
}

/// `φ_nk ∝ exp{E log β_{k,w_n} + α E log θ_k}`.
pub fn update_phi(doc: &[(usize, u32)], elog_beta: &DMatrix<f64>, gamma_d: &DVector<f64>, alpha: f64) -> DMatrix<f64> {
    let k = elog_beta.nrows();
    let elog_theta = expected_log_theta(gamma_d);
    let mut phi = DMatrix::zeros(doc.len(), k);
    let mut row = vec![0.0; k];
    for (n, &(w, _)) in doc.iter().enumerate() {
        for j in 0..k {
            row[j] = elog_beta[(j, w)] + alpha * elog_theta[j];
        }
        crate::math::normalize_log_weights(&mut row);
        for j in 0..k {
            phi[(n, j)] = row[j];
        }
    }
    phi
}

/// `γ_dk = η_γ + Σ_n count_n φ_nk`. Does not depend on α.
pub fn update_gamma(doc: &[(usize, u32)], phi: &DMatrix<f64>, eta_gamma: f64) -> DVector<f64> {
    let mut gamma = DVector::from_element(phi.ncols(), eta_gamma);
    for (n, &(_, c)) in doc.iter().enumerate() {
        for j in 0..phi.ncols() {
            gamma[j] += c as f64 * phi[(n, j)];
        }
    }
    gamma
}

/// Per-document fixed point, warm-started from `gamma_d`. Stops when the mean
/// absolute change in γ falls below [`E_STEP_TOL`] or after
/// [`E_STEP_MAX_ITERS`] rounds.
pub fn e_step_doc(
    doc: &[(usize, u32)],
    elog_beta: &DMatrix<f64>,
    gamma_d: &DVector<f64>,
    eta_gamma: f64,
    alpha: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    e_step_doc_until(doc, elog_beta, gamma_d, eta_gamma, alpha, E_STEP_TOL, E_STEP_MAX_ITERS)
}

/// [`e_step_doc`] with an explicit stopping rule.
pub fn e_step_doc_until(
    doc: &[(usize, u32)],
    elog_beta: &DMatrix<f64>,
    gamma_d: &DVector<f64>,
    eta_gamma: f64,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut gamma = gamma_d.clone();
    let mut phi = DMatrix::zeros(doc.len(), elog_beta.nrows());
    for _ in 0..max_iters {
        phi = update_phi(doc, elog_beta, &gamma, alpha);
        let next = update_gamma(doc, &phi, eta_gamma);
        let change = (&next - &gamma).abs().mean();
        gamma = next;
        if change < tol {
            break;
        }
    }
    (phi, gamma)
}

/// `λ_kv = η_β + Σ_d Σ_{n: w_dn = v} count φ_dnk`. Does not depend on α.
pub fn m_step(corpus: &LdaCorpus, phi: &[DMatrix<f64>], k: usize, eta_beta: f64) -> DMatrix<f64> {
    let mut lambda = DMatrix::from_element(k, corpus.vocab_size(), eta_beta);
    for (doc, phi_d) in corpus.docs().iter().zip(phi) {
        for (n, &(w, c)) in doc.iter().enumerate() {
            for j in 0..k {
                lambda[(j, w)] += c as f64 * phi_d[(n, j)];
            }
        }
    }
    lambda
}

/// `KL(Dir(a) ‖ Dir(b, …, b))`.
fn dirichlet_kl(a: &[f64], b: f64) -> f64 {
    let total: f64 = a.iter().sum();
    let dt = digamma(total);
    let k = a.len() as f64;
    ln_gamma(total) - a.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(k * b)
        + k * ln_gamma(b)
        + a.iter().map(|&x| (x - b) * (digamma(x) - dt)).sum::<f64>()
}

/// The tempered bound F from the module docs.
pub fn objective(corpus: &LdaCorpus, state: &LdaVariationalState, eta_beta: f64, eta_gamma: f64, alpha: f64) -> f64 {
    let elog_beta = expected_log_beta(&state.lambda);
    let k = state.lambda.nrows();
    let mut total = 0.0;
    for (d, (doc, phi)) in corpus.docs().iter().zip(&state.phi).enumerate() {
        let gamma: DVector<f64> = state.gamma.row(d).transpose();
        let elog_theta = expected_log_theta(&gamma);
        for (n, &(w, c)) in doc.iter().enumerate() {
            for j in 0..k {
                let p = phi[(n, j)];
                if p > 0.0 {
                    total += c as f64 * p * (elog_beta[(j, w)] + alpha * elog_theta[j] - p.ln());
                }
            }
        }
        total -= alpha * dirichlet_kl(gamma.as_slice(), eta_gamma);
    }
    for j in 0..k {
        let row: Vec<f64> = state.lambda.row(j).iter().copied().collect();
        total -= dirichlet_kl(&row, eta_beta);
    }
    total
}

/// λ starts at `η_β + 1 + u`, `u ~ U(0, 1)` from the seed; γ at `η_γ + N_d/K`.
pub fn initial_state(corpus: &LdaCorpus, k: usize, eta_beta: f64, eta_gamma: f64, seed: u64) -> LdaVariationalState {
    let mut rng = CounterRng::new(seed);
    let lambda = DMatrix::from_fn(k, corpus.vocab_size(), |_, _| eta_beta + 1.0 + rng.uniform());
    let gamma = DMatrix::from_fn(corpus.n_docs(), k, |d, _| {
        let words: u32 = corpus.docs()[d].iter().map(|&(_, c)| c).sum();
        eta_gamma + words as f64 / k as f64
    });
    let phi = corpus
        .docs()
        .iter()
        .map(|doc| DMatrix::from_element(doc.len(), k, 1.0 / k as f64))
        .collect();
    LdaVariationalState { lambda, gamma, phi }
}

/// Alternates document E-steps (in parallel, collected in document order) and
/// the M-step until F changes by less than `cfg.elbo_tol`.
pub fn fit_lda(corpus: &LdaCorpus, hyper: &LdaHyper, cfg: &AlphaConfig) -> Result<LdaFit> {
    cfg.validate()?;
    let (eta_beta, eta_gamma) = hyper.resolved(corpus.vocab_size())?;
    if corpus.n_docs() == 0 || corpus.total_words() == 0 {
        return Err(Error::InvalidData("empty corpus".into()));
    }
    let state = initial_state(corpus, hyper.k, eta_beta, eta_gamma, cfg.seed);
    fit_lda_from(corpus, hyper, cfg, state)
}

/// [`fit_lda`] from a given starting state.
pub fn fit_lda_from(
    corpus: &LdaCorpus,
    hyper: &LdaHyper,
    cfg: &AlphaConfig,
    mut state: LdaVariationalState,
) -> Result<LdaFit> {
    cfg.validate()?;
    let (eta_beta, eta_gamma) = hyper.resolved(corpus.vocab_size())?;
    if state.lambda.shape() != (hyper.k, corpus.vocab_size()) || state.gamma.shape() != (corpus.n_docs(), hyper.k) {
        return Err(Error::InvalidParameter("initial state does not match corpus".into()));
    }
    let mut trace = ElboTrace::default();
    for _ in 0..cfg.max_iters {
        let elog_beta = expected_log_beta(&state.lambda);
        let results: Vec<(DMatrix<f64>, DVector<f64>)> = corpus
            .docs()
            .par_iter()
            .enumerate()
            .map(|(d, doc)| {
                let gamma_d: DVector<f64> = state.gamma.row(d).transpose();
                e_step_doc(doc, &elog_beta, &gamma_d, eta_gamma, cfg.alpha)
            })
            .collect();
        for (d, (phi, gamma)) in results.into_iter().enumerate() {
            state.gamma.set_row(d, &gamma.transpose());
            state.phi[d] = phi;
        }
        state.lambda = m_step(corpus, &state.phi, hyper.k, eta_beta);
        if trace.push(objective(corpus, &state, eta_beta, eta_gamma, cfg.alpha), cfg.elbo_tol) {
            break;
        }
    }
    Ok(LdaFit { state, trace })
}

/// Row-normalized posterior-mean topics `λ_k / Σ_v λ_kv`.
pub fn topic_means(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = lambda.clone();
    for k in 0..lambda.nrows() {
        let total = lambda.row(k).sum();
        out.row_mut(k).scale_mut(1.0 / total);
    }
    out
}

/// The `n` highest-weight word ids of a topic row, ties broken by id.
pub fn top_words(topic: &[f64], n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..topic.len()).collect();
    ids.sort_by(|&a, &b| topic[b].total_cmp(&topic[a]).then(a.cmp(&b)));
    ids.truncate(n);
    ids
}

/// Greedy matching on total-variation distance. Returns, for each true topic,
/// the index of its matched estimated topic.
pub fn match_topics(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<usize> {
    let k = truth.nrows();
    let tv = |t: usize, e: usize| 0.5 * (truth.row(t) - estimated.row(e)).abs().sum();
    let mut pairs: Vec<(f64, usize, usize)> = (0..k)
        .flat_map(|t| (0..estimated.nrows()).map(move |e| (t, e)))
        .map(|(t, e)| (tv(t, e), t, e))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut assignment = vec![usize::MAX; k];
    let mut used = vec![false; estimated.nrows()];
    for (_, t, e) in pairs {
        if assignment[t] == usize::MAX && !used[e] {
            assignment[t] = e;
            used[e] = true;
        }
    }
    assignment
}
