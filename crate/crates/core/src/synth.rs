//! Seeded generators for the simulation designs and their file formats.
//!
//! Every generator is a pure function of its parameters and seed. Bundles
//! render to CSV plus a JSON sidecar holding the truth, the parameters and the
//! seed; rendering is byte-stable so identical seeds give identical files.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::gmm::GmmPrior;
use crate::lda::LdaCorpus;
use crate::linreg::RegressionData;
use crate::rng::CounterRng;
use crate::tiny::TinyDiscreteModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    LinregS21,
    GmmS22,
    LdaSynth,
    TinyDiscrete,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::LinregS21 => "linreg_s21",
            DatasetKind::GmmS22 => "gmm_s22",
            DatasetKind::LdaSynth => "lda_synth",
            DatasetKind::TinyDiscrete => "tiny_discrete",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::InvalidParameter(format!("unknown dataset kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinregParams {
    pub n: usize,
    pub d: usize,
    /// Leading nonzero coefficients; the rest are zero.
    pub beta_head: Vec<f64>,
    pub sigma: f64,
    /// Standard deviation of the iid Gaussian design entries.
    pub x_sd: f64,
}

impl Default for LinregParams {
    fn default() -> Self {
        Self {
            n: 100,
            d: 500,
            beta_head: vec![5.0, -4.0, -3.0, 2.0],
            sigma: 1.0,
            x_sd: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmParams {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Prior variance σ₀² of the component means (prior mean is zero).
    pub sigma0_sq: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 2,
            k: 3,
            sigma0_sq: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaParams {
    pub k: usize,
    pub v: usize,
    pub docs: usize,
    pub words_per_doc: usize,
    /// Words per topic; topic supports are disjoint.
    pub support: usize,
    /// Each document mixes between 1 and this many topics.
    pub max_active: usize,
}

impl Default for LdaParams {
    fn default() -> Self {
        Self {
            k: 3,
            v: 50,
            docs: 40,
            words_per_doc: 100,
            support: 10,
            max_active: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TinyParams {
    pub n: usize,
}

impl Default for TinyParams {
    fn default() -> Self {
        Self { n: 5 }
    }
}

/// Generator parameters, tagged by dataset kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetParams {
    LinregS21(LinregParams),
    GmmS22(GmmParams),
    LdaSynth(LdaParams),
    TinyDiscrete(TinyParams),
}

impl DatasetParams {
    pub fn defaults(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::LinregS21 => Self::LinregS21(LinregParams::default()),
            DatasetKind::GmmS22 => Self::GmmS22(GmmParams::default()),
            DatasetKind::LdaSynth => Self::LdaSynth(LdaParams::default()),
            DatasetKind::TinyDiscrete => Self::TinyDiscrete(TinyParams::default()),
        }
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            Self::LinregS21(_) => DatasetKind::LinregS21,
            Self::GmmS22(_) => DatasetKind::GmmS22,
            Self::LdaSynth(_) => DatasetKind::LdaSynth,
            Self::TinyDiscrete(_) => DatasetKind::TinyDiscrete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinregBundle {
    pub params: LinregParams,
    pub seed: u64,
    pub data: RegressionData,
    pub beta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmBundle {
    pub params: GmmParams,
    pub seed: u64,
    /// n × d observations.
    pub y: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// K × d true means.
    pub means: DMatrix<f64>,
    pub prior: GmmPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaBundle {
    pub params: LdaParams,
    pub seed: u64,
    pub corpus: LdaCorpus,
    /// K × V true topic-word distributions.
    pub topics: DMatrix<f64>,
    /// D × K true document-topic proportions.
    pub doc_topics: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyBundle {
    pub params: TinyParams,
    pub seed: u64,
    pub model: TinyDiscreteModel,
    pub y: Vec<usize>,
    pub latent: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetBundle {
    Linreg(LinregBundle),
    Gmm(GmmBundle),
    Lda(LdaBundle),
    Tiny(TinyBundle),
}

pub fn generate(params: &DatasetParams, seed: u64) -> Result<DatasetBundle> {
    Ok(match params {
        DatasetParams::LinregS21(p) => DatasetBundle::Linreg(linreg_s21(p, seed)?),
        DatasetParams::GmmS22(p) => DatasetBundle::Gmm(gmm_s22(p, seed)?),
        DatasetParams::LdaSynth(p) => DatasetBundle::Lda(lda_synth(p, seed)?),
        DatasetParams::TinyDiscrete(p) => DatasetBundle::Tiny(tiny_discrete(p, seed)?),
    })
}

/// Sparse regression: `X_ij ~ N(0, x_sd²)`, `β* = (beta_head, 0, …, 0)`,
/// `y = Xβ* + N(0, σ² I)`.
pub fn linreg_s21(params: &LinregParams, seed: u64) -> Result<LinregBundle> {
    if params.n == 0 || params.d < params.beta_head.len() || params.d == 0 {
        return Err(Error::InvalidParameter(format!(
            "linreg needs n >= 1 and d >= {} (got n={}, d={})",
            params.beta_head.len(),
            params.n,
            params.d
        )));
    }
    if !(params.sigma > 0.0 && params.x_sd > 0.0) {
        return Err(Error::InvalidParameter("sigma and x_sd must be positive".into()));
    }
    let mut rng = CounterRng::new(seed);
    let x = DMatrix::from_fn(params.n, params.d, |_, _| rng.normal(0.0, params.x_sd));
    let beta = DVector::from_fn(params.d, |j, _| params.beta_head.get(j).copied().unwrap_or(0.0));
    let noise = DVector::from_fn(params.n, |_, _| rng.normal(0.0, params.sigma));
    let y = &x * &beta + noise;
    Ok(LinregBundle {
        params: params.clone(),
        seed,
        data: RegressionData::new(x, y, params.sigma)?,
        beta,
    })
}

/// Mixture design: `μ_k ~ N(0, σ₀² I)`, uniform weights, `y_i ~ N(μ_{s_i}, I)`.
pub fn gmm_s22(params: &GmmParams, seed: u64) -> Result<GmmBundle> {
    if params.n == 0 || params.d == 0 || params.k == 0 || !(params.sigma0_sq > 0.0) {
        return Err(Error::InvalidParameter("gmm needs positive n, d, k and sigma0_sq".into()));
    }
    let mut rng = CounterRng::new(seed);
    let sd = params.sigma0_sq.sqrt();
    let means = DMatrix::from_fn(params.k, params.d, |_, _| rng.normal(0.0, sd));
    let pi = DiscreteDistribution::uniform(params.k);
    let mut labels = Vec::with_capacity(params.n);
    let mut y = DMatrix::zeros(params.n, params.d);
    for i in 0..params.n {
        let s = rng.categorical(pi.probs());
        labels.push(s);
        for c in 0..params.d {
            y[(i, c)] = rng.normal(means[(s, c)], 1.0);
        }
    }
    Ok(GmmBundle {
        params: params.clone(),
        seed,
        y,
        labels,
        means,
        prior: GmmPrior::new(DVector::zeros(params.d), params.sigma0_sq, pi)?,
    })
}

/// Topic corpus with disjoint topic supports (a random partition of the
/// vocabulary) and 1 to `max_active` topics per document.
pub fn lda_synth(params: &LdaParams, seed: u64) -> Result<LdaBundle> {
    let p = params;
    if p.k < 2 || p.support == 0 || p.k * p.support > p.v || p.docs == 0 || p.words_per_doc == 0 {
        return Err(Error::InvalidParameter(format!(
            "lda needs k >= 2 disjoint supports of {} words inside a vocabulary of {}",
            p.support, p.v
        )));
    }
    if p.max_active == 0 || p.max_active > p.k {
        return Err(Error::InvalidParameter("max_active must be in 1..=k".into()));
    }
    let mut rng = CounterRng::new(seed);
    let mut words: Vec<usize> = (0..p.v).collect();
    rng.shuffle(&mut words);
    let mut topics = DMatrix::zeros(p.k, p.v);
    for k in 0..p.k {
        let support = &words[k * p.support..(k + 1) * p.support];
        let w: Vec<f64> = support.iter().map(|_| 0.5 + rng.uniform()).collect();
        let total: f64 = w.iter().sum();
        for (&v, wv) in support.iter().zip(&w) {
            topics[(k, v)] = wv / total;
        }
    }
    let mut doc_topics = DMatrix::zeros(p.docs, p.k);
    let mut docs = Vec::with_capacity(p.docs);
    for d in 0..p.docs {
        let active = 1 + rng.below(p.max_active);
        let mut order: Vec<usize> = (0..p.k).collect();
        rng.shuffle(&mut order);
        let draws: Vec<f64> = (0..active).map(|_| -rng.uniform().ln()).collect();
        let total: f64 = draws.iter().sum();
        for (&k, g) in order.iter().zip(&draws) {
            doc_topics[(d, k)] = g / total;
        }
        let theta: Vec<f64> = doc_topics.row(d).iter().copied().collect();
        let mut counts = vec![0u32; p.v];
        for _ in 0..p.words_per_doc {
            let z = rng.categorical(&theta);
            let row: Vec<f64> = topics.row(z).iter().copied().collect();
            counts[rng.categorical(&row)] += 1;
        }
        docs.push(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(w, &c)| (w, c))
                .collect(),
        );
    }
    Ok(LdaBundle {
        params: p.clone(),
        seed,
        corpus: LdaCorpus::new(p.v, docs)?,
        topics,
        doc_topics,
    })
}

/// The reference tiny model: two grid points, two latent states, Bernoulli
/// emissions, uniform prior, truth at grid point 0.
pub fn tiny_reference_model() -> TinyDiscreteModel {
    TinyDiscreteModel::bernoulli_mixture(
        &[vec![0.2, 0.8], vec![0.3, 0.9]],
        &[vec![0.5, 0.5], vec![0.5, 0.5]],
        DiscreteDistribution::uniform(2),
        0,
    )
    .expect("reference model is valid")
}

pub fn tiny_discrete(params: &TinyParams, seed: u64) -> Result<TinyBundle> {
    let model = tiny_reference_model();
    model.check_budget(params.n)?;
    let mut rng = CounterRng::new(seed);
    let (y, latent) = model.sample(params.n, &mut rng);
    Ok(TinyBundle {
        params: params.clone(),
        seed,
        model,
        y,
        latent,
    })
}

/// Lossless float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn matrix_csv(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Sidecar<'a, P: Serialize, T: Serialize> {
    kind: &'static str,
    seed: u64,
    params: &'a P,
    truth: T,
}

fn sidecar<T: Serialize>(seed: u64, params: &DatasetParams, truth: T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Sidecar {
        kind: params.kind().name(),
        seed,
        params,
        truth,
    })?;
    s.push('\n');
    Ok(s)
}

impl DatasetBundle {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Self::Linreg(_) => DatasetKind::LinregS21,
            Self::Gmm(_) => DatasetKind::GmmS22,
            Self::Lda(_) => DatasetKind::LdaSynth,
            Self::Tiny(_) => DatasetKind::TinyDiscrete,
        }
    }

    /// Renders the bundle as `(file name, contents)` pairs: the data CSV and
    /// its JSON sidecar.
    pub fn render(&self) -> Result<Vec<(String, String)>> {
        let kind = self.kind();
        let csv_name = format!("{}.csv", kind.name());
        let json_name = format!("{}.json", kind.name());
        Ok(match self {
            Self::Linreg(b) => {
                let mut header = vec!["y".to_owned()];
                header.extend((1..=b.data.d()).map(|j| format!("x{j}")));
                let rows = (0..b.data.n()).map(|i| {
                    let mut row = vec![b.data.y[i]];
                    row.extend(b.data.x.row(i).iter());
                    row
                });
                let truth = serde_json::json!({
                    "beta": b.beta.as_slice(),
                    "sigma": b.data.sigma,
                });
                vec![
                    (csv_name, matrix_csv(&header, rows)),
                    (json_name, sidecar(b.seed, &DatasetParams::LinregS21(b.params.clone()), truth)?),
                ]
            }
            Self::Gmm(b) => {
                let header: Vec<String> = (1..=b.y.ncols()).map(|j| format!("y{j}")).collect();
                let rows = (0..b.y.nrows()).map(|i| b.y.row(i).iter().copied().collect());
                let means: Vec<Vec<f64>> = (0..b.means.nrows())
                    .map(|k| b.means.row(k).iter().copied().collect())
                    .collect();
                let truth = serde_json::json!({
                    "means": means,
                    "labels": b.labels,
                    "pi": b.prior.pi.probs(),
                    "mu0": b.prior.mu0.as_slice(),
                    "sigma0_sq": b.prior.sigma0_sq,
                });
                vec![
                    (csv_name, matrix_csv(&header, rows)),
                    (json_name, sidecar(b.seed, &DatasetParams::GmmS22(b.params.clone()), truth)?),
                ]
            }
            Self::Lda(b) => {
                let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
                    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
                };
                let truth = serde_json::json!({
                    "n_docs": b.corpus.n_docs(),
                    "vocab_size": b.corpus.vocab_size(),
                    "topics": rows(&b.topics),
                    "doc_topics": rows(&b.doc_topics),
                });
                vec![
                    (csv_name, b.corpus.to_csv_string()),
                    (json_name, sidecar(b.seed, &DatasetParams::LdaSynth(b.params.clone()), truth)?),
                ]
            }
            Self::Tiny(b) => {
                let mut csv = String::from("y\n");
                for y in &b.y {
                    csv.push_str(&format!("{y}\n"));
                }
                let truth = serde_json::json!({ "model": b.model, "latent": b.latent });
                vec![(csv_name, csv), (json_name, sidecar(b.seed, &DatasetParams::TinyDiscrete(b.params.clone()), truth)?)]
            }
        })
    }
}

/// Parses a headed numeric CSV into its header and an n × columns matrix.
pub fn parse_numeric_csv(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::InvalidData(format!("row {} has {} fields", rows + 1, record.len())));
        }
        for field in record.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("not a number: {field:?}")))?,
            );
        }
        rows += 1;
    }
    let m = DMatrix::from_row_slice(rows, header.len(), &values);
    Ok((header, m))
}

/// Reads a regression CSV (`y,x1..xd`).
pub fn parse_regression_csv(text: &str, sigma: f64) -> Result<RegressionData> {
    let (header, m) = parse_numeric_csv(text)?;
    if header.first().map(String::as_str) != Some("y") || m.ncols() < 2 {
        return Err(Error::InvalidData("regression CSV must start with a y column".into()));
    }
    let y = m.column(0).into_owned();
    let x = m.columns(1, m.ncols() - 1).into_owned();
    RegressionData::new(x, y, sigma)
}
