//! Turning a data source into model inputs, with the truth when it is known.

use std::path::Path;

use alphavb::divergence::DiscreteDistribution;
use alphavb::gmm::GmmPrior;
use alphavb::lda::LdaCorpus;
use alphavb::linreg::RegressionData;
use alphavb::synth::{generate, parse_numeric_csv, parse_regression_csv, DatasetBundle, DatasetKind};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::config::{DataSource, ModelKind, SolverConfig};
use crate::CliError;

#[derive(Debug, Clone)]
pub enum Dataset {
    Regression {
        data: RegressionData,
        truth: Option<DVector<f64>>,
    },
    Mixture {
        y: DMatrix<f64>,
        prior: GmmPrior,
        /// K × d true means.
        truth: Option<DMatrix<f64>>,
    },
    Corpus {
        corpus: LdaCorpus,
        /// K × V true topics.
        truth: Option<DMatrix<f64>>,
    },
}

fn load_err(e: alphavb::Error) -> CliError {
    match e {
        alphavb::Error::Io(msg) => CliError::Io(msg),
        other => CliError::Config(format!("bad input data: {other}")),
    }
}

fn wrong_kind(kind: DatasetKind, model: ModelKind) -> CliError {
    CliError::Config(format!("dataset {} cannot be fitted with model {}", kind.name(), model.name()))
}

pub fn load(source: &DataSource, model: ModelKind, solver: &SolverConfig, seed: u64) -> Result<Dataset, CliError> {
    match source {
        DataSource::Generate(params) => from_bundle(generate(params, seed).map_err(load_err)?, model),
        DataSource::Path(path) => from_path(path, model, solver),
    }
}

fn from_bundle(bundle: DatasetBundle, model: ModelKind) -> Result<Dataset, CliError> {
    let kind = bundle.kind();
    Ok(match (bundle, model) {
        (DatasetBundle::Linreg(b), ModelKind::SpikeSlab | ModelKind::Blm) => Dataset::Regression {
            data: b.data,
            truth: Some(b.beta),
        },
        (DatasetBundle::Gmm(b), ModelKind::Gmm) => Dataset::Mixture {
            y: b.y,
            prior: b.prior,
            truth: Some(b.means),
        },
        (DatasetBundle::Lda(b), ModelKind::Lda) => Dataset::Corpus {
            corpus: b.corpus,
            truth: Some(b.topics),
        },
        _ => return Err(wrong_kind(kind, model)),
    })
}

fn matrix(v: &Value) -> Option<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).ok()?;
    let ncols = rows.first()?.len();
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn read_sidecar(path: &Path) -> Result<Option<Value>, CliError> {
    let side = path.with_extension("json");
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| CliError::Io(format!("{}: {e}", side.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Config(format!("{}: {e}", side.display())))
}

fn from_path(path: &Path, model: ModelKind, solver: &SolverConfig) -> Result<Dataset, CliError> {
    let side = read_sidecar(path)?;
    let truth = side.as_ref().and_then(|s| s.get("truth"));
    let field = |name: &str| truth.and_then(|t| t.get(name));
    if let Some(kind) = side.as_ref().and_then(|s| s.get("kind")?.as_str()?.parse::<DatasetKind>().ok()) {
        if ModelKind::for_dataset(kind).map(ModelKind::default_dataset) != Some(model.default_dataset()) {
            return Err(wrong_kind(kind, model));
        }
    }
    let read = || std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())));
    Ok(match model {
        ModelKind::SpikeSlab | ModelKind::Blm => {
            let sigma = field("sigma").and_then(Value::as_f64).unwrap_or(solver.sigma);
            let data = parse_regression_csv(&read()?, sigma).map_err(load_err)?;
            let truth = field("beta")
                .and_then(|b| serde_json::from_value::<Vec<f64>>(b.clone()).ok())
                .map(DVector::from_vec);
            Dataset::Regression { data, truth }
        }
        ModelKind::Gmm => {
            let (_, y) = parse_numeric_csv(&read()?).map_err(load_err)?;
            let side_prior = || -> Option<GmmPrior> {
                let pi: Vec<f64> = serde_json::from_value(field("pi")?.clone()).ok()?;
                let mu0: Vec<f64> = serde_json::from_value(field("mu0")?.clone()).ok()?;
                GmmPrior::new(
                    DVector::from_vec(mu0),
                    field("sigma0_sq")?.as_f64()?,
                    DiscreteDistribution::new(pi).ok()?,
                )
                .ok()
            };
            let prior = match side_prior() {
                Some(p) => p,
                None => GmmPrior::new(
                    DVector::zeros(y.ncols()),
                    solver.gmm.sigma0_sq,
                    DiscreteDistribution::uniform(solver.gmm.k),
                )
                .map_err(load_err)?,
            };
            Dataset::Mixture {
                y,
                prior,
                truth: field("means").and_then(matrix),
            }
        }
        ModelKind::Lda => {
            let size = |name: &str| field(name).and_then(Value::as_u64).map(|v| v as usize);
            let corpus = LdaCorpus::read_csv(path, size("n_docs"), size("vocab_size")).map_err(load_err)?;
            Dataset::Corpus {
                corpus,
                truth: field("topics").and_then(matrix),
            }
        }
    })
}
