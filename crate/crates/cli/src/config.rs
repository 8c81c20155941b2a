//! Experiment configuration: the JSON document, command-line overrides and
//! validation.

use std::path::{Path, PathBuf};

use alphavb::gmm::UpdateRule;
use alphavb::linreg::HdrSettings;
use alphavb::synth::{DatasetKind, DatasetParams, LinregParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gmm,
    SpikeSlab,
    Blm,
    Lda,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gmm => "gmm",
            ModelKind::SpikeSlab => "spike_slab",
            ModelKind::Blm => "blm",
            ModelKind::Lda => "lda",
        }
    }

    /// Generator parameters used when a config names a model but no data.
    /// The conjugate linear model is low-dimensional, so it gets the d = 4
    /// version of the regression design.
    pub fn default_data(self) -> DatasetParams {
        match self {
            ModelKind::Blm => DatasetParams::LinregS21(LinregParams {
                d: 4,
                ..LinregParams::default()
            }),
            other => DatasetParams::defaults(other.default_dataset()),
        }
    }

    pub fn default_dataset(self) -> DatasetKind {
        match self {
            ModelKind::Gmm => DatasetKind::GmmS22,
            ModelKind::SpikeSlab | ModelKind::Blm => DatasetKind::LinregS21,
            ModelKind::Lda => DatasetKind::LdaSynth,
        }
    }

    /// The model fitted when a config names data but no model.
    pub fn for_dataset(kind: DatasetKind) -> Option<Self> {
        match kind {
            DatasetKind::GmmS22 => Some(ModelKind::Gmm),
            DatasetKind::LinregS21 => Some(ModelKind::SpikeSlab),
            DatasetKind::LdaSynth => Some(ModelKind::Lda),
            DatasetKind::TinyDiscrete => None,
        }
    }
}

/// A single α or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl AlphaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AlphaSpec::One(a) => vec![*a],
            AlphaSpec::Many(v) => v.clone(),
        }
    }
}

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Draw a synthetic dataset with the run seed.
    Generate(DatasetParams),
    /// Read a CSV written by `generate` (or in the same format). A JSON
    /// sidecar next to it, if present, supplies the truth and the prior.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSettings {
    /// Number of components when no sidecar fixes it.
    pub k: usize,
    pub sigma0_sq: f64,
    pub rule: UpdateRule,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            k: 3,
            sigma0_sq: 50.0,
            rule: UpdateRule::Derived,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlmSettings {
    pub prior_var: f64,
    pub shape: f64,
    pub rate: f64,
}

impl Default for BlmSettings {
    fn default() -> Self {
        Self {
            prior_var: 10.0,
            shape: 2.0,
            rate: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaSettings {
    /// Number of topics; defaults to the truth's when known, else 3.
    pub k: Option<usize>,
    /// Sets `η_β = 1/V^c` and `η_γ = 1/K^c`.
    pub c_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub elbo_tol: f64,
    /// Noise sd for regression CSVs without a sidecar.
    pub sigma: f64,
    pub gmm: GmmSettings,
    pub hdr: HdrSettings,
    pub blm: BlmSettings,
    pub lda: LdaSettings,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            elbo_tol: 1e-6,
            sigma: 1.0,
            gmm: GmmSettings::default(),
            hdr: HdrSettings::default(),
            blm: BlmSettings::default(),
            lda: LdaSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub ns: Vec<usize>,
    pub replicates: usize,
    /// Design of each dataset; `n` is replaced by the grid value.
    pub design: LinregParams,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            ns: vec![100, 200, 400, 800, 1600],
            replicates: 20,
            design: LinregParams {
                d: 4,
                ..LinregParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsCheck {
    /// Exhaustive check on the two-point discrete model.
    #[default]
    Tiny,
    /// Mixture-of-Gaussians surrogate check on the Gaussian location model.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub check: BoundsCheck,
    pub n: usize,
    pub zeta: f64,
    pub replications: usize,
    /// Mixture components for the surrogate check.
    pub components: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            check: BoundsCheck::Tiny,
            n: 5,
            zeta: 0.1,
            replications: 2000,
            components: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub top_words: usize,
    /// Inclusion probability above which a coefficient counts as selected.
    pub threshold: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            top_words: 10,
            threshold: 0.5,
        }
    }
}

/// The JSON experiment document. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// If present, must name the subcommand being run.
    pub command: Option<String>,
    pub model: Option<ModelKind>,
    pub alpha: Option<AlphaSpec>,
    pub seed: Option<u64>,
    pub data: Option<DataSource>,
    pub solver: SolverConfig,
    pub output_dir: Option<PathBuf>,
    pub rate: RateConfig,
    pub bounds: BoundsConfig,
    pub report: ReportConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Values given on the command line; each replaces its config counterpart.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub kind: Option<DatasetKind>,
}

/// A config with overrides and command defaults applied. This is what a run
/// records and hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub model: Option<ModelKind>,
    pub alpha: Vec<f64>,
    pub seed: u64,
    pub data: Option<DataSource>,
    pub solver: SolverConfig,
    pub rate: RateConfig,
    pub bounds: BoundsConfig,
    pub report: ReportConfig,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

pub const DEFAULT_OUTPUT_DIR: &str = "alphavb-out";

impl ResolvedConfig {
    pub fn resolve(command: &str, cfg: ExperimentConfig, ov: Overrides) -> Result<Self, CliError> {
        if let Some(c) = &cfg.command {
            if c != command {
                return Err(CliError::Config(format!("config is for command {c:?}, not {command:?}")));
            }
        }
        let default_alpha: &[f64] = match command {
            "sweep-alpha" => &[0.5, 0.7, 0.95, 1.0],
            "rate-experiment" => &[0.7],
            "verify-bounds" => &[0.5],
            _ => &[1.0],
        };
        let alpha = ov
            .alpha
            .or_else(|| cfg.alpha.as_ref().map(AlphaSpec::values))
            .unwrap_or_else(|| default_alpha.to_vec());
        let mut data = cfg.data;
        if let Some(kind) = ov.kind {
            data = Some(DataSource::Generate(DatasetParams::defaults(kind)));
        }
        let mut model = cfg.model;
        if matches!(command, "fit" | "sweep-alpha" | "report") {
            if model.is_none() {
                model = match &data {
                    Some(DataSource::Generate(p)) => ModelKind::for_dataset(p.kind()),
                    Some(DataSource::Path(p)) => sidecar_kind(p).and_then(ModelKind::for_dataset),
                    None => None,
                };
            }
            let m = model.ok_or_else(|| CliError::Config("config names neither a model nor its data".into()))?;
            if data.is_none() {
                data = Some(DataSource::Generate(m.default_data()));
            }
        }
        if command == "generate" && !matches!(data, Some(DataSource::Generate(_))) {
            return Err(CliError::Config("generate needs --kind or generator parameters under data.generate".into()));
        }
        let resolved = Self {
            command: command.to_owned(),
            model,
            alpha,
            seed: ov.seed.or(cfg.seed).unwrap_or(0),
            data,
            solver: cfg.solver,
            rate: cfg.rate,
            bounds: cfg.bounds,
            report: cfg.report,
            output_dir: ov.out.or(cfg.output_dir).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        };
        resolved.validate()?;
        Ok(resolved)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.alpha.is_empty() {
            return bad("alpha list is empty".into());
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return bad(format!("alpha {a} is outside (0, 1]"));
        }
        if matches!(self.command.as_str(), "fit" | "report") && self.alpha.len() != 1 {
            return bad(format!("{} takes a single alpha", self.command));
        }
        let s = &self.solver;
        if s.max_iters == 0 || !(s.elbo_tol > 0.0) || !(s.sigma > 0.0) {
            return bad("solver needs max_iters > 0, elbo_tol > 0 and sigma > 0".into());
        }
        if s.gmm.k == 0 || !(s.gmm.sigma0_sq > 0.0) {
            return bad("gmm settings need k > 0 and sigma0_sq > 0".into());
        }
        if !(s.blm.prior_var > 0.0 && s.blm.shape > 0.0 && s.blm.rate > 0.0) {
            return bad("blm prior parameters must be positive".into());
        }
        if self.command == "rate-experiment" && (self.rate.ns.len() < 4 || self.rate.replicates == 0) {
            return bad("rate experiment needs at least 4 sample sizes and one replicate".into());
        }
        if self.command == "verify-bounds" {
            let b = &self.bounds;
            if b.n == 0 || b.replications == 0 || !(b.zeta > 0.0 && b.zeta < 1.0) || b.components == 0 {
                return bad("bounds need n > 0, replications > 0, components > 0 and zeta in (0, 1)".into());
            }
            if let Some(a) = self.alpha.iter().find(|a| **a >= 1.0) {
                return bad(format!("the risk bound needs alpha < 1, got {a}"));
            }
        }
        if self.report.top_words == 0 {
            return bad("report.top_words must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding (output directory excluded).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// The dataset kind recorded in a CSV's sidecar, if there is one.
pub fn sidecar_kind(csv: &Path) -> Option<DatasetKind> {
    let text = std::fs::read_to_string(csv.with_extension("json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("kind")?.as_str()?.parse().ok()
}
