//! The subcommands. Each writes its artifacts and a manifest into the output
//! directory and returns any non-convergence it noticed.

use alphavb::linreg::BlmPrior;
use alphavb::location::GaussianLocationModel;
use alphavb::gaussian_vi::GaussianViOptions;
use alphavb::lda::{top_words, topic_means};
use alphavb::objective::AlphaConfig;
use alphavb::risk::{check_risk_inequality, check_surrogate_risk_inequality, regression_rate_experiment, RiskCheckReport};
use alphavb::synth::{generate, tiny_reference_model};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BoundsCheck, DataSource, ModelKind, ResolvedConfig};
use crate::data::{self, Dataset};
use crate::fit::{fit_model, FitOutcome, ModelState};
use crate::output::{ArtifactWriter, Cell, Manifest, Table};
use crate::{CliError, Command};

pub const STATE_FILE: &str = "state.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_TRACES_FILE: &str = "sweep_traces.csv";
pub const RATE_FILE: &str = "rate.csv";
pub const RATE_RUNS_FILE: &str = "rate_runs.csv";
pub const RATE_SUMMARY_FILE: &str = "rate.json";
pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const TOP_WORDS_FILE: &str = "top_words.csv";
pub const COMPONENTS_FILE: &str = "components.csv";

/// What a finished run produced, plus diagnostics that `--strict` turns into
/// a failure.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub flagged: Vec<String>,
}

pub fn execute(command: Command, cfg: &ResolvedConfig) -> Result<RunOutcome, CliError> {
    let mut out = ArtifactWriter::new(&cfg.output_dir)?;
    let flagged = match command {
        Command::Generate { .. } => generate_cmd(cfg, &mut out)?,
        Command::Fit => fit_cmd(cfg, &mut out)?,
        Command::SweepAlpha => sweep_cmd(cfg, &mut out)?,
        Command::RateExperiment => rate_cmd(cfg, &mut out)?,
        Command::VerifyBounds => bounds_cmd(cfg, &mut out)?,
        Command::Report => report_cmd(cfg, &mut out)?,
    };
    let manifest = out.finish(cfg)?;
    Ok(RunOutcome { manifest, flagged })
}

fn model_and_data(cfg: &ResolvedConfig) -> Result<(ModelKind, Dataset), CliError> {
    let model = cfg.model.ok_or_else(|| CliError::Config("no model".into()))?;
    let source = cfg.data.as_ref().ok_or_else(|| CliError::Config("no data".into()))?;
    Ok((model, data::load(source, model, &cfg.solver, cfg.seed)?))
}

fn convergence_flag(fit: &FitOutcome) -> Option<String> {
    (!fit.record.converged).then(|| {
        format!(
            "{} fit at alpha {} did not converge in {} sweeps",
            fit.record.model.name(),
            fit.record.alpha,
            fit.record.sweeps
        )
    })
}

fn generate_cmd(cfg: &ResolvedConfig, out: &mut ArtifactWriter) -> Result<Vec<String>, CliError> {
    let Some(DataSource::Generate(params)) = &cfg.data else {
        return Err(CliError::Config("generate needs generator parameters".into()));
    };
    let bundle = generate(params, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    for (name, contents) in bundle.render().map_err(|e| CliError::Compute(e.to_string()))? {
        out.write(&name, contents.as_bytes())?;
    }
    Ok(Vec::new())
}

pub fn trace_table(fit: &FitOutcome) -> Table {
    let mut t = Table::new(["sweep", "objective"]);
    for (i, v) in fit.trace.values.iter().enumerate() {
        t.push(vec![(i + 1).into(), (*v).into()]);
    }
    t
}

fn fit_cmd(cfg: &ResolvedConfig, out: &mut ArtifactWriter) -> Result<Vec<String>, CliError> {
    let (model, data) = model_and_data(cfg)?;
    let fit = fit_model(&data, model, cfg.alpha[0], cfg)?;
    out.write_json(STATE_FILE, &fit.record)?;
    out.write_table(TRACE_FILE, &trace_table(&fit))?;
    Ok(convergence_flag(&fit).into_iter().collect())
}

fn sweep_cmd(cfg: &ResolvedConfig, out: &mut ArtifactWriter) -> Result<Vec<String>, CliError> {
    let (model, data) = model_and_data(cfg)?;
    let fits = cfg
        .alpha
        .par_iter()
        .map(|&a| fit_model(&data, model, a, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let metric_names: Vec<String> = fits[0].record.metrics.keys().cloned().collect();
    let mut header = vec!["alpha".to_owned(), "sweeps".into(), "converged".into(), "objective".into()];
    header.extend(metric_names.iter().cloned());
    let mut table = Table::new(header);
    let mut traces = Table::new(["alpha", "sweep", "objective"]);
    for fit in &fits {
        let r = &fit.record;
        let mut row: Vec<Cell> = vec![r.alpha.into(), r.sweeps.into(), r.converged.into(), r.objective.into()];
        row.extend(metric_names.iter().map(|m| Cell::Num(r.metrics[m])));
        table.push(row);
        for (i, v) in fit.trace.values.iter().enumerate() {
            traces.push(vec![r.alpha.into(), (i + 1).into(), (*v).into()]);
        }
    }
    out.write_table(SWEEP_FILE, &table)?;
    out.write_table(SWEEP_TRACES_FILE, &traces)?;
    Ok(fits.iter().filter_map(convergence_flag).collect())
}

/// Slope of the log median risk against log n at one α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub alpha: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn rate_cmd(cfg: &ResolvedConfig, out: &mut ArtifactWriter) -> Result<Vec<String>, CliError> {
    let r = &cfg.rate;
    let b = &cfg.solver.blm;
    let prior = BlmPrior::isotropic(r.design.d, b.prior_var, b.shape, b.rate);
    let mut points = Table::new(["alpha", "n", "median_risk", "mean_risk"]);
    let mut runs = Table::new(["alpha", "n", "replicate", "seed", "risk"]);
    let mut summaries = Vec::new();
    for &alpha in &cfg.alpha {
        let acfg = AlphaConfig {
            alpha,
            max_iters: cfg.solver.max_iters,
            elbo_tol: cfg.solver.elbo_tol,
            seed: cfg.seed,
            ..AlphaConfig::default()
        };
        let exp = regression_rate_experiment(&r.design, &r.ns, r.replicates, &prior, &acfg, cfg.seed)
            .map_err(|e| CliError::Compute(e.to_string()))?;
        for p in &exp.points {
            points.push(vec![alpha.into(), p.n.into(), p.median_risk.into(), p.mean_risk.into()]);
        }
        for run in &exp.runs {
            runs.push(vec![alpha.into(), run.n.into(), run.replicate.into(), run.seed.into(), run.risk.into()]);
        }
        summaries.push(RateSummary {
            alpha,
            slope: exp.fit.slope,
            intercept: exp.fit.intercept,
            r_squared: exp.fit.r_squared,
        });
    }
    out.write_table(RATE_FILE, &points)?;
    out.write_table(RATE_RUNS_FILE, &runs)?;
    out.write_json(RATE_SUMMARY_FILE, &summaries)?;
    Ok(Vec::new())
}

/// Violation summary of one bound check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub alpha: f64,
    pub n: usize,
    pub zeta: f64,
    pub replications: usize,
    pub family_size: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub binomial_se: f64,
    /// Violation rate at most ζ plus three binomial standard errors.
    pub within_nominal: bool,
}

fn bounds_cmd(cfg: &ResolvedConfig, out: &mut ArtifactWriter) -> Result<Vec<String>, CliError> {
    let b = &cfg.bounds;
    let reports = cfg
        .alpha
        .iter()
        .map(|&alpha| -> Result<RiskCheckReport, CliError> {
            let report = match b.check {
                BoundsCheck::Tiny => {
                    check_risk_inequality(&tiny_reference_model(), b.n, alpha, b.zeta, b.replications, cfg.seed)
                }
                BoundsCheck::Surrogate => {
                    let model = GaussianLocationModel::new(1.0, DVector::zeros(1), 4.0)
                        .map_err(|e| CliError::Compute(e.to_string()))?;
                    let opts = GaussianViOptions {
                        restarts: 2,
                        budget: 800,
                        ..GaussianViOptions::default()
                    };
                    let truth = DVector::from_vec(vec![0.7]);
                    check_surrogate_risk_inequality(
                        &model,
                        &truth,
                        b.n,
                        alpha,
                        b.zeta,
                        b.replications,
                        cfg.seed,
                        b.components,
                        &opts,
                    )
                }
            };
            report.map_err(|e| CliError::Compute(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(["alpha", "replication", "seed", "lhs", "rhs", "q_index", "violated"]);
    let mut summaries = Vec::new();
    let mut flagged = Vec::new();
    for (report, &alpha) in reports.iter().zip(&cfg.alpha) {
        for r in &report.records {
            table.push(vec![
                alpha.into(),
                r.replication.into(),
                r.seed.into(),
                r.lhs.into(),
                r.rhs.into(),
                r.q_index.into(),
                r.violated.into(),
            ]);
        }
        let summary = BoundsSummary {
            alpha,
            n: report.n,
            zeta: report.zeta,
            replications: report.records.len(),
            family_size: report.family_size,
            violations: report.violations,
            violation_rate: report.violation_rate,
            binomial_se: report.binomial_se,
            within_nominal: report.within_nominal(3.0),
        };
        if !summary.within_nominal {
            flagged.push(format!(
                "bound violated in {} of {} replications at alpha {alpha}",
                summary.violations, summary.replications
            ));
        }
        summaries.push(summary);
    }
    out.write_table(REPLICATIONS_FILE, &table)?;
    out.write_json(BOUNDS_FILE, &summaries)?;
    Ok(flagged)
}

fn report_cmd(cfg: &ResolvedConfig, out: &mut ArtifactWriter) -> Result<Vec<String>, CliError> {
    let (model, data) = model_and_data(cfg)?;
    let fit = fit_model(&data, model, cfg.alpha[0], cfg)?;
    let truth_beta = match &data {
        Dataset::Regression { truth, .. } => truth.clone(),
        _ => None,
    };
    let truth_cell = |j: usize| truth_beta.as_ref().map(|t| Cell::Num(t[j]));
    let with_truth = |mut header: Vec<&str>| {
        if truth_beta.is_some() {
            header.push("truth");
        }
        Table::new(header)
    };
    match &fit.record.state {
        ModelState::SpikeSlab(s) => {
            let mut t = with_truth(vec!["coefficient", "phi", "slab_mean", "slab_var", "posterior_mean", "selected"]);
            let mean = s.mean();
            for j in 0..s.mu.len() {
                let mut row = vec![
                    (j + 1).into(),
                    s.phi[j].into(),
                    s.mu[j].into(),
                    s.sigma_sq[j].into(),
                    mean[j].into(),
                    (s.phi[j] > cfg.report.threshold).into(),
                ];
                row.extend(truth_cell(j));
                t.push(row);
            }
            out.write_table(COEFFICIENTS_FILE, &t)?;
        }
        ModelState::Blm(s) => {
            let mut t = with_truth(vec!["coefficient", "posterior_mean", "posterior_sd"]);
            for j in 0..s.beta_mean.len() {
                let mut row = vec![(j + 1).into(), s.beta_mean[j].into(), s.beta_cov[(j, j)].sqrt().into()];
                row.extend(truth_cell(j));
                t.push(row);
            }
            out.write_table(COEFFICIENTS_FILE, &t)?;
        }
        ModelState::Lda(s) => {
            let topics = topic_means(&s.lambda);
            let mut t = Table::new(["topic", "rank", "word_id", "weight"]);
            for k in 0..topics.nrows() {
                let row: Vec<f64> = topics.row(k).iter().copied().collect();
                for (rank, w) in top_words(&row, cfg.report.top_words).into_iter().enumerate() {
                    t.push(vec![k.into(), (rank + 1).into(), w.into(), row[w].into()]);
                }
            }
            out.write_table(TOP_WORDS_FILE, &t)?;
        }
        ModelState::Gmm(s) => {
            let d = s.mu_tilde.ncols();
            let mut header = vec!["component".to_owned(), "weight".into(), "variance".into()];
            header.extend((1..=d).map(|j| format!("mean{j}")));
            let mut t = Table::new(header);
            let n = s.resp.nrows() as f64;
            for k in 0..s.mu_tilde.nrows() {
                let mut row: Vec<Cell> = vec![k.into(), (s.resp.column(k).sum() / n).into(), s.sigma_tilde_sq[k].into()];
                row.extend(s.mu_tilde.row(k).iter().map(|&v| Cell::Num(v)));
                t.push(row);
            }
            out.write_table(COMPONENTS_FILE, &t)?;
        }
    }
    Ok(convergence_flag(&fit).into_iter().collect())
}

