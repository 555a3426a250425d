//! Versioned JSON reports. Keys are sorted and every float is rounded to 10
//! significant digits, so identical inputs give identical bytes.

use std::path::Path;

use bimlta::em::StartSummary;
use bimlta::inference::SelectionGrid;
use bimlta::scalar::logistic;
use bimlta::simulation::StudyReport;
use bimlta::{Covariates, Fit, IncidenceMatrix, ModelConfig, Params, Report};
use ndarray::Array2;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: &str = "1.0.0";
pub const FIT_SCHEMA_ID: &str = "bimlta.fit_report";
pub const SELECTION_SCHEMA_ID: &str = "bimlta.selection_report";
pub const STUDY_SCHEMA_ID: &str = "bimlta.study_report";

/// JSON Schema of the fit report.
pub const FIT_REPORT_SCHEMA: &str = include_str!("../schema/fit_report.schema.json");

#[derive(Debug, Clone, Serialize)]
pub struct Inputs {
    pub incidence: Option<String>,
    pub covariates: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub n_sending: usize,
    pub n_receiving: usize,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub log_likelihood: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub seed: u64,
    pub best_start: usize,
    /// Observed log-likelihood at the start and after every iteration.
    pub trace: Vec<f64>,
    pub starts: Vec<StartSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Criteria {
    pub n_params: usize,
    pub bic: f64,
    pub icl: f64,
    pub pseudo_inverse: bool,
    pub negative_variance: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SendingRow {
    pub label: String,
    /// 1-based MAP component.
    pub component: usize,
    pub posterior: Vec<f64>,
    /// Predicted latent traits, one per segment.
    pub traits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReceivingRow {
    pub label: String,
    /// 1-based segment in every component.
    pub segments: Vec<usize>,
}

/// Summary of the fitted probabilities `logistic(b_g + mu_d + u_id)` over the
/// sending nodes classified to `g`, for the receiving nodes in segment `d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSummary {
    pub component: usize,
    pub segment: usize,
    pub n_sending: usize,
    pub n_receiving: usize,
    pub mean_probability: Option<f64>,
    pub min_probability: Option<f64>,
    pub max_probability: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub schema: &'static str,
    pub schema_version: &'static str,
    pub config: ModelConfig,
    pub inputs: Inputs,
    pub data: DataSummary,
    pub fit: FitSummary,
    pub parameters: Vec<ParameterRow>,
    pub criteria: Criteria,
    pub sending: Vec<SendingRow>,
    pub receiving: Vec<ReceivingRow>,
    pub blocks: Vec<BlockSummary>,
}

/// Names in `(b, mu, beta)` order, 1-based.
pub fn parameter_names(params: &Params, covariates: &[String]) -> Vec<String> {
    let g = params.n_components();
    let mut names: Vec<String> = (1..=g).map(|c| format!("b[{c}]")).collect();
    names.extend((1..=params.n_segments()).map(|d| format!("mu[{d}]")));
    for c in 2..=g {
        names.extend(covariates.iter().map(|x| format!("beta[{c}][{x}]")));
    }
    names
}

pub fn block_summaries(params: &Params, sending: &[usize], u_hat: &Array2<f64>) -> Vec<BlockSummary> {
    let (g, d) = (params.n_components(), params.n_segments());
    let mut out = Vec::with_capacity(g * d);
    for c in 0..g {
        let members: Vec<usize> = (0..sending.len()).filter(|&i| sending[i] == c).collect();
        for s in 0..d {
            let n_receiving = params.assignments.row(c).iter().filter(|&&a| a == s).count();
            let probs: Vec<f64> = if n_receiving == 0 {
                Vec::new()
            } else {
                members
                    .iter()
                    .map(|&i| logistic(params.b[c] + params.mu[s] + u_hat[[i, s]]))
                    .collect()
            };
            let stat = |f: fn(f64, f64) -> f64| probs.iter().copied().reduce(f);
            out.push(BlockSummary {
                component: c + 1,
                segment: s + 1,
                n_sending: members.len(),
                n_receiving,
                mean_probability: (!probs.is_empty()).then(|| probs.iter().sum::<f64>() / probs.len() as f64),
                min_probability: stat(f64::min),
                max_probability: stat(f64::max),
            });
        }
    }
    out
}

impl FitReport {
    pub fn new(fit: &Fit, inference: &Report, y: &IncidenceMatrix, x: &Covariates, config: &ModelConfig, inputs: Inputs) -> Self {
        let params = &fit.params;
        let names = parameter_names(params, x.names());
        let parameters = names
            .into_iter()
            .enumerate()
            .map(|(k, name)| ParameterRow {
                name,
                estimate: inference.estimates[k],
                std_error: inference.std_errors[k],
                ci_lower: inference.ci_lower[k],
                ci_upper: inference.ci_upper[k],
            })
            .collect();
        let sending = y
            .sending_labels()
            .iter()
            .enumerate()
            .map(|(i, label)| SendingRow {
                label: label.clone(),
                component: fit.sending_assignment[i] + 1,
                posterior: fit.z_hat.row(i).to_vec(),
                traits: fit.u_hat.row(i).to_vec(),
            })
            .collect();
        let receiving = y
            .receiving_labels()
            .iter()
            .enumerate()
            .map(|(k, label)| ReceivingRow {
                label: label.clone(),
                segments: fit.receiving_assignment.column(k).iter().map(|s| s + 1).collect(),
            })
            .collect();
        Self {
            schema: FIT_SCHEMA_ID,
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            inputs,
            data: DataSummary {
                n_sending: y.n_sending(),
                n_receiving: y.n_receiving(),
                covariates: x.names().to_vec(),
            },
            fit: FitSummary {
                log_likelihood: fit.log_likelihood,
                n_iter: fit.n_iter,
                converged: fit.converged,
                seed: fit.seed_used,
                best_start: fit.start_index,
                trace: fit.trace.clone(),
                starts: fit.starts.clone(),
            },
            parameters,
            criteria: Criteria {
                n_params: inference.n_params,
                bic: inference.bic,
                icl: inference.icl,
                pseudo_inverse: inference.flags.pseudo_inverse,
                negative_variance: inference.flags.negative_variance,
            },
            sending,
            receiving,
            blocks: block_summaries(params, &fit.sending_assignment, &fit.u_hat),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport<'a> {
    pub schema: &'static str,
    pub schema_version: &'static str,
    pub config: &'a ModelConfig,
    #[serde(flatten)]
    pub grid: &'a SelectionGrid,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyEnvelope<'a> {
    pub schema: &'static str,
    pub schema_version: &'static str,
    pub fit_config: &'a ModelConfig,
    pub study: &'a StudyReport,
}

pub fn round_significant(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.9e}").parse().expect("formatted float parses")
}

fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let r = round_significant(n.as_f64().expect("f64 number"));
            *value = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and floats at 10 significant digits.
/// Non-finite floats become `null`.
pub fn render_json<T: Serialize>(value: &T) -> String {
    let mut tree = serde_json::to_value(value).expect("reports serialize to JSON");
    round_floats(&mut tree);
    let mut text = serde_json::to_string_pretty(&tree).expect("JSON values render");
    text.push('\n');
    text
}

/// Writes `value` to `path`, or to standard output when `path` is `None`.
pub fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = render_json(value);
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

pub fn emit_fit_report(report: &FitReport, path: &Path) -> Result<()> {
    emit(report, Some(path))
}
