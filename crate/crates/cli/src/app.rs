use std::ffi::OsString;
use std::path::PathBuf;

use bimlta::em::build_model_grid;
use bimlta::inference::{infer, select_model};
use bimlta::simulation::run_study;
use bimlta::{fit, Covariates, IncidenceMatrix};
use clap::Parser;

use crate::binarize::{binarize, load_rules};
use crate::config::{Mode, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{load_covariates, load_incidence, load_table, save_incidence};
use crate::report::{emit, FitReport, Inputs, SelectionReport, StudyEnvelope, SCHEMA_VERSION, SELECTION_SCHEMA_ID, STUDY_SCHEMA_ID};

/// Biclustering mixtures of latent trait analyzers for binary bipartite
/// networks.
#[derive(Debug, Parser)]
#[command(name = "bimlta", version)]
pub struct Cli {
    /// Overrides the mode in the config file.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Run file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Number of components.
    #[arg(long = "G")]
    pub components: Option<usize>,
    /// Number of segments.
    #[arg(long = "D")]
    pub segments: Option<usize>,
    /// Quadrature nodes per latent dimension.
    #[arg(long = "Q")]
    pub quadrature_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub starts: Option<usize>,
    /// Absolute tolerance on the log-likelihood change.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Cli {
    fn apply(&self, config: &mut RunConfig) {
        let m = &mut config.model;
        if let Some(v) = self.components {
            m.components = v;
        }
        if let Some(v) = self.segments {
            m.segments = v;
        }
        if let Some(v) = self.quadrature_points {
            m.quadrature_points = Some(v);
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = self.starts {
            m.n_starts = v;
        }
        if let Some(v) = self.tol {
            m.tol = v;
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
    }
}

fn load_inputs(config: &RunConfig) -> Result<(IncidenceMatrix, Covariates)> {
    let path = config.incidence.as_ref().expect("validated");
    let y = load_incidence(path)?;
    let x = match &config.covariates {
        Some(p) => load_covariates(p, y.sending_labels())?,
        None => Covariates::intercept_only(y.n_sending()),
    };
    log::info!(
        "loaded {} sending x {} receiving nodes, {} covariates",
        y.n_sending(),
        y.n_receiving(),
        x.n_covariates()
    );
    Ok((y, x))
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run_fit(config: &RunConfig) -> Result<()> {
    let (y, x) = load_inputs(config)?;
    let model = &config.model;
    let fitted = fit(&y, &x, model)?;
    log::info!(
        "fit: log-likelihood {:.6} after {} iterations (converged {})",
        fitted.log_likelihood,
        fitted.n_iter,
        fitted.converged
    );
    let grid = build_model_grid(model)?;
    let inference = infer(&y, &x, &fitted.params, &grid, model.penalize_assignments)?;
    let inputs = Inputs {
        incidence: display(&config.incidence),
        covariates: display(&config.covariates),
    };
    let report = FitReport::new(&fitted, &inference, &y, &x, model, inputs);
    emit(&report, config.output.as_deref())
}

fn run_select(config: &RunConfig) -> Result<()> {
    let (y, x) = load_inputs(config)?;
    let ranges = config.select.as_ref().expect("validated");
    let grid = select_model(&y, &x, &ranges.components, &ranges.segments, &config.model)?;
    log::info!("select: BIC picks {:?}, ICL picks {:?}", grid.best_bic, grid.best_icl);
    let report = SelectionReport {
        schema: SELECTION_SCHEMA_ID,
        schema_version: SCHEMA_VERSION,
        config: &config.model,
        grid: &grid,
    };
    emit(&report, config.output.as_deref())
}

fn run_simulate(config: &RunConfig) -> Result<()> {
    let scenario = config.simulate.as_ref().expect("validated");
    let study = run_study(scenario, &config.model)?;
    log::info!(
        "simulate: {} replicates, mean sending ARI {:.4}, mean receiving ARI {:.4}, {} failures",
        study.replicates.len(),
        study.sending_ari_mean,
        study.receiving_ari_mean,
        study.failures
    );
    let report = StudyEnvelope {
        schema: STUDY_SCHEMA_ID,
        schema_version: SCHEMA_VERSION,
        fit_config: &config.model,
        study: &study,
    };
    emit(&report, config.output.as_deref())
}

fn run_binarize(config: &RunConfig) -> Result<()> {
    let section = config.binarize.as_ref().expect("validated");
    let table = load_table(&section.table)?;
    let rules = load_rules(&section.rules)?;
    let out = binarize(&table, &rules, &section.table)?;
    match &config.output {
        Some(path) => save_incidence(&out.matrix, path),
        None => crate::io::write_incidence(&out.matrix, &table.label_header, std::io::stdout())
            .map_err(|e| CliError::format("<stdout>", e.to_string())),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut config = RunConfig::load(&cli.config)?;
    cli.apply(&mut config);
    let mode = cli
        .mode
        .or(config.mode)
        .ok_or_else(|| CliError::Usage("no mode given; pass --mode or set `mode` in the config".into()))?;
    config.validate(mode)?;
    match mode {
        Mode::Fit => run_fit(&config),
        Mode::Select => run_select(&config),
        Mode::Simulate => run_simulate(&config),
        Mode::Binarize => run_binarize(&config),
    }
}

/// Parses `argv`, runs the requested mode and returns the process exit code:
/// 0 on success, 1 on usage errors, 2 when estimation fails and 3 on I/O
/// errors. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
