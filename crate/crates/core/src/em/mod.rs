//! EM estimation: initialization, E-step, the three conditional M-steps,
//! convergence control and multi-start orchestration.

mod estep;
mod init;
mod mstep;

pub use estep::{e_step, observed_log_likelihood, Posterior, SegmentCounts, TraitTable};
pub use init::{initialize, kmeans, start_rng, KMEANS_MAX_ITER};
pub(crate) use mstep::free_coordinate_map;
pub use mstep::{
    assignment_scores, beta_gradient, beta_information, beta_objective, center_intercepts, expected_information_b_mu, expected_score_b_mu,
    m_step_assignments, m_step_b_mu, m_step_beta, maximize_b_mu, maximize_beta, q_b_mu, BMuUpdate, BetaUpdate, SegmentStats,
    SEPARATION_THRESHOLD,
};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CovariateMatrix, IncidenceMatrix, ModelConfig, ModelParams};
use crate::quadrature::{build_grid_capped, QuadratureGrid};
use crate::scalar::{argmax, Scalar};

/// Components whose largest posterior probability is below this are empty.
pub const DEGENERATE_THRESHOLD: f64 = 1e-6;

/// Flags raised by the M-steps during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub frozen_segments: bool,
    pub singular_newton: bool,
    pub quasi_separation: bool,
    pub degenerate: bool,
}

/// One EM run from a fixed starting point.
#[derive(Debug, Clone)]
pub struct EmRun<T> {
    pub params: ModelParams<T>,
    pub posterior: Posterior<T>,
    /// Observed log-likelihood at the start and after every iteration.
    pub trace: Vec<T>,
    pub n_iter: usize,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

/// Summary of one start of a multi-start fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub start_index: usize,
    pub log_likelihood: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub degenerate: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub params: ModelParams<T>,
    pub log_likelihood: T,
    pub n_iter: usize,
    pub converged: bool,
    pub z_hat: Array2<T>,
    /// MAP component of each sending node.
    pub sending_assignment: Vec<usize>,
    /// G x R segment labels (a copy of `params.assignments`).
    pub receiving_assignment: Array2<usize>,
    pub u_hat: Array2<T>,
    pub trace: Vec<T>,
    pub seed_used: u64,
    pub start_index: usize,
    pub diagnostics: Diagnostics,
    pub starts: Vec<StartSummary>,
}

/// One full EM iteration: `(b, mu)`, then the assignments, then `beta`, all
/// against the same posterior.
pub fn em_iteration<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    posterior: &Posterior<T>,
    grid: &QuadratureGrid<T>,
    config: &ModelConfig,
    diagnostics: &mut Diagnostics,
) -> Result<ModelParams<T>> {
    let mut next = params.clone();
    let bmu = m_step_b_mu(posterior, &next, grid, config);
    diagnostics.frozen_segments |= !bmu.frozen_segments.is_empty();
    diagnostics.singular_newton |= bmu.singular;
    next.b = bmu.b;
    next.mu = bmu.mu;
    next.assignments = m_step_assignments(y, posterior, &next, grid);
    let beta = m_step_beta(x, posterior, &next, config)?;
    diagnostics.quasi_separation |= beta.quasi_separation;
    diagnostics.singular_newton |= beta.singular;
    next.beta = beta.beta;
    Ok(next)
}

/// Iterates EM from `params` until the observed log-likelihood changes by
/// less than `config.tol` or `config.max_iter` iterations have run.
pub fn run_em<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    mut params: ModelParams<T>,
    grid: &QuadratureGrid<T>,
    config: &ModelConfig,
) -> Result<EmRun<T>> {
    let tol = T::lit(config.tol);
    let mut diagnostics = Diagnostics::default();
    let mut posterior = e_step(y, x, &params, grid)?;
    let mut trace = vec![posterior.log_likelihood];
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < config.max_iter {
        params = em_iteration(y, x, &params, &posterior, grid, config, &mut diagnostics)?;
        posterior = e_step(y, x, &params, grid)?;
        n_iter += 1;
        let ll = posterior.log_likelihood;
        let prev = *trace.last().expect("non-empty trace");
        trace.push(ll);
        if !ll.is_finite() {
            break;
        }
        if (ll - prev).abs() < tol {
            converged = true;
            break;
        }
    }
    diagnostics.degenerate = is_degenerate(&posterior.z_hat);
    Ok(EmRun {
        params,
        posterior,
        trace,
        n_iter,
        converged,
        diagnostics,
    })
}

fn is_degenerate<T: Scalar>(z_hat: &Array2<T>) -> bool {
    let threshold = T::lit(DEGENERATE_THRESHOLD);
    z_hat
        .columns()
        .into_iter()
        .any(|col| col.iter().fold(T::zero(), |m, &v| m.max(v)) < threshold)
}

/// MAP component per row, ties to the lowest index.
pub fn map_components<T: Scalar>(z_hat: &Array2<T>) -> Vec<usize> {
    z_hat.rows().into_iter().map(|row| argmax(row.iter().copied())).collect()
}

/// Sending labels (MAP) and receiving labels per component.
pub fn classify<T: Scalar>(fit: &FitResult<T>) -> (Vec<usize>, Array2<usize>) {
    (map_components(&fit.z_hat), fit.params.assignments.clone())
}

/// Sorting permutations: `components[new] = old` by ascending `b`,
/// `segments[new] = old` by ascending `mu`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relabeling {
    pub components: Vec<usize>,
    pub segments: Vec<usize>,
}

fn ascending_order<T: Scalar>(values: &Array1<T>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Applies a relabeling. `beta` is re-expressed against the new reference
/// component so that every mixing weight is unchanged.
pub fn relabel<T: Scalar>(params: &ModelParams<T>, relabeling: &Relabeling) -> ModelParams<T> {
    let (g, d) = (params.n_components(), params.n_segments());
    let comp = &relabeling.components;
    let mut seg_rank = vec![0; d];
    for (new, &old) in relabeling.segments.iter().enumerate() {
        seg_rank[old] = new;
    }
    let b = Array1::from_iter(comp.iter().map(|&old| params.b[old]));
    let mu = Array1::from_iter(relabeling.segments.iter().map(|&old| params.mu[old]));
    let assignments = Array2::from_shape_fn((g, params.n_receiving()), |(c, k)| seg_rank[params.assignments[[comp[c], k]]]);
    let j = params.n_covariates();
    let full_row = |c: usize| -> Array1<T> {
        if c == 0 {
            Array1::zeros(j)
        } else {
            params.beta.row(c - 1).to_owned()
        }
    };
    let reference = full_row(comp[0]);
    let mut beta = Array2::<T>::zeros((g - 1, j));
    for c in 1..g {
        beta.row_mut(c - 1).assign(&(full_row(comp[c]) - &reference));
    }
    ModelParams { b, mu, assignments, beta }
}

/// Sorts components by `b` and segments by `mu`, both ascending.
pub fn canonicalize<T: Scalar>(params: &ModelParams<T>) -> (ModelParams<T>, Relabeling) {
    let relabeling = Relabeling {
        components: ascending_order(&params.b),
        segments: ascending_order(&params.mu),
    };
    (relabel(params, &relabeling), relabeling)
}

pub fn build_model_grid<T: Scalar>(config: &ModelConfig) -> Result<QuadratureGrid<T>> {
    build_grid_capped(config.nodes_per_dimension(), config.segments, config.grid_cap)
}

fn run_start<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    config: &ModelConfig,
    grid: &QuadratureGrid<T>,
    start_index: usize,
) -> Result<EmRun<T>> {
    let mut rng = start_rng(config.seed, start_index);
    let params = initialize(y, x, config, &mut rng, start_index)?;
    run_em(y, x, params, grid, config)
}

/// Multi-start EM. Keeps the run with the highest observed log-likelihood
/// among non-degenerate runs (all runs if every run is degenerate), then
/// returns it in canonical label order.
pub fn fit<T: Scalar>(y: &IncidenceMatrix, x: &CovariateMatrix<T>, config: &ModelConfig) -> Result<FitResult<T>> {
    config.validate(y.n_receiving())?;
    if x.n_rows() != y.n_sending() {
        return Err(Error::Dimension(format!(
            "{} incidence rows but {} covariate rows",
            y.n_sending(),
            x.n_rows()
        )));
    }
    let grid = build_model_grid::<T>(config)?;
    let runs: Vec<Result<EmRun<T>>> = (0..config.n_starts)
        .into_par_iter()
        .map(|s| run_start(y, x, config, &grid, s))
        .collect();

    let mut starts = Vec::with_capacity(runs.len());
    for (s, run) in runs.iter().enumerate() {
        starts.push(match run {
            Ok(r) => StartSummary {
                start_index: s,
                log_likelihood: r.posterior.log_likelihood.as_f64(),
                n_iter: r.n_iter,
                converged: r.converged,
                degenerate: r.diagnostics.degenerate,
                error: None,
            },
            Err(e) => StartSummary {
                start_index: s,
                log_likelihood: f64::NAN,
                n_iter: 0,
                converged: false,
                degenerate: false,
                error: Some(e.to_string()),
            },
        });
    }

    let finite: Vec<usize> = starts
        .iter()
        .filter(|s| s.log_likelihood.is_finite())
        .map(|s| s.start_index)
        .collect();
    if finite.is_empty() {
        return Err(Error::EstimationFailed {
            diagnostics: starts
                .iter()
                .map(|s| {
                    format!(
                        "start {}: {}",
                        s.start_index,
                        s.error.clone().unwrap_or_else(|| "non-finite log-likelihood".into())
                    )
                })
                .collect(),
        });
    }
    let healthy: Vec<usize> = finite.iter().copied().filter(|&s| !starts[s].degenerate).collect();
    let pool = if healthy.is_empty() { &finite } else { &healthy };
    let mut best = pool[0];
    for &s in &pool[1..] {
        if starts[s].log_likelihood > starts[best].log_likelihood {
            best = s;
        }
    }

    let run = runs.into_iter().nth(best).expect("index in range").expect("finite run");
    let (params, _) = canonicalize(&run.params);
    let posterior = e_step(y, x, &params, &grid)?;
    let sending_assignment = map_components(&posterior.z_hat);
    Ok(FitResult {
        receiving_assignment: params.assignments.clone(),
        params,
        log_likelihood: posterior.log_likelihood,
        n_iter: run.n_iter,
        converged: run.converged,
        z_hat: posterior.z_hat,
        sending_assignment,
        u_hat: posterior.u_hat,
        trace: run.trace,
        seed_used: config.seed,
        start_index: best,
        diagnostics: run.diagnostics,
        starts,
    })
}
