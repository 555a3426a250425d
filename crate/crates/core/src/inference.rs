//! Post-fit inference: per-unit scores, sandwich covariance, BIC/ICL and
//! model selection over a (G, D) grid.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::em::{e_step, fit, free_coordinate_map, Posterior};
use crate::error::{Error, Result};
use crate::linalg::symmetric_inverse;
use crate::model::{count_free_parameters, mixing_weights, CovariateMatrix, IncidenceMatrix, ModelConfig, ModelParams};
use crate::quadrature::QuadratureGrid;
use crate::scalar::{logistic, Scalar};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;
const FD_STEP: f64 = 1e-5;
const PINV_TOL: f64 = 1e-10;

/// Length of the continuous parameter vector `(b, mu, vec(beta))`.
pub fn parameter_len<T: Scalar>(params: &ModelParams<T>) -> usize {
    let g = params.n_components();
    g + params.n_segments() + (g - 1) * params.n_covariates()
}

/// Flattens `(b, mu, beta)` with `beta` row-major.
pub fn flatten_params<T: Scalar>(params: &ModelParams<T>) -> Array1<T> {
    params.b.iter().chain(params.mu.iter()).chain(params.beta.iter()).copied().collect()
}

/// Inverse of [`flatten_params`]; assignments are taken from `template`.
pub fn unflatten_params<T: Scalar>(template: &ModelParams<T>, theta: &Array1<T>) -> ModelParams<T> {
    let (g, d) = (template.n_components(), template.n_segments());
    let mut out = template.clone();
    out.b = theta.slice(ndarray::s![..g]).to_owned();
    out.mu = theta.slice(ndarray::s![g..g + d]).to_owned();
    let j = template.n_covariates();
    out.beta = theta
        .slice(ndarray::s![g + d..])
        .to_owned()
        .into_shape_with_order((g - 1, j))
        .expect("beta layout");
    out
}

fn scores_from_posterior<T: Scalar>(
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
    posterior: &Posterior<T>,
) -> Array2<T> {
    let (n, g, d, q) = (
        posterior.n_units(),
        posterior.n_components(),
        posterior.n_segments(),
        posterior.points_per_dimension(),
    );
    let j = params.n_covariates();
    let counts = &posterior.counts;
    let mut prob = vec![T::zero(); g * d * q];
    for c in 0..g {
        for s in 0..d {
            for m in 0..q {
                prob[(c * d + s) * q + m] = logistic(params.b[c] + params.mu[s] + grid.abscissas()[m]);
            }
        }
    }
    let mut scores = Array2::<T>::zeros((n, parameter_len(params)));
    for i in 0..n {
        for c in 0..g {
            let z = posterior.z_hat[[i, c]];
            for s in 0..d {
                let succ = T::from_count(counts.successes[[i, c, s]]);
                let trials = T::from_count(counts.trials[[c, s]]);
                let mut resid = T::zero();
                for (m, &w) in posterior.trait_weights(i, c, s).iter().enumerate() {
                    resid = resid + w * (succ - trials * prob[(c * d + s) * q + m]);
                }
                scores[[i, c]] = scores[[i, c]] + z * resid;
                scores[[i, g + s]] = scores[[i, g + s]] + z * resid;
            }
        }
        if g > 1 {
            let eta = mixing_weights(&params.beta, x.row(i));
            for c in 1..g {
                let r = posterior.z_hat[[i, c]] - eta[c];
                for l in 0..j {
                    scores[[i, g + d + (c - 1) * j + l]] = r * x.data()[[i, l]];
                }
            }
        }
    }
    scores
}

/// N x nu matrix of per-unit scores `d log L_i / d theta` with the
/// assignments held fixed.
pub fn unit_scores<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Result<Array2<T>> {
    let posterior = e_step(y, x, params, grid)?;
    Ok(scores_from_posterior(x, params, grid, &posterior))
}

/// Score of a single sending node.
pub fn unit_score<T: Scalar>(
    y_row: ndarray::ArrayView1<'_, u8>,
    x_row: ndarray::ArrayView1<'_, T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Result<Array1<T>> {
    let y = IncidenceMatrix::from_array(y_row.to_owned().insert_axis(ndarray::Axis(0)))?;
    let x = CovariateMatrix::new(
        x_row.to_owned().insert_axis(ndarray::Axis(0)),
        (0..x_row.len()).map(|l| format!("x{l}")).collect(),
    )?;
    Ok(unit_scores(&y, &x, params, grid)?.row(0).to_owned())
}

/// Total score `sum_i S_i(theta)`.
pub fn total_score<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Result<Array1<T>> {
    Ok(unit_scores(y, x, params, grid)?.sum_axis(ndarray::Axis(0)))
}

/// Map from the identified coordinates to `(b, mu, vec(beta))`: the
/// intercepts satisfy `sum_g b_g = 0`, everything else is free.
fn identified_map<T: Scalar>(params: &ModelParams<T>) -> Array2<T> {
    let (g, d) = (params.n_components(), params.n_segments());
    let nu = parameter_len(params);
    let block = free_coordinate_map::<T>(g, d, &[]);
    let mut map = Array2::<T>::zeros((nu, nu - 1));
    map.slice_mut(ndarray::s![..g + d, ..g + d - 1]).assign(&block);
    for r in g + d..nu {
        map[[r, r - 1]] = T::one();
    }
    map
}

#[derive(Debug, Clone)]
pub struct SandwichEstimate<T> {
    /// nu x nu covariance of `(b, mu, vec(beta))`.
    pub covariance: Array2<T>,
    /// Observed information in the identified coordinates.
    pub information: Array2<T>,
    pub pseudo_inverse: bool,
}

/// Sandwich covariance `J^-1 K J^-1`.
///
/// `K` is the sum of outer products of the per-unit scores and `J` the
/// central finite-difference Jacobian of minus the total score. Both are
/// formed in the identified coordinates (intercepts summing to zero) and
/// mapped back, so the intercept block is the covariance under that
/// constraint.
pub fn sandwich_covariance<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Result<SandwichEstimate<T>> {
    let map = identified_map(params);
    let p = map.ncols();
    let theta = flatten_params(params);

    let scores = unit_scores(y, x, params, grid)?.dot(&map);
    let meat = scores.t().dot(&scores);

    let mut info = Array2::<T>::zeros((p, p));
    for col in 0..p {
        let coord = map
            .column(col)
            .iter()
            .zip(theta.iter())
            .find(|(m, _)| **m == T::one())
            .map(|(_, v)| *v);
        let h = T::lit(FD_STEP).max(T::lit(FD_STEP) * coord.unwrap_or(T::zero()).abs());
        let shift = map.column(col).to_owned() * h;
        let plus = unflatten_params(params, &(&theta + &shift));
        let minus = unflatten_params(params, &(&theta - &shift));
        let s_plus = map.t().dot(&total_score(y, x, &plus, grid)?);
        let s_minus = map.t().dot(&total_score(y, x, &minus, grid)?);
        let column = (s_minus - s_plus) / (h + h);
        info.column_mut(col).assign(&column);
    }
    let info = (&info + &info.t()) / T::lit(2.0);
    let (inv, pseudo_inverse) = symmetric_inverse(&info, T::lit(PINV_TOL));
    let cov_free = inv.dot(&meat).dot(&inv);
    let cov = map.dot(&cov_free).dot(&map.t());
    let covariance = (&cov + &cov.t()) / T::lit(2.0);
    Ok(SandwichEstimate {
        covariance,
        information: info,
        pseudo_inverse,
    })
}

/// `-2 l + nu log N`.
pub fn bic(log_likelihood: f64, n_params: usize, n_units: usize) -> f64 {
    -2.0 * log_likelihood + n_params as f64 * (n_units as f64).ln()
}

/// `-sum z log z` with `0 log 0 = 0`.
pub fn classification_entropy<T: Scalar>(z_hat: &Array2<T>) -> f64 {
    -z_hat
        .iter()
        .map(|&z| {
            let z = z.as_f64();
            if z > 0.0 {
                z * z.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// `BIC - sum_g sum_i z log z`, i.e. BIC plus the classification entropy.
pub fn icl<T: Scalar>(bic: f64, z_hat: &Array2<T>) -> f64 {
    bic + classification_entropy(z_hat)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InferenceFlags {
    pub pseudo_inverse: bool,
    pub negative_variance: bool,
}

#[derive(Debug, Clone)]
pub struct InferenceReport<T> {
    /// `(b, mu, vec(beta))`.
    pub estimates: Array1<T>,
    pub std_errors: Array1<T>,
    pub ci_lower: Array1<T>,
    pub ci_upper: Array1<T>,
    pub covariance: Array2<T>,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub bic: f64,
    pub icl: f64,
    pub flags: InferenceFlags,
}

/// Standard errors, 95% intervals and information criteria at `params`.
pub fn infer<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
    penalize_assignments: bool,
) -> Result<InferenceReport<T>> {
    let sandwich = sandwich_covariance(y, x, params, grid)?;
    let posterior = e_step(y, x, params, grid)?;
    let estimates = flatten_params(params);
    let mut flags = InferenceFlags {
        pseudo_inverse: sandwich.pseudo_inverse,
        negative_variance: false,
    };
    let std_errors: Array1<T> = sandwich
        .covariance
        .diag()
        .iter()
        .map(|&v| {
            if v < T::zero() {
                flags.negative_variance = true;
                T::nan()
            } else {
                v.sqrt()
            }
        })
        .collect();
    let half = std_errors.mapv(|s| s * T::lit(Z_95));
    let ci_lower = &estimates - &half;
    let ci_upper = &estimates + &half;
    let config = ModelConfig::new(params.n_components(), params.n_segments());
    let mut n_params = count_free_parameters(&config, params.n_covariates());
    if penalize_assignments {
        n_params += params.n_components() * params.n_receiving();
    }
    let log_likelihood = posterior.log_likelihood.as_f64();
    let b = bic(log_likelihood, n_params, y.n_sending());
    Ok(InferenceReport {
        estimates,
        std_errors,
        ci_lower,
        ci_upper,
        covariance: sandwich.covariance,
        log_likelihood,
        n_params,
        bic: b,
        icl: icl(b, &posterior.z_hat),
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub components: usize,
    pub segments: usize,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub bic: f64,
    pub icl: f64,
    pub converged: bool,
    pub error: Option<String>,
}

impl SelectionRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionGrid {
    /// Cells in ascending (G, D) order.
    pub rows: Vec<SelectionRow>,
    /// (G, D) with the smallest BIC.
    pub best_bic: (usize, usize),
    /// (G, D) with the smallest ICL.
    pub best_icl: (usize, usize),
}

fn fit_cell<T: Scalar>(y: &IncidenceMatrix, x: &CovariateMatrix<T>, g: usize, d: usize, base: &ModelConfig) -> SelectionRow {
    let config = ModelConfig {
        components: g,
        segments: d,
        ..base.clone()
    };
    let mut n_params = count_free_parameters(&config, x.n_covariates());
    if config.penalize_assignments {
        n_params += g * y.n_receiving();
    }
    match fit(y, x, &config) {
        Ok(f) => {
            let ll = f.log_likelihood.as_f64();
            let b = bic(ll, n_params, y.n_sending());
            SelectionRow {
                components: g,
                segments: d,
                log_likelihood: ll,
                n_params,
                bic: b,
                icl: icl(b, &f.z_hat),
                converged: f.converged,
                error: None,
            }
        }
        Err(e) => SelectionRow {
            components: g,
            segments: d,
            log_likelihood: f64::NAN,
            n_params,
            bic: f64::NAN,
            icl: f64::NAN,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

fn argmin_cell(rows: &[SelectionRow], key: impl Fn(&SelectionRow) -> f64) -> (usize, usize) {
    let mut best: Option<&SelectionRow> = None;
    for row in rows.iter().filter(|r| !r.failed() && key(r).is_finite()) {
        if best.is_none_or(|b| key(row) < key(b)) {
            best = Some(row);
        }
    }
    best.map(|r| (r.components, r.segments)).unwrap_or((0, 0))
}

/// Fits every (G, D) combination with the shared multi-start settings of
/// `config` and ranks them by BIC and ICL (both minimized).
pub fn select_model<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    component_range: &[usize],
    segment_range: &[usize],
    config: &ModelConfig,
) -> Result<SelectionGrid> {
    if component_range.is_empty() || segment_range.is_empty() {
        return Err(Error::InvalidArgument("G and D ranges must be non-empty".into()));
    }
    let mut cells: Vec<(usize, usize)> = component_range
        .iter()
        .flat_map(|&g| segment_range.iter().map(move |&d| (g, d)))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let rows: Vec<SelectionRow> = cells.par_iter().map(|&(g, d)| fit_cell(y, x, g, d, config)).collect();
    if rows.iter().all(SelectionRow::failed) {
        return Err(Error::AllCellsFailed);
    }
    Ok(SelectionGrid {
        best_bic: argmin_cell(&rows, |r| r.bic),
        best_icl: argmin_cell(&rows, |r| r.icl),
        rows,
    })
}
