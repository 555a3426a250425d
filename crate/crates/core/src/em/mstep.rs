use ndarray::{Array1, Array2, Array3};

use super::estep::{linear_predictors, Posterior};
use crate::error::{Error, Result};
use crate::linalg::newton_direction;
use crate::model::{CovariateMatrix, IncidenceMatrix, ModelConfig, ModelParams};
use crate::quadrature::QuadratureGrid;
use crate::scalar::{argmax, log_logistic, log_sum_exp, logistic, softplus, Scalar};

const RIDGE: f64 = 1e-8;
const MAX_HALVINGS: usize = 20;
/// Any |beta| above this is reported as quasi-separation.
pub const SEPARATION_THRESHOLD: f64 = 30.0;

/// Posterior-weighted successes and trials per (component, segment, node).
///
/// The part of the expected complete-data log-likelihood that depends on
/// `(b, mu)` is `sum_{g,d,q} successes * eta - trials * log(1 + exp(eta))`
/// with `eta = b_g + mu_d + u*_q`.
#[derive(Debug, Clone)]
pub struct SegmentStats<T> {
    pub successes: Array3<T>,
    pub trials: Array3<T>,
}

impl<T: Scalar> SegmentStats<T> {
    pub fn new(posterior: &Posterior<T>) -> Self {
        let (g, d, q) = (posterior.n_components(), posterior.n_segments(), posterior.points_per_dimension());
        let mut successes = Array3::<T>::zeros((g, d, q));
        let mut trials = Array3::<T>::zeros((g, d, q));
        for c in 0..g {
            for s in 0..d {
                let table = &posterior.tables[[c, s]];
                let n_gd = T::from_count(posterior.counts.trials[[c, s]]);
                for (count, &zm) in posterior.mass_by_count(c, s).iter().enumerate() {
                    let succ = T::from_count(count);
                    for m in 0..q {
                        let w = zm * table.weights[[count, m]];
                        successes[[c, s, m]] = successes[[c, s, m]] + w * succ;
                        trials[[c, s, m]] = trials[[c, s, m]] + w * n_gd;
                    }
                }
            }
        }
        Self { successes, trials }
    }

    fn dims(&self) -> (usize, usize, usize) {
        self.successes.dim()
    }
}

fn eta_at<T: Scalar>(b: &Array1<T>, mu: &Array1<T>, grid: &QuadratureGrid<T>, c: usize, s: usize, m: usize) -> T {
    b[c] + mu[s] + grid.abscissas()[m]
}

/// The `(b, mu)` part of the expected complete-data log-likelihood.
pub fn q_b_mu<T: Scalar>(stats: &SegmentStats<T>, b: &Array1<T>, mu: &Array1<T>, grid: &QuadratureGrid<T>) -> T {
    let (g, d, q) = stats.dims();
    let mut total = T::zero();
    for c in 0..g {
        for s in 0..d {
            for m in 0..q {
                let eta = eta_at(b, mu, grid, c, s, m);
                total = total + stats.successes[[c, s, m]] * eta - stats.trials[[c, s, m]] * softplus(eta);
            }
        }
    }
    total
}

/// Gradient of [`q_b_mu`], laid out as `(b, mu)`.
pub fn expected_score_b_mu<T: Scalar>(stats: &SegmentStats<T>, b: &Array1<T>, mu: &Array1<T>, grid: &QuadratureGrid<T>) -> Array1<T> {
    let (g, d, q) = stats.dims();
    let mut score = Array1::<T>::zeros(g + d);
    for c in 0..g {
        for s in 0..d {
            for m in 0..q {
                let r = stats.successes[[c, s, m]] - stats.trials[[c, s, m]] * logistic(eta_at(b, mu, grid, c, s, m));
                score[c] = score[c] + r;
                score[g + s] = score[g + s] + r;
            }
        }
    }
    score
}

/// Negative Hessian of [`q_b_mu`].
pub fn expected_information_b_mu<T: Scalar>(stats: &SegmentStats<T>, b: &Array1<T>, mu: &Array1<T>, grid: &QuadratureGrid<T>) -> Array2<T> {
    let (g, d, q) = stats.dims();
    let mut info = Array2::<T>::zeros((g + d, g + d));
    for c in 0..g {
        for s in 0..d {
            let mut v = T::zero();
            for m in 0..q {
                let p = logistic(eta_at(b, mu, grid, c, s, m));
                v = v + stats.trials[[c, s, m]] * p * (T::one() - p);
            }
            info[[c, c]] = info[[c, c]] + v;
            info[[g + s, g + s]] = info[[g + s, g + s]] + v;
            info[[c, g + s]] = info[[c, g + s]] + v;
            info[[g + s, c]] = info[[g + s, c]] + v;
        }
    }
    info
}

/// Outcome of the `(b, mu)` update.
#[derive(Debug, Clone)]
pub struct BMuUpdate<T> {
    pub b: Array1<T>,
    pub mu: Array1<T>,
    /// Segments no receiving node carries weight in; their `mu` is held fixed.
    pub frozen_segments: Vec<usize>,
    pub singular: bool,
    pub iterations: usize,
}

/// Linear map from the free coordinates to `(b, mu)`.
///
/// The connection probabilities only see `b_g + mu_d`, so a common shift of
/// `b` against `mu` leaves the likelihood unchanged. The map pins it with
/// `sum_g b_g = 0` (the last intercept is minus the sum of the others) and
/// skips frozen segments.
pub(crate) fn free_coordinate_map<T: Scalar>(g: usize, d: usize, frozen: &[usize]) -> Array2<T> {
    let free_mu: Vec<usize> = (0..d).filter(|s| !frozen.contains(s)).collect();
    let cols = g - 1 + free_mu.len();
    let mut map = Array2::<T>::zeros((g + d, cols));
    for j in 0..g.saturating_sub(1) {
        map[[j, j]] = T::one();
        map[[g - 1, j]] = -T::one();
    }
    for (col, &s) in free_mu.iter().enumerate() {
        map[[g + s, g - 1 + col]] = T::one();
    }
    map
}

/// Centers the intercepts at zero, moving the shift into `mu`. Leaves every
/// `b_g + mu_d` unchanged.
pub fn center_intercepts<T: Scalar>(b: &mut Array1<T>, mu: &mut Array1<T>) {
    let shift = b.sum() / T::from_count(b.len());
    b.mapv_inplace(|v| v - shift);
    mu.mapv_inplace(|v| v + shift);
}

/// Damped Newton ascent on the `(b, mu)` part of the Q-function.
pub fn m_step_b_mu<T: Scalar>(
    posterior: &Posterior<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
    config: &ModelConfig,
) -> BMuUpdate<T> {
    let stats = SegmentStats::new(posterior);
    maximize_b_mu(&stats, params, grid, config)
}

pub fn maximize_b_mu<T: Scalar>(
    stats: &SegmentStats<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
    config: &ModelConfig,
) -> BMuUpdate<T> {
    let (g, d, _) = stats.dims();
    let mut b = params.b.clone();
    let mut mu = params.mu.clone();
    center_intercepts(&mut b, &mut mu);

    let frozen: Vec<usize> = (0..d)
        .filter(|&s| {
            let mut w = T::zero();
            for c in 0..g {
                w = w + stats.trials.slice(ndarray::s![c, s, ..]).sum();
            }
            !(w > T::zero())
        })
        .collect();
    let map = free_coordinate_map::<T>(g, d, &frozen);
    let mut singular = false;
    let mut iterations = 0;
    if map.ncols() == 0 {
        return BMuUpdate {
            b,
            mu,
            frozen_segments: frozen,
            singular,
            iterations,
        };
    }

    let inner_tol = T::lit(config.inner_tol);
    let mut current = q_b_mu(stats, &b, &mu, grid);
    for _ in 0..config.inner_max_iter {
        let grad = map.t().dot(&expected_score_b_mu(stats, &b, &mu, grid));
        let norm = grad.dot(&grad).sqrt();
        if norm < inner_tol {
            break;
        }
        let info = map.t().dot(&expected_information_b_mu(stats, &b, &mu, grid)).dot(&map);
        let (dir, sing) = newton_direction(&info, &grad, T::lit(RIDGE));
        singular |= sing;
        let full_dir = map.dot(&dir);
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand_b = &b + &(full_dir.slice(ndarray::s![..g]).to_owned() * step);
            let cand_mu = &mu + &(full_dir.slice(ndarray::s![g..]).to_owned() * step);
            let value = q_b_mu(stats, &cand_b, &cand_mu, grid);
            if value >= current {
                b = cand_b;
                mu = cand_mu;
                current = value;
                accepted = true;
                break;
            }
            step = step / T::lit(2.0);
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    BMuUpdate {
        b,
        mu,
        frozen_segments: frozen,
        singular,
        iterations,
    }
}

/// `score[[g, k, d]]`: expected complete-data log-likelihood contribution of
/// receiving node `k` in component `g` if it were placed in segment `d`.
///
/// Uses `log p - log(1 - p) = eta`, so the data-dependent part reduces to the
/// posterior mean of the linear predictor.
pub fn assignment_scores<T: Scalar>(
    y: &IncidenceMatrix,
    posterior: &Posterior<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Array3<T> {
    let (n, g, d, q) = (
        posterior.n_units(),
        posterior.n_components(),
        posterior.n_segments(),
        posterior.points_per_dimension(),
    );
    let r = y.n_receiving();
    let eta = linear_predictors(params, grid);
    let mut scores = Array3::<T>::zeros((g, r, d));
    let mut per_node = vec![T::zero(); r];
    for c in 0..g {
        for s in 0..d {
            // failure part: sum_q (sum_i z w) log(1 - p)
            let table = &posterior.tables[[c, s]];
            let by_count = posterior.mass_by_count(c, s);
            let mut base = T::zero();
            for m in 0..q {
                let mut mass = T::zero();
                for (count, &zm) in by_count.iter().enumerate() {
                    mass = mass + zm * table.weights[[count, m]];
                }
                base = base + mass * log_logistic(-eta[[c, s, m]]);
            }
            per_node.fill(T::zero());
            for i in 0..n {
                let z = posterior.z_hat[[i, c]];
                if z == T::zero() {
                    continue;
                }
                // posterior mean of the linear predictor
                let a = z * (params.b[c] + params.mu[s] + posterior.trait_mean(i, c, s));
                for (k, &v) in y.row(i).iter().enumerate() {
                    if v == 1 {
                        per_node[k] = per_node[k] + a;
                    }
                }
            }
            for k in 0..r {
                scores[[c, k, s]] = base + per_node[k];
            }
        }
    }
    scores
}

/// Exact coordinate maximization over the segment labels, ties to the
/// smallest segment.
pub fn m_step_assignments<T: Scalar>(
    y: &IncidenceMatrix,
    posterior: &Posterior<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Array2<usize> {
    let scores = assignment_scores(y, posterior, params, grid);
    let (g, r, _) = scores.dim();
    Array2::from_shape_fn((g, r), |(c, k)| argmax(scores.slice(ndarray::s![c, k, ..]).iter().copied()))
}

/// Objective, gradient and information of the weighted multinomial logit in
/// one pass over the units.
struct BetaTerms<T> {
    objective: T,
    gradient: Array1<T>,
    information: Array2<T>,
}

fn beta_terms<T: Scalar>(x: &CovariateMatrix<T>, z_hat: &Array2<T>, beta: &Array2<T>) -> BetaTerms<T> {
    let (rows, j) = beta.dim();
    let g = rows + 1;
    let p = rows * j;
    let xs = x.data().as_standard_layout();
    let bs = beta.as_standard_layout();
    let (xs, bs) = (xs.as_slice().expect("standard layout"), bs.as_slice().expect("standard layout"));
    let mut objective = T::zero();
    let mut gradient = Array1::<T>::zeros(p);
    let mut info = vec![T::zero(); p * p];
    let mut log_eta = vec![T::zero(); g];
    let mut eta = vec![T::zero(); g];
    for (i, xi) in xs.chunks_exact(j.max(1)).enumerate().take(x.n_rows()) {
        log_eta[0] = T::zero();
        for c in 1..g {
            let coef = &bs[(c - 1) * j..c * j];
            log_eta[c] = coef.iter().zip(xi).fold(T::zero(), |acc, (&b, &v)| acc + b * v);
        }
        let norm = log_sum_exp(&log_eta);
        let mut total = T::zero();
        for c in 0..g {
            log_eta[c] = log_eta[c] - norm;
            eta[c] = log_eta[c].exp();
            let z = z_hat[[i, c]];
            total = total + z;
            if z > T::zero() {
                objective = objective + z * log_eta[c];
            }
        }
        for c in 1..g {
            let r = z_hat[[i, c]] - eta[c];
            for l in 0..j {
                gradient[(c - 1) * j + l] = gradient[(c - 1) * j + l] + r * xi[l];
            }
            for e in 1..g {
                let w = total * eta[c] * (if c == e { T::one() } else { T::zero() } - eta[e]);
                for l in 0..j {
                    let wl = w * xi[l];
                    let row = ((c - 1) * j + l) * p + (e - 1) * j;
                    for m in 0..j {
                        info[row + m] = info[row + m] + wl * xi[m];
                    }
                }
            }
        }
    }
    BetaTerms {
        objective,
        gradient,
        information: Array2::from_shape_vec((p, p), info).expect("square"),
    }
}

/// `sum_i sum_g z_ig log eta_g(x_i; beta)`.
pub fn beta_objective<T: Scalar>(x: &CovariateMatrix<T>, z_hat: &Array2<T>, beta: &Array2<T>) -> T {
    beta_terms(x, z_hat, beta).objective
}

/// Gradient of [`beta_objective`], flattened row-major over `(g - 1, j)`.
pub fn beta_gradient<T: Scalar>(x: &CovariateMatrix<T>, z_hat: &Array2<T>, beta: &Array2<T>) -> Array1<T> {
    beta_terms(x, z_hat, beta).gradient
}

/// Negative Hessian of [`beta_objective`]; the weights depend only on the
/// mixing weights because each row of `z_hat` sums to one.
pub fn beta_information<T: Scalar>(x: &CovariateMatrix<T>, z_hat: &Array2<T>, beta: &Array2<T>) -> Array2<T> {
    beta_terms(x, z_hat, beta).information
}

#[derive(Debug, Clone)]
pub struct BetaUpdate<T> {
    pub beta: Array2<T>,
    pub quasi_separation: bool,
    pub singular: bool,
    pub iterations: usize,
}

/// Weighted multinomial logit fit with soft labels `z_hat`, by Newton-Raphson
/// with step halving.
pub fn m_step_beta<T: Scalar>(
    x: &CovariateMatrix<T>,
    posterior: &Posterior<T>,
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<BetaUpdate<T>> {
    maximize_beta(x, &posterior.z_hat, &params.beta, config)
}

pub fn maximize_beta<T: Scalar>(
    x: &CovariateMatrix<T>,
    z_hat: &Array2<T>,
    start: &Array2<T>,
    config: &ModelConfig,
) -> Result<BetaUpdate<T>> {
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("covariates must be finite".into()));
    }
    let (rows, j) = start.dim();
    let mut beta = start.clone();
    let mut singular = false;
    let mut iterations = 0;
    if rows > 0 {
        let inner_tol = T::lit(config.inner_tol);
        let mut terms = beta_terms(x, z_hat, &beta);
        for _ in 0..config.inner_max_iter {
            let grad = &terms.gradient;
            if grad.dot(grad).sqrt() < inner_tol {
                break;
            }
            let (dir, sing) = newton_direction(&terms.information, grad, T::lit(RIDGE));
            singular |= sing;
            let dir = dir.into_shape_with_order((rows, j)).expect("beta layout");
            let mut step = T::one();
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let cand = &beta + &(&dir * step);
                let cand_terms = beta_terms(x, z_hat, &cand);
                if cand_terms.objective >= terms.objective {
                    beta = cand;
                    terms = cand_terms;
                    accepted = true;
                    break;
                }
                step = step / T::lit(2.0);
            }
            iterations += 1;
            if !accepted {
                break;
            }
        }
    }
    let quasi_separation = beta.iter().any(|v| v.abs() > T::lit(SEPARATION_THRESHOLD));
    Ok(BetaUpdate {
        beta,
        quasi_separation,
        singular,
        iterations,
    })
}
