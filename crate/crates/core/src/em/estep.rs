use ndarray::{Array1, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};
use crate::model::{log_mixing_weights_into, CovariateMatrix, IncidenceMatrix, ModelParams};
use crate::quadrature::QuadratureGrid;
use crate::scalar::{log_sum_exp, softplus, Scalar};

/// One-dimensional latent-trait posteriors for one (component, segment)
/// pair, tabulated by the unit's success count in that segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitTable<T> {
    /// Row `s`: normalized weights over the one-dimensional nodes for a unit
    /// with `s` successes.
    pub weights: Array2<T>,
    /// `log sum_q w_q f(s | u*_q)` per success count.
    pub log_norm: Vec<T>,
    /// Posterior mean of the latent coordinate per success count.
    pub mean: Vec<T>,
}

impl<T: Scalar> TraitTable<T> {
    /// Segment with no receiving nodes: the posterior is the prior and the
    /// likelihood factor is exactly one.
    fn prior(weights: &[T], nodes: &[T]) -> Self {
        let mean = weights.iter().zip(nodes).map(|(&w, &u)| w * u).sum();
        Self {
            weights: Array2::from_shape_vec((1, weights.len()), weights.to_vec()).expect("one row"),
            log_norm: vec![T::zero()],
            mean: vec![mean],
        }
    }

    fn new(max_count: usize, log_kernel: impl Fn(T, usize) -> T, nodes: &[T]) -> Self {
        let q = nodes.len();
        let mut weights = Array2::<T>::zeros((max_count + 1, q));
        let mut log_norm = Vec::with_capacity(max_count + 1);
        let mut mean = Vec::with_capacity(max_count + 1);
        for (count, mut row) in weights.rows_mut().into_iter().enumerate() {
            let succ = T::from_count(count);
            let mut peak = T::neg_infinity();
            for m in 0..q {
                row[m] = log_kernel(succ, m);
                peak = peak.max(row[m]);
            }
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - peak).exp();
                total = total + *v;
            }
            let mut mu = T::zero();
            for (v, &node) in row.iter_mut().zip(nodes) {
                *v = *v / total;
                mu = mu + *v * node;
            }
            log_norm.push(peak + total.ln());
            mean.push(mu);
        }
        Self { weights, log_norm, mean }
    }
}

/// Posterior quantities from one E-step.
///
/// Given membership in component `g`, the connection log-likelihood is a sum
/// of terms that each involve a single latent coordinate `u_d`, and the prior
/// on `u` is a product of independent normals. The posterior of `u` on the
/// tensor grid is therefore the product of D one-dimensional posteriors. Each
/// of those depends on the unit only through its success count in the
/// segment, so they are stored once per count in `tables`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior<T> {
    /// N x G posterior component probabilities.
    pub z_hat: Array2<T>,
    /// N x G log marginal component likelihoods `log zeta_ig`.
    pub log_zeta: Array2<T>,
    /// Success and trial counts under the assignments used.
    pub counts: SegmentCounts,
    /// G x D one-dimensional posterior tables.
    pub tables: Array2<TraitTable<T>>,
    /// N x D posterior mean latent traits `E[u_i | y_i]`.
    pub u_hat: Array2<T>,
    /// Per-unit log-likelihood contributions.
    pub unit_log_likelihood: Array1<T>,
    pub log_likelihood: T,
}

impl<T: Scalar> Posterior<T> {
    pub fn n_units(&self) -> usize {
        self.z_hat.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.z_hat.ncols()
    }

    pub fn n_segments(&self) -> usize {
        self.tables.ncols()
    }

    pub fn points_per_dimension(&self) -> usize {
        self.tables[[0, 0]].weights.ncols()
    }

    /// Posterior weights over the one-dimensional nodes for latent
    /// coordinate `d` of unit `i` given component `g`.
    pub fn trait_weights(&self, i: usize, g: usize, d: usize) -> ArrayView1<'_, T> {
        self.tables[[g, d]].weights.row(self.counts.successes[[i, g, d]])
    }

    /// `E[u_id | y_i, z_ig = 1]`.
    pub fn trait_mean(&self, i: usize, g: usize, d: usize) -> T {
        self.tables[[g, d]].mean[self.counts.successes[[i, g, d]]]
    }

    /// Sum of `z_hat[i, g]` over units grouped by their success count in
    /// segment `d` of component `g`.
    pub fn mass_by_count(&self, g: usize, d: usize) -> Vec<T> {
        let mut mass = vec![T::zero(); self.tables[[g, d]].weights.nrows()];
        for i in 0..self.n_units() {
            let s = self.counts.successes[[i, g, d]];
            mass[s] = mass[s] + self.z_hat[[i, g]];
        }
        mass
    }

    /// Posterior weights of unit `i` over the full tensor grid given
    /// component `g`, in the grid's node order.
    pub fn node_weights(&self, i: usize, g: usize) -> Array1<T> {
        let (dims, points) = (self.n_segments(), self.points_per_dimension());
        let rows: Vec<ArrayView1<'_, T>> = (0..dims).map(|d| self.trait_weights(i, g, d)).collect();
        let total = points.pow(dims as u32);
        let mut out = Array1::<T>::ones(total);
        for (n, w) in out.iter_mut().enumerate() {
            let mut rem = n;
            for d in (0..dims).rev() {
                *w = *w * rows[d][rem % points];
                rem /= points;
            }
        }
        out
    }
}

/// Per-(unit, component, segment) success counts `s_igd` and per-(component,
/// segment) trial counts `n_gd` under given assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentCounts {
    pub successes: Array3<usize>,
    pub trials: Array2<usize>,
}

impl SegmentCounts {
    pub fn new(y: &IncidenceMatrix, assignments: &Array2<usize>, segments: usize) -> Self {
        let (n, r) = (y.n_sending(), y.n_receiving());
        let g = assignments.nrows();
        let mut successes = Array3::<usize>::zeros((n, g, segments));
        let mut trials = Array2::<usize>::zeros((g, segments));
        for h in 0..g {
            for k in 0..r {
                trials[[h, assignments[[h, k]]]] += 1;
            }
        }
        for (i, row) in y.data().rows().into_iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if v == 1 {
                    for h in 0..g {
                        successes[[i, h, assignments[[h, k]]]] += 1;
                    }
                }
            }
        }
        Self { successes, trials }
    }
}

/// `b_g + mu_d + u*_q` on the one-dimensional nodes, shape (G, D, Q).
pub(crate) fn linear_predictors<T: Scalar>(params: &ModelParams<T>, grid: &QuadratureGrid<T>) -> Array3<T> {
    let (g, d, q) = (params.n_components(), params.n_segments(), grid.points_per_dimension());
    Array3::from_shape_fn((g, d, q), |(h, s, n)| params.b[h] + params.mu[s] + grid.abscissas()[n])
}

pub(crate) fn check_dimensions<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Result<()> {
    params.validate()?;
    if y.n_sending() != x.n_rows() {
        return Err(Error::Dimension(format!(
            "{} incidence rows but {} covariate rows",
            y.n_sending(),
            x.n_rows()
        )));
    }
    if y.n_receiving() != params.n_receiving() {
        return Err(Error::Dimension(format!(
            "{} receiving nodes but assignments cover {}",
            y.n_receiving(),
            params.n_receiving()
        )));
    }
    if x.n_covariates() != params.n_covariates() && params.n_components() > 1 {
        return Err(Error::Dimension(format!(
            "{} covariates but beta has {} columns",
            x.n_covariates(),
            params.n_covariates()
        )));
    }
    if grid.dimension() != params.n_segments() {
        return Err(Error::Dimension(format!(
            "grid dimension {} does not match D = {}",
            grid.dimension(),
            params.n_segments()
        )));
    }
    Ok(())
}

/// Computes component posteriors, latent-trait node weights and the
/// observed log-likelihood, all in log space.
pub fn e_step<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Result<Posterior<T>> {
    check_dimensions(y, x, params, grid)?;
    let n = y.n_sending();
    let (g, d) = (params.n_components(), params.n_segments());
    let counts = SegmentCounts::new(y, &params.assignments, d);
    let eta = linear_predictors(params, grid);
    let penalty = eta.mapv(softplus);
    let log_w = grid.log_weights();
    let nodes = grid.abscissas();

    let tables = Array2::from_shape_fn((g, d), |(c, s)| {
        let trials = counts.trials[[c, s]];
        if trials == 0 {
            return TraitTable::prior(grid.weights(), nodes);
        }
        let n_gd = T::from_count(trials);
        TraitTable::new(
            trials,
            |succ, m| succ * eta[[c, s, m]] - n_gd * penalty[[c, s, m]] + log_w[m],
            nodes,
        )
    });

    let mut z_hat = Array2::<T>::zeros((n, g));
    let mut log_zeta = Array2::<T>::zeros((n, g));
    let mut u_hat = Array2::<T>::zeros((n, d));
    let mut unit_ll = Array1::<T>::zeros(n);
    let mut joint = vec![T::zero(); g];
    let mut log_eta = vec![T::zero(); g];
    for i in 0..n {
        log_mixing_weights_into(&params.beta, x.row(i), &mut log_eta);
        for c in 0..g {
            let mut lz = T::zero();
            for s in 0..d {
                lz = lz + tables[[c, s]].log_norm[counts.successes[[i, c, s]]];
            }
            log_zeta[[i, c]] = lz;
            joint[c] = log_eta[c] + lz;
        }
        let ll = log_sum_exp(&joint);
        unit_ll[i] = ll;
        for c in 0..g {
            let z = (joint[c] - ll).exp();
            z_hat[[i, c]] = z;
            for s in 0..d {
                u_hat[[i, s]] = u_hat[[i, s]] + z * tables[[c, s]].mean[counts.successes[[i, c, s]]];
            }
        }
    }
    let log_likelihood = unit_ll.iter().copied().sum();
    Ok(Posterior {
        z_hat,
        log_zeta,
        counts,
        tables,
        u_hat,
        unit_log_likelihood: unit_ll,
        log_likelihood,
    })
}

/// `sum_i log sum_g eta_g(x_i) zeta_ig`.
pub fn observed_log_likelihood<T: Scalar>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    params: &ModelParams<T>,
    grid: &QuadratureGrid<T>,
) -> Result<T> {
    e_step(y, x, params, grid).map(|p| p.log_likelihood)
}
