//! Domain types and the pointwise model equations.
//!
//! A sending node `i` in component `g` connects to receiving node `k` with
//! probability `logistic(b[g] + mu[d] + u[d])`, where `d = assignments[[g, k]]`
//! is the segment of `k` within `g` and `u ~ N(0, I_D)` is the node's latent
//! trait. Component membership follows a multinomial logit in the sending
//! node's covariates with component 0 as the reference.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::scalar::{log_logistic, log_sum_exp, logistic, Scalar};

/// Binary N x R incidence matrix of a bipartite network.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    data: Array2<u8>,
    sending_labels: Vec<String>,
    receiving_labels: Vec<String>,
}

impl IncidenceMatrix {
    pub fn new(data: Array2<u8>, sending_labels: Vec<String>, receiving_labels: Vec<String>) -> Result<Self> {
        if sending_labels.len() != data.nrows() {
            return Err(Error::Dimension(format!(
                "{} sending labels for {} rows",
                sending_labels.len(),
                data.nrows()
            )));
        }
        if receiving_labels.len() != data.ncols() {
            return Err(Error::Dimension(format!(
                "{} receiving labels for {} columns",
                receiving_labels.len(),
                data.ncols()
            )));
        }
        if let Some(((i, k), v)) = data.indexed_iter().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidArgument(format!("entry ({i}, {k}) is {v}, expected 0 or 1")));
        }
        Ok(Self {
            data,
            sending_labels,
            receiving_labels,
        })
    }

    /// Labels default to `s1..sN` and `r1..rR`.
    pub fn from_array(data: Array2<u8>) -> Result<Self> {
        let s = (1..=data.nrows()).map(|i| format!("s{i}")).collect();
        let r = (1..=data.ncols()).map(|k| format!("r{k}")).collect();
        Self::new(data, s, r)
    }

    pub fn n_sending(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_receiving(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, u8> {
        self.data.row(i)
    }

    pub fn sending_labels(&self) -> &[String] {
        &self.sending_labels
    }

    pub fn receiving_labels(&self) -> &[String] {
        &self.receiving_labels
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Array2::zeros((rows.len(), self.n_receiving()));
        for (out, &i) in rows.iter().enumerate() {
            data.row_mut(out).assign(&self.data.row(i));
        }
        Self {
            data,
            sending_labels: rows.iter().map(|&i| self.sending_labels[i].clone()).collect(),
            receiving_labels: self.receiving_labels.clone(),
        }
    }
}

pub const INTERCEPT_NAME: &str = "(Intercept)";

/// N x J covariate matrix whose first column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix<T> {
    data: Array2<T>,
    names: Vec<String>,
}

impl<T: Scalar> CovariateMatrix<T> {
    /// Validates a matrix that already carries the intercept in column 0.
    pub fn new(data: Array2<T>, names: Vec<String>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::Dimension("covariate matrix needs at least the intercept column".into()));
        }
        if names.len() != data.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        if data.column(0).iter().any(|&v| v != T::one()) {
            return Err(Error::InvalidArgument("column 0 must be the intercept (all ones)".into()));
        }
        if let Some(((i, j), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite covariate at ({i}, {j})")));
        }
        Ok(Self { data, names })
    }

    /// Prepends the intercept column to raw covariates.
    pub fn with_intercept(raw: Array2<T>, names: Vec<String>) -> Result<Self> {
        let (n, p) = raw.dim();
        let mut data = Array2::<T>::ones((n, p + 1));
        data.slice_mut(ndarray::s![.., 1..]).assign(&raw);
        let mut all = Vec::with_capacity(p + 1);
        all.push(INTERCEPT_NAME.to_string());
        all.extend(names);
        Self::new(data, all)
    }

    pub fn intercept_only(n: usize) -> Self {
        Self {
            data: Array2::ones((n, 1)),
            names: vec![INTERCEPT_NAME.to_string()],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    /// J, counting the intercept.
    pub fn n_covariates(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Array2::zeros((rows.len(), self.n_covariates()));
        for (out, &i) in rows.iter().enumerate() {
            data.row_mut(out).assign(&self.data.row(i));
        }
        Self {
            data,
            names: self.names.clone(),
        }
    }
}

/// All continuous and discrete parameters of the model.
///
/// Segment labels in `assignments` are zero-based (`0..D`); reports
/// translate them to one-based labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    /// Component intercepts, length G.
    pub b: Array1<T>,
    /// Segment effects, length D.
    pub mu: Array1<T>,
    /// G x R segment label of each receiving node within each component.
    pub assignments: Array2<usize>,
    /// (G - 1) x J multinomial logit coefficients; component 0 is the reference.
    pub beta: Array2<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(b: Array1<T>, mu: Array1<T>, assignments: Array2<usize>, beta: Array2<T>) -> Result<Self> {
        let params = Self { b, mu, assignments, beta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.b.len();
        let d = self.mu.len();
        if g == 0 || d == 0 {
            return Err(Error::InvalidArgument("G and D must be at least 1".into()));
        }
        if self.assignments.nrows() != g {
            return Err(Error::Dimension(format!(
                "assignments have {} rows, expected G = {g}",
                self.assignments.nrows()
            )));
        }
        if self.beta.nrows() != g - 1 {
            return Err(Error::Dimension(format!(
                "beta has {} rows, expected G - 1 = {}",
                self.beta.nrows(),
                g - 1
            )));
        }
        if let Some(&bad) = self.assignments.iter().find(|&&a| a >= d) {
            return Err(Error::InvalidArgument(format!("segment label {bad} outside 0..{d}")));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.b.len()
    }

    pub fn n_segments(&self) -> usize {
        self.mu.len()
    }

    pub fn n_receiving(&self) -> usize {
        self.assignments.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.beta.ncols()
    }

    /// `b[g] + mu[d]` for the segment `d` of receiving node `k` in component `g`,
    /// without the latent trait.
    #[inline]
    pub fn block_effect(&self, g: usize, k: usize) -> T {
        self.b[g] + self.mu[self.assignments[[g, k]]]
    }

    /// Probability that a sending node in component `g` with latent trait `u`
    /// connects to receiving node `k`.
    pub fn connection_probability(&self, g: usize, k: usize, u: &[T]) -> Result<T> {
        self.check_point(g, k, u)?;
        let d = self.assignments[[g, k]];
        Ok(logistic(self.block_effect(g, k) + u[d]))
    }

    /// `log f(y | u, z_g = 1)`: sum of Bernoulli log-masses over receiving nodes.
    pub fn log_conditional_density(&self, y_row: ArrayView1<'_, u8>, g: usize, u: &[T]) -> Result<T> {
        if y_row.len() != self.n_receiving() {
            return Err(Error::Dimension(format!(
                "response row has length {}, expected R = {}",
                y_row.len(),
                self.n_receiving()
            )));
        }
        check_index("component", g, self.n_components())?;
        if u.len() != self.n_segments() {
            return Err(Error::Dimension(format!(
                "latent trait has length {}, expected D = {}",
                u.len(),
                self.n_segments()
            )));
        }
        let mut total = T::zero();
        for (k, &y) in y_row.iter().enumerate() {
            let eta = self.block_effect(g, k) + u[self.assignments[[g, k]]];
            total = total + if y == 1 { log_logistic(eta) } else { log_logistic(-eta) };
        }
        Ok(total)
    }

    /// Linear-space accessor for [`Self::log_conditional_density`]; underflows
    /// for large R.
    pub fn conditional_density(&self, y_row: ArrayView1<'_, u8>, g: usize, u: &[T]) -> Result<T> {
        self.log_conditional_density(y_row, g, u).map(T::exp)
    }

    fn check_point(&self, g: usize, k: usize, u: &[T]) -> Result<()> {
        check_index("component", g, self.n_components())?;
        check_index("receiving node", k, self.n_receiving())?;
        if u.len() != self.n_segments() {
            return Err(Error::Dimension(format!(
                "latent trait has length {}, expected D = {}",
                u.len(),
                self.n_segments()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("latent trait must be finite".into()));
        }
        Ok(())
    }
}

/// Log of the component probabilities for one covariate row.
pub fn log_mixing_weights<T: Scalar>(beta: &Array2<T>, x_row: ArrayView1<'_, T>) -> Array1<T> {
    let mut out = vec![T::zero(); beta.nrows() + 1];
    log_mixing_weights_into(beta, x_row, &mut out);
    Array1::from(out)
}

/// Allocation-free [`log_mixing_weights`]; `out` must have length G.
pub(crate) fn log_mixing_weights_into<T: Scalar>(beta: &Array2<T>, x_row: ArrayView1<'_, T>, out: &mut [T]) {
    out[0] = T::zero();
    for h in 1..out.len() {
        out[h] = beta.row(h - 1).dot(&x_row);
    }
    let norm = log_sum_exp(out);
    for v in out.iter_mut() {
        *v = *v - norm;
    }
}

/// Multinomial logit component probabilities with component 0 as reference.
pub fn mixing_weights<T: Scalar>(beta: &Array2<T>, x_row: ArrayView1<'_, T>) -> Array1<T> {
    log_mixing_weights(beta, x_row).mapv_into(T::exp)
}

/// Estimation settings. G, D and Q are the numbers of components, segments
/// and quadrature nodes per latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub components: usize,
    pub segments: usize,
    /// Nodes per dimension; `None` picks [`default_quadrature_points`].
    pub quadrature_points: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Largest admissible Q^D.
    pub grid_cap: usize,
    /// Adds G * R to the parameter count used by BIC and ICL.
    pub penalize_assignments: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            components: 1,
            segments: 1,
            quadrature_points: None,
            tol: 1e-4,
            max_iter: 1000,
            n_starts: 100,
            seed: 0,
            inner_tol: 1e-8,
            inner_max_iter: 25,
            grid_cap: 1_000_000,
            penalize_assignments: false,
        }
    }
}

impl ModelConfig {
    pub fn new(components: usize, segments: usize) -> Self {
        Self {
            components,
            segments,
            ..Self::default()
        }
    }

    pub fn nodes_per_dimension(&self) -> usize {
        self.quadrature_points.unwrap_or_else(|| default_quadrature_points(self.segments))
    }

    pub fn validate(&self, n_receiving: usize) -> Result<()> {
        if self.components == 0 || self.segments == 0 {
            return Err(Error::InvalidArgument("G and D must be at least 1".into()));
        }
        if self.segments > n_receiving {
            return Err(Error::InvalidArgument(format!(
                "D = {} exceeds the number of receiving nodes R = {n_receiving}",
                self.segments
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.nodes_per_dimension() == 0 {
            return Err(Error::InvalidArgument("Q must be at least 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidArgument("at least one start is required".into()));
        }
        Ok(())
    }
}

/// 15 nodes per dimension up to D = 2, 9 for D = 3, 7 for D = 4, 5 beyond.
pub fn default_quadrature_points(segments: usize) -> usize {
    match segments {
        0..=2 => 15,
        3 => 9,
        4 => 7,
        _ => 5,
    }
}

/// Continuous free parameters: G intercepts, D segment effects and
/// (G - 1) * J logit coefficients. Assignments are not counted.
pub fn count_free_parameters(config: &ModelConfig, n_covariates: usize) -> usize {
    let g = config.components;
    g + config.segments + g.saturating_sub(1) * n_covariates
}
