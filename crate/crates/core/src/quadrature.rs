//! Gauss-Hermite quadrature for expectations under a standard normal latent
//! trait.
//!
//! The one-dimensional rule integrates against `exp(-x^2)`. Substituting
//! `u = sqrt(2) x` turns it into an expectation under `N(0, 1)` with weights
//! `w_q / sqrt(pi)`; the D-dimensional grid is the tensor product of that rule.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::model::ModelParams;
use crate::scalar::{log_sum_exp, Scalar};

pub const DEFAULT_GRID_CAP: usize = 1_000_000;

/// Roots of the physicists' Hermite polynomial `H_Q` and the matching
/// Gauss-Hermite weights, roots ascending.
///
/// Roots start from the Golub-Welsch eigenvalues of the Jacobi matrix and
/// are polished by Newton's method on the orthonormal recurrence; the
/// weights `2^(Q-1) Q! sqrt(pi) / (Q^2 H_{Q-1}(x)^2)` are evaluated in the
/// equivalent orthonormal form `2 / (H'_Q(x) normalized)^2`, which does not
/// overflow.
pub fn hermite_rule<T: Scalar>(q: usize) -> Result<(Vec<T>, Vec<T>)> {
    if q == 0 {
        return Err(Error::InvalidArgument("Gauss-Hermite rule needs Q >= 1".into()));
    }
    let (roots, weights) = hermite_rule_f64(q);
    Ok((roots.into_iter().map(T::lit).collect(), weights.into_iter().map(T::lit).collect()))
}

fn hermite_rule_f64(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = Array2::<f64>::zeros((q, q));
    for k in 1..q {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[[k - 1, k]] = off;
        jacobi[[k, k - 1]] = off;
    }
    let (eigvals, _) = symmetric_eigen(&jacobi);

    let mut roots = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    for &start in eigvals.iter() {
        let mut x = start;
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = orthonormal_hermite(q, x);
            deriv = dp;
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                deriv = orthonormal_hermite(q, x).1;
                break;
            }
        }
        roots.push(x);
        weights.push(2.0 / (deriv * deriv));
    }

    // exact symmetry about zero
    for i in 0..q / 2 {
        let j = q - 1 - i;
        let r = 0.5 * (roots[j] - roots[i]);
        roots[i] = -r;
        roots[j] = r;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if q % 2 == 1 {
        roots[q / 2] = 0.0;
    }
    (roots, weights)
}

/// Orthonormal Hermite function value of degree `q` at `x` and its derivative.
fn orthonormal_hermite(q: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 0.0;
    let mut p = std::f64::consts::PI.powf(-0.25);
    for j in 1..=q {
        let jf = j as f64;
        let next = x * (2.0 / jf).sqrt() * p - ((jf - 1.0) / jf).sqrt() * p_prev;
        p_prev = p;
        p = next;
    }
    (p, (2.0 * q as f64).sqrt() * p_prev)
}

/// Tensor-product quadrature grid for `E[h(u)]`, `u ~ N(0, I_D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid<T> {
    points: usize,
    dim: usize,
    /// One-dimensional abscissas `sqrt(2) x_q`.
    abscissas: Vec<T>,
    /// One-dimensional normalized weights `w_q / sqrt(pi)`, summing to one.
    weights: Vec<T>,
    log_weights: Vec<T>,
    /// (Q^D) x D scaled nodes; row `n` has coordinates indexed by the base-Q
    /// digits of `n`, most significant digit first.
    nodes: Array2<T>,
    norm_weights: Array1<T>,
}

impl<T: Scalar> QuadratureGrid<T> {
    pub fn points_per_dimension(&self) -> usize {
        self.points
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.norm_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norm_weights.is_empty()
    }

    pub fn abscissas(&self) -> &[T] {
        &self.abscissas
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    pub fn nodes(&self) -> &Array2<T> {
        &self.nodes
    }

    pub fn norm_weights(&self) -> &Array1<T> {
        &self.norm_weights
    }

    /// Flat node index of the per-dimension digits.
    pub fn flat_index(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, &q| acc * self.points + q)
    }
}

pub fn build_grid<T: Scalar>(points: usize, dim: usize) -> Result<QuadratureGrid<T>> {
    build_grid_capped(points, dim, DEFAULT_GRID_CAP)
}

pub fn build_grid_capped<T: Scalar>(points: usize, dim: usize, cap: usize) -> Result<QuadratureGrid<T>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("grid dimension must be at least 1".into()));
    }
    let total = (points as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
    if total > cap as u128 {
        return Err(Error::GridTooLarge {
            q: points,
            d: dim,
            nodes: total,
            cap,
        });
    }
    let (roots, raw_weights) = hermite_rule_f64(points);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let abscissas: Vec<T> = roots.iter().map(|&r| T::lit(std::f64::consts::SQRT_2 * r)).collect();
    let weights: Vec<T> = raw_weights.iter().map(|&w| T::lit(w / sqrt_pi)).collect();
    let log_weights = weights.iter().map(|w| w.ln()).collect();

    let total = total as usize;
    let mut nodes = Array2::<T>::zeros((total, dim));
    let mut norm_weights = Array1::<T>::zeros(total);
    let mut digits = vec![0usize; dim];
    for n in 0..total {
        let mut rem = n;
        for l in (0..dim).rev() {
            digits[l] = rem % points;
            rem /= points;
        }
        let mut w = T::one();
        for (l, &q) in digits.iter().enumerate() {
            nodes[[n, l]] = abscissas[q];
            w = w * weights[q];
        }
        norm_weights[n] = w;
    }
    Ok(QuadratureGrid {
        points,
        dim,
        abscissas,
        weights,
        log_weights,
        nodes,
        norm_weights,
    })
}

fn check_grid<T: Scalar>(params: &ModelParams<T>, grid: &QuadratureGrid<T>) -> Result<()> {
    if grid.dimension() != params.n_segments() {
        return Err(Error::Dimension(format!(
            "grid dimension {} does not match D = {}",
            grid.dimension(),
            params.n_segments()
        )));
    }
    Ok(())
}

/// Unnormalized log posterior of the latent trait at each grid node:
/// `log f(y | u*_n, g) + log norm_weight_n`.
fn log_joint_at_nodes<T: Scalar>(y_row: ArrayView1<'_, u8>, params: &ModelParams<T>, g: usize, grid: &QuadratureGrid<T>) -> Result<Vec<T>> {
    check_grid(params, grid)?;
    let mut out = Vec::with_capacity(grid.len());
    for (node, &w) in grid.nodes().rows().into_iter().zip(grid.norm_weights().iter()) {
        let u = node.as_slice().expect("row-major grid");
        out.push(params.log_conditional_density(y_row, g, u)? + w.ln());
    }
    Ok(out)
}

/// `log zeta_ig`, the log of `E[f(y_i | u, z_ig = 1)]` over the full tensor grid.
pub fn log_marginal_component_likelihood<T: Scalar>(
    y_row: ArrayView1<'_, u8>,
    params: &ModelParams<T>,
    g: usize,
    grid: &QuadratureGrid<T>,
) -> Result<T> {
    Ok(log_sum_exp(&log_joint_at_nodes(y_row, params, g, grid)?))
}

pub fn marginal_component_likelihood<T: Scalar>(
    y_row: ArrayView1<'_, u8>,
    params: &ModelParams<T>,
    g: usize,
    grid: &QuadratureGrid<T>,
) -> Result<T> {
    log_marginal_component_likelihood(y_row, params, g, grid).map(T::exp)
}

/// Posterior weights of the latent trait over the grid nodes given the
/// response row and membership in component `g`.
pub fn posterior_node_weights<T: Scalar>(
    y_row: ArrayView1<'_, u8>,
    params: &ModelParams<T>,
    g: usize,
    grid: &QuadratureGrid<T>,
) -> Result<Array1<T>> {
    let log_joint = log_joint_at_nodes(y_row, params, g, grid)?;
    let norm = log_sum_exp(&log_joint);
    if !norm.is_finite() {
        return Err(Error::InvalidArgument("posterior node weights are all zero".into()));
    }
    Ok(log_joint.into_iter().map(|v| (v - norm).exp()).collect())
}
