//! Independent oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use bimlta::{Covariates, IncidenceMatrix, Params};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn std_normal_pdf(v: f64) -> f64 {
    (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Trapezoid nodes and weights on [-8, 8].
fn trapezoid(points: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 16.0 / (points - 1) as f64;
    let nodes = (0..points).map(|i| -8.0 + i as f64 * h).collect();
    let weights = (0..points).map(|i| if i == 0 || i == points - 1 { h / 2.0 } else { h }).collect();
    (nodes, weights)
}

/// Visits every point of the D-dimensional trapezoid grid with its weight
/// times the standard normal density.
fn for_each_point(dim: usize, points: usize, mut f: impl FnMut(&[f64], f64)) {
    let (nodes, weights) = trapezoid(points);
    let mut digits = vec![0usize; dim];
    let mut u = vec![0.0; dim];
    loop {
        let mut w = 1.0;
        for (d, &i) in digits.iter().enumerate() {
            u[d] = nodes[i];
            w *= weights[i] * std_normal_pdf(nodes[i]);
        }
        f(&u, w);
        let mut pos = dim;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < points {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Conditional mass of a response row given component `g` and trait `u`,
/// by direct product over receiving nodes.
pub fn conditional_mass(y_row: ArrayView1<'_, u8>, params: &Params, g: usize, u: &[f64]) -> f64 {
    y_row
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let d = params.assignments[[g, k]];
            let p = logistic(params.b[g] + params.mu[d] + u[d]);
            if v == 1 {
                p
            } else {
                1.0 - p
            }
        })
        .product()
}

/// Brute-force `zeta_ig = E[f(y | u, g)]` over the full D-dimensional grid.
pub fn trapezoid_zeta(y_row: ArrayView1<'_, u8>, params: &Params, g: usize, points: usize) -> f64 {
    let mut total = 0.0;
    for_each_point(params.n_segments(), points, |u, w| {
        total += w * conditional_mass(y_row, params, g, u);
    });
    total
}

/// Brute-force `E[u | y, g]`.
pub fn trapezoid_posterior_mean(y_row: ArrayView1<'_, u8>, params: &Params, g: usize, points: usize) -> Vec<f64> {
    let dim = params.n_segments();
    let mut norm = 0.0;
    let mut first = vec![0.0; dim];
    for_each_point(dim, points, |u, w| {
        let m = w * conditional_mass(y_row, params, g, u);
        norm += m;
        for d in 0..dim {
            first[d] += m * u[d];
        }
    });
    first.iter().map(|v| v / norm).collect()
}

/// Mixing weights by explicit softmax.
pub fn softmax_weights(params: &Params, x_row: ArrayView1<'_, f64>) -> Vec<f64> {
    let g = params.n_components();
    let linear: Vec<f64> = (0..g)
        .map(|c| if c == 0 { 0.0 } else { params.beta.row(c - 1).dot(&x_row) })
        .collect();
    let total: f64 = linear.iter().map(|v| v.exp()).sum();
    linear.iter().map(|v| v.exp() / total).collect()
}

/// Brute-force observed log-likelihood and posterior component probabilities.
pub fn trapezoid_posterior(y: &IncidenceMatrix, x: &Covariates, params: &Params, points: usize) -> (f64, Array2<f64>) {
    let (n, g) = (y.n_sending(), params.n_components());
    let mut z = Array2::zeros((n, g));
    let mut ll = 0.0;
    for i in 0..n {
        let eta = softmax_weights(params, x.row(i));
        let joint: Vec<f64> = (0..g).map(|c| eta[c] * trapezoid_zeta(y.row(i), params, c, points)).collect();
        let total: f64 = joint.iter().sum();
        ll += total.ln();
        for c in 0..g {
            z[[i, c]] = joint[c] / total;
        }
    }
    (ll, z)
}

/// Random parameters with `|b|, |mu| <= scale` and every segment label drawn
/// uniformly.
pub fn random_params(rng: &mut impl Rng, g: usize, d: usize, r: usize, j: usize, scale: f64) -> Params {
    let b = Array1::from_shape_fn(g, |_| rng.random_range(-scale..scale));
    let mu = Array1::from_shape_fn(d, |_| rng.random_range(-scale..scale));
    let assignments = Array2::from_shape_fn((g, r), |_| rng.random_range(0..d));
    let beta = Array2::from_shape_fn((g - 1, j), |_| rng.random_range(-1.0..1.0));
    Params::new(b, mu, assignments, beta).unwrap()
}

pub fn random_incidence(rng: &mut impl Rng, n: usize, r: usize, density: f64) -> IncidenceMatrix {
    IncidenceMatrix::from_array(Array2::from_shape_fn((n, r), |_| u8::from(rng.random_bool(density)))).unwrap()
}

/// Intercept plus `j - 1` standard normal covariates.
pub fn random_covariates(rng: &mut impl Rng, n: usize, j: usize) -> Covariates {
    let raw = Array2::from_shape_fn((n, j - 1), |_| {
        let v: f64 = rng.sample(rand_distr::StandardNormal);
        v
    });
    let names = (1..j).map(|l| format!("x{l}")).collect();
    Covariates::with_intercept(raw, names).unwrap()
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Central finite difference of `f` at `x` along coordinate `k`.
pub fn central_diff(f: impl Fn(&Array1<f64>) -> f64, x: &Array1<f64>, k: usize, h: f64) -> f64 {
    let mut plus = x.clone();
    let mut minus = x.clone();
    plus[k] += h;
    minus[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}
