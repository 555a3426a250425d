mod common;

use bimlta::quadrature::{marginal_component_likelihood, posterior_node_weights};
use bimlta::{build_grid, hermite_rule, IncidenceMatrix, Params};
use common::*;
use ndarray::{array, Array2};

#[test]
fn monomials_are_exact_up_to_degree_2q_minus_1() {
    for q in 1..=20 {
        let (x, w) = hermite_rule::<f64>(q).unwrap();
        for p in 0..2 * q {
            let approx: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(p as i32)).sum();
            // Gamma((p + 1) / 2) for even p, zero for odd p
            let exact = if p % 2 == 1 {
                0.0
            } else {
                let mut g = std::f64::consts::PI.sqrt();
                for k in 0..p / 2 {
                    g *= k as f64 + 0.5;
                }
                g
            };
            // odd moments vanish, so measure against sum w |x|^p, which equals
            // the exact value for even p
            let scale: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.abs().powi(p as i32)).sum();
            let err = if scale > 0.0 {
                (approx - exact).abs() / scale
            } else {
                (approx - exact).abs()
            };
            assert!(err <= 1e-10, "Q={q} degree {p}: {approx} vs {exact}");
        }
    }
}

#[test]
fn q10_second_moment() {
    let (x, w) = hermite_rule::<f64>(10).unwrap();
    let m2: f64 = x.iter().zip(&w).map(|(a, b)| b * a * a).sum();
    assert!((m2 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-10);
}

#[test]
fn zeta_matches_trapezoid_in_two_dimensions() {
    let mut rng = rng(7);
    for _ in 0..3 {
        let params = random_params(&mut rng, 1, 2, 3, 1, 1.5);
        let y = random_incidence(&mut rng, 1, 3, 0.5);
        let grid = build_grid::<f64>(30, 2).unwrap();
        let gh = marginal_component_likelihood(y.row(0), &params, 0, &grid).unwrap();
        let oracle = trapezoid_zeta(y.row(0), &params, 0, 801);
        assert!((gh - oracle).abs() / oracle < 1e-6, "{gh} vs {oracle}");
    }
}

#[test]
fn posterior_mean_matches_trapezoid() {
    let params = Params::new(array![0.3], array![-0.4, 0.8], array![[0, 1]], Array2::zeros((0, 1))).unwrap();
    let y = IncidenceMatrix::from_array(array![[1u8, 0]]).unwrap();
    let grid = build_grid::<f64>(20, 2).unwrap();
    let w = posterior_node_weights(y.row(0), &params, 0, &grid).unwrap();
    let oracle = trapezoid_posterior_mean(y.row(0), &params, 0, 801);
    for d in 0..2 {
        let mean: f64 = w.iter().zip(grid.nodes().column(d)).map(|(a, b)| a * b).sum();
        assert!((mean - oracle[d]).abs() < 1e-5, "dim {d}: {mean} vs {oracle:?}");
    }
}

#[test]
fn zeta_is_stable_when_adding_ten_nodes() {
    let mut rng = rng(11);
    for _ in 0..20 {
        let params = random_params(&mut rng, 2, 2, 8, 1, 2.0);
        let y = random_incidence(&mut rng, 1, 8, 0.5);
        let coarse = build_grid::<f64>(15, 2).unwrap();
        let fine = build_grid::<f64>(25, 2).unwrap();
        for g in 0..2 {
            let a = marginal_component_likelihood(y.row(0), &params, g, &coarse).unwrap();
            let b = marginal_component_likelihood(y.row(0), &params, g, &fine).unwrap();
            assert!((a - b).abs() / b < 1e-4);
        }
    }
}
