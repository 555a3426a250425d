use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{CovariateMatrix, IncidenceMatrix, ModelConfig, ModelParams};
use crate::scalar::Scalar;

pub const KMEANS_MAX_ITER: usize = 50;

/// Deterministic random stream for one start: the seed picks the key and
/// the start index picks the ChaCha stream.
pub fn start_rng(seed: u64, start_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start_index as u64);
    rng
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means on the rows of `points`. Initial centroids are `k`
/// distinct random points; an emptied cluster is reseeded at the point
/// farthest from its centroid. When there are at least `k` points every
/// label is used in the result.
pub fn kmeans<R: Rng + ?Sized>(points: &Array2<f64>, k: usize, rng: &mut R, max_iter: usize) -> Vec<usize> {
    let n = points.nrows();
    if n == 0 || k <= 1 {
        return vec![0; n];
    }
    let mut centroids = Array2::<f64>::zeros((k, points.ncols()));
    for (c, idx) in rand::seq::index::sample(rng, n, k.min(n)).into_iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(idx));
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let best = nearest(points.row(i), &centroids);
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(labels[i]).scaled_add(1.0, &points.row(i));
            sizes[labels[i]] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / sizes[c] as f64));
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                let far = farthest_point(points, &centroids, &labels, None);
                centroids.row_mut(c).assign(&points.row(far));
            }
        }
    }
    fill_empty_clusters(points, &mut centroids, &mut labels, k);
    labels
}

fn nearest(point: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Point farthest from its own centroid, optionally restricted to clusters
/// with more than one member.
fn farthest_point(points: &Array2<f64>, centroids: &Array2<f64>, labels: &[usize], sizes: Option<&[usize]>) -> usize {
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &l) in labels.iter().enumerate() {
        if let Some(s) = sizes {
            if s[l] <= 1 {
                continue;
            }
        }
        let d = sq_dist(points.row(i), centroids.row(l));
        if d > best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn fill_empty_clusters(points: &Array2<f64>, centroids: &mut Array2<f64>, labels: &mut [usize], k: usize) {
    if points.nrows() < k {
        return;
    }
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let far = farthest_point(points, centroids, labels, Some(&sizes));
        labels[far] = empty;
        centroids.row_mut(empty).assign(&points.row(far));
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Starting values for one EM run.
///
/// `beta` starts at zero and `mu` at standard normal draws. Segment labels
/// come from k-means with D clusters on the columns of Y, copied to every
/// component. Intercepts come from k-means with G clusters on the rows:
/// `b_g` is the logit of the edge density of row cluster `g`, plus a
/// `0.1 * N(0, 1)` perturbation on every start but the first.
pub fn initialize<T: Scalar, R: Rng + ?Sized>(
    y: &IncidenceMatrix,
    x: &CovariateMatrix<T>,
    config: &ModelConfig,
    rng: &mut R,
    start_index: usize,
) -> Result<ModelParams<T>> {
    let (n, r) = (y.n_sending(), y.n_receiving());
    let (g, d) = (config.components, config.segments);
    config.validate(r)?;
    if x.n_rows() != n {
        return Err(Error::Dimension(format!("{n} incidence rows but {} covariate rows", x.n_rows())));
    }

    let mu: Array1<T> = (0..d).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    let noise: Vec<f64> = (0..g).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let dense = y.data().mapv(f64::from);
    let columns = dense.t().to_owned();
    let col_labels = kmeans(&columns, d, rng, KMEANS_MAX_ITER);
    let assignments = Array2::from_shape_fn((g, r), |(_, k)| col_labels[k]);

    let row_labels = kmeans(&dense, g, rng, KMEANS_MAX_ITER);
    let mut edges = vec![0.0; g];
    let mut sizes = vec![0usize; g];
    for (i, &l) in row_labels.iter().enumerate() {
        edges[l] += dense.row(i).sum();
        sizes[l] += 1;
    }
    let b: Array1<T> = (0..g)
        .map(|c| {
            let density = if sizes[c] == 0 || r == 0 {
                0.5
            } else {
                edges[c] / (sizes[c] * r) as f64
            };
            let jitter = if start_index == 0 { 0.0 } else { 0.1 * noise[c] };
            T::lit(logit(density.clamp(0.01, 0.99)) + jitter)
        })
        .collect();

    let beta = Array2::<T>::zeros((g - 1, x.n_covariates()));
    ModelParams::new(b, mu, assignments, beta)
}
