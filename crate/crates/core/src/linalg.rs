//! Small dense linear algebra for the Newton steps and the sandwich estimator.
//! Matrices here are at most a few dozen rows, so plain O(n^3) routines do.

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

/// Solves `a x = rhs` for symmetric positive definite `a`. `None` when the
/// factorization breaks down.
pub fn cholesky_solve<T: Scalar>(a: &Array2<T>, rhs: &Array1<T>) -> Option<Array1<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag = diag - l[[j, k]] * l[[j, k]];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s = s - l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues in ascending order and the matching eigenvectors as columns.
pub fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let sq = m[[i, j]] * m[[i, j]];
                total = total + sq;
                if i != j {
                    off = off + sq;
                }
            }
        }
        if off <= T::epsilon() * T::epsilon() * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::<T>::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        vectors.column_mut(col).assign(&v.column(i));
    }
    (values, vectors)
}

/// Inverse of a symmetric matrix. Eigenvalues whose magnitude falls below
/// `rel_tol` times the largest are dropped, giving the Moore-Penrose
/// pseudo-inverse; the flag reports whether that happened.
pub fn symmetric_inverse<T: Scalar>(a: &Array2<T>, rel_tol: T) -> (Array2<T>, bool) {
    let n = a.nrows();
    let (values, vectors) = symmetric_eigen(a);
    let scale = values.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let cutoff = rel_tol * scale;
    let mut deficient = scale == T::zero();
    let mut inv = Array2::<T>::zeros((n, n));
    for k in 0..n {
        let lambda = values[k];
        if lambda.abs() <= cutoff || lambda == T::zero() {
            deficient = true;
            continue;
        }
        for i in 0..n {
            let vik = vectors[[i, k]] / lambda;
            for j in 0..n {
                inv[[i, j]] = inv[[i, j]] + vik * vectors[[j, k]];
            }
        }
    }
    (inv, deficient)
}

/// Newton direction for a concave maximization: solves `info * step = grad`
/// with `info` the (positive semi-definite) negative Hessian. A ridge is
/// added first; if the system is still not positive definite the
/// pseudo-inverse is used. The flag reports a singular system.
pub fn newton_direction<T: Scalar>(info: &Array2<T>, grad: &Array1<T>, ridge: T) -> (Array1<T>, bool) {
    if let Some(x) = cholesky_solve(info, grad) {
        return (x, false);
    }
    let mut ridged = info.clone();
    for i in 0..ridged.nrows() {
        ridged[[i, i]] = ridged[[i, i]] + ridge;
    }
    if let Some(x) = cholesky_solve(&ridged, grad) {
        return (x, true);
    }
    let (pinv, _) = symmetric_inverse(info, T::lit(1e-12));
    (pinv.dot(grad), true)
}
