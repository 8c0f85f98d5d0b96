//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! The matrices here are asset-return covariances — tiny (a market holds a
//! handful of tickers) and symmetric by construction — so the classic Jacobi
//! sweep is plenty: unconditionally stable, no pivoting corner cases, and
//! the full decomposition falls out in a few sweeps. Pulling in a general
//! linear-algebra stack for an M×M symmetric eigensolve would be the heavier
//! dependency for no accuracy gain at these sizes.

use ndarray::Array2;

use crate::error::{bail, Result};

/// Eigenvalues (ascending) and matching eigenvectors (columns) of a
/// symmetric matrix, so that `a ≈ V · diag(λ) · Vᵀ`.
pub fn jacobi_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        bail!(Validation, "eigendecomposition needs a square nonempty matrix");
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for i in 0..n {
        for j in 0..n {
            if !a[[i, j]].is_finite() {
                bail!(Domain, "covariance matrix contains a non-finite entry");
            }
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-9 * scale {
                bail!(Validation, "matrix is not symmetric at ({i},{j})");
            }
        }
    }

    let mut m = a.clone();
    // enforce exact symmetry so rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = s;
            m[[j, i]] = s;
        }
    }
    let mut v: Array2<f64> = Array2::eye(n);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let app = m[[p, p]];
                let aqq = m[[q, q]];
                m[[p, p]] = app - t * apq;
                m[[q, q]] = aqq + t * apq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    m[[k, p]] = c * akp - s * akq;
                    m[[p, k]] = m[[k, p]];
                    m[[k, q]] = s * akp + c * akq;
                    m[[q, k]] = m[[k, q]];
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
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[[row, src]];
        }
    }
    Ok((eigenvalues, vectors))
}
