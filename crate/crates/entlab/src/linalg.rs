//! Dense symmetric linear algebra for small matrices (spatial dimension
//! and low-rank moment matrices), built on cyclic Jacobi rotations.

use ndarray::Array2;

use crate::error::{Error, Result};

fn ensure_square_symmetric(a: &Array2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::DimensionMismatch { expected: r, got: c });
    }
    for i in 0..r {
        for j in 0..i {
            let gap = (a[[i, j]] - a[[j, i]]).abs();
            let scale = a[[i, j]].abs().max(a[[j, i]].abs()).max(1.0);
            if gap > 1e-12 * scale {
                return Err(Error::InvalidParameter {
                    name: "matrix_symmetry",
                    value: gap,
                    reason: "matrix must be symmetric",
                });
            }
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entries".into()));
    }
    Ok(r)
}

/// Eigenvalues (ascending) and matching eigenvector columns of a symmetric
/// matrix, by cyclic Jacobi rotations. Intended for small dimensions.
pub fn jacobi_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = ensure_square_symmetric(a)?;
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j] ] * m[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                // Rotation angle zeroing the (p, q) entry.
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
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
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).expect("finite eigenvalues"));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, col]] = v[[k, src]];
        }
    }
    Ok((eigenvalues, vectors))
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn eigen_bounds(a: &Array2<f64>) -> Result<(f64, f64)> {
    let (vals, _) = jacobi_eigen(a)?;
    Ok((vals[0], vals[vals.len() - 1]))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = ensure_square_symmetric(a)?;
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "spd_pivot",
                        value: sum,
                        reason: "matrix is not positive definite",
                    });
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Symmetric positive semidefinite square root via the eigendecomposition.
/// Eigenvalues within rounding of zero are clamped to zero.
pub fn spd_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = ensure_square_symmetric(a)?;
    let (vals, vecs) = jacobi_eigen(a)?;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut root = Array2::<f64>::zeros((n, n));
    for (idx, &lam) in vals.iter().enumerate() {
        if lam < -1e-12 * scale.max(1.0) {
            return Err(Error::InvalidParameter {
                name: "psd_eigenvalue",
                value: lam,
                reason: "matrix is not positive semidefinite",
            });
        }
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                root[[i, j]] += s * vecs[[i, idx]] * vecs[[j, idx]];
            }
        }
    }
    Ok(root)
}

/// Frobenius (Hilbert-Schmidt) norm.
pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `L L^T x = b` given the lower Cholesky factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.nrows();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    // Forward substitution L y = b.
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    // Back substitution L^T x = y.
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn eigen_of_known_two_by_two() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = jacobi_eigen(&a).unwrap();
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1], 3.0, epsilon = 1e-14);
        // Eigenvector for 1 is (1, -1)/sqrt(2) up to sign.
        let r = vecs[[0, 0]] / vecs[[1, 0]];
        assert_abs_diff_eq!(r, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_of_diagonal_sorts() {
        let a = array![[3.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.0]];
        let (vals, _) = jacobi_eigen(&a).unwrap();
        assert_eq!(vals, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn cholesky_of_known_matrix() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(&a).unwrap();
        assert_abs_diff_eq!(l[[0, 0]], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l[[1, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l[[1, 1]], 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(l[[0, 1]], 0.0, epsilon = 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn sqrt_squares_back() {
        let a = array![[2.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.0, 0.3, 0.7]];
        let r = spd_sqrt(&a).unwrap();
        let sq = r.dot(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(sq[[i, j]], a[[i, j]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_solve_known_system() {
        // [[4, 2], [2, 3]] x = (8, 7) has solution (5/4, 3/2).
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[8.0, 7.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.25, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn asymmetric_rejected() {
        let a = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(jacobi_eigen(&a).is_err());
    }

    proptest! {
        #[test]
        fn eigen_reconstructs_random_symmetric(seedling in proptest::collection::vec(-3.0f64..3.0, 6)) {
            // Build a 3x3 symmetric matrix from six free entries.
            let a = array![
                [seedling[0], seedling[3], seedling[4]],
                [seedling[3], seedling[1], seedling[5]],
                [seedling[4], seedling[5], seedling[2]],
            ];
            let (vals, vecs) = jacobi_eigen(&a).unwrap();
            // V diag(vals) V^T must reproduce A.
            let mut rebuilt = Array2::<f64>::zeros((3, 3));
            for (idx, lam) in vals.iter().enumerate() {
                for i in 0..3 {
                    for j in 0..3 {
                        rebuilt[[i, j]] += lam * vecs[[i, idx]] * vecs[[j, idx]];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((rebuilt[[i, j]] - a[[i, j]]).abs() < 1e-10);
                }
            }
            // Columns are orthonormal.
            for p in 0..3 {
                for q in 0..3 {
                    let dot: f64 = (0..3).map(|k| vecs[[k, p]] * vecs[[k, q]]).sum();
                    let target = if p == q { 1.0 } else { 0.0 };
                    prop_assert!((dot - target).abs() < 1e-12);
                }
            }
        }
    }
}
