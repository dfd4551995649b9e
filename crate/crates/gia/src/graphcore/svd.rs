//! Feature-dimension unification via singular value decomposition.
//!
//! One-sided Jacobi SVD: cheap and bitwise-deterministic at desk scale,
//! which the reproducibility contract needs.

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;

/// Thin SVD of an `n×m` matrix.
///
/// Returns `(scaled_left, right, singular_values)` where `scaled_left = U·Σ`
/// is `n×m` and `right` is the `m×m` matrix of right singular vectors, both
/// with columns ordered by descending singular value.
pub fn jacobi_svd(matrix: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    if matrix.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "svd",
            detail: format!("expected rank 2, got {:?}", matrix.shape()),
        });
    }
    if !matrix.is_finite() {
        return Err(Error::Numeric("non-finite entry in SVD input".into()));
    }
    let (n, m) = (matrix.shape()[0], matrix.shape()[1]);
    let mut w = matrix.data().to_vec(); // working copy, columns converge to U·Σ
    let mut v = vec![0.0f64; m * m];
    for j in 0..m {
        v[j * m + j] = 1.0;
    }

    let col_dot = |w: &[f64], p: usize, q: usize| -> f64 {
        let mut acc = 0.0;
        for r in 0..n {
            acc += w[r * m + p] * w[r * m + q];
        }
        acc
    };

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let alpha = col_dot(&w, p, p);
                let beta = col_dot(&w, q, q);
                let gamma = col_dot(&w, p, q);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..n {
                    let wp = w[r * m + p];
                    let wq = w[r * m + q];
                    w[r * m + p] = c * wp - s * wq;
                    w[r * m + q] = s * wp + c * wq;
                }
                for r in 0..m {
                    let vp = v[r * m + p];
                    let vq = v[r * m + q];
                    v[r * m + p] = c * vp - s * vq;
                    v[r * m + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; sort descending (stable).
    let mut sigma: Vec<f64> = (0..m).map(|j| col_dot(&w, j, j).sqrt()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&b)));

    let mut w_sorted = vec![0.0f64; n * m];
    let mut v_sorted = vec![0.0f64; m * m];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            w_sorted[r * m + dst] = w[r * m + src];
        }
        for r in 0..m {
            v_sorted[r * m + dst] = v[r * m + src];
        }
    }
    sigma = order.iter().map(|&j| sigma[j]).collect();

    // Sign convention: largest-magnitude entry of each right singular vector
    // is positive (first index wins ties); flip U and V together.
    for j in 0..m {
        let mut best = 0usize;
        let mut best_mag = -1.0;
        for r in 0..m {
            let mag = v_sorted[r * m + j].abs();
            if mag > best_mag {
                best_mag = mag;
                best = r;
            }
        }
        if v_sorted[best * m + j] < 0.0 {
            for r in 0..m {
                v_sorted[r * m + j] = -v_sorted[r * m + j];
            }
            for r in 0..n {
                w_sorted[r * m + j] = -w_sorted[r * m + j];
            }
        }
    }

    Ok((
        Tensor::from_raw(vec![n, m], w_sorted),
        Tensor::from_raw(vec![m, m], v_sorted),
        sigma,
    ))
}

/// Project an `n×d_i` feature matrix to `n×d_o` as `U_k·Σ_k`, truncated at
/// `min(d_o, rank)` and zero-padded when `d_i < d_o`.
pub fn unify_features(features: &Tensor, d_o: usize) -> Result<Tensor> {
    if d_o == 0 {
        return Err(Error::Config("target feature dimension must be positive".into()));
    }
    let (n, d_i) = (features.shape()[0], features.shape()[1]);
    if n == 0 {
        return Err(Error::Validation("empty feature matrix".into()));
    }
    let (scaled_left, _, sigma) = jacobi_svd(features)?;
    let rank_tol = sigma.first().copied().unwrap_or(0.0) * 1e-12 * n.max(d_i) as f64;
    let mut out = vec![0.0f64; n * d_o];
    for j in 0..d_o.min(d_i) {
        if sigma[j] <= rank_tol {
            break; // below numerical rank: leave exact zeros
        }
        for r in 0..n {
            out[r * d_o + j] = scaled_left.data()[r * d_i + j];
        }
    }
    Ok(Tensor::from_raw(vec![n, d_o], out))
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(matrix: &Tensor) -> Result<f64> {
    let (_, _, sigma) = jacobi_svd(matrix)?;
    Ok(sigma.first().copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(t: &Tensor) -> Tensor {
        t.matmul(&t.transpose().unwrap()).unwrap()
    }

    #[test]
    fn full_rank_same_dim_preserves_inner_products() {
        let x = Tensor::new(vec![3, 3], vec![2.0, 0.1, -1.0, 0.3, 1.5, 0.2, -0.7, 0.4, 1.1]).unwrap();
        let u = unify_features(&x, 3).unwrap();
        let gx = gram(&x);
        let gu = gram(&u);
        for (a, b) in gx.data().iter().zip(gu.data()) {
            assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn rank_one_matrix_zero_pads_trailing_columns() {
        // Rows are multiples of one vector: rank 1.
        let x = Tensor::new(vec![4, 2], vec![1.0, 2.0, 2.0, 4.0, -1.0, -2.0, 0.5, 1.0]).unwrap();
        let u = unify_features(&x, 3).unwrap();
        for r in 0..4 {
            assert_eq!(u.at(r, 1), 0.0);
            assert_eq!(u.at(r, 2), 0.0);
        }
    }

    #[test]
    fn narrow_input_zero_pads() {
        let x = Tensor::new(vec![2, 1], vec![3.0, -4.0]).unwrap();
        let u = unify_features(&x, 3).unwrap();
        assert_eq!(u.shape(), &[2, 3]);
        assert_eq!(u.at(0, 1), 0.0);
        assert_eq!(u.at(1, 2), 0.0);
    }

    #[test]
    fn reconstruction_from_factors() {
        let x = Tensor::new(
            vec![4, 3],
            vec![0.5, 1.2, -0.3, 2.0, 0.1, 0.9, -1.1, 0.6, 0.4, 0.2, -0.8, 1.5],
        )
        .unwrap();
        let (us, v, _) = jacobi_svd(&x).unwrap();
        let recon = us.matmul(&v.transpose().unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(recon.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect()).unwrap();
        let a = unify_features(&x, 2).unwrap();
        let b = unify_features(&x, 2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = Tensor::zeros(&[2, 2]);
        x.data_mut()[0] = f64::INFINITY;
        assert!(unify_features(&x, 2).is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = Tensor::new(vec![2, 2], vec![3.0, 0.0, 0.0, -5.0]).unwrap();
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-12);
    }
}
