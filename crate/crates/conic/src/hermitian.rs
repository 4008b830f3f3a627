//! Complex Hermitian variables expressed through the real lifting
//! `X = Xr + i Xi  ->  [[Xr, -Xi], [Xi, Xr]]`, which is PSD exactly when `X` is.
//!
//! A Hermitian `n x n` matrix is parameterised by `n^2` reals, ordered column by column
//! over the upper triangle: the diagonal entry, or `Re X_ij` then `Im X_ij` for `i < j`.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::cones::svec_index;
use crate::ConicError;

type C64 = Complex<f64>;

pub fn hermitian_param_count(n: usize) -> usize {
    n * n
}

pub fn hermitian_from_params(x: &[f64], n: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = C64::new(x[k], 0.0);
                k += 1;
            } else {
                let v = C64::new(x[k], x[k + 1]);
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
                k += 2;
            }
        }
    }
    m
}

pub fn hermitian_to_params(m: &DMatrix<C64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)].re);
            } else {
                let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                out.push(v.re);
                out.push(v.im);
            }
        }
    }
    out
}

/// Coefficients `a` with `Re Tr(A X) = a . params(X)` for Hermitian `X`.
pub fn trace_coefficients(a: &DMatrix<C64>) -> Vec<f64> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(a[(i, i)].re);
            } else {
                // A_ij X_ji + A_ji X_ij with X_ij = p + i q.
                let s = a[(i, j)] + a[(j, i)].conj();
                out.push(s.re);
                out.push(s.im);
            }
        }
    }
    out
}

pub fn lift_hermitian(m: &DMatrix<C64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut l = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            l[(i, j)] = v.re;
            l[(n + i, n + j)] = v.re;
            l[(i, n + j)] = -v.im;
            l[(n + i, j)] = v.im;
        }
    }
    l
}

pub fn unlift_hermitian(l: &DMatrix<f64>) -> DMatrix<C64> {
    let n = l.nrows() / 2;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let re = 0.5 * (l[(i, j)] + l[(n + i, n + j)]);
            let im = 0.5 * (l[(n + i, j)] - l[(i, n + j)]);
            m[(i, j)] = C64::new(re, im);
        }
    }
    m
}

/// Matrix whose column `p` is `svec(lift(E_p))`, where `E_p` is the Hermitian basis
/// element for parameter `p`. Size `(2n)(2n+1)/2 x n^2`.
pub fn lifted_psd_columns(n: usize) -> DMatrix<f64> {
    let rows = (2 * n) * (2 * n + 1) / 2;
    let mut out = DMatrix::zeros(rows, n * n);
    let s2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out[(svec_index(i, i), k)] = 1.0;
                out[(svec_index(n + i, n + i), k)] = 1.0;
                k += 1;
            } else {
                out[(svec_index(i, j), k)] = s2;
                out[(svec_index(n + i, n + j), k)] = s2;
                // Im part: L[i][n+j] = -q, L[j][n+i] = q.
                out[(svec_index(i, n + j), k + 1)] = -s2;
                out[(svec_index(j, n + i), k + 1)] = s2;
                k += 2;
            }
        }
    }
    out
}

/// Eigen-decomposition summary of a Hermitian PSD matrix.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    /// Number of eigenvalues above `eig_tol * max(1, lambda_max)`.
    pub rank: usize,
    /// `n x rank` factor with `F F^H` equal to the retained part of the matrix.
    pub factor: DMatrix<C64>,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors matching `eigenvalues`.
    pub eigenvectors: DMatrix<C64>,
}

/// Projects a Hermitian matrix onto the PSD cone and reports its numerical rank.
pub fn psd_project_rank(m: &DMatrix<C64>, eig_tol: f64) -> Result<PsdFactor, ConicError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(ConicError::Dimension("matrix is not square".into()));
    }
    let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let asym = (m - m.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if asym > 1e-9 * scale {
        return Err(ConicError::NotHermitian(asym / scale));
    }
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    let lmax = eigenvalues.first().copied().unwrap_or(0.0);
    let thresh = eig_tol * lmax.max(1.0);
    let rank = eigenvalues.iter().filter(|&&l| l > thresh).count();
    let mut factor = DMatrix::zeros(n, rank);
    for c in 0..rank {
        let col: DVector<C64> = vecs.column(c) * C64::new(eigenvalues[c].sqrt(), 0.0);
        factor.set_column(c, &col);
    }
    Ok(PsdFactor {
        rank,
        factor,
        eigenvalues,
        eigenvectors: vecs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::mat_to_svec;

    fn sample(n: usize) -> DMatrix<C64> {
        let mut m = DMatrix::from_fn(n, n, |i, j| C64::new((i + 2 * j) as f64 * 0.3 - 1.0, (i as f64 - j as f64) * 0.7));
        m = &m * m.adjoint();
        m
    }

    #[test]
    fn params_round_trip() {
        let m = sample(4);
        let p = hermitian_to_params(&m);
        assert_eq!(p.len(), 16);
        let back = hermitian_from_params(&p, 4);
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn trace_coefficients_match_trace() {
        let x = sample(3);
        let a = sample(3).map(|v| v * C64::new(0.2, 0.0)) + DMatrix::from_fn(3, 3, |i, j| C64::new(0.0, (i as f64) - (j as f64)));
        let coef = trace_coefficients(&a);
        let p = hermitian_to_params(&x);
        let lhs: f64 = coef.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!((lhs - (a * x).trace().re).abs() < 1e-10);
    }

    #[test]
    fn lifted_columns_agree_with_lift() {
        let x = sample(3);
        let p = DVector::from_vec(hermitian_to_params(&x));
        let v = lifted_psd_columns(3) * p;
        let mut expected = vec![0.0; 21];
        mat_to_svec(&lift_hermitian(&x), &mut expected);
        for i in 0..21 {
            assert!((v[i] - expected[i]).abs() < 1e-10);
        }
        assert!((unlift_hermitian(&lift_hermitian(&x)) - x).norm() < 1e-12);
    }

    #[test]
    fn rank_and_factor() {
        let u = DVector::from_fn(4, |i, _| C64::new(1.0 + i as f64, 0.5));
        let m = &u * u.adjoint();
        let f = psd_project_rank(&m, 1e-9).unwrap();
        assert_eq!(f.rank, 1);
        assert!((&f.factor * f.factor.adjoint() - m).norm() < 1e-9);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        assert!(psd_project_rank(&m, 1e-9).is_err());
    }
}
