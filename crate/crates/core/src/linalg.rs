//! Dense symmetric eigendecomposition (cyclic Jacobi) and 2x2 helpers.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

/// Eigen-pairs of a symmetric matrix, eigenvalues sorted descending.
///
/// `vectors` is row-major `n x n`; column `j` is the unit eigenvector of
/// `values[j]`, sign-fixed so that its largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl SymmetricEigen {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.n + j]).collect()
    }
}

/// Cyclic Jacobi rotation sweeps until the off-diagonal Frobenius norm falls
/// below `tol` times the matrix Frobenius norm.
///
/// `a` is row-major `n x n` and must be symmetric.
pub fn jacobi_eigen(a: &[f64], n: usize, tol: f64) -> SymmetricEigen {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = Float::sqrt(m.iter().map(|x| x * x).sum::<f64>());
    if frob > 0.0 {
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += 2.0 * m[p * n + q] * m[p * n + q];
                }
            }
            if Float::sqrt(off) <= tol * frob {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = m[p * n + p];
                    let aqq = m[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = Float::signum(theta) / (Float::abs(theta) + Float::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / Float::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k * n + p];
                        let mkq = m[k * n + q];
                        m[k * n + p] = c * mkp - s * mkq;
                        m[k * n + q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p * n + k];
                        let mqk = m[q * n + k];
                        m[p * n + k] = c * mpk - s * mqk;
                        m[q * n + k] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let mut best = 0;
        for i in 0..n {
            if Float::abs(v[i * n + src]) > Float::abs(v[best * n + src]) {
                best = i;
            }
        }
        let sign = if v[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[i * n + col] = sign * v[i * n + src];
        }
    }
    SymmetricEigen { n, values, vectors }
}

/// Eigenvalues `(l1 >= l2)` and the angle of the `l1` eigenvector for the
/// symmetric matrix `[[a, b], [b, c]]`.
pub fn eigen_2x2(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let mean = 0.5 * (a + c);
    let diff = 0.5 * (a - c);
    let r = Float::sqrt(diff * diff + b * b);
    let angle = 0.5 * Float::atan2(2.0 * b, a - c);
    (mean + r, mean - r, angle)
}
