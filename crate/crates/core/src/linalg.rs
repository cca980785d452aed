//! Small dense linear algebra on row-major `Vec<f64>` matrices.
//!
//! Everything in this crate works with matrices of side at most `n + 1` for
//! configuration dimension `n <= 16`, so plain partial-pivot elimination is
//! all that is needed.

use alloc::vec;
use alloc::vec::Vec;

/// Determinant by LU with partial pivoting. `m` is consumed as scratch.
pub fn det_in_place(m: &mut [f64], dim: usize) -> f64 {
    debug_assert_eq!(m.len(), dim * dim);
    let mut det = 1.0;
    for col in 0..dim {
        let mut pivot = col;
        let mut best = m[col * dim + col].abs();
        for row in col + 1..dim {
            let v = m[row * dim + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..dim {
                m.swap(col * dim + k, pivot * dim + k);
            }
            det = -det;
        }
        let diag = m[col * dim + col];
        det *= diag;
        for row in col + 1..dim {
            let factor = m[row * dim + col] / diag;
            m[row * dim + col] = 0.0;
            for k in col + 1..dim {
                m[row * dim + k] -= factor * m[col * dim + k];
            }
        }
    }
    det
}

/// Determinant of a row-major matrix.
pub fn det(m: &[f64], dim: usize) -> f64 {
    let mut scratch = m.to_vec();
    det_in_place(&mut scratch, dim)
}

/// Inverse by Gauss-Jordan with partial pivoting; `None` when singular.
pub fn invert(m: &[f64], dim: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(m.len(), dim * dim);
    let mut a = m.to_vec();
    let mut inv = vec![0.0; dim * dim];
    for i in 0..dim {
        inv[i * dim + i] = 1.0;
    }
    for col in 0..dim {
        let mut pivot = col;
        let mut best = a[col * dim + col].abs();
        for row in col + 1..dim {
            let v = a[row * dim + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return None;
        }
        if pivot != col {
            for k in 0..dim {
                a.swap(col * dim + k, pivot * dim + k);
                inv.swap(col * dim + k, pivot * dim + k);
            }
        }
        let diag = a[col * dim + col];
        for k in 0..dim {
            a[col * dim + k] /= diag;
            inv[col * dim + k] /= diag;
        }
        for row in 0..dim {
            if row == col {
                continue;
            }
            let factor = a[row * dim + col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..dim {
                a[row * dim + k] -= factor * a[col * dim + k];
                inv[row * dim + k] -= factor * inv[col * dim + k];
            }
        }
    }
    Some(inv)
}

/// Cholesky feasibility check: true iff the matrix is symmetric (to `sym_tol`)
/// and positive-definite.
pub fn is_positive_definite(m: &[f64], dim: usize, sym_tol: f64) -> bool {
    debug_assert_eq!(m.len(), dim * dim);
    for i in 0..dim {
        for j in i + 1..dim {
            if (m[i * dim + j] - m[j * dim + i]).abs() > sym_tol {
                return false;
            }
        }
    }
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = m[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                l[i * dim + i] = libm::sqrt(sum);
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    true
}

/// Matrix-vector product `m * v` for a row-major square matrix.
pub fn mat_vec(m: &[f64], v: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for i in 0..dim {
        let mut acc = 0.0;
        for j in 0..dim {
            acc += m[i * dim + j] * v[j];
        }
        out[i] = acc;
    }
    out
}
