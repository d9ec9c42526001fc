//! Dense symmetric eigensolver wrapper shared by the operator and ensemble code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{BiqmError, Result};

const MAX_SWEEPS: usize = 10_000;

/// Off-diagonal size of `VᵀHV` (relative to `max|H|`) above which the QR
/// result is polished with Jacobi rotations.
const REFINE_THRESHOLD: f64 = 1e-13;
const MAX_JACOBI_SWEEPS: usize = 8;

/// Eigendecomposition of a real symmetric matrix with ascending eigenvalues.
///
/// Eigenvector signs are fixed so that the entry of largest magnitude in each
/// column is positive, which makes the output independent of the solver's
/// internal sign choices.
pub(crate) fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| BiqmError::NumericalFailure(format!("symmetric eigensolver did not converge (n = {n})")))?;
    let (eigenvalues, eigenvectors) = refine(m, eig.eigenvalues, eig.eigenvectors);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));

    let values = DVector::from_iterator(n, order.iter().map(|&k| eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let src = eigenvectors.column(k);
        let mut pivot = 0;
        for i in 1..n {
            if src[i].abs() > src[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if src[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, col)] = sign * src[i];
        }
    }
    Ok((values, vectors))
}

/// Largest absolute off-diagonal entry.
fn max_off_diagonal(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                worst = worst.max(a[(i, j)].abs());
            }
        }
    }
    worst
}

/// The implicit-QR solver occasionally stops with residuals near `1e-9·‖H‖`.
/// When `VᵀHV` is not diagonal to working precision, cyclic Jacobi sweeps on
/// it (quadratically convergent from a nearly diagonal start) restore full
/// accuracy.
fn refine(m: &DMatrix<f64>, values: DVector<f64>, mut vectors: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let mut a = vectors.transpose() * m * &vectors;
    if max_off_diagonal(&a) <= REFINE_THRESHOLD * scale {
        return (values, vectors);
    }
    for _ in 0..MAX_JACOBI_SWEEPS {
        if max_off_diagonal(&a) <= f64::EPSILON * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (vectors[(k, p)], vectors[(k, q)]);
                    vectors[(k, p)] = c * vkp - s * vkq;
                    vectors[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diagonal(), vectors)
}

/// Largest absolute entry.
pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
