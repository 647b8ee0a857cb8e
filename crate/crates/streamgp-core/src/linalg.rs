//! Dense linear-algebra helpers: jittered Cholesky factorization and the
//! solve/log-det utilities built on top of it.
//!
//! Every positive-definite solve in this crate goes through
//! [`JitteredChol`]; explicit matrix inverses are never formed.

use alloc::format;
use alloc::string::ToString;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::math;

/// How many times the jitter is escalated (multiplied by 10) before a
/// factorization attempt is abandoned.
pub const JITTER_RETRIES: usize = 3;

/// Cholesky factorization of `A + jitter * I` with automatic escalation.
///
/// The first attempt factorizes the matrix as given. On failure, `base_jitter`
/// is added to the diagonal and escalated by factors of 10 up to
/// [`JITTER_RETRIES`] times.
pub struct JitteredChol {
    chol: Cholesky<f64, Dyn>,
    /// Jitter that was actually added to the diagonal (0.0 if none).
    pub jitter_used: f64,
}

impl JitteredChol {
    /// Factorize a symmetric positive-(semi)definite matrix.
    ///
    /// `base_jitter` should already be scaled to the magnitude of the matrix
    /// (e.g. `1e-8 * output_scale_sq` for kernel matrices).
    pub fn new(mat: &DMatrix<f64>, base_jitter: f64) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        if let Some(chol) = Cholesky::new(mat.clone()) {
            return Ok(Self {
                chol,
                jitter_used: 0.0,
            });
        }
        let mut jitter = base_jitter.max(f64::MIN_POSITIVE);
        for _ in 0..=JITTER_RETRIES {
            let mut jittered = mat.clone();
            for i in 0..jittered.nrows() {
                jittered[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(jittered) {
                return Ok(Self {
                    chol,
                    jitter_used: jitter,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(format!(
            "Cholesky failed for a {}x{} matrix even with jitter {:.3e}",
            mat.nrows(),
            mat.ncols(),
            jitter / 10.0
        )))
    }

    /// Dimension of the factored matrix.
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Solve `A x = b` for a vector right-hand side.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solve `A X = B` for a matrix right-hand side.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} B` where `A = L L^T`.
    pub fn forward_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol
            .l_dirty()
            .solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `log det A`, summed from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        let mut acc = 0.0;
        for i in 0..l.nrows() {
            acc += math::ln(l[(i, i)]);
        }
        2.0 * acc
    }

    /// Lower-triangular factor `L` (cloned).
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Borrow the internal factor; entries above the diagonal are garbage.
    pub fn l_dirty(&self) -> &DMatrix<f64> {
        self.chol.l_dirty()
    }
}

/// Eigenvalue-floored solver for symmetric PSD matrices whose small
/// eigenvalues are sampling noise (Monte-Carlo feature Grams): directions
/// below `rel_floor * lambda_max` are dropped rather than amplified.
pub struct FlooredEigenSolver {
    vectors: DMatrix<f64>,
    inv_eigs: DVector<f64>,
}

impl FlooredEigenSolver {
    /// Decompose `mat` and floor its spectrum at `rel_floor * lambda_max`.
    pub fn new(mat: &DMatrix<f64>, rel_floor: f64) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        let eig = mat.clone().symmetric_eigen();
        let lam_max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        if lam_max <= 0.0 {
            return Err(Error::Numerical("matrix has no positive eigenvalues".to_string()));
        }
        let floor = rel_floor * lam_max;
        let inv_eigs = eig.eigenvalues.map(|l| if l > floor { 1.0 / l } else { 0.0 });
        Ok(FlooredEigenSolver {
            vectors: eig.eigenvectors,
            inv_eigs,
        })
    }

    /// Pseudo-solve `A X = B` on the retained subspace.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut proj = self.vectors.transpose() * b;
        for i in 0..proj.nrows() {
            let s = self.inv_eigs[i];
            proj.row_mut(i).scale_mut(s);
        }
        &self.vectors * proj
    }

    /// Pseudo-solve for a vector right-hand side.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut proj = self.vectors.transpose() * b;
        for i in 0..proj.len() {
            proj[i] *= self.inv_eigs[i];
        }
        &self.vectors * proj
    }
}

/// Factorize a PSD matrix with a base jitter scaled to its diagonal.
pub fn psd_chol(mat: &DMatrix<f64>) -> Result<JitteredChol> {
    let n = mat.nrows().max(1) as f64;
    let scale = (mat.diagonal().sum() / n).abs().max(f64::MIN_POSITIVE);
    JitteredChol::new(mat, 1e-8 * scale)
}

/// Replace `A` by `(A + A^T) / 2`.
pub fn symmetrize(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
}

/// Maximum absolute asymmetry `max |A - A^T|`.
pub fn asymmetry(mat: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            worst = worst.max(math::abs(mat[(i, j)] - mat[(j, i)]));
        }
    }
    worst
}

/// Log-density of `N(x; mean, cov)` where `cov` is factored already.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &JitteredChol) -> f64 {
    let n = x.len() as f64;
    let diff = x - mean;
    let alpha = cov.solve_vec(&diff);
    -0.5 * (n * math::ln(2.0 * core::f64::consts::PI) + cov.log_det() + diff.dot(&alpha))
}

/// Check that every entry of a slice is finite.
pub fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite value in {what}")))
    }
}

/// Frobenius-norm relative error `|a - b|_F / |b|_F`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        return a.norm();
    }
    (a - b).norm() / denom
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(mat: &DMatrix<f64>) -> Result<f64> {
    let sym = mat.clone().symmetric_eigen();
    sym.eigenvalues
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::InvalidInput("empty matrix".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_escalation_recovers_semidefinite() {
        // Rank-1 matrix: plain Cholesky fails, jitter succeeds.
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mat = &v * v.transpose();
        let chol = JitteredChol::new(&mat, 1e-10).unwrap();
        assert!(chol.jitter_used > 0.0);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let x = chol.solve_vec(&b);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn log_det_matches_known_value() {
        let mat = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0]));
        let chol = JitteredChol::new(&mat, 0.0).unwrap();
        assert!((chol.log_det() - (24.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_log_density_standard_normal() {
        let mat = DMatrix::identity(1, 1);
        let chol = JitteredChol::new(&mat, 0.0).unwrap();
        let x = DVector::from_vec(vec![0.0]);
        let mean = DVector::zeros(1);
        let expect = -0.5 * (2.0 * core::f64::consts::PI).ln();
        assert!((gaussian_log_density(&x, &mean, &chol) - expect).abs() < 1e-14);
    }
}
