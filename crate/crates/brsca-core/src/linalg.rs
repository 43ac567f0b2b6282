//! Small dense linear-algebra helpers used throughout the solver.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::Error;
use crate::Result;

/// Rank tolerance for the eigenvalue (PBH) stabilizability/detectability tests.
pub const PBH_TOL: f64 = 1e-8;

/// Condition-number ceiling for innovation matrices; beyond this the solve is
/// reported as a numerical failure instead of being silently regularized.
pub const COND_LIMIT: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Minimum eigenvalue together with an eigenvector attaining it.
pub fn min_eigenpair_sym(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let (idx, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("eigen decomposition of empty matrix");
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Cheap PSD check with slack: succeeds iff `m + tol*I` admits a Cholesky
/// factorization. Used on hot paths where a full eigen solve would dominate.
pub fn is_psd_within(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    let shifted = symmetrize(m) + DMatrix::identity(n, n) * tol;
    Cholesky::new(shifted).is_some()
}

/// Symmetric PSD square root via eigen decomposition; negative eigenvalues
/// within `-1e-10` are clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-10 {
            return Err(Error::invalid(format!(
                "matrix is not PSD (eigenvalue {v:.3e})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&vals);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, z| acc.max(z.norm()))
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn complex_rank(m: &DMatrix<Complex64>, tol: f64) -> usize {
    m.clone().svd(false, false).rank(tol)
}

/// PBH test: `(A, B)` is stabilizable iff `[A - zI, B]` has full row rank for
/// every eigenvalue `z` of `A` with `|z| >= 1`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let ac = to_complex(a);
    let bc = to_complex(b);
    for z in a.complex_eigenvalues().iter() {
        if z.norm() < 1.0 {
            continue;
        }
        let mut pencil = DMatrix::<Complex64>::zeros(n, n + b.ncols());
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * *z;
        pencil.view_mut((0, 0), (n, n)).copy_from(&shifted);
        pencil.view_mut((0, n), (n, b.ncols())).copy_from(&bc);
        if complex_rank(&pencil, PBH_TOL) < n {
            return false;
        }
    }
    true
}

/// PBH test on the transposed pair: `(A, C)` detectable iff `(A^T, C^T)`
/// stabilizable.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    is_stabilizable(&a.transpose(), &c.transpose())
}

/// Symmetric positive-definite factorization of an innovation matrix with a
/// conditioning gate. The condition estimate comes from the squared ratio of
/// the extreme Cholesky diagonal entries.
pub struct SpdFactor {
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, context: &str) -> Result<Self> {
        let sym = symmetrize(m);
        let chol = Cholesky::new(sym)
            .ok_or_else(|| Error::numerical(format!("{context}: matrix is not positive definite")))?;
        let diag = chol.l_dirty().diagonal();
        let dmax = diag.iter().fold(0.0f64, |a, &b| a.max(b));
        let dmin = diag.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let cond = (dmax / dmin).powi(2);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::numerical(format!(
                "{context}: condition estimate {cond:.3e} exceeds {COND_LIMIT:.1e}"
            )));
        }
        Ok(SpdFactor { chol })
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
