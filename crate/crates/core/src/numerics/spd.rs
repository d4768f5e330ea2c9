//! Symmetric positive semi-definite matrices and their square roots.
//!
//! The square root goes through a cyclic Jacobi eigendecomposition. Sample
//! covariances are often numerically singular, so eigenvalues in
//! [-NEG_EIG_TOL, 0) are clamped to zero; anything more negative is rejected.

use crate::error::{Error, Result};

use super::matrix::DenseMatrix;

/// Absolute tolerance on |A - A^T| entries.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues no more negative than this are treated as numerical zeros.
pub const NEG_EIG_TOL: f64 = 1e-10;

/// Symmetric PSD matrix (validated at construction).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    mat: DenseMatrix,
}

impl SpdMatrix {
    /// Validates squareness and symmetry. Eigenvalue sign is checked lazily
    /// by the operations that decompose the matrix.
    pub fn new(mat: DenseMatrix) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(Error::shape(format!(
                "SPD matrix must be square, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        for i in 0..mat.rows() {
            for j in (i + 1)..mat.cols() {
                let d = (mat.get(i, j) - mat.get(j, i)).abs();
                if d > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "matrix asymmetric at ({i},{j}): |delta| = {d:.3e} > {SYMMETRY_TOL:.0e}"
                    )));
                }
            }
        }
        Ok(SpdMatrix { mat })
    }

    /// Builds from a possibly slightly asymmetric matrix by averaging with its
    /// transpose first. Used where fp round-off in a product would otherwise
    /// trip the symmetry gate.
    pub fn new_symmetrized(mat: DenseMatrix) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(Error::shape("SPD matrix must be square"));
        }
        let n = mat.rows();
        let mut sym = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                sym.set(i, j, 0.5 * (mat.get(i, j) + mat.get(j, i)));
            }
        }
        SpdMatrix::new(sym)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix {
            mat: DenseMatrix::identity(n),
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = DenseMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        SpdMatrix { mat: m }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.mat.get(i, i)).sum()
    }

    /// Eigendecomposition via cyclic Jacobi rotations.
    ///
    /// Returns (eigenvalues, eigenvectors) with eigenvectors in the columns of
    /// the returned matrix, so `self = V diag(w) V^T`.
    pub fn eigen(&self) -> (Vec<f64>, DenseMatrix) {
        let n = self.dim();
        let mut a = self.mat.clone();
        let mut v = DenseMatrix::identity(n);
        if n <= 1 {
            let w = if n == 1 { vec![a.get(0, 0)] } else { vec![] };
            return (w, v);
        }

        let scale = self.mat.frobenius_norm().max(1e-300);
        let tol = 1e-15 * scale;

        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a.get(i, j) * a.get(i, j);
                }
            }
            if (2.0 * off).sqrt() <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.get(p, q);
                    if apq.abs() <= tol / (n as f64) {
                        continue;
                    }
                    let app = a.get(p, p);
                    let aqq = a.get(q, q);
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;

                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }

        let w: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        (w, v)
    }

    /// Principal square root: `S` with `S * S = self` (up to round-off).
    /// Eigenvalues within [-NEG_EIG_TOL, 0) clamp to zero; larger negativity
    /// is an invalid-argument error.
    pub fn sqrt(&self) -> Result<SpdMatrix> {
        let n = self.dim();
        let (w, v) = self.eigen();
        let mut sqrt_w = Vec::with_capacity(n);
        for &lambda in &w {
            if lambda < -NEG_EIG_TOL {
                return Err(Error::invalid(format!(
                    "matrix is not positive semi-definite: eigenvalue {lambda:.3e}"
                )));
            }
            sqrt_w.push(lambda.max(0.0).sqrt());
        }
        // S = V diag(sqrt_w) V^T, assembled symmetrically.
        let mut s = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, &sw) in sqrt_w.iter().enumerate() {
                    acc += v.get(i, k) * sw * v.get(j, k);
                }
                s.set(i, j, acc);
                s.set(j, i, acc);
            }
        }
        Ok(SpdMatrix { mat: s })
    }
}

/// Random SPD matrix A A^T / dim + eps I, for tests and calibration.
pub fn random_spd(dim: usize, rng: &mut super::rng::Rng) -> SpdMatrix {
    let a = DenseMatrix::random_normal(dim, dim, 1.0, rng);
    let mut m = a.matmul_a_bt(&a);
    m.scale(1.0 / dim as f64);
    for i in 0..dim {
        let v = m.get(i, i) + 1e-9;
        m.set(i, i, v);
    }
    SpdMatrix::new_symmetrized(m).expect("A A^T is symmetric")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    #[test]
    fn sqrt_identity_is_identity() {
        let s = SpdMatrix::identity(4).sqrt().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s.matrix().get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sqrt_of_diagonal() {
        let s = SpdMatrix::from_diag(&[4.0, 9.0]).sqrt().unwrap();
        assert!((s.matrix().get(0, 0) - 2.0).abs() < 1e-12);
        assert!((s.matrix().get(1, 1) - 3.0).abs() < 1e-12);
        assert!(s.matrix().get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn sqrt_reconstructs_random_spd() {
        let mut rng = Rng::from_seed(7);
        let m = random_spd(8, &mut rng);
        let s = m.sqrt().unwrap();
        let recon = s.matrix().matmul(s.matrix());
        let mut diff = recon.clone();
        for i in 0..8 {
            for j in 0..8 {
                diff.set(i, j, recon.get(i, j) - m.matrix().get(i, j));
            }
        }
        assert!(diff.frobenius_norm() < 1e-8, "{}", diff.frobenius_norm());
    }

    #[test]
    fn sqrt_reconstruction_up_to_dim_64() {
        for (seed, dim) in [(1u64, 16usize), (2, 32), (3, 64)] {
            let mut rng = Rng::from_seed(seed);
            let m = random_spd(dim, &mut rng);
            let s = m.sqrt().unwrap();
            let recon = s.matrix().matmul(s.matrix());
            let mut err = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let d = recon.get(i, j) - m.matrix().get(i, j);
                    err += d * d;
                }
            }
            let err = err.sqrt();
            assert!(err < 1e-8 * dim as f64, "dim {dim}: {err:.3e}");
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DenseMatrix::new(2, 2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(SpdMatrix::new(m).is_err());
    }

    #[test]
    fn negative_definite_rejected_by_sqrt() {
        let m = SpdMatrix::from_diag(&[1.0, -0.5]);
        assert!(m.sqrt().is_err());
    }

    #[test]
    fn tiny_negative_eigenvalue_clamps() {
        let m = SpdMatrix::from_diag(&[1.0, -5e-11]);
        let s = m.sqrt().unwrap();
        assert_eq!(s.matrix().get(1, 1), 0.0);
    }

    #[test]
    fn eigen_reproduces_matrix() {
        let mut rng = Rng::from_seed(13);
        let m = random_spd(6, &mut rng);
        let (w, v) = m.eigen();
        // V diag(w) V^T must reproduce the input.
        let n = 6;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += v.get(i, k) * w[k] * v.get(j, k);
                }
                assert!((acc - m.matrix().get(i, j)).abs() < 1e-10);
            }
        }
    }
}
