//! Small dense helpers on top of nalgebra: symmetric pseudo-inverses, PSD
//! square roots and Frobenius products with a metric.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue cutoff used by every pseudo-inverse in the crate.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Spectral functions of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct SymSpectral {
    pub pinv: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub pinv_sqrt: DMatrix<f64>,
    /// Eigenvalues dropped by the cutoff.
    pub truncated: usize,
}

impl SymSpectral {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        if n == 0 {
            let z = DMatrix::zeros(0, 0);
            return Self { pinv: z.clone(), sqrt: z.clone(), pinv_sqrt: z, truncated: 0 };
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
        let cutoff = PINV_RELATIVE_CUTOFF * lmax;
        let mut inv = DVector::zeros(n);
        let mut root = DVector::zeros(n);
        let mut inv_root = DVector::zeros(n);
        let mut truncated = 0;
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            // round-off negatives are clamped
            root[k] = l.max(0.0).sqrt();
            if l > cutoff && l > 0.0 {
                inv[k] = 1.0 / l;
                inv_root[k] = 1.0 / l.sqrt();
            } else {
                truncated += 1;
            }
        }
        let q = &eig.eigenvectors;
        let build = |d: &DVector<f64>| q * DMatrix::from_diagonal(d) * q.transpose();
        Self { pinv: build(&inv), sqrt: build(&root), pinv_sqrt: build(&inv_root), truncated }
    }
}

pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    SymSpectral::new(m).pinv
}

/// Frobenius inner product `<A, B> = tr(Aᵀ B)`.
pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Squared Frobenius semi-norm `‖M‖²_Z = <M, Z M>`.
pub fn metric_norm_sq(m: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    frob(m, &(z * m))
}

pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

/// Relative Frobenius distance with an absolute floor on the reference norm.
pub fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>, floor: f64) -> f64 {
    (a - reference).norm() / reference.norm().max(floor)
}

pub fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_singular_softmax_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        let s = SymSpectral::new(&h);
        assert_eq!(s.truncated, 1);
        // H H⁺ H = H
        let back = &h * &s.pinv * &h;
        assert!((back - &h).norm() < 1e-14);
        let sq = &s.sqrt * &s.sqrt;
        assert!((sq - &h).norm() < 1e-14);
    }

    #[test]
    fn metric_norm_matches_trace_form() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let z = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let direct = (m.transpose() * &z * &m).trace();
        assert!((metric_norm_sq(&m, &z) - direct).abs() < 1e-12);
    }
}
