use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use super::DynamicsError;
use crate::linalg::{self, ComplexMatrix};

/// Inputs whose anti-Hermitian part exceeds this are rejected.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// Eigendecomposition `H = V·diag(λ)·V†` of a Hermitian matrix together with
/// the slice propagator `exp(−i·H·s)` built from it.
#[derive(Debug, Clone)]
pub struct SliceExp {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
    pub duration: f64,
    pub propagator: ComplexMatrix,
}

impl SliceExp {
    pub fn new(h: &ComplexMatrix, duration: f64) -> Result<SliceExp, DynamicsError> {
        let err = linalg::hermiticity_error(h);
        if err > HERMITIAN_TOL {
            return Err(DynamicsError::NonHermitian(err));
        }
        // symmetrize so the solver sees an exactly Hermitian matrix
        let sym = (h + h.adjoint()) * linalg::c(0.5, 0.0);
        let eig = SymmetricEigen::new(sym);
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let v = eig.eigenvectors;
        let phases: Vec<Complex64> = eigenvalues
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l * duration))
            .collect();
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        let propagator = scaled * v.adjoint();
        Ok(SliceExp { eigenvalues, eigenvectors: v, duration, propagator })
    }

    /// Directional derivative of `exp(−i·H·s)` along `dh`:
    /// `V·[(V†·dH·V) ∘ Φ]·V†` with the divided-difference kernel
    /// `Φ_jk = (e^{−iλ_j s} − e^{−iλ_k s})/(λ_j − λ_k)`.
    pub fn derivative(&self, dh: &ComplexMatrix) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let mut inner = v.adjoint() * dh * v;
        let s = self.duration;
        let n = self.eigenvalues.len();
        for j in 0..n {
            for k in 0..n {
                inner[(j, k)] *= divided_difference(self.eigenvalues[j] * s, self.eigenvalues[k] * s) * s;
            }
        }
        v * inner * v.adjoint()
    }

    /// `Tr(W · ∂U)` for the derivative along `dh`, without forming `∂U`.
    /// `w_eig` must be `V†·W·V` (see [`SliceExp::to_eigenbasis`]).
    pub fn trace_derivative(&self, w_eig: &ComplexMatrix, dh: &ComplexMatrix) -> Complex64 {
        let x = self.to_eigenbasis(dh);
        let s = self.duration;
        let n = self.eigenvalues.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            for k in 0..n {
                let phi = divided_difference(self.eigenvalues[j] * s, self.eigenvalues[k] * s) * s;
                acc += w_eig[(k, j)] * x[(j, k)] * phi;
            }
        }
        acc
    }

    /// `V†·A·V`.
    pub fn to_eigenbasis(&self, a: &ComplexMatrix) -> ComplexMatrix {
        self.eigenvectors.adjoint() * a * &self.eigenvectors
    }
}

/// `(e^{−i a} − e^{−i b})/(a − b)`, stable for `a ≈ b`.
fn divided_difference(a: f64, b: f64) -> Complex64 {
    let mean = 0.5 * (a + b);
    let half = 0.5 * (a - b);
    let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
    Complex64::from_polar(1.0, -mean) * Complex64::new(0.0, -sinc)
}

/// `exp(−i·H·s)` for Hermitian `H`, via eigendecomposition.
pub fn matrix_exp_hermitian_skew(h: &ComplexMatrix, s: f64) -> Result<ComplexMatrix, DynamicsError> {
    SliceExp::new(h, s).map(|e| e.propagator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, identity, max_abs_diff, pauli_x, pauli_z, unitarity_error, I};
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn sigma_x_quarter() {
        // exp(−iθσx) = cos θ I − i sin θ σx; θ = π/2 gives −iσx
        let u = matrix_exp_hermitian_skew(&pauli_x(), FRAC_PI_2).unwrap();
        assert!(max_abs_diff(&u, &(pauli_x() * (-I))) < 1e-15);
    }

    #[test]
    fn zero_and_sigma_z() {
        let u = matrix_exp_hermitian_skew(&linalg::zeros(3), 1.3).unwrap();
        assert!(max_abs_diff(&u, &identity(3)) < 1e-15);
        let u = matrix_exp_hermitian_skew(&pauli_z(), PI).unwrap();
        assert!(max_abs_diff(&u, &(identity(2) * c(-1.0, 0.0))) < 1e-15);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = linalg::sigma_plus();
        assert!(matches!(matrix_exp_hermitian_skew(&m, 1.0), Err(DynamicsError::NonHermitian(_))));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = linalg::from_rows(2, &[c(0.3, 0.0), c(0.2, -0.1), c(0.2, 0.1), c(-0.7, 0.0)]);
        let dh = linalg::from_rows(2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let s = 0.7;
        let analytic = SliceExp::new(&h, s).unwrap().derivative(&dh);
        let eps = 1e-6;
        let plus = matrix_exp_hermitian_skew(&(&h + &dh * c(eps, 0.0)), s).unwrap();
        let minus = matrix_exp_hermitian_skew(&(&h - &dh * c(eps, 0.0)), s).unwrap();
        let fd = (plus - minus) * c(0.5 / eps, 0.0);
        assert!(max_abs_diff(&analytic, &fd) < 1e-9);
    }

    #[test]
    fn trace_derivative_agrees_with_full_derivative() {
        let h = linalg::from_rows(2, &[c(0.3, 0.0), c(0.2, -0.1), c(0.2, 0.1), c(-0.7, 0.0)]);
        let w = linalg::from_rows(2, &[c(0.1, 0.4), c(-1.0, 0.2), c(0.5, 0.0), c(0.3, -0.3)]);
        let e = SliceExp::new(&h, 0.9).unwrap();
        let dh = linalg::pauli_y();
        let full = linalg::trace_of_product(&w, &e.derivative(&dh));
        let fast = e.trace_derivative(&e.to_eigenbasis(&w), &dh);
        assert!((full - fast).norm() < 1e-14);
    }

    #[test]
    fn derivative_degenerate_spectrum() {
        // H = 0: derivative is −i·s·dH exactly
        let dh = pauli_x();
        let d = SliceExp::new(&linalg::zeros(2), 0.4).unwrap().derivative(&dh);
        assert!(max_abs_diff(&d, &(dh * c(0.0, -0.4))) < 1e-15);
    }

    #[test]
    fn unitary_output() {
        let h = linalg::from_rows(2, &[c(1.3, 0.0), c(0.2, -2.1), c(0.2, 2.1), c(-0.7, 0.0)]);
        assert!(unitarity_error(&matrix_exp_hermitian_skew(&h, 13.0).unwrap()) < 1e-12);
    }
}
