//! Dense complex matrix helpers shared by every stage of the pipeline.
//!
//! Matrices are small (at most 16×16 under the default qubit cap), so plain
//! dense `nalgebra` storage is used everywhere.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Dense square complex matrix: unitaries, Hamiltonians and density matrices.
pub type ComplexMatrix = DMatrix<Complex64>;

/// Dense complex column vector (pure states).
pub type StateVector = nalgebra::DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

pub fn zeros(dim: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(dim, dim)
}

/// Builds a matrix from row-major entries.
pub fn from_rows(dim: usize, entries: &[Complex64]) -> ComplexMatrix {
    assert_eq!(entries.len(), dim * dim, "entry count must be dim²");
    ComplexMatrix::from_row_slice(dim, dim, entries)
}

pub fn dagger(m: &ComplexMatrix) -> ComplexMatrix {
    m.adjoint()
}

/// Largest entry modulus.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// ‖A − A†‖_max
pub fn hermiticity_error(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut err = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            err = err.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    err
}

/// ‖U†U − I‖_max
pub fn unitarity_error(u: &ComplexMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    let prod = u.adjoint() * u;
    max_abs_diff(&prod, &identity(u.nrows()))
}

pub fn trace(m: &ComplexMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Tr(A·B) without forming the product.
pub fn trace_of_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Kronecker product `a ⊗ b`; `a` occupies the more significant index bits.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Embeds a single-qubit operator acting on `qubit` into an `n_qubits`
/// register. Qubit 0 is the least-significant bit of the basis index.
pub fn embed_one(op: &ComplexMatrix, qubit: usize, n_qubits: usize) -> ComplexMatrix {
    assert_eq!(op.shape(), (2, 2));
    assert!(qubit < n_qubits);
    let dim = 1usize << n_qubits;
    let bit = 1usize << qubit;
    let mut out = zeros(dim);
    for col in 0..dim {
        let b_in = (col & bit != 0) as usize;
        for b_out in 0..2 {
            let v = op[(b_out, b_in)];
            if v == ZERO {
                continue;
            }
            let row = (col & !bit) | (b_out * bit);
            out[(row, col)] += v;
        }
    }
    out
}

/// Embeds a two-qubit operator. `op` is written in the basis
/// |q_a q_b⟩ with `q_a` as the more significant bit of the 4×4 index, i.e.
/// for CNOT(control, target) pass `qubits = [control, target]` and the
/// textbook matrix.
pub fn embed_two(op: &ComplexMatrix, qubits: [usize; 2], n_qubits: usize) -> ComplexMatrix {
    assert_eq!(op.shape(), (4, 4));
    let [qa, qb] = qubits;
    assert!(qa != qb && qa < n_qubits && qb < n_qubits);
    let dim = 1usize << n_qubits;
    let (ba, bb) = (1usize << qa, 1usize << qb);
    let local = |idx: usize| (((idx & ba != 0) as usize) << 1) | (idx & bb != 0) as usize;
    let mut out = zeros(dim);
    for col in 0..dim {
        let l_in = local(col);
        let rest = col & !(ba | bb);
        for l_out in 0..4 {
            let v = op[(l_out, l_in)];
            if v == ZERO {
                continue;
            }
            let row = rest | if l_out & 2 != 0 { ba } else { 0 } | if l_out & 1 != 0 { bb } else { 0 };
            out[(row, col)] += v;
        }
    }
    out
}

/// Basis state |index⟩ of dimension `dim`.
pub fn basis_state(dim: usize, index: usize) -> StateVector {
    let mut v = StateVector::zeros(dim);
    v[index] = ONE;
    v
}

/// |ψ⟩⟨ψ|
pub fn projector(psi: &StateVector) -> ComplexMatrix {
    psi * psi.adjoint()
}

pub fn pauli_x() -> ComplexMatrix {
    from_rows(2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> ComplexMatrix {
    from_rows(2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> ComplexMatrix {
    from_rows(2, &[ONE, ZERO, ZERO, -ONE])
}

/// σ⁺ = |1⟩⟨0| (raising).
pub fn sigma_plus() -> ComplexMatrix {
    from_rows(2, &[ZERO, ZERO, ONE, ZERO])
}

/// σ⁻ = |0⟩⟨1| (lowering).
pub fn sigma_minus() -> ComplexMatrix {
    from_rows(2, &[ZERO, ONE, ZERO, ZERO])
}
