use std::fmt::Write as _;

use super::{DynamicsError, QuantumState, HERMITIAN_TOL};
use crate::linalg::{self, ComplexMatrix};

/// Imaginary parts larger than this indicate a bug upstream.
const IMAG_RESIDUAL: f64 = 1e-9;

/// `⟨ψ|op|ψ⟩` or `Tr(op·ρ)`.
pub fn expectation(op: &ComplexMatrix, state: &QuantumState) -> Result<f64, DynamicsError> {
    if op.nrows() != state.dim() || op.ncols() != state.dim() {
        return Err(DynamicsError::DimensionMismatch { expected: state.dim(), got: op.nrows() });
    }
    let herm = linalg::hermiticity_error(op);
    if herm > HERMITIAN_TOL {
        return Err(DynamicsError::NonHermitian(herm));
    }
    let value = match state {
        QuantumState::Pure(psi) => (psi.adjoint() * op * psi)[(0, 0)],
        QuantumState::Mixed(rho) => linalg::trace_of_product(op, rho),
    };
    if value.im.abs() > IMAG_RESIDUAL * value.norm().max(1.0) {
        return Err(DynamicsError::InvalidState(format!("expectation has imaginary part {:.3e}", value.im)));
    }
    Ok(value.re)
}

/// Formats `x` with 12 significant digits in `%g` style.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// CSV of `⟨X⟩, ⟨Y⟩, ⟨Z⟩` and excited-state population for each qubit, one
/// row per time. Single-qubit output uses the bare `p_excited` column name;
/// wider registers suffix it with the qubit index.
pub fn trajectory_csv(n_qubits: usize, times: &[f64], states: &[ComplexMatrix]) -> Result<String, DynamicsError> {
    let dim = 1usize << n_qubits;
    let mut observables = Vec::with_capacity(n_qubits);
    let mut header = String::from("t");
    for q in 0..n_qubits {
        let p = if n_qubits == 1 { "p_excited".to_string() } else { format!("p_excited{q}") };
        write!(header, ",<X{q}>,<Y{q}>,<Z{q}>,{p}").expect("string write");
        let embed = |m: ComplexMatrix| linalg::embed_one(&m, q, n_qubits);
        observables.push([embed(linalg::pauli_x()), embed(linalg::pauli_y()), embed(linalg::pauli_z())]);
    }
    let mut out = header;
    out.push('\n');
    for (t, rho) in times.iter().zip(states) {
        if rho.nrows() != dim {
            return Err(DynamicsError::DimensionMismatch { expected: dim, got: rho.nrows() });
        }
        let state = QuantumState::Mixed(rho.clone());
        out.push_str(&fmt_sig(*t));
        for obs in &observables {
            let z = expectation(&obs[2], &state)?;
            for o in &obs[..2] {
                write!(out, ",{}", fmt_sig(expectation(o, &state)?)).expect("string write");
            }
            write!(out, ",{},{}", fmt_sig(z), fmt_sig((1.0 - z) / 2.0)).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{basis_state, c, pauli_x, pauli_z};

    #[test]
    fn z_on_ground() {
        let s = QuantumState::Pure(basis_state(2, 0));
        assert_eq!(expectation(&pauli_z(), &s).unwrap(), 1.0);
    }

    #[test]
    fn x_on_plus() {
        let h = linalg::from_rows(2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)])
            * c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let s = QuantumState::Pure(h * basis_state(2, 0));
        assert!((expectation(&pauli_x(), &s).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn z_on_maximally_mixed() {
        let s = QuantumState::Mixed(linalg::identity(2) * c(0.5, 0.0));
        assert_eq!(expectation(&pauli_z(), &s).unwrap(), 0.0);
    }

    #[test]
    fn expectation_errors() {
        let s = QuantumState::Pure(basis_state(2, 0));
        assert!(matches!(expectation(&linalg::identity(4), &s), Err(DynamicsError::DimensionMismatch { .. })));
        assert!(matches!(expectation(&linalg::sigma_plus(), &s), Err(DynamicsError::NonHermitian(_))));
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-0.5), "-0.5");
        assert_eq!(fmt_sig(0.1 + 0.2), "0.3");
        assert_eq!(fmt_sig(std::f64::consts::PI), "3.14159265359");
        assert_eq!(fmt_sig(1.5e-7), "1.5e-07");
        assert_eq!(fmt_sig(123456789012345.0), "1.23456789012e+14");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(100.0), "100");
    }

    #[test]
    fn csv_layout() {
        let rho = linalg::projector(&basis_state(2, 1));
        let csv = trajectory_csv(1, &[0.0, 0.2], &[rho.clone(), rho]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,<X0>,<Y0>,<Z0>,p_excited");
        assert_eq!(lines[2], "0.2,0,0,-1,1");
        let rho2 = linalg::projector(&basis_state(4, 2));
        let csv = trajectory_csv(2, &[0.0], &[rho2]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,<X0>,<Y0>,<Z0>,p_excited0,<X1>,<Y1>,<Z1>,p_excited1");
        assert_eq!(lines[1], "0,0,0,1,0,0,0,-1,1");
    }
}
