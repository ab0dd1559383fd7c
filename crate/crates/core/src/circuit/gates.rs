use num_complex::Complex64;

use super::{CircuitError, Gate, GateKind};
use crate::linalg::{self, c, ComplexMatrix, I, ONE, ZERO};

/// Standard matrix of a gate in its local basis. Two-qubit gates use
/// `|t0 t1⟩` ordering with `targets[0]` as the more significant bit, so
/// `CNOT(control, target)` is the textbook matrix.
pub fn gate_matrix(gate: &Gate) -> Result<ComplexMatrix, CircuitError> {
    if !gate.is_concrete() {
        let names = gate.params.iter().flat_map(|p| p.free_vars()).collect();
        return Err(CircuitError::FreeParameters(names));
    }
    let angles = gate.angles()?;
    let theta = angles.first().copied().unwrap_or(0.0);
    let (cos, sin) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let m = match gate.kind {
        GateKind::X => linalg::pauli_x(),
        GateKind::Y => linalg::pauli_y(),
        GateKind::Z => linalg::pauli_z(),
        GateKind::H => linalg::from_rows(2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)]),
        GateKind::Rx => linalg::from_rows(2, &[c(cos, 0.0), -I * sin, -I * sin, c(cos, 0.0)]),
        GateKind::Ry => linalg::from_rows(2, &[c(cos, 0.0), c(-sin, 0.0), c(sin, 0.0), c(cos, 0.0)]),
        GateKind::Rz => linalg::from_rows(
            2,
            &[Complex64::from_polar(1.0, -theta / 2.0), ZERO, ZERO, Complex64::from_polar(1.0, theta / 2.0)],
        ),
        GateKind::CNOT => permutation4([0, 1, 3, 2]),
        GateKind::Swap => permutation4([0, 2, 1, 3]),
        GateKind::CZ => diag4([ONE, ONE, ONE, -ONE]),
        GateKind::CPhase => diag4([ONE, ONE, ONE, Complex64::from_polar(1.0, theta)]),
    };
    Ok(m)
}

/// Permutation matrix sending basis column `j` to row `perm[j]`.
fn permutation4(perm: [usize; 4]) -> ComplexMatrix {
    let mut m = linalg::zeros(4);
    for (col, &row) in perm.iter().enumerate() {
        m[(row, col)] = ONE;
    }
    m
}

fn diag4(d: [Complex64; 4]) -> ComplexMatrix {
    let mut m = linalg::zeros(4);
    for (i, v) in d.into_iter().enumerate() {
        m[(i, i)] = v;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::linalg::{identity, max_abs_diff, unitarity_error};
    use proptest::prelude::*;

    fn rot(kind: GateKind, theta: f64) -> ComplexMatrix {
        gate_matrix(&Gate::with_angles(kind, &[0], &[theta])).unwrap()
    }

    #[test]
    fn x_and_zero_rotation() {
        let x = gate_matrix(&Gate::fixed(GateKind::X, &[0])).unwrap();
        assert!(max_abs_diff(&x, &linalg::pauli_x()) < 1e-15);
        assert!(max_abs_diff(&rot(GateKind::Rx, 0.0), &identity(2)) < 1e-15);
    }

    #[test]
    fn ry_quarter_turn() {
        // cos(π/4) = sin(π/4) = 1/√2
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expected = linalg::from_rows(2, &[c(s, 0.0), c(-s, 0.0), c(s, 0.0), c(s, 0.0)]);
        assert!(max_abs_diff(&rot(GateKind::Ry, std::f64::consts::FRAC_PI_2), &expected) < 1e-15);
    }

    #[test]
    fn symbolic_rejected() {
        let g = Gate::new(GateKind::Rz, vec![0], vec![Expr::Var("phi".into())]).unwrap();
        assert!(matches!(gate_matrix(&g), Err(CircuitError::FreeParameters(v)) if v == vec!["phi".to_string()]));
    }

    #[test]
    fn all_fixed_gates_unitary() {
        for kind in GateKind::ALL {
            let targets: Vec<usize> = (0..kind.n_targets()).collect();
            let angles = vec![0.37; kind.n_params()];
            let m = gate_matrix(&Gate::with_angles(kind, &targets, &angles)).unwrap();
            assert!(unitarity_error(&m) < 1e-14, "{kind}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn rotation_inverse(theta in -10.0f64..10.0) {
            for kind in [GateKind::Rx, GateKind::Ry, GateKind::Rz] {
                let prod = rot(kind, theta) * rot(kind, -theta);
                prop_assert!(max_abs_diff(&prod, &identity(2)) <= 1e-12);
            }
        }
    }
}
