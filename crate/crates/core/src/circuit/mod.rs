//! Gate-level circuit IR.
//!
//! Circuits come from a small assembly dialect (`Ry(q[0], pi/2); X(q[0]);`)
//! and can be collapsed into their total unitary. Qubit 0 is the
//! least-significant bit of the computational-basis index everywhere in this
//! crate.

mod gates;
mod parser;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::linalg::{self, ComplexMatrix};

pub use gates::gate_matrix;
pub use parser::{parse_circuit, parse_circuit_on};

/// Largest register `circuit_unitary` accepts unless told otherwise.
pub const DEFAULT_QUBIT_CAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GateKind {
    X,
    Y,
    Z,
    H,
    Rx,
    Ry,
    Rz,
    CNOT,
    CZ,
    CPhase,
    Swap,
}

impl GateKind {
    pub const ALL: [GateKind; 11] = [
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::H,
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::CNOT,
        GateKind::CZ,
        GateKind::CPhase,
        GateKind::Swap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateKind::X => "X",
            GateKind::Y => "Y",
            GateKind::Z => "Z",
            GateKind::H => "H",
            GateKind::Rx => "Rx",
            GateKind::Ry => "Ry",
            GateKind::Rz => "Rz",
            GateKind::CNOT => "CNOT",
            GateKind::CZ => "CZ",
            GateKind::CPhase => "CPhase",
            GateKind::Swap => "Swap",
        }
    }

    /// Looks up a gate by its assembly name (exact case; `CX` is accepted as
    /// an alias of `CNOT`).
    pub fn from_name(name: &str) -> Option<GateKind> {
        if name == "CX" {
            return Some(GateKind::CNOT);
        }
        GateKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn n_targets(self) -> usize {
        match self {
            GateKind::CNOT | GateKind::CZ | GateKind::CPhase | GateKind::Swap => 2,
            _ => 1,
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::CPhase => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircuitError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown gate `{name}` at {line}:{column}")]
    UnknownGate { name: String, line: usize, column: usize },
    #[error("qubit index {qubit} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },
    #[error("gate {gate} expects {expected} {what}, got {got}")]
    Arity { gate: GateKind, what: &'static str, expected: usize, got: usize },
    #[error("gate {0} targets the same qubit twice")]
    RepeatedTarget(GateKind),
    #[error("circuit has unresolved parameters: {0:?}")]
    FreeParameters(Vec<String>),
    #[error("expected {expected} parameter values, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error("{n_qubits} qubits exceeds the dense-unitary cap of {cap}")]
    DimensionCap { n_qubits: usize, cap: usize },
    #[error("register must have at least one qubit")]
    EmptyRegister,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// One gate application. Angles are expressions so parametric circuits can
/// carry symbolic placeholders until bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub params: Vec<Expr>,
}

impl Gate {
    pub fn new(kind: GateKind, targets: Vec<usize>, params: Vec<Expr>) -> Result<Gate, CircuitError> {
        if targets.len() != kind.n_targets() {
            return Err(CircuitError::Arity {
                gate: kind,
                what: "qubit targets",
                expected: kind.n_targets(),
                got: targets.len(),
            });
        }
        if params.len() != kind.n_params() {
            return Err(CircuitError::Arity {
                gate: kind,
                what: "parameters",
                expected: kind.n_params(),
                got: params.len(),
            });
        }
        if targets.len() == 2 && targets[0] == targets[1] {
            return Err(CircuitError::RepeatedTarget(kind));
        }
        Ok(Gate { kind, targets, params })
    }

    /// Non-parametric gate on the given qubits. Panics on arity mismatch.
    pub fn fixed(kind: GateKind, targets: &[usize]) -> Gate {
        Gate::new(kind, targets.to_vec(), vec![]).expect("valid fixed gate")
    }

    /// Gate with numeric angles. Panics on arity mismatch.
    pub fn with_angles(kind: GateKind, targets: &[usize], angles: &[f64]) -> Gate {
        Gate::new(kind, targets.to_vec(), angles.iter().map(|&a| Expr::Num(a)).collect())
            .expect("valid gate")
    }

    pub fn is_concrete(&self) -> bool {
        self.params.iter().all(|p| p.free_vars().is_empty())
    }

    /// Numeric angles; fails if any parameter is still symbolic.
    pub fn angles(&self) -> Result<Vec<f64>, CircuitError> {
        self.params
            .iter()
            .map(|p| p.eval_const().map_err(CircuitError::from))
            .collect()
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.kind)?;
        let mut first = true;
        for q in &self.targets {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "q[{q}]")?;
            first = false;
        }
        for p in &self.params {
            match p {
                Expr::Num(v) => write!(f, ", {v}")?,
                other => write!(f, ", {other}")?,
            }
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
    /// Symbolic parameter names in order of first appearance.
    pub free_params: Vec<String>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Circuit {
        Circuit { n_qubits, gates: Vec::new(), free_params: Vec::new() }
    }

    /// Appends a gate, validating its targets and recording any new
    /// symbolic parameters.
    pub fn push(&mut self, gate: Gate) -> Result<(), CircuitError> {
        for &q in &gate.targets {
            if q >= self.n_qubits {
                return Err(CircuitError::QubitOutOfRange { qubit: q, n_qubits: self.n_qubits });
            }
        }
        for p in &gate.params {
            for name in p.free_vars() {
                if !self.free_params.contains(&name) {
                    self.free_params.push(name);
                }
            }
        }
        self.gates.push(gate);
        Ok(())
    }

    pub fn with(mut self, gate: Gate) -> Result<Circuit, CircuitError> {
        self.push(gate)?;
        Ok(self)
    }

    pub fn is_concrete(&self) -> bool {
        self.free_params.is_empty()
    }

    /// Textbook quantum Fourier transform on `n_qubits`, producing the DFT
    /// matrix F_{kj} = ω^{jk}/√N under the LSB qubit ordering.
    pub fn qft(n_qubits: usize) -> Circuit {
        let mut c = Circuit::new(n_qubits);
        for i in (0..n_qubits).rev() {
            c.gates.push(Gate::fixed(GateKind::H, &[i]));
            for j in (0..i).rev() {
                let angle = std::f64::consts::PI / f64::from(1u32 << (i - j));
                c.gates.push(Gate::with_angles(GateKind::CPhase, &[j, i], &[angle]));
            }
        }
        for k in 0..n_qubits / 2 {
            c.gates.push(Gate::fixed(GateKind::Swap, &[k, n_qubits - 1 - k]));
        }
        c
    }
}

/// Binds every free parameter, in `free_params` order, to a numeric value.
pub fn eval_parametric(circuit: &Circuit, values: &[f64]) -> Result<Circuit, CircuitError> {
    if values.len() != circuit.free_params.len() {
        return Err(CircuitError::ParameterCount {
            expected: circuit.free_params.len(),
            got: values.len(),
        });
    }
    let bindings: HashMap<String, f64> = circuit
        .free_params
        .iter()
        .cloned()
        .zip(values.iter().copied())
        .collect();
    let mut gates = Vec::with_capacity(circuit.gates.len());
    for gate in &circuit.gates {
        let params = gate
            .params
            .iter()
            .map(|p| p.eval(&bindings).map(Expr::Num))
            .collect::<Result<Vec<_>, _>>()?;
        gates.push(Gate { kind: gate.kind, targets: gate.targets.clone(), params });
    }
    Ok(Circuit { n_qubits: circuit.n_qubits, gates, free_params: Vec::new() })
}

/// Total unitary `U_last · … · U_first` under the default qubit cap.
pub fn circuit_unitary(circuit: &Circuit) -> Result<ComplexMatrix, CircuitError> {
    circuit_unitary_capped(circuit, DEFAULT_QUBIT_CAP)
}

pub fn circuit_unitary_capped(circuit: &Circuit, cap: usize) -> Result<ComplexMatrix, CircuitError> {
    if !circuit.free_params.is_empty() {
        return Err(CircuitError::FreeParameters(circuit.free_params.clone()));
    }
    if circuit.n_qubits == 0 {
        return Err(CircuitError::EmptyRegister);
    }
    if circuit.n_qubits > cap {
        return Err(CircuitError::DimensionCap { n_qubits: circuit.n_qubits, cap });
    }
    let n = circuit.n_qubits;
    let mut total = linalg::identity(1 << n);
    for gate in &circuit.gates {
        let local = gate_matrix(gate)?;
        let full = match gate.targets.as_slice() {
            [q] => linalg::embed_one(&local, *q, n),
            [a, b] => linalg::embed_two(&local, [*a, *b], n),
            _ => unreachable!("gate arity validated at construction"),
        };
        total = full * total;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs_diff, unitarity_error};
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn hadamard() -> ComplexMatrix {
        let h = FRAC_1_SQRT_2;
        linalg::from_rows(2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)])
    }

    #[test]
    fn single_x() {
        let circ = parse_circuit("X(q[0]);").unwrap();
        let u = circuit_unitary(&circ).unwrap();
        assert!(max_abs_diff(&u, &linalg::pauli_x()) < 1e-15);
    }

    #[test]
    fn ry_then_x_is_hadamard() {
        let circ = parse_circuit("Ry(q[0], pi/2); X(q[0]);").unwrap();
        let u = circuit_unitary(&circ).unwrap();
        assert!(max_abs_diff(&u, &hadamard()) < 1e-12);
    }

    #[test]
    fn cnot_truth_table_lsb() {
        // control q0, target q1. |q1 q0⟩ = |01⟩ is index 1 and must map to |11⟩ = 3.
        let circ = parse_circuit("CNOT(q[0], q[1]);").unwrap();
        let u = circuit_unitary(&circ).unwrap();
        let expected = [0usize, 3, 2, 1];
        for (input, &output) in expected.iter().enumerate() {
            for row in 0..4 {
                let want = if row == output { 1.0 } else { 0.0 };
                assert!((u[(row, input)] - c(want, 0.0)).norm() < 1e-15, "input {input}");
            }
        }
    }

    #[test]
    fn qft2_matches_dft() {
        // brute-force DFT matrix F_{kj} = i^{jk} / 2
        let mut dft = linalg::zeros(4);
        for k in 0..4 {
            for j in 0..4 {
                dft[(k, j)] = linalg::I.powu((j * k) as u32) * 0.5;
            }
        }
        let parsed =
            parse_circuit("H(q[1]); CPhase(q[0], q[1], pi/2); H(q[0]); Swap(q[0], q[1]);").unwrap();
        assert!(max_abs_diff(&circuit_unitary(&parsed).unwrap(), &dft) < 1e-12);
        assert!(max_abs_diff(&circuit_unitary(&Circuit::qft(2)).unwrap(), &dft) < 1e-12);
    }

    #[test]
    fn qft3_matches_dft() {
        let omega = |p: usize| num_complex::Complex64::from_polar(1.0, 2.0 * PI * p as f64 / 8.0);
        let mut dft = linalg::zeros(8);
        for k in 0..8 {
            for j in 0..8 {
                dft[(k, j)] = omega(j * k) / 8f64.sqrt();
            }
        }
        assert!(max_abs_diff(&circuit_unitary(&Circuit::qft(3)).unwrap(), &dft) < 1e-12);
    }

    #[test]
    fn parametric_binding() {
        let circ = parse_circuit("Rx(q[0], theta);").unwrap();
        assert_eq!(circ.free_params, vec!["theta".to_string()]);
        assert!(matches!(circuit_unitary(&circ), Err(CircuitError::FreeParameters(_))));
        assert!(matches!(
            eval_parametric(&circ, &[]),
            Err(CircuitError::ParameterCount { expected: 1, got: 0 })
        ));
        let bound = eval_parametric(&circ, &[PI]).unwrap();
        assert!(bound.free_params.is_empty());
        assert_eq!(bound.gates[0].params, vec![Expr::Num(PI)]);
        let half = eval_parametric(&circ, &[0.5]).unwrap();
        assert_eq!(half.gates[0].angles().unwrap(), vec![0.5]);
    }

    #[test]
    fn dimension_cap() {
        let circ = Circuit::new(5).with(Gate::fixed(GateKind::X, &[4])).unwrap();
        assert!(matches!(circuit_unitary(&circ), Err(CircuitError::DimensionCap { .. })));
        assert!(unitarity_error(&circuit_unitary_capped(&circ, 5).unwrap()) < 1e-12);
    }
}
