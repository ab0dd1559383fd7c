//! Parser for the assembly dialect:
//!
//! ```text
//! // Hadamard as Y^{1/2} then X
//! Ry(q[0], pi/2);
//! X(q[0])
//! Rx(q[1], theta / 2);
//! ```
//!
//! Statements end with `;` or a newline. Angle arguments are arithmetic
//! expressions over numbers, `pi` and free identifiers.

use super::{Circuit, CircuitError, Gate, GateKind};
use crate::expr::{tokenize, Cursor, Expr, ExprError, Token, TokenKind};

/// Parses a circuit and sizes the register to the largest referenced qubit.
pub fn parse_circuit(src: &str) -> Result<Circuit, CircuitError> {
    let gates = parse_gates(src)?;
    let n_qubits = gates
        .iter()
        .flat_map(|(g, _)| g.targets.iter().copied())
        .max()
        .map_or(1, |q| q + 1);
    build(n_qubits, gates)
}

/// Parses a circuit over a fixed register, rejecting out-of-range qubits.
pub fn parse_circuit_on(src: &str, n_qubits: usize) -> Result<Circuit, CircuitError> {
    if n_qubits == 0 {
        return Err(CircuitError::EmptyRegister);
    }
    let gates = parse_gates(src)?;
    build(n_qubits, gates)
}

fn build(n_qubits: usize, gates: Vec<(Gate, usize)>) -> Result<Circuit, CircuitError> {
    let mut circuit = Circuit::new(n_qubits);
    for (gate, _) in gates {
        circuit.push(gate)?;
    }
    Ok(circuit)
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

fn syntax(src: &str, err: ExprError) -> CircuitError {
    match err {
        ExprError::Unexpected { found, offset } => {
            let (line, column) = line_col(src, offset);
            CircuitError::Syntax { line, column, message: format!("unexpected {found}") }
        }
        ExprError::UnknownFunction { name, offset } => {
            let (line, column) = line_col(src, offset);
            CircuitError::Syntax { line, column, message: format!("unknown function `{name}`") }
        }
        other => CircuitError::Expr(other),
    }
}

/// Returns gates paired with the source offset of their name.
fn parse_gates(src: &str) -> Result<Vec<(Gate, usize)>, CircuitError> {
    let tokens = tokenize(src).map_err(|e| syntax(src, e))?;
    let mut cur = Cursor::new(&tokens, src.len());
    let mut gates = Vec::new();
    loop {
        // skip blank statements
        while let Some(tok) = cur.peek() {
            if tok.kind == TokenKind::Newline || tok.kind == TokenKind::Symbol(';') {
                cur.next();
            } else {
                break;
            }
        }
        let Some(head) = cur.next() else { break };
        let TokenKind::Ident(name) = &head.kind else {
            return Err(syntax(src, ExprError::Unexpected { found: head.kind.to_string(), offset: head.offset }));
        };
        let Some(kind) = GateKind::from_name(name) else {
            let (line, column) = line_col(src, head.offset);
            return Err(CircuitError::UnknownGate { name: name.clone(), line, column });
        };
        let (targets, params) = parse_args(&mut cur).map_err(|e| syntax(src, e))?;
        let gate = Gate::new(kind, targets, params)?;
        // terminator
        match cur.peek() {
            None => {}
            Some(Token { kind: TokenKind::Symbol(';'), .. }) | Some(Token { kind: TokenKind::Newline, .. }) => {
                cur.next();
            }
            Some(_) => return Err(syntax(src, cur.unexpected())),
        }
        gates.push((gate, head.offset));
    }
    Ok(gates)
}

/// Parses `( qubit, ..., angle, ... )`.
fn parse_args(cur: &mut Cursor<'_>) -> Result<(Vec<usize>, Vec<Expr>), ExprError> {
    cur.expect_symbol('(')?;
    let mut targets = Vec::new();
    let mut params = Vec::new();
    if !cur.at_symbol(')') {
        loop {
            if params.is_empty() && looks_like_qubit(cur) {
                targets.push(parse_qubit(cur)?);
            } else {
                params.push(cur.parse_expr()?);
            }
            if !cur.eat_symbol(',') {
                break;
            }
        }
    }
    cur.expect_symbol(')')?;
    Ok((targets, params))
}

fn looks_like_qubit(cur: &Cursor<'_>) -> bool {
    // `name [`: an identifier immediately indexed
    let mut probe = Cursor::new(cur.remaining(), 0);
    matches!(probe.next(), Some(Token { kind: TokenKind::Ident(_), .. })) && probe.at_symbol('[')
}

fn parse_qubit(cur: &mut Cursor<'_>) -> Result<usize, ExprError> {
    cur.next(); // register name
    cur.expect_symbol('[')?;
    let offset = cur.offset();
    let index = match cur.next() {
        Some(Token { kind: TokenKind::Number(v), .. }) if v.fract() == 0.0 && *v >= 0.0 => *v as usize,
        Some(tok) => {
            return Err(ExprError::Unexpected { found: tok.kind.to_string(), offset });
        }
        None => return Err(cur.unexpected()),
    };
    cur.expect_symbol(']')?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_program() {
        let c = parse_circuit("X(q[0]);").unwrap();
        assert_eq!(c.n_qubits, 1);
        assert_eq!(c.gates, vec![Gate::fixed(GateKind::X, &[0])]);
    }

    #[test]
    fn two_gates_with_constant() {
        let c = parse_circuit("Ry(q[0], pi/2); X(q[0]);").unwrap();
        assert_eq!(c.gates.len(), 2);
        assert_eq!(c.gates[0].kind, GateKind::Ry);
        assert_eq!(c.gates[0].angles().unwrap(), vec![std::f64::consts::FRAC_PI_2]);
        assert_eq!(c.gates[1].kind, GateKind::X);
        assert!(c.free_params.is_empty());
    }

    #[test]
    fn symbolic_parameter() {
        let c = parse_circuit("Rx(q[0], theta);").unwrap();
        assert_eq!(c.free_params, vec!["theta".to_string()]);
        assert_eq!(c.gates[0].params, vec![Expr::Var("theta".into())]);
    }

    #[test]
    fn newline_terminated_and_comments() {
        let src = "// comment\nH(q[0])   // trailing\nCNOT(q[0], q[1])\n\n";
        let c = parse_circuit(src).unwrap();
        assert_eq!(c.n_qubits, 2);
        assert_eq!(c.gates.len(), 2);
    }

    #[test]
    fn syntax_error_position() {
        let err = parse_circuit("X(q[0]);\nRy(q[0], pi/);").unwrap_err();
        assert_eq!(err, CircuitError::Syntax { line: 2, column: 13, message: "unexpected `)`".into() });
        let err = parse_circuit("X(q[0]) Y(q[0]);").unwrap_err();
        assert!(matches!(err, CircuitError::Syntax { line: 1, column: 9, .. }), "{err:?}");
    }

    #[test]
    fn unknown_gate() {
        let err = parse_circuit("X(q[0]);\n  Toffoli(q[0], q[1], q[2]);").unwrap_err();
        assert_eq!(err, CircuitError::UnknownGate { name: "Toffoli".into(), line: 2, column: 3 });
    }

    #[test]
    fn out_of_range_and_arity() {
        assert_eq!(
            parse_circuit_on("X(q[2]);", 2).unwrap_err(),
            CircuitError::QubitOutOfRange { qubit: 2, n_qubits: 2 }
        );
        assert!(matches!(parse_circuit("CNOT(q[0]);"), Err(CircuitError::Arity { .. })));
        assert!(matches!(parse_circuit("Rx(q[0]);"), Err(CircuitError::Arity { .. })));
        assert!(matches!(parse_circuit("CZ(q[1], q[1]);"), Err(CircuitError::RepeatedTarget(_))));
    }
}
