//! Operator expressions such as `X0*X1 + 0.5*Z0` and their dense matrices.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;
use crate::expr::{tokenize, ExprError, TokenKind};
use crate::linalg::{self, ComplexMatrix};

/// Single-site operator token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteOp {
    I,
    X,
    Y,
    Z,
    /// σ⁺ = |1⟩⟨0|
    SP,
    /// σ⁻ = |0⟩⟨1|
    SM,
}

impl SiteOp {
    fn matrix(self) -> ComplexMatrix {
        match self {
            SiteOp::I => linalg::identity(2),
            SiteOp::X => linalg::pauli_x(),
            SiteOp::Y => linalg::pauli_y(),
            SiteOp::Z => linalg::pauli_z(),
            SiteOp::SP => linalg::sigma_plus(),
            SiteOp::SM => linalg::sigma_minus(),
        }
    }

    /// Splits `X12` into (`X`, 12).
    fn parse_token(tok: &str) -> Option<(SiteOp, usize)> {
        let split = tok.find(|c: char| c.is_ascii_digit())?;
        let (name, digits) = tok.split_at(split);
        let op = match name {
            "I" => SiteOp::I,
            "X" => SiteOp::X,
            "Y" => SiteOp::Y,
            "Z" => SiteOp::Z,
            "SP" => SiteOp::SP,
            "SM" => SiteOp::SM,
            _ => return None,
        };
        let index = digits.parse().ok()?;
        Some((op, index))
    }
}

/// A product `coef · Π op_q` of single-site factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductTerm {
    pub coef: f64,
    pub factors: Vec<(SiteOp, usize)>,
}

/// Parsed operator expression. Keeps its source text so that model files
/// serialize back to exactly what was read.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorExpr {
    source: String,
    terms: Vec<ProductTerm>,
}

impl OperatorExpr {
    pub fn parse(src: &str) -> Result<OperatorExpr, ModelError> {
        let err = |message: String| ModelError::Operator { expr: src.to_string(), message };
        let tokens = tokenize(src).map_err(|e| match e {
            ExprError::Unexpected { found, .. } => err(format!("unexpected {found}")),
            other => err(other.to_string()),
        })?;
        let mut terms = Vec::new();
        let mut current = ProductTerm { coef: 1.0, factors: Vec::new() };
        let mut sign = 1.0;
        // true when the next token must be a factor (start, after `*`, `+`, `-`)
        let mut want_factor = true;
        let mut seen_factor = false;
        for tok in tokens.iter().filter(|t| t.kind != TokenKind::Newline) {
            match &tok.kind {
                TokenKind::Symbol('+') | TokenKind::Symbol('-') if !want_factor || !seen_factor => {
                    let negative = tok.kind == TokenKind::Symbol('-');
                    if seen_factor {
                        current.coef *= sign;
                        terms.push(std::mem::replace(&mut current, ProductTerm { coef: 1.0, factors: Vec::new() }));
                        sign = 1.0;
                        seen_factor = false;
                    }
                    if negative {
                        sign = -sign;
                    }
                    want_factor = true;
                }
                TokenKind::Symbol('*') if !want_factor => want_factor = true,
                TokenKind::Number(v) if want_factor => {
                    current.coef *= v;
                    want_factor = false;
                    seen_factor = true;
                }
                TokenKind::Ident(name) if want_factor => {
                    let (op, q) = SiteOp::parse_token(name)
                        .ok_or_else(|| err(format!("unknown operator token `{name}`")))?;
                    current.factors.push((op, q));
                    want_factor = false;
                    seen_factor = true;
                }
                other => return Err(err(format!("unexpected {other}"))),
            }
        }
        if want_factor {
            return Err(err("expression ends where an operator was expected".into()));
        }
        current.coef *= sign;
        terms.push(current);
        Ok(OperatorExpr { source: src.to_string(), terms })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn terms(&self) -> &[ProductTerm] {
        &self.terms
    }

    /// Qubits referenced anywhere in the expression, ascending and unique.
    pub fn qubits(&self) -> Vec<usize> {
        let mut qs: Vec<usize> = self.terms.iter().flat_map(|t| t.factors.iter().map(|f| f.1)).collect();
        qs.sort_unstable();
        qs.dedup();
        qs
    }

    pub fn max_qubit(&self) -> Option<usize> {
        self.qubits().last().copied()
    }

    /// Dense `2^n × 2^n` matrix.
    pub fn to_matrix(&self, n_qubits: usize) -> Result<ComplexMatrix, ModelError> {
        build_operator(self, n_qubits)
    }
}

impl fmt::Display for OperatorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl std::str::FromStr for OperatorExpr {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperatorExpr::parse(s)
    }
}

impl Serialize for OperatorExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for OperatorExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        OperatorExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Materializes an operator expression on an `n_qubits` register. Factors on
/// the same site multiply in the order written; qubit 0 is the
/// least-significant basis bit.
pub fn build_operator(e: &OperatorExpr, n_qubits: usize) -> Result<ComplexMatrix, ModelError> {
    if let Some(q) = e.max_qubit() {
        if q >= n_qubits {
            return Err(ModelError::IndexOutOfRange { expr: e.source.clone(), qubit: q, n_qubits });
        }
    }
    let dim = 1usize << n_qubits;
    let mut total = linalg::zeros(dim);
    for term in &e.terms {
        let mut product = linalg::identity(dim);
        for &(op, q) in &term.factors {
            product *= linalg::embed_one(&op.matrix(), q, n_qubits);
        }
        total += product * linalg::c(term.coef, 0.0);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, dagger, hermiticity_error, kron, max_abs_diff};
    use proptest::prelude::*;

    fn op(s: &str, n: usize) -> ComplexMatrix {
        build_operator(&OperatorExpr::parse(s).unwrap(), n).unwrap()
    }

    #[test]
    fn single_pauli() {
        assert!(max_abs_diff(&op("X0", 1), &linalg::pauli_x()) < 1e-15);
    }

    #[test]
    fn xx_is_kron() {
        let x = linalg::pauli_x();
        assert!(max_abs_diff(&op("X0*X1", 2), &kron(&x, &x)) < 1e-15);
        for r in 0..4 {
            for col in 0..4 {
                let want = if r + col == 3 { 1.0 } else { 0.0 };
                assert_eq!(op("X0*X1", 2)[(r, col)], c(want, 0.0));
            }
        }
    }

    #[test]
    fn z_sum_diagonal() {
        let m = op("Z0 + Z1", 2);
        let diag = [2.0, 0.0, 0.0, -2.0];
        for (i, d) in diag.iter().enumerate() {
            assert_eq!(m[(i, i)], c(*d, 0.0));
        }
        assert!(linalg::max_abs(&(m.clone() - ComplexMatrix::from_diagonal(&m.diagonal()))) == 0.0);
    }

    #[test]
    fn coefficients_and_signs() {
        let m = op("0.5*Z0 - 2*X0", 1);
        let expected = linalg::pauli_z() * c(0.5, 0.0) - linalg::pauli_x() * c(2.0, 0.0);
        assert!(max_abs_diff(&m, &expected) < 1e-15);
        let m = op("-Z0", 1);
        assert!(max_abs_diff(&m, &(-linalg::pauli_z())) < 1e-15);
    }

    #[test]
    fn same_site_product_in_order() {
        // SP·SM = |1⟩⟨1|
        let m = op("SP0*SM0", 1);
        let expected = linalg::from_rows(2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(max_abs_diff(&m, &expected) < 1e-15);
        assert!(max_abs_diff(&op("SP0", 1), &dagger(&op("SM0", 1))) < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(OperatorExpr::parse("Q0"), Err(ModelError::Operator { .. })));
        assert!(matches!(OperatorExpr::parse("X0 +"), Err(ModelError::Operator { .. })));
        assert!(matches!(OperatorExpr::parse("X0 X1"), Err(ModelError::Operator { .. })));
        assert!(matches!(OperatorExpr::parse("X"), Err(ModelError::Operator { .. })));
        let e = OperatorExpr::parse("X3").unwrap();
        assert!(matches!(build_operator(&e, 2), Err(ModelError::IndexOutOfRange { qubit: 3, .. })));
    }

    fn hermitian_expr() -> impl Strategy<Value = String> {
        let factor = (prop::sample::select(vec!["I", "X", "Y", "Z"]), 0usize..2).prop_map(|(o, q)| format!("{o}{q}"));
        let term = (-3.0f64..3.0, prop::collection::vec(factor, 1..3)).prop_map(|(coef, fs)| {
            // same-site products of distinct Paulis are not Hermitian, so keep sites distinct
            let mut seen = std::collections::HashSet::new();
            let fs: Vec<String> = fs.into_iter().filter(|f| seen.insert(f[1..].to_string())).collect();
            format!("{coef:.3}*{}", fs.join("*"))
        });
        prop::collection::vec(term, 1..4).prop_map(|ts| ts.join(" + "))
    }

    proptest! {
        #[test]
        fn pauli_sums_are_hermitian(expr in hermitian_expr()) {
            prop_assert!(hermiticity_error(&op(&expr, 2)) <= 1e-12);
        }

        #[test]
        fn linear_in_sum(a in hermitian_expr(), b in hermitian_expr()) {
            let sum = op(&format!("{a} + {b}"), 2);
            prop_assert!(max_abs_diff(&sum, &(op(&a, 2) + op(&b, 2))) <= 1e-14);
        }
    }
}
