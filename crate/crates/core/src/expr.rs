//! Small real-valued expression language.
//!
//! Used for gate angles in circuit sources (`pi/2`, `theta`, `-2*phi`) and
//! for analytic control envelopes (`exp(-t^2/(2*sigma^2))`).

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Sqrt,
    Ln,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "sqrt" => Some(Func::Sqrt),
            "ln" | "log" => Some(Func::Ln),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sqrt => x.sqrt(),
            Func::Ln => x.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unexpected {found} at offset {offset}")]
    Unexpected { found: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// Evaluates with `pi` predefined and every other identifier looked up
    /// through `lookup`.
    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => match lookup(name) {
                Some(v) => v,
                None if name == "pi" => std::f64::consts::PI,
                None => return Err(ExprError::Unbound(name.clone())),
            },
            Expr::Neg(a) => -a.eval_with(lookup)?,
            Expr::Add(a, b) => a.eval_with(lookup)? + b.eval_with(lookup)?,
            Expr::Sub(a, b) => a.eval_with(lookup)? - b.eval_with(lookup)?,
            Expr::Mul(a, b) => a.eval_with(lookup)? * b.eval_with(lookup)?,
            Expr::Div(a, b) => a.eval_with(lookup)? / b.eval_with(lookup)?,
            Expr::Pow(a, b) => a.eval_with(lookup)?.powf(b.eval_with(lookup)?),
            Expr::Call(f, a) => f.apply(a.eval_with(lookup)?),
        })
    }

    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
        self.eval_with(&|name| bindings.get(name).copied())
    }

    /// Evaluates an expression that must not reference anything but `pi`.
    pub fn eval_const(&self) -> Result<f64, ExprError> {
        self.eval_with(&|_| None)
    }

    /// Identifiers other than `pi`, in order of first appearance.
    pub fn free_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                if name != "pi" && !out.contains(name) {
                    out.push(name.clone());
                }
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Replaces variables found in `bindings` by numeric literals.
    pub fn substitute(&self, bindings: &HashMap<String, f64>) -> Expr {
        let sub = |e: &Expr| Box::new(e.substitute(bindings));
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(name) => match bindings.get(name) {
                Some(v) => Expr::Num(*v),
                None => Expr::Var(name.clone()),
            },
            Expr::Neg(a) => Expr::Neg(sub(a)),
            Expr::Add(a, b) => Expr::Add(sub(a), sub(b)),
            Expr::Sub(a, b) => Expr::Sub(sub(a), sub(b)),
            Expr::Mul(a, b) => Expr::Mul(sub(a), sub(b)),
            Expr::Div(a, b) => Expr::Div(sub(a), sub(b)),
            Expr::Pow(a, b) => Expr::Pow(sub(a), sub(b)),
            Expr::Call(f, a) => Expr::Call(*f, sub(a)),
        }
    }

    /// Symbolic partial derivative with respect to `var`, lightly simplified.
    pub fn derivative(&self, var: &str) -> Expr {
        use Expr::*;
        let b = |e: Expr| Box::new(e);
        match self {
            Num(_) => Num(0.0),
            Var(name) => Num(if name == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(var)),
            Add(x, y) => add(x.derivative(var), y.derivative(var)),
            Sub(x, y) => sub(x.derivative(var), y.derivative(var)),
            Mul(x, y) => add(mul(x.derivative(var), (**y).clone()), mul((**x).clone(), y.derivative(var))),
            Div(x, y) => {
                let num = sub(mul(x.derivative(var), (**y).clone()), mul((**x).clone(), y.derivative(var)));
                div(num, Pow(y.clone(), b(Num(2.0))))
            }
            Pow(x, y) => {
                let dy = y.derivative(var);
                let dx = x.derivative(var);
                if dy == Num(0.0) {
                    // d(x^c) = c·x^(c−1)·x'
                    let lowered = Pow(x.clone(), b(sub((**y).clone(), Num(1.0))));
                    mul(mul((**y).clone(), lowered), dx)
                } else {
                    // d(x^y) = x^y·(y'·ln x + y·x'/x)
                    let inner = add(mul(dy, Call(Func::Ln, x.clone())), div(mul((**y).clone(), dx), (**x).clone()));
                    mul(self.clone(), inner)
                }
            }
            Call(f, a) => {
                let da = a.derivative(var);
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Sqrt => div(Num(0.5), self.clone()),
                    Func::Ln => div(Num(1.0), (**a).clone()),
                };
                mul(outer, da)
            }
        }
    }
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) {
        b
    } else if is_num(&b, 0.0) {
        a
    } else {
        Expr::Add(Box::new(a), Box::new(b))
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    if is_num(&b, 0.0) {
        a
    } else if is_num(&a, 0.0) {
        neg(b)
    } else {
        Expr::Sub(Box::new(a), Box::new(b))
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) || is_num(&b, 0.0) {
        Expr::Num(0.0)
    } else if is_num(&a, 1.0) {
        b
    } else if is_num(&b, 1.0) {
        a
    } else {
        Expr::Mul(Box::new(a), Box::new(b))
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) {
        Expr::Num(0.0)
    } else if is_num(&b, 1.0) {
        a
    } else {
        Expr::Div(Box::new(a), Box::new(b))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Lexing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenKind {
    Ident(String),
    Number(f64),
    Symbol(char),
    Newline,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Number(v) => write!(f, "number `{v}`"),
            TokenKind::Symbol(c) => write!(f, "`{c}`"),
            TokenKind::Newline => write!(f, "end of line"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub kind: TokenKind,
    /// Byte offset into the source.
    pub offset: usize,
}

/// Splits `src` into tokens. `//` comments are dropped; newlines are kept as
/// tokens so statement-oriented callers can use them as terminators.
pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        match ch {
            '\n' => {
                tokens.push(Token { kind: TokenKind::Newline, offset: i });
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            '/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ExprError::Unexpected {
                    found: format!("malformed number `{text}`"),
                    offset: start,
                })?;
                tokens.push(Token { kind: TokenKind::Number(value), offset: start });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token { kind: TokenKind::Ident(src[start..i].to_string()), offset: start });
            }
            '(' | ')' | '[' | ']' | '{' | '}' | ',' | ';' | '+' | '-' | '*' | '/' | '^' => {
                tokens.push(Token { kind: TokenKind::Symbol(ch), offset: i });
                i += 1;
            }
            _ => {
                let c = src[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Unexpected { found: format!("character `{c}`"), offset: i });
            }
        }
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Cursor over a token slice; shared with the circuit parser.
pub(crate) struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
    end_offset: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(tokens: &'a [Token], end_offset: usize) -> Self {
        Cursor { tokens, pos: 0, end_offset }
    }

    pub fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    pub fn next(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn offset(&self) -> usize {
        self.peek().map_or(self.end_offset, |t| t.offset)
    }

    pub fn at_symbol(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { kind: TokenKind::Symbol(s), .. }) if *s == c)
    }

    pub fn eat_symbol(&mut self, c: char) -> bool {
        if self.at_symbol(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn unexpected(&self) -> ExprError {
        ExprError::Unexpected {
            found: self.peek().map_or_else(|| "end of input".to_string(), |t| t.kind.to_string()),
            offset: self.offset(),
        }
    }

    pub fn expect_symbol(&mut self, c: char) -> Result<(), ExprError> {
        if self.eat_symbol(c) {
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    pub fn remaining(&self) -> &'a [Token] {
        &self.tokens[self.pos.min(self.tokens.len())..]
    }

    pub fn is_done(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    pub fn parse_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_term()?;
        loop {
            if self.eat_symbol('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.parse_term()?));
            } else if self.eat_symbol('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.parse_term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            if self.eat_symbol('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.parse_unary()?));
            } else if self.eat_symbol('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.parse_unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_symbol('-') {
            return Ok(Expr::Neg(Box::new(self.parse_unary()?)));
        }
        if self.eat_symbol('+') {
            return self.parse_unary();
        }
        let base = self.parse_atom()?;
        if self.eat_symbol('^') {
            // right-associative, binds tighter than unary minus on the left
            let exponent = self.parse_unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr, ExprError> {
        let Some(tok) = self.peek() else {
            return Err(self.unexpected());
        };
        match &tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Expr::Num(*v))
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if self.at_symbol('(') {
                    let func = Func::from_name(name).ok_or_else(|| ExprError::UnknownFunction {
                        name: name.clone(),
                        offset: tok.offset,
                    })?;
                    self.expect_symbol('(')?;
                    let arg = self.parse_expr()?;
                    self.expect_symbol(')')?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name.clone()))
                }
            }
            TokenKind::Symbol('(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect_symbol(')')?;
                Ok(inner)
            }
            _ => Err(self.unexpected()),
        }
    }
}

/// Parses a complete expression.
pub fn parse_expr(src: &str) -> Result<Expr, ExprError> {
    let tokens: Vec<Token> = tokenize(src)?
        .into_iter()
        .filter(|t| t.kind != TokenKind::Newline)
        .collect();
    let mut cursor = Cursor::new(&tokens, src.len());
    let expr = cursor.parse_expr()?;
    if !cursor.is_done() {
        return Err(cursor.unexpected());
    }
    Ok(expr)
}
