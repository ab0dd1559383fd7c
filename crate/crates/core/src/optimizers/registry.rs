//! Name-based optimizer lookup driven by a string-keyed options map.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

use super::goat::{goat_optimize, EnvelopeFamily, ExprEnvelopes, GaussianTerm, GoatEnvelopeSpec, GoatParam};
use super::{grape_optimize, krotov_optimize, ControlProblem, InitialGuess, OptimError, OptimResult};
use crate::circuit::{circuit_unitary_capped, parse_circuit_on, Circuit, Gate, GateKind};
use crate::linalg::{self, ComplexMatrix};
use crate::model::{build_operator, OperatorExpr, SystemModel, MAX_QUBITS};

pub type Options = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Grape,
    Goat,
    Krotov,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Grape, Method::Goat, Method::Krotov];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grape => "GRAPE",
            Method::Goat => "GOAT",
            Method::Krotov => "krotov",
        }
    }

    /// Case-insensitive lookup.
    pub fn parse(name: &str) -> Result<Method, OptimError> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| OptimError::UnknownMethod(name.to_string()))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const KNOWN_OPTIONS: [&str; 16] = [
    "method",
    "dimension",
    "target-U",
    "control-params",
    "control-funcs",
    "control-H",
    "max-time",
    "initial-parameters",
    "n-samples",
    "amplitude-bound",
    "seed",
    "tol",
    "max-iters",
    "dt",
    "learning-rate",
    "lambda",
];

/// Typed view of an options map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    /// Number of qubits.
    pub dimension: Option<usize>,
    pub target: Option<Value>,
    pub control_params: Vec<String>,
    pub control_funcs: Vec<String>,
    pub control_h: Vec<String>,
    pub max_time: Option<f64>,
    pub initial_parameters: Option<Vec<f64>>,
    pub n_samples: Option<usize>,
    pub amplitude_bound: Option<f64>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub dt: Option<f64>,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
}

fn invalid(key: &str, message: impl Into<String>) -> OptimError {
    OptimError::InvalidOption { key: key.to_string(), message: message.into() }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, OptimError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| invalid(key, "expected a finite number"))
}

fn as_positive(key: &str, v: &Value) -> Result<f64, OptimError> {
    let x = as_f64(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(key, "must be positive"))
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, OptimError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| invalid(key, "expected a non-negative integer"))
}

fn as_strings(key: &str, v: &Value) -> Result<Vec<String>, OptimError> {
    match v {
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Array(items) => items
            .iter()
            .map(|i| i.as_str().map(str::to_string).ok_or_else(|| invalid(key, "expected strings")))
            .collect(),
        _ => Err(invalid(key, "expected a string or list of strings")),
    }
}

fn as_numbers(key: &str, v: &Value) -> Result<Vec<f64>, OptimError> {
    match v {
        Value::Array(items) => items.iter().map(|i| as_f64(key, i)).collect(),
        other => Ok(vec![as_f64(key, other)?]),
    }
}

impl Settings {
    pub fn from_options(options: &Options) -> Result<Settings, OptimError> {
        if let Some(k) = options.keys().find(|k| !KNOWN_OPTIONS.contains(&k.as_str())) {
            return Err(OptimError::UnknownOption(k.clone()));
        }
        let mut s = Settings::default();
        for (key, v) in options {
            let k = key.as_str();
            match k {
                "method" => {
                    v.as_str().ok_or_else(|| invalid(k, "expected a string"))?;
                }
                "dimension" => {
                    let n = as_usize(k, v)?;
                    if n == 0 || n > MAX_QUBITS {
                        return Err(invalid(k, format!("qubit count must be in 1..={MAX_QUBITS}")));
                    }
                    s.dimension = Some(n);
                }
                "target-U" => s.target = Some(v.clone()),
                "control-params" => s.control_params = as_strings(k, v)?,
                "control-funcs" => s.control_funcs = as_strings(k, v)?,
                "control-H" => s.control_h = as_strings(k, v)?,
                "max-time" => s.max_time = Some(as_positive(k, v)?),
                "initial-parameters" => s.initial_parameters = Some(as_numbers(k, v)?),
                "n-samples" => {
                    let n = as_usize(k, v)?;
                    if n == 0 {
                        return Err(invalid(k, "must be at least 1"));
                    }
                    s.n_samples = Some(n);
                }
                "amplitude-bound" => {
                    let b = as_f64(k, v)?;
                    if b < 0.0 {
                        return Err(invalid(k, "must be non-negative"));
                    }
                    s.amplitude_bound = Some(b);
                }
                "seed" => s.seed = Some(v.as_u64().ok_or_else(|| invalid(k, "expected a non-negative integer"))?),
                "tol" => s.tol = Some(as_positive(k, v)?),
                "max-iters" => s.max_iters = Some(as_usize(k, v)?),
                "dt" => s.dt = Some(as_positive(k, v)?),
                "learning-rate" => s.learning_rate = Some(as_positive(k, v)?),
                "lambda" => s.lambda = Some(as_positive(k, v)?),
                _ => unreachable!("filtered above"),
            }
        }
        if !s.control_params.is_empty() && s.control_funcs.is_empty() {
            return Err(OptimError::MissingOption("control-funcs".into()));
        }
        if !s.control_params.is_empty() && s.initial_parameters.is_none() {
            return Err(OptimError::MissingOption("initial-parameters".into()));
        }
        Ok(s)
    }
}

/// Interprets a `target-U` value: a Pauli product (`"X0"`, `"Z0*Z1"`), a
/// single gate token (`"H0"`), a circuit source, or an inline matrix given
/// as rows of numbers or `[re, im]` pairs.
pub fn parse_target(v: &Value, n_qubits: Option<usize>) -> Result<ComplexMatrix, OptimError> {
    let key = "target-U";
    match v {
        Value::String(s) => target_from_str(s, n_qubits),
        Value::Array(rows) => {
            let dim = rows.len();
            let mut m = linalg::zeros(dim);
            for (i, row) in rows.iter().enumerate() {
                let row = row.as_array().filter(|r| r.len() == dim).ok_or_else(|| invalid(key, "matrix must be square"))?;
                for (j, entry) in row.iter().enumerate() {
                    m[(i, j)] = match entry {
                        Value::Array(pair) if pair.len() == 2 => {
                            linalg::c(as_f64(key, &pair[0])?, as_f64(key, &pair[1])?)
                        }
                        other => linalg::c(as_f64(key, other)?, 0.0),
                    };
                }
            }
            if !dim.is_power_of_two() || dim < 2 {
                return Err(invalid(key, "matrix dimension must be a power of two"));
            }
            Ok(m)
        }
        _ => Err(invalid(key, "expected a gate name, circuit source or matrix")),
    }
}

fn target_from_str(s: &str, n_qubits: Option<usize>) -> Result<ComplexMatrix, OptimError> {
    let key = "target-U";
    if let Ok(op) = OperatorExpr::parse(s) {
        let n = n_qubits.unwrap_or_else(|| op.max_qubit().map_or(1, |q| q + 1));
        return build_operator(&op, n).map_err(OptimError::from);
    }
    let split = s.find(|c: char| c.is_ascii_digit());
    let gate = split.and_then(|i| {
        let (name, digits) = s.split_at(i);
        let kind = GateKind::from_name(name).filter(|k| k.n_targets() == 1 && k.n_params() == 0)?;
        Some((kind, digits.parse::<usize>().ok()?))
    });
    let circuit = match gate {
        Some((kind, q)) => {
            let n = n_qubits.unwrap_or(q + 1);
            Circuit::new(n).with(Gate::fixed(kind, &[q]))
        }
        None => parse_circuit_on(s, n_qubits.unwrap_or(1)).or_else(|e| match n_qubits {
            Some(_) => Err(e),
            None => crate::circuit::parse_circuit(s),
        }),
    }
    .map_err(|e| invalid(key, e.to_string()))?;
    circuit_unitary_capped(&circuit, MAX_QUBITS).map_err(|e| invalid(key, e.to_string()))
}

/// A configured optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    method: Method,
    settings: Settings,
}

/// Looks up `method` (case-insensitive) and validates `options`.
pub fn get_optimizer(method: &str, options: &Options) -> Result<Optimizer, OptimError> {
    let method = Method::parse(method)?;
    if let Some(m) = options.get("method").and_then(Value::as_str) {
        if Method::parse(m)? != method {
            return Err(invalid("method", format!("`{m}` conflicts with requested method {method}")));
        }
    }
    let settings = Settings::from_options(options)?;
    Ok(Optimizer { method, settings })
}

impl Optimizer {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    /// Runs with the system described entirely by the options: `dimension`
    /// qubits, one channel per `control-H` operator (named after it), and
    /// `dt = max-time / n-samples` (default 100 samples) unless `dt` is given.
    pub fn optimize(&self) -> Result<OptimResult, OptimError> {
        let s = &self.settings;
        if self.method == Method::Goat && s.control_funcs.is_empty() {
            return Err(OptimError::MissingOption("control-funcs".into()));
        }
        let n = s.dimension.ok_or_else(|| OptimError::MissingOption("dimension".into()))?;
        if s.control_h.is_empty() {
            return Err(OptimError::MissingOption("control-H".into()));
        }
        let tau = s.max_time.ok_or_else(|| OptimError::MissingOption("max-time".into()))?;
        let dt = s.dt.unwrap_or(tau / s.n_samples.unwrap_or(100) as f64);
        let mut model = SystemModel::new(n, dt);
        for op in &s.control_h {
            let parsed: OperatorExpr = op.parse()?;
            model.control.push(crate::model::ControlTerm { channel: op.clone(), op: parsed, quadrature: None });
        }
        let target_v = s.target.as_ref().ok_or_else(|| OptimError::MissingOption("target-U".into()))?;
        let target = parse_target(target_v, Some(n))?;
        self.optimize_model(&model, &target)
    }

    /// Builds the control problem for a given model and target, deducing the
    /// sample count from `max-time` and the model `dt`.
    pub fn problem(&self, model: &SystemModel, target: &ComplexMatrix) -> Result<ControlProblem, OptimError> {
        let s = &self.settings;
        if let Some(n) = s.dimension {
            if n != model.n_qubits {
                return Err(invalid("dimension", format!("model has {} qubits", model.n_qubits)));
            }
        }
        let tau = s.max_time.ok_or_else(|| OptimError::MissingOption("max-time".into()))?;
        let mut p = ControlProblem::new(model.clone(), target.clone(), tau)?;
        if let Some(n) = s.n_samples {
            if n != p.n_samples {
                return Err(invalid("n-samples", format!("max-time/dt gives {} samples", p.n_samples)));
            }
        }
        p.amplitude_bound = s.amplitude_bound.unwrap_or(0.0);
        p.seed = s.seed.unwrap_or(0);
        p.tol = s.tol;
        p.max_iters = s.max_iters;
        if let Some(lr) = s.learning_rate {
            p.learning_rate = lr;
        }
        if let Some(l) = s.lambda {
            p.lambda = l;
        }
        if self.method != Method::Goat {
            if let Some(init) = &s.initial_parameters {
                let (n_c, n_s) = (p.n_channels(), p.n_samples);
                p.initial = match init.len() {
                    1 => InitialGuess::Square(init[0]),
                    len if len == n_c * n_s => InitialGuess::Explicit(init.chunks(n_s).map(<[f64]>::to_vec).collect()),
                    len => {
                        return Err(invalid(
                            "initial-parameters",
                            format!("expected 1 or {} values, got {len}", n_c * n_s),
                        ))
                    }
                };
            }
        }
        Ok(p)
    }

    /// Envelope family for GOAT: `control-funcs` when given, otherwise one
    /// Gaussian per channel centred at `τ/2` with width `8·dt` and amplitude
    /// 0.1, training amplitude and width.
    pub fn goat_envelopes(&self, p: &ControlProblem) -> Result<Box<dyn EnvelopeFamily>, OptimError> {
        let s = &self.settings;
        let n_c = p.n_channels();
        if !s.control_funcs.is_empty() {
            let channels = if s.control_h.is_empty() {
                if s.control_funcs.len() != n_c {
                    return Err(invalid("control-funcs", format!("model has {n_c} channels")));
                }
                (0..n_c).collect()
            } else {
                s.control_h
                    .iter()
                    .map(|name| {
                        p.hamiltonian
                            .controls
                            .iter()
                            .position(|c| &c.channel == name)
                            .or_else(|| p.model.control.iter().position(|c| c.op.source() == name))
                            .ok_or_else(|| invalid("control-H", format!("no model channel `{name}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            let init = s.initial_parameters.clone().unwrap_or_default();
            let family = ExprEnvelopes::new(n_c, channels, &s.control_funcs, s.control_params.clone(), init)?;
            return Ok(Box::new(family));
        }
        let (mut amp, mut width) = (vec![0.1; n_c], vec![8.0 * p.hamiltonian.dt; n_c]);
        if let Some(init) = &s.initial_parameters {
            if init.len() != 2 * n_c {
                return Err(invalid("initial-parameters", format!("expected {} (amplitude, width) values", 2 * n_c)));
            }
            for c in 0..n_c {
                amp[c] = init[2 * c];
                width[c] = init[2 * c + 1];
            }
        }
        let terms = (0..n_c)
            .map(|c| GaussianTerm { channel: c, amplitude: amp[c], center: p.horizon / 2.0, width: width[c] })
            .collect();
        let trainable = (0..n_c).flat_map(|c| [(c, GoatParam::Amplitude), (c, GoatParam::Width)]).collect();
        Ok(Box::new(GoatEnvelopeSpec::new(n_c, terms, trainable)?))
    }

    pub fn optimize_model(&self, model: &SystemModel, target: &ComplexMatrix) -> Result<OptimResult, OptimError> {
        let p = self.problem(model, target)?;
        self.run(&p)
    }

    pub fn run(&self, p: &ControlProblem) -> Result<OptimResult, OptimError> {
        match self.method {
            Method::Grape => grape_optimize(p),
            Method::Krotov => krotov_optimize(p),
            Method::Goat => {
                let env = self.goat_envelopes(p)?;
                goat_optimize(p, env.as_ref())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn opts(v: Value) -> Options {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn lookup_is_case_insensitive() {
        assert_eq!(get_optimizer("grape", &opts(json!({"max-time": 10}))).unwrap().method(), Method::Grape);
        assert_eq!(get_optimizer("KROTOV", &Options::new()).unwrap().method(), Method::Krotov);
        assert_eq!(get_optimizer("NELDER", &Options::new()), Err(OptimError::UnknownMethod("NELDER".into())));
    }

    #[test]
    fn fig6_style_options_accepted() {
        let o = opts(json!({
            "method": "GOAT",
            "dimension": 1,
            "target-U": "X0",
            "control-params": ["sigma"],
            "control-funcs": ["exp(-t^2/(2*sigma^2))"],
            "control-H": ["X0"],
            "max-time": 100,
            "initial-parameters": [8.0]
        }));
        let h = get_optimizer("GOAT", &o).unwrap();
        assert_eq!(h.method(), Method::Goat);
        assert_eq!(h.settings().control_params, vec!["sigma".to_string()]);
    }

    #[test]
    fn option_errors() {
        assert_eq!(
            get_optimizer("GRAPE", &opts(json!({"bogus": 1}))),
            Err(OptimError::UnknownOption("bogus".into()))
        );
        assert!(matches!(
            get_optimizer("GRAPE", &opts(json!({"max-time": "ten"}))),
            Err(OptimError::InvalidOption { .. })
        ));
        assert_eq!(
            get_optimizer("GOAT", &opts(json!({"control-params": ["sigma"], "initial-parameters": [1.0]}))),
            Err(OptimError::MissingOption("control-funcs".into()))
        );
        assert!(matches!(
            get_optimizer("GRAPE", &opts(json!({"method": "GOAT"}))),
            Err(OptimError::InvalidOption { .. })
        ));
        let h = get_optimizer("GRAPE", &opts(json!({"dimension": 1, "control-H": ["X0"]}))).unwrap();
        assert_eq!(h.optimize(), Err(OptimError::MissingOption("max-time".into())));
    }

    #[test]
    fn targets() {
        let x = parse_target(&json!("X0"), Some(1)).unwrap();
        assert!(linalg::max_abs_diff(&x, &linalg::pauli_x()) < 1e-15);
        let h = parse_target(&json!("H0"), None).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((h[(1, 1)].re + s).abs() < 1e-15);
        let cx = parse_target(&json!("CNOT(q[0], q[1])"), Some(2)).unwrap();
        assert_eq!(cx.nrows(), 4);
        let m = parse_target(&json!([[0, 1], [1, [0.0, 0.0]]]), None).unwrap();
        assert!(linalg::max_abs_diff(&m, &linalg::pauli_x()) < 1e-15);
        assert!(parse_target(&json!([[1, 0]]), None).is_err());
        assert!(parse_target(&json!(3), None).is_err());
    }

    #[test]
    fn options_only_grape_run() {
        let o = opts(json!({
            "dimension": 1, "target-U": "X0", "control-H": ["X0"], "max-time": 10, "n-samples": 50, "seed": 7
        }));
        let r = get_optimizer("GRAPE", &o).unwrap().optimize().unwrap();
        assert!(r.infidelity <= 1e-4);
        assert_eq!(r.samples.channels[0].0, "X0");
    }

    #[test]
    fn n_samples_must_agree_with_model() {
        let o = opts(json!({"max-time": 10, "n-samples": 7}));
        let m = SystemModel::new(1, 0.2).with_control("X0", "X0");
        let h = get_optimizer("GRAPE", &o).unwrap();
        assert!(matches!(h.problem(&m, &linalg::pauli_x()), Err(OptimError::InvalidOption { .. })));
    }
}
