//! Lowering from circuits to pulse programs: optimal-control synthesis,
//! library-based lowering and the pulse program document format.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{circuit_unitary_capped, Circuit, CircuitError};
use crate::dynamics::{piecewise_propagator, DynamicsError, SampledSignal};
use crate::linalg::ComplexMatrix;
use crate::model::{Hamiltonian, ModelError, SystemModel, MAX_QUBITS};
use crate::optimizers::{get_optimizer, infidelity, InitialGuess, Method, OptimError, OptimResult, Options};

/// Default ceiling on the infidelity of an accepted compilation.
pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 5e-2;
const IDLE_MATCH_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("instruction on `{0}` has no samples")]
    EmptyInstruction(String),
    #[error("instructions on `{channel}` overlap at sample {at}")]
    Overlap { channel: String, at: usize },
    #[error("dt must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("horizon {horizon} is shorter than one sample of {dt}")]
    EmptyPulse { horizon: f64, dt: f64 },
    #[error("envelope is not finite at t = {0}")]
    NonFiniteEnvelope(f64),
    #[error("no library pulse for {0}")]
    MissingLibraryEntry(String),
    #[error("channel `{0}` is not defined by the model")]
    UnknownChannel(String),
    #[error("program dt {program} does not match model dt {model}")]
    DtMismatch { program: f64, model: f64 },
    #[error("compiled infidelity {infidelity:.3e} exceeds the accept threshold {threshold:.3e}")]
    NotConverged { infidelity: f64, threshold: f64, program: Box<PulseProgram> },
    #[error("invalid option `{key}`: {message}")]
    InvalidOption { key: String, message: String },
    #[error("malformed pulse document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseInstruction {
    pub channel: String,
    /// Start, in samples.
    pub t0: usize,
    pub samples: Vec<Complex64>,
}

impl PulseInstruction {
    pub fn new(channel: impl Into<String>, t0: usize, samples: Vec<Complex64>) -> PulseInstruction {
        PulseInstruction { channel: channel.into(), t0, samples }
    }

    pub fn end(&self) -> usize {
        self.t0 + self.samples.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramMetadata {
    pub method: String,
    pub infidelity: f64,
}

/// Per-channel sample arrays with start times, kept in canonical order
/// (by start, then channel).
#[derive(Debug, Clone, PartialEq)]
pub struct PulseProgram {
    dt: f64,
    instructions: Vec<PulseInstruction>,
    pub metadata: Option<ProgramMetadata>,
}

impl PulseProgram {
    pub fn new(dt: f64, mut instructions: Vec<PulseInstruction>) -> Result<PulseProgram, SynthesisError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SynthesisError::InvalidDt(dt));
        }
        if let Some(i) = instructions.iter().find(|i| i.samples.is_empty()) {
            return Err(SynthesisError::EmptyInstruction(i.channel.clone()));
        }
        instructions.sort_by(|a, b| (a.t0, &a.channel).cmp(&(b.t0, &b.channel)));
        let mut busy_until: BTreeMap<&str, usize> = BTreeMap::new();
        for i in &instructions {
            let end = busy_until.entry(&i.channel).or_insert(0);
            if i.t0 < *end {
                return Err(SynthesisError::Overlap { channel: i.channel.clone(), at: i.t0 });
            }
            *end = i.end();
        }
        Ok(PulseProgram { dt, instructions, metadata: None })
    }

    pub fn empty(dt: f64) -> Result<PulseProgram, SynthesisError> {
        PulseProgram::new(dt, Vec::new())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn instructions(&self) -> &[PulseInstruction] {
        &self.instructions
    }

    /// Sample count up to the end of the last instruction.
    pub fn total_duration(&self) -> usize {
        self.instructions.iter().map(PulseInstruction::end).max().unwrap_or(0)
    }

    /// Distinct channels in first-use order.
    pub fn channels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for i in &self.instructions {
            if !out.contains(&i.channel.as_str()) {
                out.push(&i.channel);
            }
        }
        out
    }

    /// Flattens the program onto a `total_duration`-sample grid; gaps are zero.
    pub fn to_signal(&self) -> Result<SampledSignal, SynthesisError> {
        let n = self.total_duration();
        let mut grid: BTreeMap<&str, Vec<Complex64>> = BTreeMap::new();
        for i in &self.instructions {
            let line = grid.entry(&i.channel).or_insert_with(|| vec![Complex64::new(0.0, 0.0); n]);
            line[i.t0..i.end()].copy_from_slice(&i.samples);
        }
        let channels = grid.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        Ok(SampledSignal::new(self.dt, channels)?)
    }

    /// Checks that every channel exists in the model and that dt agrees.
    pub fn check_against(&self, h: &Hamiltonian) -> Result<(), SynthesisError> {
        if (self.dt - h.dt).abs() > 1e-12 * h.dt.max(1.0) {
            return Err(SynthesisError::DtMismatch { program: self.dt, model: h.dt });
        }
        for ch in self.channels() {
            if !h.controls.iter().any(|c| c.channel == ch) {
                return Err(SynthesisError::UnknownChannel(ch.to_string()));
            }
        }
        Ok(())
    }

    /// Propagator of the whole program under `h`.
    pub fn propagator(&self, h: &Hamiltonian) -> Result<ComplexMatrix, SynthesisError> {
        self.check_against(h)?;
        let sig = self.to_signal()?;
        if sig.n_samples() == 0 {
            return Ok(crate::linalg::identity(h.dim()));
        }
        Ok(piecewise_propagator(h, &sig)?)
    }

    /// Canonical JSON document.
    pub fn emit(&self) -> String {
        let doc = Document {
            dt: self.dt,
            instructions: self
                .instructions
                .iter()
                .map(|i| DocInstruction {
                    channel: i.channel.clone(),
                    t0: i.t0,
                    samples: i.samples.iter().map(|s| [canon(s.re), canon(s.im)]).collect(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("pulse documents always serialize");
        text.push('\n');
        text
    }

    pub fn parse(text: &str) -> Result<PulseProgram, SynthesisError> {
        let doc: Document = serde_json::from_str(text).map_err(|e| SynthesisError::Document(e.to_string()))?;
        let instructions = doc
            .instructions
            .into_iter()
            .map(|i| PulseInstruction {
                channel: i.channel,
                t0: i.t0,
                samples: i.samples.into_iter().map(|[re, im]| Complex64::new(re, im)).collect(),
            })
            .collect();
        let mut p = PulseProgram::new(doc.dt, instructions)?;
        p.metadata = doc.metadata;
        Ok(p)
    }
}

fn canon(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    dt: f64,
    instructions: Vec<DocInstruction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<ProgramMetadata>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocInstruction {
    channel: String,
    t0: usize,
    samples: Vec<[f64; 2]>,
}

/// Samples `f` at the left endpoint of each of `round(τ/dt)` intervals.
pub fn discretize_envelope(f: impl Fn(f64) -> Complex64, tau: f64, dt: f64) -> Result<Vec<Complex64>, SynthesisError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SynthesisError::InvalidDt(dt));
    }
    if !(tau >= dt) {
        return Err(SynthesisError::EmptyPulse { horizon: tau, dt });
    }
    let n = (tau / dt).round() as usize;
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let v = f(t);
            if v.re.is_finite() && v.im.is_finite() {
                Ok(v)
            } else {
                Err(SynthesisError::NonFiniteEnvelope(t))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GateKey {
    pub name: String,
    pub targets: Vec<usize>,
}

impl GateKey {
    pub fn new(name: &str, targets: &[usize]) -> GateKey {
        GateKey { name: name.to_string(), targets: targets.to_vec() }
    }
}

impl std::fmt::Display for GateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let qs: Vec<String> = self.targets.iter().map(|q| format!("q[{q}]")).collect();
        write!(f, "{}({})", self.name, qs.join(", "))
    }
}

/// Calibrated pulse fragments keyed by gate name and targets, all sharing
/// one sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseLibrary {
    dt: f64,
    entries: BTreeMap<GateKey, PulseProgram>,
}

impl PulseLibrary {
    pub fn new(dt: f64) -> PulseLibrary {
        PulseLibrary { dt, entries: BTreeMap::new() }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn insert(&mut self, key: GateKey, fragment: PulseProgram) -> Result<(), SynthesisError> {
        if (fragment.dt - self.dt).abs() > 1e-12 * self.dt.max(1.0) {
            return Err(SynthesisError::DtMismatch { program: fragment.dt, model: self.dt });
        }
        self.entries.insert(key, fragment);
        Ok(())
    }

    pub fn with(mut self, key: GateKey, fragment: PulseProgram) -> Result<PulseLibrary, SynthesisError> {
        self.insert(key, fragment)?;
        Ok(self)
    }

    pub fn get(&self, key: &GateKey) -> Option<&PulseProgram> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks every fragment against the model.
    pub fn check_against(&self, h: &Hamiltonian) -> Result<(), SynthesisError> {
        self.entries.values().try_for_each(|f| f.check_against(h))
    }
}

/// Lowers gate by gate. Each fragment is shifted to start once every channel
/// it drives is free; gates on disjoint channels may overlap in time.
pub fn library_lower(c: &Circuit, lib: &PulseLibrary) -> Result<PulseProgram, SynthesisError> {
    let mut free_at: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for g in &c.gates {
        let key = GateKey::new(g.kind.name(), &g.targets);
        let frag = lib.get(&key).ok_or_else(|| SynthesisError::MissingLibraryEntry(key.to_string()))?;
        let shift = frag.channels().iter().map(|ch| free_at.get(*ch).copied().unwrap_or(0)).max().unwrap_or(0);
        for i in frag.instructions() {
            let placed = PulseInstruction::new(i.channel.clone(), i.t0 + shift, i.samples.clone());
            let end = free_at.entry(i.channel.clone()).or_insert(0);
            *end = (*end).max(placed.end());
            out.push(placed);
        }
        // reserve every fragment channel through the fragment's full span
        let span_end = shift + frag.total_duration();
        for ch in frag.channels() {
            let end = free_at.entry(ch.to_string()).or_insert(0);
            *end = (*end).max(span_end);
        }
    }
    PulseProgram::new(lib.dt, out)
}

/// Output of an optimal-control compilation.
#[derive(Debug, Clone, PartialEq)]
pub struct Compilation {
    pub program: PulseProgram,
    pub result: OptimResult,
    pub target: ComplexMatrix,
    /// Infidelity of the emitted samples under the piecewise engine.
    pub infidelity: f64,
}

/// Optimal-control lowering of a concrete circuit. `options` takes the
/// optimizer keys plus `accept-threshold`.
pub fn transform(c: &Circuit, m: &SystemModel, method: &str, options: &Options) -> Result<PulseProgram, SynthesisError> {
    transform_detailed(c, m, method, options).map(|c| c.program)
}

pub fn transform_detailed(
    c: &Circuit,
    m: &SystemModel,
    method: &str,
    options: &Options,
) -> Result<Compilation, SynthesisError> {
    let mut options = options.clone();
    let threshold = match options.remove("accept-threshold") {
        None => DEFAULT_ACCEPT_THRESHOLD,
        Some(v) => v.as_f64().filter(|x| *x >= 0.0).ok_or_else(|| SynthesisError::InvalidOption {
            key: "accept-threshold".into(),
            message: "expected a non-negative number".into(),
        })?,
    };
    let optimizer = get_optimizer(method, &options)?;
    if c.n_qubits != m.n_qubits {
        return Err(SynthesisError::Optim(OptimError::DimensionMismatch { expected: m.dim(), got: 1 << c.n_qubits }));
    }
    let target = circuit_unitary_capped(c, MAX_QUBITS)?;
    let mut problem = optimizer.problem(m, &target)?;
    if optimizer.method() != Method::Goat && optimizer.settings().initial_parameters.is_none() {
        // targets the idle evolution already meets start from the zero pulse
        let idle = piecewise_propagator(&problem.hamiltonian, &SampledSignal::zeros(&problem.hamiltonian, problem.n_samples))?;
        if infidelity(&idle, &target)? <= IDLE_MATCH_TOL {
            problem.initial = InitialGuess::Zero;
        }
    }
    let result = optimizer.run(&problem)?;

    let instructions = result
        .samples
        .channels
        .iter()
        .map(|(name, samples)| PulseInstruction::new(name.clone(), 0, samples.clone()))
        .collect();
    let mut program = PulseProgram::new(problem.hamiltonian.dt, instructions)?;
    let u = program.propagator(&problem.hamiltonian)?;
    let achieved = match optimizer.method() {
        Method::Goat => infidelity(&u, &target)?,
        _ => result.infidelity,
    };
    program.metadata = Some(ProgramMetadata { method: optimizer.method().name().to_string(), infidelity: achieved });
    if achieved > threshold {
        return Err(SynthesisError::NotConverged { infidelity: achieved, threshold, program: Box::new(program) });
    }
    Ok(Compilation { program, result, target, infidelity: achieved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Gate, GateKind};
    use crate::linalg::c;
    use serde_json::json;

    fn ones(n: usize) -> Vec<Complex64> {
        vec![c(1.0, 0.0); n]
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize_envelope(|_| c(1.0, 0.0), 5.0, 1.0).unwrap(), ones(5));
        let s = std::f64::consts::FRAC_PI_2.sqrt();
        let g = discretize_envelope(|t| c((-t * t / (2.0 * s * s)).exp(), 0.0), 4.0, 0.5).unwrap();
        for (n, v) in g.iter().enumerate() {
            let t = n as f64 * 0.5;
            assert!((v.re - (-t * t / std::f64::consts::PI).exp()).abs() < 1e-15);
        }
        assert!(matches!(discretize_envelope(|_| c(1.0, 0.0), 0.5, 1.0), Err(SynthesisError::EmptyPulse { .. })));
        assert!(matches!(
            discretize_envelope(|t| c(1.0 / (t - 2.0), 0.0), 5.0, 1.0),
            Err(SynthesisError::NonFiniteEnvelope(_))
        ));
    }

    fn x_lib() -> PulseLibrary {
        let frag = |ch: &str| PulseProgram::new(1.0, vec![PulseInstruction::new(ch, 0, ones(10))]).unwrap();
        PulseLibrary::new(1.0)
            .with(GateKey::new("X", &[0]), frag("d0"))
            .and_then(|l| l.with(GateKey::new("X", &[1]), frag("d1")))
            .unwrap()
    }

    #[test]
    fn repeated_gate_is_shifted() {
        let circ = Circuit::new(1).with(Gate::fixed(GateKind::X, &[0])).unwrap().with(Gate::fixed(GateKind::X, &[0])).unwrap();
        let p = library_lower(&circ, &x_lib()).unwrap();
        let starts: Vec<usize> = p.instructions().iter().map(|i| i.t0).collect();
        assert_eq!(starts, vec![0, 10]);
        assert_eq!(p.total_duration(), 20);
    }

    #[test]
    fn empty_circuit_lowers_to_empty_program() {
        let p = library_lower(&Circuit::new(1), &x_lib()).unwrap();
        assert!(p.instructions().is_empty());
        assert_eq!(p.total_duration(), 0);
    }

    #[test]
    fn disjoint_gates_run_concurrently() {
        let circ = Circuit::new(2).with(Gate::fixed(GateKind::X, &[0])).unwrap().with(Gate::fixed(GateKind::X, &[1])).unwrap();
        let p = library_lower(&circ, &x_lib()).unwrap();
        assert_eq!(p.instructions().iter().map(|i| i.t0).collect::<Vec<_>>(), vec![0, 0]);
    }

    #[test]
    fn missing_entry_names_the_gate() {
        let circ = Circuit::new(1).with(Gate::fixed(GateKind::H, &[0])).unwrap();
        match library_lower(&circ, &x_lib()) {
            Err(SynthesisError::MissingLibraryEntry(k)) => assert_eq!(k, "H(q[0])"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn program_invariants() {
        let overlap = PulseProgram::new(
            1.0,
            vec![PulseInstruction::new("d0", 0, ones(3)), PulseInstruction::new("d0", 2, ones(3))],
        );
        assert!(matches!(overlap, Err(SynthesisError::Overlap { .. })));
        assert!(matches!(
            PulseProgram::new(1.0, vec![PulseInstruction::new("d0", 0, vec![])]),
            Err(SynthesisError::EmptyInstruction(_))
        ));
        assert!(matches!(PulseProgram::new(0.0, vec![]), Err(SynthesisError::InvalidDt(_))));
    }

    #[test]
    fn empty_program_document() {
        let p = PulseProgram::empty(0.5).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&p.emit()).unwrap();
        assert_eq!(doc, json!({"dt": 0.5, "instructions": []}));
        assert_eq!(PulseProgram::parse(&p.emit()).unwrap(), p);
    }

    #[test]
    fn single_instruction_round_trip() {
        let mut p = PulseProgram::new(0.2, vec![PulseInstruction::new("d0", 3, vec![c(0.1, -0.25), c(1e-17, 0.0)])])
            .unwrap();
        p.metadata = Some(ProgramMetadata { method: "GRAPE".into(), infidelity: 3.2e-5 });
        let text = p.emit();
        let back = PulseProgram::parse(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.emit(), text);
    }

    #[test]
    fn emission_is_order_independent() {
        let a = PulseInstruction::new("d1", 0, ones(2));
        let b = PulseInstruction::new("d0", 0, ones(2));
        let p1 = PulseProgram::new(1.0, vec![a.clone(), b.clone()]).unwrap();
        let p2 = PulseProgram::new(1.0, vec![b, a]).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.emit(), p2.emit());
        assert_eq!(p1.instructions()[0].channel, "d0");
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(matches!(PulseProgram::parse("{}"), Err(SynthesisError::Document(_))));
        assert!(matches!(
            PulseProgram::parse(r#"{"dt":1,"instructions":[],"extra":1}"#),
            Err(SynthesisError::Document(_))
        ));
    }

    #[test]
    fn unknown_program_channel() {
        let h = SystemModel::new(1, 1.0).with_control("d0", "X0").materialize().unwrap();
        let p = PulseProgram::new(1.0, vec![PulseInstruction::new("d9", 0, ones(1))]).unwrap();
        assert_eq!(p.propagator(&h), Err(SynthesisError::UnknownChannel("d9".into())));
    }

    #[test]
    fn hadamard_with_grape() {
        let m = SystemModel::new(1, 0.2).with_control("d0", "X0").with_control("d1", "Y0");
        let circ = Circuit::new(1).with(Gate::fixed(GateKind::H, &[0])).unwrap();
        let opts: Options = serde_json::from_value(json!({"max-time": 10, "seed": 3})).unwrap();
        let out = transform_detailed(&circ, &m, "GRAPE", &opts).unwrap();
        assert_eq!(out.program.instructions().len(), 2);
        let h = m.materialize().unwrap();
        let u = out.program.propagator(&h).unwrap();
        let f = infidelity(&u, &out.target).unwrap();
        assert!(f <= 1e-3);
        assert!((f - out.infidelity).abs() <= 1e-6);
        assert_eq!(out.program.metadata.as_ref().unwrap().method, "GRAPE");
    }

    #[test]
    fn identity_target_keeps_zero_pulse() {
        let m = SystemModel::new(1, 0.2).with_control("d0", "X0");
        let circ = Circuit::new(1).with(Gate::with_angles(GateKind::Rx, &[0], &[0.0])).unwrap();
        let opts: Options = serde_json::from_value(json!({"max-time": 2})).unwrap();
        let out = transform_detailed(&circ, &m, "GRAPE", &opts).unwrap();
        assert_eq!(out.infidelity, 0.0);
        assert_eq!(out.result.iterations, 0);
        assert!(out.program.instructions()[0].samples.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn threshold_failure_carries_program() {
        let m = SystemModel::new(1, 0.2).with_control("d0", "X0");
        let circ = Circuit::new(1).with(Gate::fixed(GateKind::H, &[0])).unwrap();
        let opts: Options = serde_json::from_value(json!({"max-time": 10, "max-iters": 2, "accept-threshold": 1e-9})).unwrap();
        match transform(&circ, &m, "GRAPE", &opts) {
            Err(SynthesisError::NotConverged { program, infidelity, .. }) => {
                assert_eq!(program.metadata.unwrap().infidelity, infidelity);
            }
            other => panic!("{other:?}"),
        }
    }
}
