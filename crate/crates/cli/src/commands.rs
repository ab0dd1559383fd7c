use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;

use qoc_core::circuit::{circuit_unitary, eval_parametric, parse_circuit, parse_circuit_on, Circuit};
use qoc_core::dynamics::{
    expectation, fmt_sig, lindblad_evolve, piecewise_trajectory, trajectory_csv, ControlSignal, LindbladOptions,
    QuantumState,
};
use qoc_core::expr::parse_expr;
use qoc_core::linalg::{self, c, ComplexMatrix, StateVector};
use qoc_core::model::{apply_detuning, build_operator, parse_model, Hamiltonian, OperatorExpr, SystemModel};
use qoc_core::optimizers::{Method, OptimError, Options};
use qoc_core::synthesis::{transform_detailed, PulseProgram, SynthesisError};

use crate::manifest::Manifest;
use crate::{CliError, Command, CompileArgs, OptimizerArgs, ReplayArgs, SimulateArgs, SweepArgs, UnitaryArgs};

pub(crate) fn dispatch(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Compile(a) => compile(a),
        Command::Simulate(a) => simulate(a),
        Command::Unitary(a) => unitary(a),
        Command::Sweep(a) => sweep(a),
        Command::Replay(a) => replay(a),
    }
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::Io(format!("cannot resolve {}: {e}", path.display())))
}

fn path_str(path: &Path) -> Result<String, CliError> {
    Ok(absolute(path)?.to_string_lossy().into_owned())
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn optim_error(e: OptimError) -> CliError {
    match e {
        OptimError::NonFiniteGradient | OptimError::MonotonicityViolation { .. } | OptimError::Dynamics(_) => {
            CliError::Convergence(e.to_string())
        }
        other => CliError::Input(other.to_string()),
    }
}

fn synthesis_error(e: SynthesisError) -> CliError {
    match e {
        SynthesisError::Optim(o) => optim_error(o),
        SynthesisError::NotConverged { .. } | SynthesisError::Dynamics(_) => CliError::Convergence(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

fn load_model(path: &Path) -> Result<SystemModel, CliError> {
    parse_model(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_circuit(path: &Path, n_qubits: Option<usize>) -> Result<Circuit, CliError> {
    let src = read(path)?;
    match n_qubits {
        Some(n) => parse_circuit_on(&src, n),
        None => parse_circuit(&src),
    }
    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn check_method(name: &str) -> Result<Method, CliError> {
    Method::parse(name).map_err(|_| {
        let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        CliError::Input(format!("unknown method `{name}`; available methods: {}", known.join(", ")))
    })
}

impl OptimizerArgs {
    /// Optimizer options map, including `accept-threshold`.
    fn options(&self) -> Result<Options, CliError> {
        check_method(&self.method)?;
        let mut o = Options::new();
        o.insert("max-time".into(), Value::from(self.max_time));
        o.insert("seed".into(), Value::from(self.seed));
        let optional = [
            ("n-samples", self.n_samples.map(Value::from)),
            ("tol", self.tol.map(Value::from)),
            ("amplitude-bound", self.amplitude_bound.map(Value::from)),
            ("max-iters", self.max_iters.map(Value::from)),
            ("accept-threshold", self.accept_threshold.map(Value::from)),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                o.insert(k.into(), v);
            }
        }
        for kv in &self.extra {
            let (k, v) = kv.split_once('=').ok_or_else(|| input(format!("--set expects KEY=JSON, got `{kv}`")))?;
            let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            o.insert(k.trim().to_string(), v);
        }
        Ok(o)
    }

    fn to_argv(&self) -> Vec<String> {
        let mut v = vec!["--method".into(), self.method.clone(), "--max-time".into(), self.max_time.to_string()];
        v.extend(["--seed".into(), self.seed.to_string()]);
        let optional = [
            ("--n-samples", self.n_samples.map(|x| x.to_string())),
            ("--tol", self.tol.map(|x| x.to_string())),
            ("--amplitude-bound", self.amplitude_bound.map(|x| x.to_string())),
            ("--max-iters", self.max_iters.map(|x| x.to_string())),
            ("--accept-threshold", self.accept_threshold.map(|x| x.to_string())),
        ];
        for (flag, val) in optional {
            if let Some(val) = val {
                v.extend([flag.to_string(), val]);
            }
        }
        for kv in &self.extra {
            v.extend(["--set".to_string(), kv.clone()]);
        }
        v
    }
}

fn compile(a: CompileArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let circuit = load_circuit(&a.circuit, Some(model.n_qubits))?;
    if !circuit.free_params.is_empty() {
        return Err(input(format!("circuit has unbound parameters: {}", circuit.free_params.join(", "))));
    }
    let options = a.opt.options()?;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => {
            let stem = a.circuit.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("circuit".into());
            PathBuf::from(format!("{stem}.pulse.json"))
        }
    };

    let mut argv = vec!["compile".to_string(), path_str(&a.circuit)?, path_str(&a.model)?];
    argv.extend(a.opt.to_argv());
    argv.extend(["--out".to_string(), path_str(&out)?]);
    let mut manifest = Manifest::new("compile", argv);
    manifest.inputs.insert("circuit".into(), path_str(&a.circuit)?);
    manifest.inputs.insert("model".into(), path_str(&a.model)?);
    manifest.options = options.clone().into_iter().collect();
    manifest.options.insert("method".into(), Value::from(a.opt.method.clone()));
    manifest.seed = Some(a.opt.seed);
    manifest.outputs.insert("program".into(), path_str(&out)?);

    match transform_detailed(&circuit, &model, &a.opt.method, &options) {
        Ok(comp) => {
            write(&out, &comp.program.emit())?;
            write(&manifest_path(&out), &manifest.to_json())?;
            Ok(format!(
                "infidelity: {}\niterations: {}\nprogram: {}\n",
                fmt_sig(comp.infidelity),
                comp.result.iterations,
                out.display()
            ))
        }
        Err(SynthesisError::NotConverged { infidelity, threshold, program }) => {
            write(&out, &program.emit())?;
            write(&manifest_path(&out), &manifest.to_json())?;
            Err(CliError::Convergence(format!(
                "infidelity {} exceeds the accept threshold {}; best-effort program written to {}",
                fmt_sig(infidelity),
                fmt_sig(threshold),
                out.display()
            )))
        }
        Err(e) => Err(synthesis_error(e)),
    }
}

/// Product state from one symbol per qubit, qubit 0 first.
fn initial_state(spec: Option<&str>, n_qubits: usize) -> Result<StateVector, CliError> {
    let spec = spec.map(str::to_string).unwrap_or_else(|| "0".repeat(n_qubits));
    let symbols: Vec<char> = spec.chars().filter(|ch| !ch.is_whitespace()).collect();
    if symbols.len() != n_qubits {
        return Err(input(format!("initial state `{spec}` names {} qubits, model has {n_qubits}", symbols.len())));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut psi = StateVector::from_element(1, c(1.0, 0.0));
    for &sym in &symbols {
        let (a, b) = match sym {
            '0' => (c(1.0, 0.0), c(0.0, 0.0)),
            '1' => (c(0.0, 0.0), c(1.0, 0.0)),
            '+' => (c(s, 0.0), c(s, 0.0)),
            '-' => (c(s, 0.0), c(-s, 0.0)),
            'r' => (c(s, 0.0), c(0.0, s)),
            'l' => (c(s, 0.0), c(0.0, -s)),
            other => return Err(input(format!("unknown initial-state symbol `{other}`"))),
        };
        let site = StateVector::from_vec(vec![a, b]);
        psi = site.kronecker(&psi);
    }
    Ok(psi)
}

/// Density matrices at every sample boundary of the program.
pub(crate) fn simulate_states(
    h: &Hamiltonian,
    program: &PulseProgram,
    psi0: &StateVector,
) -> Result<Vec<ComplexMatrix>, CliError> {
    let rho0 = linalg::projector(psi0);
    if program.total_duration() == 0 {
        return Ok(vec![rho0]);
    }
    let sig = program.to_signal().map_err(synthesis_error)?;
    if h.collapse.is_empty() {
        let props = piecewise_trajectory(h, &sig).map_err(|e| CliError::Convergence(e.to_string()))?;
        Ok(props.iter().map(|u| u * &rho0 * u.adjoint()).collect())
    } else {
        let state = QuantumState::Pure(psi0.clone());
        lindblad_evolve(h, &ControlSignal::from(sig), &state, &LindbladOptions::default())
            .map_err(|e| CliError::Convergence(e.to_string()))
    }
}

fn simulate(a: SimulateArgs) -> Result<String, CliError> {
    let program = PulseProgram::parse(&read(&a.pulse)?).map_err(|e| input(format!("{}: {e}", a.pulse.display())))?;
    let mut model = load_model(&a.model)?;
    if let Some(d) = a.lo_delta {
        model = apply_detuning(&model, d);
    }
    if let Some(t1) = a.t1 {
        if !(t1 > 0.0 && t1.is_finite()) {
            return Err(input(format!("--t1 must be positive, got {t1}")));
        }
        model = model.with_t1(t1);
    }
    let h = model.materialize().map_err(input)?;
    program.check_against(&h).map_err(synthesis_error)?;
    let psi0 = initial_state(a.initial_state.as_deref(), h.n_qubits)?;
    let observables = a
        .observables
        .iter()
        .map(|src| {
            let e: OperatorExpr = src.parse().map_err(input)?;
            build_operator(&e, h.n_qubits).map_err(input)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let states = simulate_states(&h, &program, &psi0)?;
    let times: Vec<f64> = (0..states.len()).map(|k| k as f64 * h.dt).collect();
    let base = trajectory_csv(h.n_qubits, &times, &states).map_err(input)?;
    let mut csv = String::new();
    for (row, line) in base.lines().enumerate() {
        csv.push_str(line);
        for (op, src) in observables.iter().zip(&a.observables) {
            if row == 0 {
                write!(csv, ",<{src}>").expect("string write");
            } else {
                let v = expectation(op, &QuantumState::Mixed(states[row - 1].clone())).map_err(input)?;
                write!(csv, ",{}", fmt_sig(v)).expect("string write");
            }
        }
        csv.push('\n');
    }

    match &a.out {
        None => Ok(csv),
        Some(out) => {
            write(out, &csv)?;
            let mut argv = vec!["simulate".to_string(), path_str(&a.pulse)?, path_str(&a.model)?];
            let mut manifest_opts = std::collections::BTreeMap::new();
            if let Some(s) = &a.initial_state {
                argv.extend(["--initial-state".into(), s.clone()]);
                manifest_opts.insert("initial-state".to_string(), Value::from(s.clone()));
            }
            if !a.observables.is_empty() {
                argv.extend(["--observables".into(), a.observables.join(",")]);
                manifest_opts.insert("observables".to_string(), Value::from(a.observables.clone()));
            }
            if let Some(t1) = a.t1 {
                argv.extend(["--t1".into(), t1.to_string()]);
                manifest_opts.insert("t1".to_string(), Value::from(t1));
            }
            if let Some(d) = a.lo_delta {
                argv.extend(["--lo-delta".into(), d.to_string()]);
                manifest_opts.insert("lo-delta".to_string(), Value::from(d));
            }
            argv.extend(["--out".into(), path_str(out)?]);
            let mut manifest = Manifest::new("simulate", argv);
            manifest.inputs.insert("pulse".into(), path_str(&a.pulse)?);
            manifest.inputs.insert("model".into(), path_str(&a.model)?);
            manifest.options = manifest_opts;
            manifest.outputs.insert("trajectory".into(), path_str(out)?);
            write(&manifest_path(out), &manifest.to_json())?;
            Ok(format!("rows: {}\ntrajectory: {}\n", states.len(), out.display()))
        }
    }
}

fn clean(x: f64) -> f64 {
    if x.abs() < 1e-14 {
        0.0
    } else {
        x
    }
}

/// Matrix entry with 12 significant digits; real and imaginary parts below
/// 1e-14 print as zero.
pub(crate) fn fmt_entry(z: num_complex::Complex64) -> String {
    let (re, im) = (clean(z.re), clean(z.im));
    match (re == 0.0, im == 0.0) {
        (_, true) => fmt_sig(re),
        (true, false) => format!("{}i", fmt_sig(im)),
        (false, false) => {
            let sign = if im < 0.0 { '-' } else { '+' };
            format!("{}{sign}{}i", fmt_sig(re), fmt_sig(im.abs()))
        }
    }
}

pub(crate) fn fmt_matrix(m: &ComplexMatrix) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols()).map(|j| fmt_entry(m[(i, j)])).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]\n", rows.join(",\n "))
}

fn eval_value(src: &str) -> Result<f64, CliError> {
    parse_expr(src.trim())
        .and_then(|e| e.eval_const())
        .map_err(|e| input(format!("invalid value `{}`: {e}", src.trim())))
}

fn unitary(a: UnitaryArgs) -> Result<String, CliError> {
    let circuit = load_circuit(&a.circuit, None)?;
    let mut bindings = HashMap::new();
    for b in &a.bind {
        let (k, v) = b.split_once('=').ok_or_else(|| input(format!("--bind expects name=value, got `{b}`")))?;
        let k = k.trim();
        if !circuit.free_params.iter().any(|p| p == k) {
            return Err(input(format!("circuit has no parameter `{k}`")));
        }
        bindings.insert(k.to_string(), eval_value(v)?);
    }
    let missing: Vec<&str> =
        circuit.free_params.iter().filter(|p| !bindings.contains_key(*p)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(input(format!("unbound circuit parameters: {} (use --bind)", missing.join(", "))));
    }
    let values: Vec<f64> = circuit.free_params.iter().map(|p| bindings[p]).collect();
    let bound = eval_parametric(&circuit, &values).map_err(input)?;
    let u = circuit_unitary(&bound).map_err(input)?;
    Ok(fmt_matrix(&u))
}

fn excited_populations(h: &Hamiltonian, program: &PulseProgram) -> Result<Vec<f64>, CliError> {
    let psi0 = linalg::basis_state(h.dim(), 0);
    let rho = simulate_states(h, program, &psi0)?.pop().expect("at least the initial state");
    Ok((0..h.n_qubits)
        .map(|q| (0..h.dim()).filter(|i| i >> q & 1 == 1).map(|i| rho[(i, i)].re).sum())
        .collect())
}

fn sweep(a: SweepArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let circuit = load_circuit(&a.circuit, Some(model.n_qubits))?;
    if circuit.free_params.len() != 1 {
        return Err(input(format!(
            "sweep needs exactly one free parameter, circuit has {} ({})",
            circuit.free_params.len(),
            circuit.free_params.join(", ")
        )));
    }
    let options = a.opt.options()?;
    let values: Vec<f64> = if a.values.trim().is_empty() {
        Vec::new()
    } else {
        a.values.split(',').map(eval_value).collect::<Result<_, _>>()?
    };
    let h = model.materialize().map_err(input)?;

    let rows: Vec<Result<String, CliError>> = values
        .par_iter()
        .map(|&v| {
            let bound = eval_parametric(&circuit, &[v]).map_err(input)?;
            let comp = transform_detailed(&bound, &model, &a.opt.method, &options).map_err(synthesis_error)?;
            let pops = excited_populations(&h, &comp.program)?;
            let mut row = format!("{},{}", fmt_sig(v), fmt_sig(comp.infidelity));
            for p in pops {
                write!(row, ",{}", fmt_sig(p)).expect("string write");
            }
            Ok(row)
        })
        .collect();

    let mut csv = String::from("value,infidelity");
    for q in 0..model.n_qubits {
        csv.push_str(&if model.n_qubits == 1 { ",p_excited".to_string() } else { format!(",p_excited{q}") });
    }
    csv.push('\n');
    for row in rows {
        csv.push_str(&row?);
        csv.push('\n');
    }

    match &a.out {
        None => Ok(csv),
        Some(out) => {
            write(out, &csv)?;
            let mut argv = vec!["sweep".to_string(), path_str(&a.circuit)?, path_str(&a.model)?];
            argv.extend(["--values".into(), a.values.clone()]);
            argv.extend(a.opt.to_argv());
            argv.extend(["--out".into(), path_str(out)?]);
            let mut manifest = Manifest::new("sweep", argv);
            manifest.inputs.insert("circuit".into(), path_str(&a.circuit)?);
            manifest.inputs.insert("model".into(), path_str(&a.model)?);
            manifest.options = options.into_iter().collect();
            manifest.options.insert("method".into(), Value::from(a.opt.method.clone()));
            manifest.options.insert("values".into(), Value::from(values.clone()));
            manifest.seed = Some(a.opt.seed);
            manifest.outputs.insert("summary".into(), path_str(out)?);
            write(&manifest_path(out), &manifest.to_json())?;
            Ok(format!("rows: {}\nsummary: {}\n", values.len(), out.display()))
        }
    }
}

fn replay(a: ReplayArgs) -> Result<String, CliError> {
    let manifest = Manifest::read(&a.manifest)?;
    if manifest.argv.first().map(String::as_str) == Some("replay") {
        return Err(input("a manifest cannot replay another replay"));
    }
    let mut args = vec!["qoc".to_string()];
    args.extend(manifest.argv);
    crate::run(args)
}
