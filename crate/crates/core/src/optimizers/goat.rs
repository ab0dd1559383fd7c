use std::sync::Arc;

use num_complex::Complex64;

use super::lbfgs::{lbfgs_minimize, LbfgsSettings, LbfgsStatus};
use super::{real_samples, ControlProblem, Method, OptimError, OptimResult, Status};
use crate::dynamics::{AnalyticSignal, DynamicsError};
use crate::expr::{parse_expr, Expr};
use crate::linalg::{self, c, ComplexMatrix};

/// Widths are clamped to at least this value.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Target bound on `h·‖H‖` for the co-integrated RK3 steps.
const PHASE_PER_STEP: f64 = 5e-3;

/// A parametrized set of real control envelopes, one per driven channel.
pub trait EnvelopeFamily: Send + Sync {
    fn n_params(&self) -> usize;

    fn initial_params(&self) -> Vec<f64>;

    /// Writes `Ω_c(t)` into `values[c]` and `∂Ω_c/∂α_p` into
    /// `grads[c·P + p]`, for every model channel `c`.
    fn eval(&self, params: &[f64], t: f64, values: &mut [f64], grads: &mut [f64]) -> Result<(), OptimError>;

    /// Maps raw optimizer parameters into the admissible set, returning a
    /// mask of coordinates that are pinned by the projection.
    fn project(&self, params: &[f64]) -> (Vec<f64>, Vec<bool>) {
        (params.to_vec(), vec![false; params.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoatParam {
    Amplitude,
    Center,
    Width,
}

/// `a·exp(−(t − τ)²/(2σ²))` on one model channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTerm {
    pub channel: usize,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

/// Sum-of-Gaussians envelopes with a chosen trainable subset.
#[derive(Debug, Clone, PartialEq)]
pub struct GoatEnvelopeSpec {
    pub n_channels: usize,
    pub terms: Vec<GaussianTerm>,
    /// `(term index, parameter)` in optimizer order.
    pub trainable: Vec<(usize, GoatParam)>,
}

impl GoatEnvelopeSpec {
    pub fn new(
        n_channels: usize,
        terms: Vec<GaussianTerm>,
        trainable: Vec<(usize, GoatParam)>,
    ) -> Result<GoatEnvelopeSpec, OptimError> {
        if terms.is_empty() {
            return Err(OptimError::InvalidEnvelope("at least one Gaussian is required".into()));
        }
        for (k, t) in terms.iter().enumerate() {
            if !(t.width > 0.0) {
                return Err(OptimError::InvalidEnvelope(format!("term {k} has non-positive width {}", t.width)));
            }
            if t.channel >= n_channels {
                return Err(OptimError::InvalidEnvelope(format!("term {k} drives missing channel {}", t.channel)));
            }
        }
        for (i, &(k, param)) in trainable.iter().enumerate() {
            if k >= terms.len() {
                return Err(OptimError::InvalidEnvelope(format!("trainable entry refers to missing term {k}")));
            }
            if trainable[..i].contains(&(k, param)) {
                return Err(OptimError::InvalidEnvelope(format!("term {k} {param:?} listed twice")));
            }
        }
        Ok(GoatEnvelopeSpec { n_channels, terms, trainable })
    }

    fn terms_with(&self, params: &[f64]) -> Vec<GaussianTerm> {
        let mut terms = self.terms.clone();
        for (&(k, param), &v) in self.trainable.iter().zip(params) {
            match param {
                GoatParam::Amplitude => terms[k].amplitude = v,
                GoatParam::Center => terms[k].center = v,
                GoatParam::Width => terms[k].width = v.max(SIGMA_FLOOR),
            }
        }
        terms
    }
}

impl EnvelopeFamily for GoatEnvelopeSpec {
    fn n_params(&self) -> usize {
        self.trainable.len()
    }

    fn initial_params(&self) -> Vec<f64> {
        self.trainable
            .iter()
            .map(|&(k, param)| match param {
                GoatParam::Amplitude => self.terms[k].amplitude,
                GoatParam::Center => self.terms[k].center,
                GoatParam::Width => self.terms[k].width,
            })
            .collect()
    }

    fn eval(&self, params: &[f64], t: f64, values: &mut [f64], grads: &mut [f64]) -> Result<(), OptimError> {
        let n_p = self.n_params();
        values.iter_mut().for_each(|v| *v = 0.0);
        grads.iter_mut().for_each(|v| *v = 0.0);
        let terms = self.terms_with(params);
        let mut shape = vec![(0.0, 0.0, 0.0); terms.len()];
        for (k, term) in terms.iter().enumerate() {
            let x = t - term.center;
            let s2 = term.width * term.width;
            let g = (-x * x / (2.0 * s2)).exp();
            values[term.channel] += term.amplitude * g;
            shape[k] = (g, term.amplitude * g * x / s2, term.amplitude * g * x * x / (s2 * term.width));
        }
        for (p, &(k, param)) in self.trainable.iter().enumerate() {
            let (da, dc, ds) = shape[k];
            grads[terms[k].channel * n_p + p] = match param {
                GoatParam::Amplitude => da,
                GoatParam::Center => dc,
                GoatParam::Width => ds,
            };
        }
        Ok(())
    }

    fn project(&self, params: &[f64]) -> (Vec<f64>, Vec<bool>) {
        self.trainable
            .iter()
            .zip(params)
            .map(|(&(_, param), &v)| match param {
                GoatParam::Width if v < SIGMA_FLOOR => (SIGMA_FLOOR, true),
                _ => (v, false),
            })
            .unzip()
    }
}

/// Envelopes given as expressions in `t` and named parameters, with
/// symbolic gradients. Parameters whose name starts with `sigma` are treated
/// as widths and clamped to [`SIGMA_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExprEnvelopes {
    n_channels: usize,
    channels: Vec<usize>,
    funcs: Vec<Expr>,
    grads: Vec<Vec<Expr>>,
    names: Vec<String>,
    initial: Vec<f64>,
}

impl ExprEnvelopes {
    /// `funcs[i]` drives model channel `channels[i]`.
    pub fn new(
        n_channels: usize,
        channels: Vec<usize>,
        funcs: &[String],
        names: Vec<String>,
        initial: Vec<f64>,
    ) -> Result<ExprEnvelopes, OptimError> {
        if funcs.len() != channels.len() {
            return Err(OptimError::InvalidEnvelope(format!(
                "{} control functions for {} channels",
                funcs.len(),
                channels.len()
            )));
        }
        if names.len() != initial.len() {
            return Err(OptimError::InvalidEnvelope(format!(
                "{} parameters but {} initial values",
                names.len(),
                initial.len()
            )));
        }
        if let Some(&c) = channels.iter().find(|&&c| c >= n_channels) {
            return Err(OptimError::InvalidEnvelope(format!("channel index {c} out of range")));
        }
        let funcs = funcs
            .iter()
            .map(|src| parse_expr(src).map_err(|e| OptimError::InvalidEnvelope(format!("`{src}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        for (f, src) in funcs.iter().zip(funcs.iter().map(ToString::to_string)) {
            if let Some(v) = f.free_vars().into_iter().find(|v| v != "t" && !names.contains(v)) {
                return Err(OptimError::InvalidEnvelope(format!("`{src}` uses unknown symbol `{v}`")));
            }
        }
        let grads = funcs.iter().map(|f| names.iter().map(|n| f.derivative(n)).collect()).collect();
        Ok(ExprEnvelopes { n_channels, channels, funcs, grads, names, initial })
    }

    fn is_width(&self, p: usize) -> bool {
        self.names[p].starts_with("sigma")
    }
}

impl EnvelopeFamily for ExprEnvelopes {
    fn n_params(&self) -> usize {
        self.names.len()
    }

    fn initial_params(&self) -> Vec<f64> {
        self.initial.clone()
    }

    fn eval(&self, params: &[f64], t: f64, values: &mut [f64], grads: &mut [f64]) -> Result<(), OptimError> {
        debug_assert_eq!(values.len(), self.n_channels);
        let n_p = self.n_params();
        values.iter_mut().for_each(|v| *v = 0.0);
        grads.iter_mut().for_each(|v| *v = 0.0);
        let lookup = |name: &str| {
            if name == "t" {
                Some(t)
            } else {
                self.names.iter().position(|n| n == name).map(|i| params[i])
            }
        };
        let err = |e: crate::expr::ExprError| OptimError::InvalidEnvelope(e.to_string());
        for (i, &ch) in self.channels.iter().enumerate() {
            values[ch] += self.funcs[i].eval_with(&lookup).map_err(err)?;
            for p in 0..n_p {
                grads[ch * n_p + p] += self.grads[i][p].eval_with(&lookup).map_err(err)?;
            }
        }
        Ok(())
    }

    fn project(&self, params: &[f64]) -> (Vec<f64>, Vec<bool>) {
        params
            .iter()
            .enumerate()
            .map(|(p, &v)| if self.is_width(p) && v < SIGMA_FLOOR { (SIGMA_FLOOR, true) } else { (v, false) })
            .unzip()
    }
}

/// Number of RK3 steps per `dt` for the augmented integration.
fn steps_per_dt(p: &ControlProblem, env: &dyn EnvelopeFamily, params: &[f64]) -> Result<usize, OptimError> {
    let h = &p.hamiltonian;
    let n_c = p.n_channels();
    let mut values = vec![0.0; n_c];
    let mut grads = vec![0.0; n_c * env.n_params()];
    let mut peak = vec![1.0f64; n_c];
    for k in 0..=4 * p.n_samples {
        let t = p.horizon * k as f64 / (4 * p.n_samples) as f64;
        env.eval(params, t, &mut values, &mut grads)?;
        for (pk, v) in peak.iter_mut().zip(&values) {
            *pk = pk.max(2.0 * v.abs());
        }
    }
    let spectral = |m: &ComplexMatrix| m.norm() / (m.nrows() as f64).sqrt().max(1.0) * 2f64.sqrt();
    let mut scale = spectral(&h.drift);
    for (ctrl, pk) in h.controls.iter().zip(&peak) {
        scale += pk * spectral(&ctrl.op);
    }
    Ok(((scale * h.dt / PHASE_PER_STEP).ceil() as usize).max(10))
}

/// Co-integrates `U` and every `∂U/∂α_p` with RK3 and returns the infidelity
/// together with its gradient.
fn augmented(
    p: &ControlProblem,
    env: &dyn EnvelopeFamily,
    params: &[f64],
    substeps: usize,
) -> Result<(f64, Vec<f64>), OptimError> {
    let h = &p.hamiltonian;
    if !h.collapse.is_empty() {
        return Err(DynamicsError::OpenSystem.into());
    }
    let dim = h.dim();
    let n_c = p.n_channels();
    let n_p = env.n_params();
    let minus_i = c(0.0, -1.0);
    let rhs = |t: f64, y: &ComplexMatrix| -> Result<ComplexMatrix, OptimError> {
        let mut values = vec![0.0; n_c];
        let mut grads = vec![0.0; n_c * n_p];
        env.eval(params, t, &mut values, &mut grads)?;
        let hm = h.at_real(&values) * minus_i;
        let u = y.rows(0, dim);
        let mut out = ComplexMatrix::zeros(dim * (n_p + 1), dim);
        out.rows_mut(0, dim).copy_from(&(&hm * u));
        for q in 0..n_p {
            let mut dh = linalg::zeros(dim);
            for (ci, ctrl) in h.controls.iter().enumerate() {
                let g = grads[ci * n_p + q];
                if g != 0.0 {
                    dh += &ctrl.op * c(g, 0.0);
                }
            }
            let block = dh * minus_i * u + &hm * y.rows((q + 1) * dim, dim);
            out.rows_mut((q + 1) * dim, dim).copy_from(&block);
        }
        Ok(out)
    };
    let n_steps = p.n_samples * substeps;
    let step = p.horizon / n_steps as f64;
    let mut y = ComplexMatrix::zeros(dim * (n_p + 1), dim);
    y.rows_mut(0, dim).copy_from(&linalg::identity(dim));
    let half = c(0.5 * step, 0.0);
    for k in 0..n_steps {
        // RK3 written out so evaluation errors can propagate
        let t = k as f64 * step;
        let k1 = rhs(t, &y)?;
        let k2 = rhs(t + 0.5 * step, &(&y + &k1 * half))?;
        let k3 = rhs(t + step, &(&y - &k1 * c(step, 0.0) + &k2 * c(2.0 * step, 0.0)))?;
        y += (k1 + k2 * c(4.0, 0.0) + k3) * c(step / 6.0, 0.0);
    }
    let target_dag = p.target.adjoint();
    let u = y.rows(0, dim).into_owned();
    let overlap = linalg::trace_of_product(&target_dag, &u);
    let d2 = (dim * dim) as f64;
    let f = 1.0 - overlap.norm_sqr() / d2;
    let grad = (0..n_p)
        .map(|q| {
            let du = y.rows((q + 1) * dim, dim).into_owned();
            let dg: Complex64 = linalg::trace_of_product(&target_dag, &du);
            -2.0 * (overlap.conj() * dg).re / d2
        })
        .collect::<Vec<_>>();
    if grad.iter().any(|g| !g.is_finite()) || !f.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    Ok((f, grad))
}

/// Infidelity and gradient with respect to the envelope parameters, using
/// the step size the optimizer would pick at `params`.
pub fn goat_gradient(p: &ControlProblem, env: &dyn EnvelopeFamily, params: &[f64]) -> Result<(f64, Vec<f64>), OptimError> {
    if params.len() != env.n_params() {
        return Err(OptimError::DimensionMismatch { expected: env.n_params(), got: params.len() });
    }
    let (x, _) = env.project(params);
    let m = steps_per_dt(p, env, &x)?;
    augmented(p, env, &x, m)
}

/// Left-endpoint samples `Ω_c(n·dt)` for `n = 0..N`.
pub(crate) fn discretize(
    p: &ControlProblem,
    env: &dyn EnvelopeFamily,
    params: &[f64],
) -> Result<Vec<Vec<f64>>, OptimError> {
    let n_c = p.n_channels();
    let mut amps = vec![vec![0.0; p.n_samples]; n_c];
    let mut values = vec![0.0; n_c];
    let mut grads = vec![0.0; n_c * env.n_params()];
    for n in 0..p.n_samples {
        env.eval(params, n as f64 * p.hamiltonian.dt, &mut values, &mut grads)?;
        for (ci, v) in values.iter().enumerate() {
            amps[ci][n] = *v;
        }
    }
    Ok(amps)
}

/// The optimized envelopes as an analytic signal for the continuous engine.
pub fn goat_signal(p: &ControlProblem, env: Arc<dyn EnvelopeFamily>, params: &[f64]) -> AnalyticSignal {
    let mut sig = AnalyticSignal::new(p.horizon);
    let n_c = p.n_channels();
    for (ci, ctrl) in p.hamiltonian.controls.iter().enumerate() {
        let env = Arc::clone(&env);
        let params = params.to_vec();
        sig.channels.push((
            ctrl.channel.clone(),
            Arc::new(move |t| {
                let mut values = vec![0.0; n_c];
                let mut grads = vec![0.0; n_c * params.len()];
                match env.eval(&params, t, &mut values, &mut grads) {
                    Ok(()) => Complex64::new(values[ci], 0.0),
                    Err(_) => Complex64::new(f64::NAN, 0.0),
                }
            }),
        ));
    }
    sig
}

/// L-BFGS over the envelope parameters with gradients from the augmented
/// equations of motion.
pub fn goat_optimize(p: &ControlProblem, env: &dyn EnvelopeFamily) -> Result<OptimResult, OptimError> {
    if p.n_channels() == 0 {
        return Err(OptimError::EmptyProblem);
    }
    let x0 = env.project(&env.initial_params()).0;
    let substeps = steps_per_dt(p, env, &x0)?;
    let settings = LbfgsSettings {
        target: p.tol.unwrap_or(1e-5),
        max_iters: p.max_iters.unwrap_or(500),
        ..LbfgsSettings::default()
    };
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>), OptimError> {
        let (proj, pinned) = env.project(x);
        let (f, mut g) = augmented(p, env, &proj, substeps)?;
        for (gi, &pin) in g.iter_mut().zip(&pinned) {
            if pin {
                *gi = 0.0;
            }
        }
        Ok((f, g))
    };
    let out = lbfgs_minimize(objective, x0, &settings)?;
    let params = env.project(&out.x).0;
    let status = match out.status {
        LbfgsStatus::TargetReached => Status::Converged,
        LbfgsStatus::IterationCap => Status::IterationCap,
        LbfgsStatus::LineSearchFailed => Status::LineSearchFailed,
        LbfgsStatus::GradientVanished | LbfgsStatus::Stalled => Status::Stalled,
    };
    let amps = discretize(p, env, &params)?;
    let names: Vec<String> = p.hamiltonian.controls.iter().map(|c| c.channel.clone()).collect();
    Ok(OptimResult {
        method: Method::Goat,
        params,
        infidelity: out.f,
        iterations: out.iterations,
        trace: out.trace,
        samples: real_samples(p.hamiltonian.dt, &names, &amps),
        status,
    })
}
