//! Quantum optimal control: the shared gate-infidelity objective, GRAPE,
//! GOAT and a first-order Krotov method, dispatched by name.

mod goat;
mod grape;
mod krotov;
mod lbfgs;
mod registry;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{DynamicsError, SampledSignal};
use crate::linalg::{self, ComplexMatrix};
use crate::model::{Hamiltonian, ModelError, SystemModel};

pub use goat::{goat_gradient, goat_optimize, goat_signal, SIGMA_FLOOR, EnvelopeFamily, ExprEnvelopes, GaussianTerm, GoatEnvelopeSpec, GoatParam};
pub use grape::{grape_gradient, grape_optimize};
pub use krotov::krotov_optimize;
pub use lbfgs::{lbfgs_minimize, LbfgsOutcome, LbfgsSettings, LbfgsStatus};
pub use registry::{get_optimizer, parse_target, Method, Optimizer, Options, Settings};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target is not unitary (‖U†U − I‖ = {0:.3e})")]
    NonUnitaryTarget(f64),
    #[error("max-time {horizon} is not a whole number of samples at dt = {dt}")]
    HorizonMismatch { horizon: f64, dt: f64 },
    #[error("problem needs at least one sample and one control channel")]
    EmptyProblem,
    #[error("gradient is not finite")]
    NonFiniteGradient,
    #[error("unknown method `{0}` (expected one of GRAPE, GOAT, krotov)")]
    UnknownMethod(String),
    #[error("unknown option `{0}`")]
    UnknownOption(String),
    #[error("missing required option `{0}`")]
    MissingOption(String),
    #[error("invalid value for option `{key}`: {message}")]
    InvalidOption { key: String, message: String },
    #[error("infidelity increased by {increase:.3e} in sweep {sweep}")]
    MonotonicityViolation { sweep: usize, increase: f64 },
    #[error("invalid envelope specification: {0}")]
    InvalidEnvelope(String),
}

/// `1 − |Tr(Ut†·U)|²/d²`.
pub fn infidelity(u: &ComplexMatrix, target: &ComplexMatrix) -> Result<f64, OptimError> {
    if u.shape() != target.shape() || u.nrows() != u.ncols() {
        return Err(OptimError::DimensionMismatch { expected: target.nrows(), got: u.nrows() });
    }
    Ok(infidelity_unchecked(u, target))
}

pub(crate) fn infidelity_unchecked(u: &ComplexMatrix, target: &ComplexMatrix) -> f64 {
    let d = u.nrows() as f64;
    1.0 - linalg::trace_of_product(&target.adjoint(), u).norm_sqr() / (d * d)
}

/// Starting amplitudes for sampled methods.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialGuess {
    /// Method default: random for GRAPE, square for Krotov.
    #[default]
    Default,
    Zero,
    /// Uniform in `[−0.1, 0.1]` from the problem seed.
    Random,
    /// Constant amplitude on every channel and sample.
    Square(f64),
    /// `[channel][sample]`.
    Explicit(Vec<Vec<f64>>),
}

/// Everything an optimizer needs besides its own hyper-parameters.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub model: SystemModel,
    pub hamiltonian: Hamiltonian,
    pub target: ComplexMatrix,
    pub horizon: f64,
    pub n_samples: usize,
    /// `0` means unbounded.
    pub amplitude_bound: f64,
    pub initial: InitialGuess,
    pub seed: u64,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    /// GRAPE base step size.
    pub learning_rate: f64,
    /// Krotov step penalty.
    pub lambda: f64,
}

impl ControlProblem {
    /// Validates the target and derives `N = τ/dt` from the model.
    pub fn new(model: SystemModel, target: ComplexMatrix, horizon: f64) -> Result<ControlProblem, OptimError> {
        let hamiltonian = model.materialize()?;
        if target.nrows() != hamiltonian.dim() || target.ncols() != hamiltonian.dim() {
            return Err(OptimError::DimensionMismatch { expected: hamiltonian.dim(), got: target.nrows() });
        }
        let err = linalg::unitarity_error(&target);
        if err > 1e-8 {
            return Err(OptimError::NonUnitaryTarget(err));
        }
        let dt = hamiltonian.dt;
        let n = (horizon / dt).round();
        if !(horizon > 0.0) || n < 1.0 || (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(OptimError::HorizonMismatch { horizon, dt });
        }
        Ok(ControlProblem {
            model,
            hamiltonian,
            target,
            horizon,
            n_samples: n as usize,
            amplitude_bound: 0.0,
            initial: InitialGuess::Default,
            seed: 0,
            tol: None,
            max_iters: None,
            learning_rate: 0.1,
            lambda: 1.0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_initial(mut self, initial: InitialGuess) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.amplitude_bound = bound;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = Some(max_iters);
        self
    }

    pub fn n_channels(&self) -> usize {
        self.hamiltonian.n_channels()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub(crate) fn clip(&self, x: f64) -> f64 {
        if self.amplitude_bound > 0.0 {
            x.clamp(-self.amplitude_bound, self.amplitude_bound)
        } else {
            x
        }
    }

    /// Resolves an initial guess into `[channel][sample]` amplitudes.
    pub(crate) fn initial_amplitudes(&self, default: &InitialGuess) -> Result<Vec<Vec<f64>>, OptimError> {
        let (n_c, n_s) = (self.n_channels(), self.n_samples);
        let guess = if self.initial == InitialGuess::Default { default } else { &self.initial };
        let amps = match guess {
            InitialGuess::Default | InitialGuess::Zero => vec![vec![0.0; n_s]; n_c],
            InitialGuess::Square(a) => vec![vec![*a; n_s]; n_c],
            InitialGuess::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..n_c).map(|_| (0..n_s).map(|_| rng.gen_range(-0.1..=0.1)).collect()).collect()
            }
            InitialGuess::Explicit(a) => {
                if a.len() != n_c {
                    return Err(OptimError::DimensionMismatch { expected: n_c, got: a.len() });
                }
                if let Some(bad) = a.iter().find(|row| row.len() != n_s) {
                    return Err(OptimError::DimensionMismatch { expected: n_s, got: bad.len() });
                }
                a.clone()
            }
        };
        Ok(amps.into_iter().map(|row| row.into_iter().map(|x| self.clip(x)).collect()).collect())
    }

    pub(crate) fn signal(&self, amps: &[Vec<f64>]) -> SampledSignal {
        SampledSignal::from_real(&self.hamiltonian, amps)
    }
}

/// How an optimization run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterationCap,
    /// No further decrease was possible (step or gradient vanished).
    Stalled,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub method: Method,
    /// Channel-major amplitudes for sampled methods, envelope parameters for GOAT.
    pub params: Vec<f64>,
    pub infidelity: f64,
    pub iterations: usize,
    /// Infidelity before the first update and after each accepted one.
    pub trace: Vec<f64>,
    /// Pulses on the model's `dt` grid, one entry per model channel.
    pub samples: SampledSignal,
    pub status: Status,
}

impl OptimResult {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

pub(crate) fn flatten(amps: &[Vec<f64>]) -> Vec<f64> {
    amps.iter().flatten().copied().collect()
}

pub(crate) fn unflatten(flat: &[f64], n_channels: usize) -> Vec<Vec<f64>> {
    if n_channels == 0 {
        return Vec::new();
    }
    flat.chunks(flat.len() / n_channels).map(<[f64]>::to_vec).collect()
}

pub(crate) fn real_samples(dt: f64, names: &[String], amps: &[Vec<f64>]) -> SampledSignal {
    SampledSignal {
        dt,
        channels: names
            .iter()
            .zip(amps)
            .map(|(n, a)| (n.clone(), a.iter().map(|&x| Complex64::new(x, 0.0)).collect()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, identity, pauli_x, pauli_z};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn infidelity_examples() {
        let x = pauli_x();
        assert_eq!(infidelity(&x, &x).unwrap(), 0.0);
        let phased = &x * Complex64::from_polar(1.0, 0.77);
        assert!(infidelity(&phased, &x).unwrap().abs() < 1e-15);
        assert_eq!(infidelity(&identity(2), &x).unwrap(), 1.0);
        assert!(matches!(infidelity(&identity(4), &x), Err(OptimError::DimensionMismatch { .. })));
    }

    fn random_unitary(dim: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = linalg::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let z = c(rng.gen_range(-1.0..1.0), if i == j { 0.0 } else { rng.gen_range(-1.0..1.0) });
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
        crate::dynamics::matrix_exp_hermitian_skew(&h, 2.0).unwrap()
    }

    proptest! {
        #[test]
        fn infidelity_range_and_left_invariance(seed in 0u64..10_000, dim_bits in 1usize..=2) {
            let d = 1 << dim_bits;
            let (u, v, w) = (random_unitary(d, seed), random_unitary(d, seed + 1), random_unitary(d, seed + 2));
            let f = infidelity(&u, &v).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
            let g = infidelity(&(&w * &u), &(&w * &v)).unwrap();
            prop_assert!((f - g).abs() <= 1e-12);
        }
    }

    #[test]
    fn problem_validation() {
        let m = SystemModel::new(1, 0.2).with_control("X0", "X0");
        assert_eq!(ControlProblem::new(m.clone(), pauli_x(), 10.0).unwrap().n_samples, 50);
        assert!(matches!(
            ControlProblem::new(m.clone(), pauli_x(), 10.1),
            Err(OptimError::HorizonMismatch { .. })
        ));
        assert!(matches!(
            ControlProblem::new(m.clone(), identity(4), 10.0),
            Err(OptimError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            ControlProblem::new(m, pauli_z() * c(2.0, 0.0), 10.0),
            Err(OptimError::NonUnitaryTarget(_))
        ));
    }

    #[test]
    fn random_guess_is_seeded_and_clipped() {
        let m = SystemModel::new(1, 0.2).with_control("X0", "X0");
        let p = ControlProblem::new(m, pauli_x(), 2.0).unwrap().with_seed(7).with_bound(0.05);
        let a = p.initial_amplitudes(&InitialGuess::Random).unwrap();
        let b = p.initial_amplitudes(&InitialGuess::Random).unwrap();
        assert_eq!(a, b);
        assert!(a[0].iter().all(|x| x.abs() <= 0.05));
        assert!(a[0].iter().any(|x| *x != a[0][0]));
    }
}
