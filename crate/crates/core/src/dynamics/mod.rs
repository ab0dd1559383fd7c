//! Time-domain propagation: piecewise-constant slice products, fixed-step RK3
//! integration of the Schrödinger equation, Lindblad density-matrix
//! evolution and observable readout.

mod expm;
mod lindblad;
mod observe;
mod propagate;
mod rk3;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{ComplexMatrix, StateVector};
use crate::model::Hamiltonian;

pub use expm::{matrix_exp_hermitian_skew, SliceExp, HERMITIAN_TOL};
pub use lindblad::{cardinal_states, lindblad_evolve, lindbladian, mean_state_fidelity, LindbladOptions};
pub use observe::{expectation, fmt_sig, trajectory_csv};
pub use propagate::{
    evolve_continuous, piecewise_propagator, piecewise_trajectory, slice_propagators, ContinuousOptions,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("operator is not Hermitian (‖A − A†‖ = {0:.3e})")]
    NonHermitian(f64),
    #[error("signal channel `{0}` does not exist in the model")]
    UnknownChannel(String),
    #[error("signal sample period {signal} does not match model dt {model}")]
    DtMismatch { signal: f64, model: f64 },
    #[error("channels have different sample counts")]
    RaggedChannels,
    #[error("channel `{0}` has a non-zero imaginary sample but no quadrature operator")]
    ImaginarySample(String),
    #[error("non-finite sample on channel `{0}`")]
    NonFinite(String),
    #[error("model has dissipation; use the Lindblad engine")]
    OpenSystem,
    #[error("RK3 step floor reached with unitarity error {0:.3e}")]
    StepFloor(f64),
    #[error("invalid quantum state: {0}")]
    InvalidState(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("horizon must be positive and finite")]
    InvalidHorizon,
}

/// Piecewise-constant controls: one complex sample per channel per `dt`,
/// held over `[n·dt, (n+1)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub dt: f64,
    pub channels: Vec<(String, Vec<Complex64>)>,
}

impl SampledSignal {
    pub fn new(dt: f64, channels: Vec<(String, Vec<Complex64>)>) -> Result<SampledSignal, DynamicsError> {
        let sig = SampledSignal { dt, channels };
        sig.check_shape()?;
        Ok(sig)
    }

    /// Real amplitudes, channel-major, in model channel order.
    pub fn from_real(h: &Hamiltonian, amps: &[Vec<f64>]) -> SampledSignal {
        let channels = h
            .controls
            .iter()
            .zip(amps)
            .map(|(c, a)| (c.channel.clone(), a.iter().map(|&x| Complex64::new(x, 0.0)).collect()))
            .collect();
        SampledSignal { dt: h.dt, channels }
    }

    /// All-zero drive on every model channel.
    pub fn zeros(h: &Hamiltonian, n_samples: usize) -> SampledSignal {
        SampledSignal::from_real(h, &vec![vec![0.0; n_samples]; h.n_channels()])
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, |(_, s)| s.len())
    }

    pub fn horizon(&self) -> f64 {
        self.n_samples() as f64 * self.dt
    }

    fn check_shape(&self) -> Result<(), DynamicsError> {
        let n = self.n_samples();
        for (name, samples) in &self.channels {
            if samples.len() != n {
                return Err(DynamicsError::RaggedChannels);
            }
            if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
                return Err(DynamicsError::NonFinite(name.clone()));
            }
        }
        Ok(())
    }

    /// Reorders samples into the model's channel order, zero-filling channels
    /// the signal does not drive. Result is `[sample][channel]`.
    pub(crate) fn aligned(&self, h: &Hamiltonian) -> Result<Vec<Vec<Complex64>>, DynamicsError> {
        self.check_shape()?;
        if (self.dt - h.dt).abs() > 1e-12 * h.dt.max(1.0) {
            return Err(DynamicsError::DtMismatch { signal: self.dt, model: h.dt });
        }
        let n = self.n_samples();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); h.n_channels()]; n];
        for (name, samples) in &self.channels {
            let idx = h
                .controls
                .iter()
                .position(|c| &c.channel == name)
                .ok_or_else(|| DynamicsError::UnknownChannel(name.clone()))?;
            let has_quadrature = h.controls[idx].quadrature.is_some();
            for (n_i, s) in samples.iter().enumerate() {
                if s.im != 0.0 && !has_quadrature {
                    return Err(DynamicsError::ImaginarySample(name.clone()));
                }
                out[n_i][idx] = *s;
            }
        }
        Ok(out)
    }
}

/// Envelope function of time for one channel.
pub type Envelope = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

/// Analytic controls: per-channel envelope functions on `[0, horizon]`.
#[derive(Clone)]
pub struct AnalyticSignal {
    pub horizon: f64,
    pub channels: Vec<(String, Envelope)>,
}

impl fmt::Debug for AnalyticSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticSignal")
            .field("horizon", &self.horizon)
            .field("channels", &self.channels.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>())
            .finish()
    }
}

impl AnalyticSignal {
    pub fn new(horizon: f64) -> AnalyticSignal {
        AnalyticSignal { horizon, channels: Vec::new() }
    }

    /// Adds a real-valued envelope.
    pub fn with_channel(mut self, name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> AnalyticSignal {
        self.channels.push((name.to_string(), Arc::new(move |t| Complex64::new(f(t), 0.0))));
        self
    }

    /// Indices of each envelope in the model's channel list.
    pub(crate) fn channel_indices(&self, h: &Hamiltonian) -> Result<Vec<usize>, DynamicsError> {
        self.channels
            .iter()
            .map(|(name, _)| {
                h.controls
                    .iter()
                    .position(|c| &c.channel == name)
                    .ok_or_else(|| DynamicsError::UnknownChannel(name.clone()))
            })
            .collect()
    }
}

/// Either flavor of control signal.
#[derive(Debug, Clone)]
pub enum ControlSignal {
    Sampled(SampledSignal),
    Analytic(AnalyticSignal),
}

impl From<SampledSignal> for ControlSignal {
    fn from(s: SampledSignal) -> Self {
        ControlSignal::Sampled(s)
    }
}

impl From<AnalyticSignal> for ControlSignal {
    fn from(s: AnalyticSignal) -> Self {
        ControlSignal::Analytic(s)
    }
}

/// Pure state vector or density matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(ComplexMatrix),
}

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(v) => v.len(),
            QuantumState::Mixed(m) => m.nrows(),
        }
    }

    pub fn density_matrix(&self) -> ComplexMatrix {
        match self {
            QuantumState::Pure(v) => crate::linalg::projector(v),
            QuantumState::Mixed(m) => m.clone(),
        }
    }

    /// Checks the normalization invariants (unit norm, unit trace, Hermitian).
    pub fn validate(&self) -> Result<(), DynamicsError> {
        match self {
            QuantumState::Pure(v) => {
                let norm = v.norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(DynamicsError::InvalidState(format!("‖ψ‖ = {norm}")));
                }
            }
            QuantumState::Mixed(rho) => {
                let tr = crate::linalg::trace(rho);
                if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
                    return Err(DynamicsError::InvalidState(format!("Tr ρ = {tr}")));
                }
                let herm = crate::linalg::hermiticity_error(rho);
                if herm > 1e-8 {
                    return Err(DynamicsError::InvalidState(format!("‖ρ − ρ†‖ = {herm:.3e}")));
                }
            }
        }
        Ok(())
    }
}
