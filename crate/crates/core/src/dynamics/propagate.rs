use num_complex::Complex64;

use super::expm::SliceExp;
use super::rk3::rk3_integrate;
use super::{AnalyticSignal, ControlSignal, DynamicsError, SampledSignal};
use crate::linalg::{self, c, ComplexMatrix};
use crate::model::Hamiltonian;

/// Step-size control for [`evolve_continuous`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousOptions {
    /// Target for `‖U†U − I‖_max` at the final time.
    pub unitarity_tol: f64,
    /// Initial number of RK3 steps per model `dt`.
    pub steps_per_dt: usize,
    /// Maximum number of step halvings before giving up.
    pub max_halvings: u32,
    /// Bound on the step-doubling error estimate `‖U_h − U_{h/2}‖_max / 7`.
    pub accuracy_tol: f64,
}

impl Default for ContinuousOptions {
    fn default() -> Self {
        ContinuousOptions { unitarity_tol: 1e-7, steps_per_dt: 10, max_halvings: 10, accuracy_tol: 1e-9 }
    }
}

fn ensure_closed(h: &Hamiltonian) -> Result<(), DynamicsError> {
    if h.collapse.is_empty() {
        Ok(())
    } else {
        Err(DynamicsError::OpenSystem)
    }
}

/// Slice propagators `exp(−i·H(t_n)·dt)` in time order.
pub fn slice_propagators(h: &Hamiltonian, sig: &SampledSignal) -> Result<Vec<ComplexMatrix>, DynamicsError> {
    ensure_closed(h)?;
    sig.aligned(h)?
        .iter()
        .map(|samples| SliceExp::new(&h.at(samples), h.dt).map(|e| e.propagator))
        .collect()
}

/// `U(τ) = U_{N−1}·…·U_0` for a piecewise-constant signal.
pub fn piecewise_propagator(h: &Hamiltonian, sig: &SampledSignal) -> Result<ComplexMatrix, DynamicsError> {
    let slices = slice_propagators(h, sig)?;
    Ok(slices.iter().fold(linalg::identity(h.dim()), |u, s| s * u))
}

/// Cumulative propagators `U(t_n)` for `n = 0..=N`, starting from identity.
pub fn piecewise_trajectory(h: &Hamiltonian, sig: &SampledSignal) -> Result<Vec<ComplexMatrix>, DynamicsError> {
    let slices = slice_propagators(h, sig)?;
    let mut out = Vec::with_capacity(slices.len() + 1);
    out.push(linalg::identity(h.dim()));
    for s in &slices {
        let next = s * out.last().expect("non-empty");
        out.push(next);
    }
    Ok(out)
}

fn analytic_hamiltonian(h: &Hamiltonian, sig: &AnalyticSignal, idx: &[usize], t: f64) -> ComplexMatrix {
    let mut samples = vec![Complex64::new(0.0, 0.0); h.n_channels()];
    for ((_, f), &i) in sig.channels.iter().zip(idx) {
        samples[i] = f(t);
    }
    h.at(&samples)
}

fn integrate_once(h: &Hamiltonian, sig: &ControlSignal, steps_per_dt: usize) -> Result<ComplexMatrix, DynamicsError> {
    let dim = h.dim();
    let minus_i = c(0.0, -1.0);
    match sig {
        ControlSignal::Sampled(s) => {
            // steps align with slices so each step sees a constant H
            let hs = s.dt / steps_per_dt as f64;
            let mut u = linalg::identity(dim);
            for samples in s.aligned(h)? {
                let hm = h.at(&samples) * minus_i;
                let f = |_t: f64, y: &ComplexMatrix| &hm * y;
                u = rk3_integrate(&f, 0.0, u, hs, steps_per_dt);
            }
            Ok(u)
        }
        ControlSignal::Analytic(a) => {
            let idx = a.channel_indices(h)?;
            let steps = ((a.horizon / h.dt).ceil() as usize).max(1) * steps_per_dt;
            let hs = a.horizon / steps as f64;
            let f = |t: f64, y: &ComplexMatrix| analytic_hamiltonian(h, a, &idx, t) * minus_i * y;
            Ok(rk3_integrate(&f, 0.0, linalg::identity(dim), hs, steps))
        }
    }
}

/// Integrates `dU/dt = −i·H(t)·U` with fixed-step RK3, halving the step until
/// the result is unitary to `opts.unitarity_tol` and two successive step sizes
/// agree to within the accuracy bound.
pub fn evolve_continuous(
    h: &Hamiltonian,
    sig: &ControlSignal,
    opts: &ContinuousOptions,
) -> Result<ComplexMatrix, DynamicsError> {
    ensure_closed(h)?;
    if let ControlSignal::Analytic(a) = sig {
        if !(a.horizon > 0.0 && a.horizon.is_finite()) {
            return Err(DynamicsError::InvalidHorizon);
        }
    }
    let mut steps = opts.steps_per_dt.max(1);
    let mut coarse = integrate_once(h, sig, steps)?;
    let mut last_err = linalg::unitarity_error(&coarse);
    for _ in 0..opts.max_halvings {
        steps *= 2;
        let fine = integrate_once(h, sig, steps)?;
        last_err = linalg::unitarity_error(&fine);
        // RK3 global error shrinks 8× per halving
        let estimate = linalg::max_abs_diff(&coarse, &fine) / 7.0;
        if last_err <= opts.unitarity_tol && estimate <= opts.accuracy_tol {
            return Ok(fine);
        }
        coarse = fine;
    }
    Err(DynamicsError::StepFloor(last_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemModel;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn x_model(dt: f64) -> Hamiltonian {
        SystemModel::new(1, dt).with_control("X0", "X0").materialize().unwrap()
    }

    fn gate_infidelity(u: &ComplexMatrix, target: &ComplexMatrix) -> f64 {
        let d = u.nrows() as f64;
        1.0 - linalg::trace_of_product(&linalg::dagger(target), u).norm_sqr() / (d * d)
    }

    #[test]
    fn zero_signal_is_identity() {
        let h = SystemModel::new(2, 0.5).with_control("a", "X0*X1").materialize().unwrap();
        let u = piecewise_propagator(&h, &SampledSignal::zeros(&h, 7)).unwrap();
        assert!(linalg::max_abs_diff(&u, &linalg::identity(4)) < 1e-15);
    }

    #[test]
    fn constant_pi_pulse() {
        let h = x_model(0.2);
        let n = 50;
        let u_amp = FRAC_PI_2 / (n as f64 * 0.2);
        let sig = SampledSignal::from_real(&h, &[vec![u_amp; n]]);
        let u = piecewise_propagator(&h, &sig).unwrap();
        assert!(gate_infidelity(&u, &linalg::pauli_x()) <= 1e-12);
    }

    #[test]
    fn commuting_segments_average() {
        let h = x_model(1.0);
        let two = SampledSignal::from_real(&h, &[vec![0.3, 0.9]]);
        let one = SampledSignal::from_real(&h, &[vec![0.6, 0.6]]);
        let a = piecewise_propagator(&h, &two).unwrap();
        let b = piecewise_propagator(&h, &one).unwrap();
        assert!(linalg::max_abs_diff(&a, &b) < 1e-14);
    }

    #[test]
    fn channel_mismatch_errors() {
        let h = x_model(0.2);
        let sig = SampledSignal::new(0.2, vec![("Y0".into(), vec![c(0.1, 0.0)])]).unwrap();
        assert_eq!(piecewise_propagator(&h, &sig), Err(DynamicsError::UnknownChannel("Y0".into())));
        let sig = SampledSignal::new(0.3, vec![("X0".into(), vec![c(0.1, 0.0)])]).unwrap();
        assert!(matches!(piecewise_propagator(&h, &sig), Err(DynamicsError::DtMismatch { .. })));
        let sig = SampledSignal::new(0.2, vec![("X0".into(), vec![c(0.1, 0.2)])]).unwrap();
        assert_eq!(piecewise_propagator(&h, &sig), Err(DynamicsError::ImaginarySample("X0".into())));
    }

    #[test]
    fn quadrature_partner() {
        let mut m = SystemModel::new(1, 1.0).with_control("d0", "X0");
        m.control[0].quadrature = Some("Y0".parse().unwrap());
        let h = m.materialize().unwrap();
        let sig = SampledSignal::new(1.0, vec![("d0".into(), vec![c(0.0, FRAC_PI_2)])]).unwrap();
        let u = piecewise_propagator(&h, &sig).unwrap();
        assert!(gate_infidelity(&u, &linalg::pauli_y()) < 1e-14);
    }

    #[test]
    fn open_system_rejected() {
        let h = SystemModel::new(1, 0.2).with_control("X0", "X0").with_t1(10.0).materialize().unwrap();
        assert_eq!(piecewise_propagator(&h, &SampledSignal::zeros(&h, 3)), Err(DynamicsError::OpenSystem));
    }

    #[test]
    fn continuous_zero_envelope() {
        let h = x_model(1.0);
        let sig = AnalyticSignal::new(10.0).with_channel("X0", |_| 0.0);
        let u = evolve_continuous(&h, &sig.into(), &ContinuousOptions::default()).unwrap();
        assert!(linalg::max_abs_diff(&u, &linalg::identity(2)) < 1e-15);
    }

    #[test]
    fn continuous_constant_matches_piecewise() {
        let h = SystemModel::new(1, 0.2)
            .with_drift(0.4, "Z0")
            .with_control("X0", "X0")
            .materialize()
            .unwrap();
        let amp = PI / 10.0;
        let sampled = SampledSignal::from_real(&h, &[vec![amp; 50]]);
        let analytic = AnalyticSignal::new(10.0).with_channel("X0", move |_| amp);
        let a = piecewise_propagator(&h, &sampled).unwrap();
        let b = evolve_continuous(&h, &analytic.into(), &ContinuousOptions::default()).unwrap();
        assert!(linalg::max_abs_diff(&a, &b) < 1e-8, "{}", linalg::max_abs_diff(&a, &b));
    }

    #[test]
    fn step_floor_reported() {
        let h = x_model(1.0);
        let sig = AnalyticSignal::new(10.0).with_channel("X0", |_| 50.0);
        let opts = ContinuousOptions { unitarity_tol: 1e-14, steps_per_dt: 1, max_halvings: 2, accuracy_tol: 1e-9 };
        assert!(matches!(evolve_continuous(&h, &sig.into(), &opts), Err(DynamicsError::StepFloor(_))));
    }
}
