use num_complex::Complex64;

use super::rk3::rk3_integrate;
use super::{ControlSignal, DynamicsError, QuantumState};
use crate::linalg::{c, ComplexMatrix, StateVector};
use crate::model::Hamiltonian;

/// Step control for [`lindblad_evolve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladOptions {
    /// Minimum RK3 steps per sample interval.
    pub min_substeps: usize,
    /// Upper bound on `h·‖generator‖` used to pick the step automatically.
    pub max_phase_per_step: f64,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        LindbladOptions { min_substeps: 10, max_phase_per_step: 5e-3 }
    }
}

/// Right-hand side `−i[H, ρ] + Σ γ (L ρ L† − ½{L†L, ρ})`.
pub fn lindbladian(h_now: &ComplexMatrix, h: &Hamiltonian, rho: &ComplexMatrix) -> ComplexMatrix {
    let hr = h_now * rho;
    let mut out = (&hr - hr.adjoint()) * c(0.0, -1.0);
    for ch in &h.collapse {
        let l = &ch.operator;
        let ld = l.adjoint();
        let ldl = &ld * l;
        let anti = &ldl * rho + rho * &ldl;
        out += (l * rho * &ld - anti * c(0.5, 0.0)) * c(ch.rate, 0.0);
    }
    out
}

/// Frobenius-norm bound on the generator, used for step selection.
fn generator_scale(h: &Hamiltonian, max_ctrl: &[f64]) -> f64 {
    let mut s = 2.0 * h.drift.norm();
    for (ctrl, &a) in h.controls.iter().zip(max_ctrl) {
        s += 2.0 * a * ctrl.op.norm();
        if let Some(q) = &ctrl.quadrature {
            s += 2.0 * a * q.norm();
        }
    }
    for ch in &h.collapse {
        s += 2.0 * ch.rate * ch.operator.norm_squared();
    }
    s
}

fn substeps(scale: f64, interval: f64, opts: &LindbladOptions) -> usize {
    let auto = (scale * interval / opts.max_phase_per_step).ceil() as usize;
    auto.max(opts.min_substeps).max(1)
}

/// Integrates the Lindblad master equation with RK3 and returns `ρ(t_n)` for
/// every sample time `t_n = n·dt`, `n = 0..=N` (the first entry is `ρ0`).
pub fn lindblad_evolve(
    h: &Hamiltonian,
    sig: &ControlSignal,
    rho0: &QuantumState,
    opts: &LindbladOptions,
) -> Result<Vec<ComplexMatrix>, DynamicsError> {
    if rho0.dim() != h.dim() {
        return Err(DynamicsError::DimensionMismatch { expected: h.dim(), got: rho0.dim() });
    }
    rho0.validate()?;
    let mut rho = rho0.density_matrix();
    let mut out = vec![rho.clone()];
    match sig {
        ControlSignal::Sampled(s) => {
            let aligned = s.aligned(h)?;
            for samples in &aligned {
                let peak: Vec<f64> = samples.iter().map(|z| z.norm()).collect();
                let m = substeps(generator_scale(h, &peak), h.dt, opts);
                let hn = h.at(samples);
                let f = |_t: f64, r: &ComplexMatrix| lindbladian(&hn, h, r);
                rho = rk3_integrate(&f, 0.0, rho, h.dt / m as f64, m);
                out.push(rho.clone());
            }
        }
        ControlSignal::Analytic(a) => {
            if !(a.horizon > 0.0 && a.horizon.is_finite()) {
                return Err(DynamicsError::InvalidHorizon);
            }
            let idx = a.channel_indices(h)?;
            let n = ((a.horizon / h.dt).round() as usize).max(1);
            let interval = a.horizon / n as f64;
            let at = |t: f64| {
                let mut samples = vec![Complex64::new(0.0, 0.0); h.n_channels()];
                for ((_, f), &i) in a.channels.iter().zip(&idx) {
                    samples[i] = f(t);
                }
                samples
            };
            for k in 0..n {
                let t0 = k as f64 * interval;
                let peak: Vec<f64> = [t0, t0 + 0.5 * interval, t0 + interval]
                    .iter()
                    .map(|&t| at(t))
                    .fold(vec![0.0; h.n_channels()], |acc, s| {
                        acc.iter().zip(&s).map(|(a, z)| a.max(z.norm())).collect()
                    });
                let m = substeps(generator_scale(h, &peak), interval, opts);
                let f = |t: f64, r: &ComplexMatrix| lindbladian(&h.at(&at(t)), h, r);
                rho = rk3_integrate(&f, t0, rho, interval / m as f64, m);
                out.push(rho.clone());
            }
        }
    }
    Ok(out)
}

/// The six single-qubit cardinal states `|0⟩, |1⟩, |±⟩, |±i⟩`.
fn cardinal_1q() -> [StateVector; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let v = |a: Complex64, b: Complex64| StateVector::from_vec(vec![a, b]);
    [
        v(c(1.0, 0.0), c(0.0, 0.0)),
        v(c(0.0, 0.0), c(1.0, 0.0)),
        v(c(s, 0.0), c(s, 0.0)),
        v(c(s, 0.0), c(-s, 0.0)),
        v(c(s, 0.0), c(0.0, s)),
        v(c(s, 0.0), c(0.0, -s)),
    ]
}

/// Products of cardinal states over `n` qubits (qubit 0 least significant).
pub fn cardinal_states(n_qubits: usize) -> Vec<StateVector> {
    let single = cardinal_1q();
    let mut states = vec![StateVector::from_vec(vec![c(1.0, 0.0)])];
    for _ in 0..n_qubits {
        let mut next = Vec::with_capacity(states.len() * 6);
        for psi in &states {
            for q in &single {
                // new qubit becomes the most significant bit
                next.push(q.kronecker(psi));
            }
        }
        states = next;
    }
    states
}

/// Mean state fidelity `⟨Ut ψ|ρ_ψ(τ)|Ut ψ⟩` over all cardinal product states,
/// with `ρ_ψ` evolved under the full (possibly dissipative) dynamics.
pub fn mean_state_fidelity(
    h: &Hamiltonian,
    sig: &ControlSignal,
    target: &ComplexMatrix,
    opts: &LindbladOptions,
) -> Result<f64, DynamicsError> {
    if target.nrows() != h.dim() {
        return Err(DynamicsError::DimensionMismatch { expected: h.dim(), got: target.nrows() });
    }
    let states = cardinal_states(h.n_qubits);
    let mut total = 0.0;
    for psi in &states {
        let traj = lindblad_evolve(h, sig, &QuantumState::Pure(psi.clone()), opts)?;
        let rho = traj.last().expect("trajectory includes ρ0");
        let phi = target * psi;
        total += (phi.adjoint() * rho * &phi)[(0, 0)].re;
    }
    Ok(total / states.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::dynamics::{piecewise_trajectory, SampledSignal};
    use crate::model::SystemModel;

    fn excited() -> QuantumState {
        QuantumState::Pure(linalg::basis_state(2, 1))
    }

    #[test]
    fn t1_decay_closed_form() {
        let t1 = 7.0;
        let h = SystemModel::new(1, 0.2).with_control("X0", "X0").with_t1(t1).materialize().unwrap();
        let sig = SampledSignal::zeros(&h, 100).into();
        let traj = lindblad_evolve(&h, &sig, &excited(), &LindbladOptions::default()).unwrap();
        for (n, rho) in traj.iter().enumerate() {
            let t = n as f64 * 0.2;
            assert!((rho[(1, 1)].re - (-t / t1).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn ground_state_fixed_point() {
        let h = SystemModel::new(1, 0.2).with_control("X0", "X0").with_t1(3.0).materialize().unwrap();
        let rho0 = QuantumState::Pure(linalg::basis_state(2, 0));
        let sig = SampledSignal::zeros(&h, 20).into();
        for rho in lindblad_evolve(&h, &sig, &rho0, &LindbladOptions::default()).unwrap() {
            assert!(linalg::max_abs_diff(&rho, &rho0.density_matrix()) < 1e-15);
        }
    }

    #[test]
    fn closed_system_matches_propagator() {
        let h = SystemModel::new(1, 0.2)
            .with_drift(0.3, "Z0")
            .with_control("X0", "X0")
            .with_control("Y0", "Y0")
            .materialize()
            .unwrap();
        let amps = vec![
            (0..30).map(|k| 0.2 * (k as f64 * 0.3).sin()).collect::<Vec<_>>(),
            (0..30).map(|k| 0.1 * (k as f64 * 0.7).cos()).collect(),
        ];
        let sig = SampledSignal::from_real(&h, &amps);
        let us = piecewise_trajectory(&h, &sig).unwrap();
        let psi = (linalg::basis_state(2, 0) + linalg::basis_state(2, 1)) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let rho0 = QuantumState::Pure(psi);
        let traj = lindblad_evolve(&h, &sig.into(), &rho0, &LindbladOptions::default()).unwrap();
        assert_eq!(traj.len(), 31);
        for (u, rho) in us.iter().zip(&traj) {
            let expected = u * rho0.density_matrix() * u.adjoint();
            assert!(linalg::max_abs_diff(&expected, rho) < 1e-7);
        }
    }

    #[test]
    fn rejects_bad_state() {
        let h = SystemModel::new(1, 0.2).with_control("X0", "X0").materialize().unwrap();
        let sig: ControlSignal = SampledSignal::zeros(&h, 2).into();
        let bad = QuantumState::Mixed(linalg::identity(2));
        assert!(matches!(
            lindblad_evolve(&h, &sig, &bad, &LindbladOptions::default()),
            Err(DynamicsError::InvalidState(_))
        ));
        let wrong_dim = QuantumState::Pure(linalg::basis_state(4, 0));
        assert!(matches!(
            lindblad_evolve(&h, &sig, &wrong_dim, &LindbladOptions::default()),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cardinal_state_count_and_norm() {
        let states = cardinal_states(2);
        assert_eq!(states.len(), 36);
        assert!(states.iter().all(|s| (s.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn identity_target_without_drive() {
        let h = SystemModel::new(1, 0.5).with_control("X0", "X0").materialize().unwrap();
        let sig = SampledSignal::zeros(&h, 4).into();
        let f = mean_state_fidelity(&h, &sig, &linalg::identity(2), &LindbladOptions::default()).unwrap();
        assert!((f - 1.0).abs() < 1e-14);
    }
}
