use super::{flatten, unflatten, ControlProblem, InitialGuess, OptimError, OptimResult, Status};
use crate::dynamics::{DynamicsError, SliceExp};
use crate::linalg::{self, ComplexMatrix};
use crate::optimizers::Method;

/// Halvings tried before a GRAPE iteration is declared stalled.
const MAX_BACKTRACKS: usize = 40;

/// Infidelity and its exact gradient with respect to channel-major
/// amplitudes `amps[c·N + n]`.
pub fn grape_gradient(p: &ControlProblem, amps: &[f64]) -> Result<(f64, Vec<f64>), OptimError> {
    let (n_c, n) = (p.n_channels(), p.n_samples);
    if amps.len() != n_c * n {
        return Err(OptimError::DimensionMismatch { expected: n_c * n, got: amps.len() });
    }
    let h = &p.hamiltonian;
    if !h.collapse.is_empty() {
        return Err(DynamicsError::OpenSystem.into());
    }
    let dim = h.dim();
    let mut slice_amps = vec![0.0; n_c];
    let slices = (0..n)
        .map(|k| {
            for (c, a) in slice_amps.iter_mut().enumerate() {
                *a = amps[c * n + k];
            }
            SliceExp::new(&h.at_real(&slice_amps), h.dt)
        })
        .collect::<Result<Vec<_>, _>>()?;

    // forward[k] = U_{k−1}·…·U_0
    let mut forward = Vec::with_capacity(n + 1);
    forward.push(linalg::identity(dim));
    for s in &slices {
        let next = &s.propagator * forward.last().expect("non-empty");
        forward.push(next);
    }
    let target_dag = p.target.adjoint();
    let overlap = linalg::trace_of_product(&target_dag, &forward[n]);
    let d2 = (dim * dim) as f64;
    let f = 1.0 - overlap.norm_sqr() / d2;

    let mut grad = vec![0.0; n_c * n];
    // backward = U_{N−1}·…·U_{k+1}
    let mut backward = linalg::identity(dim);
    for k in (0..n).rev() {
        let w: ComplexMatrix = &forward[k] * &target_dag * &backward;
        let w_eig = slices[k].to_eigenbasis(&w);
        for (c, ctrl) in h.controls.iter().enumerate() {
            let dg = slices[k].trace_derivative(&w_eig, &ctrl.op);
            grad[c * n + k] = -2.0 * (overlap.conj() * dg).re / d2;
        }
        backward = &backward * &slices[k].propagator;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient);
    }
    Ok((f, grad))
}

/// Gradient descent on the slice amplitudes with a fixed learning rate and
/// backtracking (halving) whenever a step fails to decrease the infidelity.
pub fn grape_optimize(p: &ControlProblem) -> Result<OptimResult, OptimError> {
    let n_c = p.n_channels();
    if n_c == 0 || p.n_samples == 0 {
        return Err(OptimError::EmptyProblem);
    }
    let tol = p.tol.unwrap_or(1e-4);
    let max_iters = p.max_iters.unwrap_or(1000);
    let mut amps = flatten(&p.initial_amplitudes(&InitialGuess::Random)?);
    let (mut f, mut grad) = grape_gradient(p, &amps)?;
    let mut trace = vec![f];
    let mut iterations = 0;
    let status = loop {
        if f <= tol {
            break Status::Converged;
        }
        if iterations >= max_iters {
            break Status::IterationCap;
        }
        let mut lr = p.learning_rate;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<f64> = amps.iter().zip(&grad).map(|(a, g)| p.clip(a - lr * g)).collect();
            let (fc, gc) = grape_gradient(p, &candidate)?;
            if fc < f {
                accepted = Some((candidate, fc, gc));
                break;
            }
            lr *= 0.5;
        }
        let Some((a, fc, gc)) = accepted else {
            break Status::Stalled;
        };
        amps = a;
        f = fc;
        grad = gc;
        iterations += 1;
        trace.push(f);
    };
    let samples = p.signal(&unflatten(&amps, n_c));
    Ok(OptimResult { method: Method::Grape, params: amps, infidelity: f, iterations, trace, samples, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::piecewise_propagator;
    use crate::linalg::{identity, pauli_x};
    use crate::model::SystemModel;
    use crate::optimizers::infidelity;

    fn x_problem() -> ControlProblem {
        let m = SystemModel::new(1, 0.2).with_control("X0", "X0");
        ControlProblem::new(m, pauli_x(), 10.0).unwrap()
    }

    #[test]
    fn x_gate_from_seed_7() {
        let p = x_problem().with_seed(7);
        let r = grape_optimize(&p).unwrap();
        assert!(r.infidelity <= 1e-4, "{}", r.infidelity);
        assert_eq!(r.status, Status::Converged);
        let u = piecewise_propagator(&p.hamiltonian, &r.samples).unwrap();
        assert!((infidelity(&u, &p.target).unwrap() - r.infidelity).abs() <= 1e-12);
    }

    #[test]
    fn identity_target_from_zero() {
        let m = SystemModel::new(1, 0.2).with_control("X0", "X0");
        let p = ControlProblem::new(m, identity(2), 10.0).unwrap().with_initial(InitialGuess::Zero);
        let r = grape_optimize(&p).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.infidelity, 0.0);
        assert_eq!(r.trace, vec![0.0]);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let p = x_problem();
        let amps = vec![std::f64::consts::FRAC_PI_2 / 10.0; 50];
        let (f, g) = grape_gradient(&p, &amps).unwrap();
        assert!(f < 1e-13, "{f}");
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn gradient_time_reversal_symmetry() {
        let p = x_problem();
        let amps: Vec<f64> = (0..50).map(|k| 0.05 + 0.02 * ((k as f64 - 24.5) / 8.0).powi(2)).collect();
        let (_, g) = grape_gradient(&p, &amps).unwrap();
        for k in 0..50 {
            assert!((g[k] - g[49 - k]).abs() < 1e-14);
        }
    }

    #[test]
    fn bound_is_respected() {
        let p = x_problem().with_seed(3).with_bound(0.2);
        let r = grape_optimize(&p).unwrap();
        assert!(r.params.iter().all(|a| a.abs() <= 0.2));
        assert!(r.infidelity <= 1e-4);
    }

    #[test]
    fn deterministic() {
        let p = x_problem().with_seed(11);
        assert_eq!(grape_optimize(&p).unwrap(), grape_optimize(&p).unwrap());
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(matches!(grape_gradient(&x_problem(), &[0.0; 3]), Err(OptimError::DimensionMismatch { .. })));
    }
}
