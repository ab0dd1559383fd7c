use super::{
    flatten, infidelity_unchecked, ControlProblem, InitialGuess, Method, OptimError, OptimResult, Status,
};
use crate::dynamics::{matrix_exp_hermitian_skew, piecewise_propagator, DynamicsError};
use crate::linalg::{self, c, ComplexMatrix};

/// λ doublings tried before a sweep is declared stalled.
const MAX_LAMBDA_DOUBLINGS: usize = 40;
const MONOTONICITY_TOL: f64 = 1e-10;

fn propagators(p: &ControlProblem, amps: &[Vec<f64>]) -> Result<Vec<ComplexMatrix>, OptimError> {
    let h = &p.hamiltonian;
    let mut slice = vec![0.0; p.n_channels()];
    (0..p.n_samples)
        .map(|n| {
            for (c, a) in slice.iter_mut().enumerate() {
                *a = amps[c][n];
            }
            matrix_exp_hermitian_skew(&h.at_real(&slice), h.dt).map_err(OptimError::from)
        })
        .collect()
}

/// One sequential sweep. `chis[n]` holds the costates at `t_n` (one per
/// column); states are forward-propagated under the updated controls.
fn sweep(
    p: &ControlProblem,
    amps: &[Vec<f64>],
    chis: &[ComplexMatrix],
    step: f64,
) -> Result<(Vec<Vec<f64>>, ComplexMatrix), OptimError> {
    let h = &p.hamiltonian;
    let mut new_amps = amps.to_vec();
    let mut psi = linalg::identity(h.dim());
    let mut slice = vec![0.0; p.n_channels()];
    for n in 0..p.n_samples {
        let chi_dag = chis[n].adjoint();
        for (ci, ctrl) in h.controls.iter().enumerate() {
            // Im Σ_k ⟨χ_k|Op|ψ_k⟩ = Im Tr(χ†·Op·ψ)
            let q = linalg::trace_of_product(&chi_dag, &(&ctrl.op * &psi));
            new_amps[ci][n] = p.clip(amps[ci][n] + step * q.im);
            slice[ci] = new_amps[ci][n];
        }
        psi = matrix_exp_hermitian_skew(&h.at_real(&slice), h.dt)? * psi;
    }
    Ok((new_amps, psi))
}

/// First-order Krotov with a flat update shape. Each sweep back-propagates
/// costates under the current controls and then updates the controls slice by
/// slice while propagating the basis states forward. A sweep that would raise
/// the infidelity is rejected and retried with doubled λ.
pub fn krotov_optimize(p: &ControlProblem) -> Result<OptimResult, OptimError> {
    let n_c = p.n_channels();
    if n_c == 0 || p.n_samples == 0 {
        return Err(OptimError::EmptyProblem);
    }
    if !p.hamiltonian.collapse.is_empty() {
        return Err(DynamicsError::OpenSystem.into());
    }
    let tol = p.tol.unwrap_or(1e-4);
    let max_sweeps = p.max_iters.unwrap_or(200);
    let square = if p.amplitude_bound > 0.0 { 0.1 * p.amplitude_bound } else { 0.1 };
    let mut amps = p.initial_amplitudes(&InitialGuess::Square(square))?;
    let dim = p.dim();
    let d2 = (dim * dim) as f64;

    let mut props = propagators(p, &amps)?;
    let mut u_final = props.iter().fold(linalg::identity(dim), |u, s| s * u);
    let mut f = infidelity_unchecked(&u_final, &p.target);
    let mut trace = vec![f];
    let mut lambda = p.lambda;
    let mut sweeps = 0;
    let status = loop {
        if f <= tol {
            break Status::Converged;
        }
        if sweeps >= max_sweeps {
            break Status::IterationCap;
        }
        let tau = linalg::trace_of_product(&p.target.adjoint(), &u_final);
        let mut chis = vec![linalg::zeros(dim); p.n_samples + 1];
        chis[p.n_samples] = &p.target * c(tau.re / d2, tau.im / d2);
        for n in (0..p.n_samples).rev() {
            chis[n] = props[n].adjoint() * &chis[n + 1];
        }
        let mut accepted = None;
        for _ in 0..MAX_LAMBDA_DOUBLINGS {
            let (candidate, u_new) = sweep(p, &amps, &chis, 1.0 / (lambda * p.horizon))?;
            let f_new = infidelity_unchecked(&u_new, &p.target);
            if f_new <= f {
                accepted = Some((candidate, u_new, f_new));
                break;
            }
            lambda *= 2.0;
        }
        let Some((candidate, u_new, f_new)) = accepted else {
            break Status::Stalled;
        };
        // independent re-propagation guards the sequential bookkeeping
        let check = infidelity_unchecked(&piecewise_propagator(&p.hamiltonian, &p.signal(&candidate))?, &p.target);
        if check > f + MONOTONICITY_TOL {
            return Err(OptimError::MonotonicityViolation { sweep: sweeps + 1, increase: check - f });
        }
        amps = candidate;
        u_final = u_new;
        f = f_new;
        props = propagators(p, &amps)?;
        sweeps += 1;
        trace.push(f);
    };
    let samples = p.signal(&amps);
    Ok(OptimResult {
        method: Method::Krotov,
        params: flatten(&amps),
        infidelity: f,
        iterations: sweeps,
        trace,
        samples,
        status,
    })
}
