use crate::linalg::{c, ComplexMatrix};

/// One classical Kutta RK3 step for `y' = f(t, y)`.
pub(crate) fn rk3_step<F>(f: &F, t: f64, y: &ComplexMatrix, h: f64) -> ComplexMatrix
where
    F: Fn(f64, &ComplexMatrix) -> ComplexMatrix,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * c(0.5 * h, 0.0)));
    let k3 = f(t + h, &(y - &k1 * c(h, 0.0) + &k2 * c(2.0 * h, 0.0)));
    y + (k1 + k2 * c(4.0, 0.0) + k3) * c(h / 6.0, 0.0)
}

/// Integrates `y' = f(t, y)` from `t0` with `steps` equal steps of size `h`.
pub(crate) fn rk3_integrate<F>(f: &F, t0: f64, y0: ComplexMatrix, h: f64, steps: usize) -> ComplexMatrix
where
    F: Fn(f64, &ComplexMatrix) -> ComplexMatrix,
{
    let mut y = y0;
    for k in 0..steps {
        y = rk3_step(f, t0 + k as f64 * h, &y, h);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_rows, max_abs_diff};

    #[test]
    fn third_order_convergence() {
        // y' = −i·ω·y, exact e^{−iωt}
        let f = |_t: f64, y: &ComplexMatrix| y * c(0.0, -1.0);
        let exact = from_rows(1, &[num_complex::Complex64::from_polar(1.0, -1.0)]);
        let err = |steps: usize| {
            let y = rk3_integrate(&f, 0.0, from_rows(1, &[c(1.0, 0.0)]), 1.0 / steps as f64, steps);
            max_abs_diff(&y, &exact)
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 8.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn time_dependent_rhs() {
        // y' = 3t², y(1) = 1
        let f = |t: f64, _y: &ComplexMatrix| from_rows(1, &[c(3.0 * t * t, 0.0)]);
        let y = rk3_integrate(&f, 0.0, from_rows(1, &[c(0.0, 0.0)]), 0.1, 10);
        assert!((y[(0, 0)].re - 1.0).abs() < 1e-12);
    }
}
