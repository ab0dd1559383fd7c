//! Limited-memory BFGS with a strong-Wolfe line search (bracketing plus
//! safeguarded cubic zoom).

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop as soon as the objective drops to this value.
    pub target: f64,
    /// Stop when `‖∇f‖_∞` falls below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            memory: 10,
            max_iters: 500,
            target: f64::NEG_INFINITY,
            grad_tol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    TargetReached,
    GradientVanished,
    IterationCap,
    LineSearchFailed,
    /// The objective stopped changing at machine precision.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    /// Objective at the start and after every iteration.
    pub trace: Vec<f64>,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Point {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, kept
/// inside the bracket with a margin; falls back to bisection.
fn cubic_min(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let width = hi - lo;
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    let mid = 0.5 * (lo + hi);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    if t.is_finite() && t > lo + 0.1 * width && t < hi - 0.1 * width {
        t
    } else {
        mid
    }
}

/// Minimizes `f` from `x0`. The objective returns the value and gradient.
/// On line-search failure the best point evaluated so far is returned.
pub fn lbfgs_minimize<E, F>(mut f: F, x0: Vec<f64>, settings: &LbfgsSettings) -> Result<LbfgsOutcome, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let (f0, g0) = f(&x0)?;
    let mut x = x0;
    let mut fx = f0;
    let mut g = g0;
    let mut trace = vec![fx];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    let status = loop {
        if fx <= settings.target {
            break LbfgsStatus::TargetReached;
        }
        if g.iter().all(|v| v.abs() <= settings.grad_tol) {
            break LbfgsStatus::GradientVanished;
        }
        if iterations >= settings.max_iters {
            break LbfgsStatus::IterationCap;
        }

        let mut d = two_loop(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let alpha0 = if history.is_empty() { 1.0 / dot(&d, &d).sqrt().max(1.0) } else { 1.0 };
        let start = Point { alpha: 0.0, f: fx, slope, x: x.clone(), g: g.clone() };
        let Some(next) = line_search(&mut f, &start, &d, alpha0, settings)? else {
            break LbfgsStatus::LineSearchFailed;
        };

        let s: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let change = (fx - next.f).abs();
        x = next.x;
        fx = next.f;
        g = next.g;
        iterations += 1;
        trace.push(fx);
        if change <= f64::EPSILON * fx.abs().max(f64::MIN_POSITIVE) && fx > settings.target {
            break LbfgsStatus::Stalled;
        }
    };
    Ok(LbfgsOutcome { x, f: fx, gradient: g, iterations, trace, status })
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

fn line_search<E, F>(
    f: &mut F,
    start: &Point,
    d: &[f64],
    alpha0: f64,
    st: &LbfgsSettings,
) -> Result<Option<Point>, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let mut eval = |alpha: f64| -> Result<Point, E> {
        let x = axpy(&start.x, alpha, d);
        let (fv, g) = f(&x)?;
        let slope = dot(&g, d);
        Ok(Point { alpha, f: fv, slope, x, g })
    };
    let armijo = |p: &Point| p.f <= start.f + st.c1 * p.alpha * start.slope;
    let curvature = |p: &Point| p.slope.abs() <= -st.c2 * start.slope;

    let mut best: Option<Point> = None;
    let keep_best = |p: &Point, best: &mut Option<Point>| {
        if p.f < start.f && best.as_ref().is_none_or(|b| p.f < b.f) {
            *best = Some(Point { alpha: p.alpha, f: p.f, slope: p.slope, x: p.x.clone(), g: p.g.clone() });
        }
    };

    let mut prev = Point { alpha: 0.0, f: start.f, slope: start.slope, x: start.x.clone(), g: start.g.clone() };
    let mut alpha = alpha0;
    let mut evals = 0;
    let (mut lo, mut hi) = loop {
        if evals >= st.max_line_evals {
            return Ok(best);
        }
        let cur = eval(alpha)?;
        evals += 1;
        if !cur.f.is_finite() {
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        keep_best(&cur, &mut best);
        if !armijo(&cur) || (evals > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    };

    while evals < st.max_line_evals {
        let alpha = cubic_min(&lo, &hi);
        let cur = eval(alpha)?;
        evals += 1;
        keep_best(&cur, &mut best);
        if !cur.f.is_finite() || !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
    }
    Ok(best)
}
