//! Projected BFGS on a box with backtracking Armijo line search.
//!
//! The Hessian approximation `B` is kept directly; each search direction
//! solves `B_FF d_F = -g_F` on the free variables `F`, so variables held at a
//! bound do not distort the step. Trial points where the objective cannot be
//! evaluated (for example a non-positive-definite weight matrix) count as
//! failed steps and shrink the step length.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A smooth objective on `R^q` whose evaluation may fail.
pub trait Objective {
    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;

    /// A positive semidefinite Hessian approximation at `x`, used to start
    /// and to restart the quasi-Newton update. Defaults to the identity.
    fn curvature(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

impl<F> Objective for F
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self(x)
    }
}

/// Coordinate-wise box `lower <= x <= upper`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn unbounded(q: usize) -> Self {
        BoxBounds {
            lower: DVector::from_element(q, f64::NEG_INFINITY),
            upper: DVector::from_element(q, f64::INFINITY),
        }
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    fn blocks(&self, x: &DVector<f64>, g: &DVector<f64>, i: usize) -> bool {
        (x[i] <= self.lower[i] && g[i] > 0.0) || (x[i] >= self.upper[i] && g[i] < 0.0)
    }

    /// Gradient with components that push out of an active bound zeroed.
    pub fn projected_gradient(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(
            x.len(),
            |i, _| if self.blocks(x, g, i) { 0.0 } else { g[i] },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Converged once `|projected gradient| <= grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Smallest accepted step relative to `1 + |x|_inf`.
    pub step_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 500,
            grad_tol: 1e-8,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const METRIC_FLOOR: f64 = 1e-3;

/// Solves `(b + mu I) d = rhs` with the smallest `mu` in
/// `0, 1e-10 s, 1e-8 s, ...` (`s` the mean diagonal) that admits a Cholesky
/// factor.
fn regularized_solve(b: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(c) = b.clone().cholesky() {
        return Some(c.solve(rhs));
    }
    let n = b.nrows();
    let scale = (b.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut mu = 1e-10 * scale;
    while mu <= 1e6 * scale {
        if let Some(c) = (b + DMatrix::identity(n, n) * mu).cholesky() {
            return Some(c.solve(rhs));
        }
        mu *= 100.0;
    }
    None
}

fn search_direction(b: &DMatrix<f64>, g: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let mut d = DVector::zeros(g.len());
    if free.is_empty() {
        return d;
    }
    let b_ff = b.select_rows(free.iter()).select_columns(free.iter());
    let g_f = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
    match regularized_solve(&b_ff, &g_f) {
        Some(d_f) => {
            for (j, &i) in free.iter().enumerate() {
                d[i] = d_f[j];
            }
        }
        None => {
            for &i in free {
                d[i] = -g[i];
            }
        }
    }
    d
}

/// Minimizes `obj` over `bounds` starting from `x0`.
pub fn minimize_box_bfgs(
    obj: &impl Objective,
    x0: &DVector<f64>,
    bounds: &BoxBounds,
    opts: &OptimOptions,
) -> Result<OptimOutcome> {
    let q = x0.len();
    let initial_metric = |x: &DVector<f64>| match obj.curvature(x) {
        Some(c) if c.clone().cholesky().is_some() => c,
        Some(c) => {
            // Singular curvature: lift the null directions to a fraction of
            // the average curvature.
            let mu = METRIC_FLOOR * (c.trace() / q as f64).abs().max(f64::MIN_POSITIVE);
            c + DMatrix::identity(q, q) * mu
        }
        None => DMatrix::identity(q, q),
    };

    let mut x = bounds.project(x0);
    let (mut f, mut g) = obj.value_grad(&x)?;
    let mut b = initial_metric(&x);
    let mut iterations = 0;
    let mut fresh = true;

    let outcome =
        |x: DVector<f64>, f: f64, g: DVector<f64>, iterations, converged, message: &str| {
            let pg = bounds.projected_gradient(&x, &g).norm();
            OptimOutcome {
                x,
                value: f,
                gradient: g,
                projected_gradient_norm: pg,
                iterations,
                converged,
                message: message.to_string(),
            }
        };

    loop {
        let pg = bounds.projected_gradient(&x, &g);
        if pg.norm() <= opts.grad_tol * (1.0 + f.abs()) {
            return Ok(outcome(
                x,
                f,
                g,
                iterations,
                true,
                "gradient tolerance reached",
            ));
        }
        if iterations >= opts.max_iter {
            return Ok(outcome(
                x,
                f,
                g,
                iterations,
                false,
                "iteration limit reached",
            ));
        }

        let free: Vec<usize> = (0..q).filter(|&i| !bounds.blocks(&x, &g, i)).collect();
        let mut d = search_direction(&b, &g, &free);
        if !(g.dot(&d) < 0.0) && !fresh {
            b = initial_metric(&x);
            fresh = true;
            d = search_direction(&b, &g, &free);
        }
        if !(g.dot(&d) < 0.0) {
            d = -pg.clone();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut eval_failures = 0;
        let mut stalled = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial = bounds.project(&(&x + &d * alpha));
            let step = &trial - &x;
            if step.amax() <= opts.step_tol * (1.0 + x.amax()) {
                stalled = true;
                break;
            }
            match obj.value_grad(&trial) {
                Ok((ft, gt)) if ft.is_finite() && ft <= f + ARMIJO_C1 * g.dot(&step) => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                Ok(_) => {}
                Err(_) => eval_failures += 1,
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if !fresh {
                // Retry once from a fresh metric before giving up.
                b = initial_metric(&x);
                fresh = true;
                continue;
            }
            if eval_failures >= MAX_BACKTRACKS / 2 {
                return Err(Error::Optimizer(format!(
                    "objective undefined along the search direction at iteration {iterations} \
                     ({eval_failures} failed evaluations, f = {f:e}, |pg| = {:e})",
                    pg.norm()
                )));
            }
            let msg = if stalled {
                "step tolerance reached"
            } else {
                "line search failed"
            };
            return Ok(outcome(x, f, g, iterations, false, msg));
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let bs = &b * &s;
        let sbs = s.dot(&bs);
        if sy > 1e-12 * s.norm() * y.norm() && sbs > 0.0 {
            b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
            fresh = false;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
    }
}
