use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::contrast::{contrast, contrast_with_parts, quasi_loglik_with_grad, weight_cholesky};
use super::optimize::{minimize_box_bfgs, BoxBounds, Objective, OptimOptions, OptimOutcome};
use super::RealisedCov;
use crate::error::{Error, Result};
use crate::matrixcalc::{half_dim, vech, SymMatrix};
use crate::model::{delta_jacobian, CovStructure, ModelSpec, ParamVector};

/// Interval bounds per parameter block; `None` means unbounded on that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockBounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl BlockBounds {
    pub const FREE: BlockBounds = BlockBounds {
        lower: None,
        upper: None,
    };

    fn lo(&self) -> f64 {
        self.lower.unwrap_or(f64::NEG_INFINITY)
    }

    fn hi(&self) -> f64 {
        self.upper.unwrap_or(f64::INFINITY)
    }
}

/// The parameter box `Theta_k`, given block by block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub loadings: BlockBounds,
    pub factor_cov: BlockBounds,
    pub unique_var: BlockBounds,
}

/// Optional lower bound keeping unique variances strictly positive.
pub const UNIQUE_VAR_FLOOR: f64 = 1e-8;

/// Half-width of the default parameter cube.
pub const DEFAULT_BOX: f64 = 30.0;

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds::cube(DEFAULT_BOX)
    }
}

impl ParamBounds {
    /// The cube `[-c, c]^q`.
    pub fn cube(c: f64) -> Self {
        let b = BlockBounds {
            lower: Some(-c),
            upper: Some(c),
        };
        ParamBounds {
            loadings: b,
            factor_cov: b,
            unique_var: b,
        }
    }

    /// No bounds at all.
    pub fn open() -> Self {
        ParamBounds {
            loadings: BlockBounds::FREE,
            factor_cov: BlockBounds::FREE,
            unique_var: BlockBounds::FREE,
        }
    }

    /// Raises the lower bound of the unique variances to `floor`.
    pub fn with_unique_floor(mut self, floor: f64) -> Self {
        self.unique_var.lower = Some(self.unique_var.lower.map_or(floor, |l| l.max(floor)));
        self
    }

    pub fn to_box(&self, p: usize, k: usize) -> BoxBounds {
        let na = (p - k) * k;
        let nf = half_dim(k);
        let q = na + nf + p;
        let pick = |i: usize| {
            if i < na {
                self.loadings
            } else if i < na + nf {
                self.factor_cov
            } else {
                self.unique_var
            }
        };
        BoxBounds {
            lower: DVector::from_fn(q, |i, _| pick(i).lo()),
            upper: DVector::from_fn(q, |i, _| pick(i).hi()),
        }
    }
}

/// How the weight matrix enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `W(theta)` re-evaluated at every iterate (BFGS).
    #[default]
    Iterated,
    /// `W` frozen at the pilot `W(Q_XX)`; avoids a refactorization per
    /// evaluation.
    FixedPilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub bounds: ParamBounds,
    pub weighting: Weighting,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            bounds: ParamBounds::default(),
            weighting: Weighting::Iterated,
        }
    }
}

impl FitOptions {
    fn optim(&self) -> OptimOptions {
        OptimOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
        }
    }
}

/// Outcome of a minimum-contrast (or quasi-likelihood) fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    /// Contrast `F(Q, Sigma(theta_hat))`, whatever objective was minimized.
    pub contrast: f64,
    /// Value of the minimized objective.
    pub objective: f64,
    /// `(Delta^T W^{-1} Delta)^{-1}` at `theta_hat`; `None` if singular.
    pub avar: Option<SymMatrix>,
    /// `sqrt(avar_ii / n)`.
    pub se: Option<DVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Smallest eigenvalue of the fitted factor covariance.
    pub factor_cov_min_eigenvalue: f64,
    pub n: usize,
    pub message: String,
}

impl FitResult {
    /// Fitted factor covariance has a negative eigenvalue, or a unique
    /// variance is not positive.
    pub fn is_heywood(&self) -> bool {
        self.factor_cov_min_eigenvalue < 0.0
            || self
                .theta_hat
                .sigma_ee
                .iter()
                .any(|&s| s <= UNIQUE_VAR_FLOOR)
    }

    pub fn to_json(&self) -> FitReport {
        FitReport {
            p: self.theta_hat.p(),
            k: self.theta_hat.k(),
            n: self.n,
            theta: self.theta_hat.pack().iter().copied().collect(),
            se: self.se.as_ref().map(|s| s.iter().copied().collect()),
            contrast: self.contrast,
            converged: self.converged,
            iterations: self.iterations,
            gradient_norm: self.gradient_norm,
            heywood: self.is_heywood(),
            message: self.message.clone(),
        }
    }
}

/// JSON form of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub p: usize,
    pub k: usize,
    pub n: usize,
    pub theta: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub contrast: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub heywood: bool,
    pub message: String,
}

/// Starting point when none is supplied: `A = 0`, `Sigma_ff` the diagonal
/// of the top-left `k x k` block of `Q`, `sigma_i^2 = Q_ii / 2`.
pub fn default_init(q: &RealisedCov, k: usize) -> Result<ParamVector> {
    let p = q.q.dim();
    if k == 0 || k >= p {
        return Err(Error::Dimension(format!(
            "need 1 <= k < p, got p={p}, k={k}"
        )));
    }
    let diag: Vec<f64> = (0..p).map(|i| q.q[(i, i)]).collect();
    ParamVector::new(
        DMatrix::zeros(p - k, k),
        SymMatrix::from_diagonal(&diag[..k]),
        DVector::from_iterator(p, diag.iter().map(|d| (0.5 * d).max(UNIQUE_VAR_FLOOR))),
    )
}

/// Moment-based start: unique variances `c Q_ii` for the first `k`
/// coordinates, `Sigma_ff` the top-left block of `Q` minus those,
/// `A = Q_21 Sigma_ff^{-1}` and the trailing unique variances from the
/// diagonal remainder. `c` is the first of 1/2, 1/4, 1/8 that leaves
/// `Sigma_ff` positive definite; `None` if none does.
pub fn moment_init(q: &RealisedCov, k: usize) -> Result<Option<ParamVector>> {
    let p = q.q.dim();
    if k == 0 || k >= p {
        return Err(Error::Dimension(format!(
            "need 1 <= k < p, got p={p}, k={k}"
        )));
    }
    let qm = q.q.as_matrix();
    let found = [0.5, 0.25, 0.125].into_iter().find_map(|c| {
        let mut ff = qm.view((0, 0), (k, k)).into_owned();
        for i in 0..k {
            ff[(i, i)] -= c * qm[(i, i)];
        }
        ff.clone().cholesky().map(|chol| (c, ff, chol))
    });
    let Some((c, ff, chol)) = found else {
        return Ok(None);
    };
    let a = chol
        .solve(&qm.view((k, 0), (p - k, k)).transpose())
        .transpose();
    let common = &a * &ff * a.transpose();
    let ee = DVector::from_fn(p, |i, _| {
        let rest = if i < k {
            c * qm[(i, i)]
        } else {
            qm[(i, i)] - common[(i - k, i - k)]
        };
        rest.max(0.05 * qm[(i, i)]).max(UNIQUE_VAR_FLOOR)
    });
    ParamVector::new(a, SymMatrix::from_lower(&ff), ee).map(Some)
}

/// Candidate starting points: the supplied start after validation, or
/// [`default_init`] and [`moment_init`] projected into the box.
fn starting_points(
    q: &RealisedCov,
    spec: &ModelSpec,
    init: Option<&ParamVector>,
    bounds: &BoxBounds,
) -> Result<Vec<ParamVector>> {
    if let Some(v) = init {
        check_inputs(q, spec, v, bounds)?;
        return Ok(vec![v.clone()]);
    }
    if q.q.dim() != spec.p {
        return Err(Error::Dimension(format!(
            "data has p={} but the model has p={}",
            q.q.dim(),
            spec.p
        )));
    }
    let project = |v: ParamVector| ParamVector::unpack(&bounds.project(&v.pack()), spec.p, spec.k);
    let mut starts = vec![project(default_init(q, spec.k)?)?];
    if let Some(m) = moment_init(q, spec.k)? {
        starts.push(project(m)?);
    }
    for s in &starts {
        check_inputs(q, spec, s, bounds)?;
    }
    Ok(starts)
}

/// Runs the optimizer from every start and keeps the best outcome:
/// converged before non-converged, then the lower objective. Errors only if
/// every start fails.
fn best_of(
    starts: &[ParamVector],
    mut solve: impl FnMut(&DVector<f64>) -> Result<OptimOutcome>,
) -> Result<OptimOutcome> {
    let mut best: Option<OptimOutcome> = None;
    let mut last_err = None;
    for s in starts {
        match solve(&s.pack()) {
            Ok(out) => {
                let better = best
                    .as_ref()
                    .is_none_or(|b| (out.converged, -out.value) > (b.converged, -b.value));
                if better {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one start"))
}

fn check_inputs(
    q: &RealisedCov,
    spec: &ModelSpec,
    init: &ParamVector,
    bounds: &BoxBounds,
) -> Result<()> {
    if q.q.dim() != spec.p {
        return Err(Error::Dimension(format!(
            "data has p={} but the model has p={}",
            q.q.dim(),
            spec.p
        )));
    }
    if init.p() != spec.p || init.k() != spec.k {
        return Err(Error::Dimension(format!(
            "initial value has (p,k)=({},{}), model has ({},{})",
            init.p(),
            init.k(),
            spec.p,
            spec.k
        )));
    }
    if !bounds.contains(&init.pack()) {
        return Err(Error::InvalidParameter(
            "initial value lies outside the parameter box".into(),
        ));
    }
    Ok(())
}

/// The minimum-contrast objective, with `W` either re-evaluated at every
/// point or frozen at a pilot value.
struct ContrastObjective<'a> {
    q: &'a RealisedCov,
    p: usize,
    k: usize,
    /// Cholesky factor of the frozen weight, if any.
    pilot: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl ContrastObjective<'_> {
    fn params(&self, x: &DVector<f64>) -> Result<ParamVector> {
        ParamVector::unpack(x, self.p, self.k)
    }
}

impl Objective for ContrastObjective<'_> {
    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let pv = self.params(x)?;
        match &self.pilot {
            None => {
                let (f, parts) = contrast_with_parts(self.q, &pv)?;
                Ok((f, parts.total()))
            }
            Some(w) => {
                let r = vech(&self.q.q) - vech(&pv.sigma());
                let wr = w.solve(&r);
                Ok((r.dot(&wr), delta_jacobian(&pv).tr_mul(&wr) * -2.0))
            }
        }
    }

    /// Gauss-Newton matrix `2 Delta^T W^{-1} Delta`.
    fn curvature(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let pv = self.params(x).ok()?;
        let owned;
        let w = match &self.pilot {
            Some(w) => w,
            None => {
                owned = weight_cholesky(&pv.sigma()).ok()?;
                &owned
            }
        };
        gauss_newton(&pv, w, 2.0)
    }
}

fn gauss_newton(
    pv: &ParamVector,
    w: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    scale: f64,
) -> Option<DMatrix<f64>> {
    let delta = delta_jacobian(pv);
    Some(SymMatrix::from_lower(&(delta.tr_mul(&w.solve(&delta)) * scale)).into_matrix())
}

struct QuasiLikelihoodObjective<'a> {
    q: &'a RealisedCov,
    p: usize,
    k: usize,
}

impl Objective for QuasiLikelihoodObjective<'_> {
    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        quasi_loglik_with_grad(self.q, &ParamVector::unpack(x, self.p, self.k)?)
    }

    /// Expected Hessian `Delta^T W^{-1} Delta`, half the contrast's.
    fn curvature(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let pv = ParamVector::unpack(x, self.p, self.k).ok()?;
        gauss_newton(&pv, &weight_cholesky(&pv.sigma()).ok()?, 1.0)
    }
}

fn finish(
    q: &RealisedCov,
    spec: &ModelSpec,
    out: OptimOutcome,
    objective_is_contrast: bool,
) -> Result<FitResult> {
    let theta_hat = ParamVector::unpack(&out.x, spec.p, spec.k)?;
    let contrast_value = if objective_is_contrast {
        out.value
    } else {
        contrast(q, &theta_hat)?
    };
    let avar = CovStructure::at(&theta_hat)
        .and_then(|c| c.asymptotic_covariance())
        .ok();
    let se = avar
        .as_ref()
        .map(|a| DVector::from_fn(a.dim(), |i, _| (a[(i, i)] / q.n as f64).sqrt()));
    Ok(FitResult {
        factor_cov_min_eigenvalue: theta_hat.sigma_ff.min_eigenvalue(),
        theta_hat,
        contrast: contrast_value,
        objective: out.value,
        avar,
        se,
        converged: out.converged,
        iterations: out.iterations,
        gradient_norm: out.projected_gradient_norm,
        n: q.n,
        message: out.message,
    })
}

/// Minimum-contrast estimate of the `spec.k`-factor model.
pub fn fit(
    q: &RealisedCov,
    spec: &ModelSpec,
    init: Option<&ParamVector>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let bounds = opts.bounds.to_box(spec.p, spec.k);
    let starts = starting_points(q, spec, init, &bounds)?;
    let pilot = match opts.weighting {
        Weighting::Iterated => None,
        Weighting::FixedPilot => Some(weight_cholesky(&q.q)?),
    };
    let objective = ContrastObjective {
        q,
        p: spec.p,
        k: spec.k,
        pilot,
    };
    let out = best_of(&starts, |x0| {
        minimize_box_bfgs(&objective, x0, &bounds, &opts.optim())
    })?;
    finish(q, spec, out, opts.weighting == Weighting::Iterated)
}

/// Minimizes the excess quasi-log-likelihood instead of the contrast.
pub fn fit_quasi_likelihood(
    q: &RealisedCov,
    spec: &ModelSpec,
    init: Option<&ParamVector>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let bounds = opts.bounds.to_box(spec.p, spec.k);
    let starts = starting_points(q, spec, init, &bounds)?;
    let objective = QuasiLikelihoodObjective {
        q,
        p: spec.p,
        k: spec.k,
    };
    let out = best_of(&starts, |x0| {
        minimize_box_bfgs(&objective, x0, &bounds, &opts.optim())
    })?;
    finish(q, spec, out, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixtures::theta_2_0, Regime};

    fn spec62() -> ModelSpec {
        ModelSpec::new(6, 2, Regime::Ergodic, 1000, 1e-3).unwrap()
    }

    #[test]
    fn zero_residual_fixed_point() {
        let truth = theta_2_0();
        let q = RealisedCov {
            q: truth.sigma(),
            n: 1000,
            h: 1e-3,
        };
        let res = fit(&q, &spec62(), Some(&truth), &FitOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.contrast, 0.0);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn recovers_interior_point_from_default_start() {
        let truth = theta_2_0();
        let q = RealisedCov {
            q: truth.sigma(),
            n: 1000,
            h: 1e-3,
        };
        let res = fit(&q, &spec62(), None, &FitOptions::default()).unwrap();
        assert!(res.converged, "{}", res.message);
        assert!(res.contrast < 1e-12);
        let err = (res.theta_hat.pack() - truth.pack()).amax();
        assert!(err < 1e-4, "max error {err}");
    }

    #[test]
    fn standard_errors_follow_avar() {
        let truth = theta_2_0();
        let q = RealisedCov {
            q: truth.sigma(),
            n: 1_000_000,
            h: 1e-4,
        };
        let res = fit(&q, &spec62(), Some(&truth), &FitOptions::default()).unwrap();
        let se = res.se.unwrap();
        // Table-level theoretical SD for theta^(1) at n = 10^6
        assert!((se[0] - 0.003).abs() < 5e-4);
        assert!(se.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn init_outside_box_rejected() {
        let truth = theta_2_0();
        let q = RealisedCov {
            q: truth.sigma(),
            n: 1000,
            h: 1e-3,
        };
        let opts = FitOptions {
            bounds: ParamBounds::cube(5.0),
            ..Default::default()
        };
        assert!(matches!(
            fit(&q, &spec62(), Some(&truth), &opts),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn fixed_pilot_weighting_recovers_truth() {
        let truth = theta_2_0();
        let q = RealisedCov {
            q: truth.sigma(),
            n: 1000,
            h: 1e-3,
        };
        let opts = FitOptions {
            weighting: Weighting::FixedPilot,
            ..Default::default()
        };
        let start = ParamVector::unpack(&truth.pack().map(|v| v * 1.1), 6, 2).unwrap();
        let res = fit(&q, &spec62(), Some(&start), &opts).unwrap();
        assert!(res.converged, "{}", res.message);
        assert!((res.theta_hat.pack() - truth.pack()).amax() < 1e-5);
    }

    #[test]
    fn quasi_likelihood_fit_at_exact_covariance() {
        let truth = theta_2_0();
        let q = RealisedCov {
            q: truth.sigma(),
            n: 1000,
            h: 1e-3,
        };
        let res = fit_quasi_likelihood(&q, &spec62(), None, &FitOptions::default()).unwrap();
        assert!(res.converged, "{}", res.message);
        assert!((res.theta_hat.pack() - truth.pack()).amax() < 1e-4);
    }

    #[test]
    fn bounds_layout() {
        let b = ParamBounds::default().to_box(6, 2);
        assert_eq!(b.lower.len(), 17);
        assert_eq!(b.lower[10], -30.0);
        assert_eq!(b.upper[16], 30.0);
        let floored = ParamBounds::default()
            .with_unique_floor(UNIQUE_VAR_FLOOR)
            .to_box(6, 2);
        assert_eq!(floored.lower[10], -30.0);
        assert_eq!(floored.lower[11], UNIQUE_VAR_FLOOR);
        assert_eq!(ParamBounds::open().to_box(6, 1).lower[0], f64::NEG_INFINITY);
        let json = serde_json::to_string(&ParamBounds::cube(30.0)).unwrap();
        let back: ParamBounds = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ParamBounds::cube(30.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let q = RealisedCov {
            q: SymMatrix::identity(5),
            n: 10,
            h: 0.1,
        };
        assert!(fit(&q, &spec62(), None, &FitOptions::default()).is_err());
    }
}
