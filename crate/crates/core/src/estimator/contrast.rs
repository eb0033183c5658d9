//! Minimum-contrast objective and the Gaussian quasi-likelihood cross-check.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::RealisedCov;
use crate::error::{Error, Result};
use crate::matrixcalc::{vech_pair, SymMatrix};
use crate::model::{delta_jacobian, weight_matrix_unchecked, ParamVector};

/// Relative pivot floor for accepting `W(theta)` as positive definite.
pub const WEIGHT_PD_TOL: f64 = 1e-12;

/// Cholesky factor of `W(theta)`, rejecting near-singular weights.
pub(crate) fn weight_cholesky(sigma: &SymMatrix) -> Result<Cholesky<f64, Dyn>> {
    let w = weight_matrix_unchecked(sigma).into_matrix();
    let trace = w.trace();
    let chol = w
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("W(theta) failed to factor".into()))?;
    let floor = WEIGHT_PD_TOL * trace;
    if chol.l_dirty().diagonal().iter().any(|&d| !(d * d > floor)) {
        return Err(Error::NotPositiveDefinite(
            "W(theta) is numerically singular".into(),
        ));
    }
    Ok(chol)
}

fn check_dims(q: &RealisedCov, params: &ParamVector) -> Result<()> {
    if q.q.dim() != params.p() {
        return Err(Error::Dimension(format!(
            "realised covariance is {0}x{0} but the model has p={1}",
            q.q.dim(),
            params.p()
        )));
    }
    Ok(())
}

/// Relative pivot floor for accepting `Sigma(theta)` in the contrast.
const SIGMA_PD_TOL: f64 = 1e-14;

/// Factors `Sigma = L L^T`. `W(theta)` is positive definite exactly when
/// `Sigma(theta)` is, so this is the definedness check for the contrast.
fn sigma_cholesky(sigma: &SymMatrix) -> Result<DMatrix<f64>> {
    let chol = sigma.as_matrix().clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("W(theta) is not positive definite: Sigma(theta) is not".into())
    })?;
    let l = chol.unpack();
    let scale = sigma.as_matrix().diagonal().amax();
    if l.diagonal()
        .iter()
        .any(|&d| !(d * d > SIGMA_PD_TOL * scale))
    {
        return Err(Error::NotPositiveDefinite(
            "W(theta) is numerically singular".into(),
        ));
    }
    Ok(l)
}

/// `L^{-1} M L^{-T}` for symmetric `M`.
fn whiten(l: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let half = l
        .solve_lower_triangular(m)
        .expect("non-singular triangular factor");
    let e = l
        .solve_lower_triangular(&half.transpose())
        .expect("non-singular triangular factor");
    SymMatrix::from_lower(&e).into_matrix()
}

/// `L^{-T} M L^{-1}` for symmetric `M`.
fn unwhiten(l: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let lt = l.transpose();
    let half = lt
        .solve_upper_triangular(m)
        .expect("non-singular triangular factor");
    let out = lt
        .solve_upper_triangular(&half.transpose())
        .expect("non-singular triangular factor");
    SymMatrix::from_lower(&out).into_matrix()
}

/// Maps a symmetric matrix to the vech coordinates of the Frobenius pairing:
/// off-diagonal entries are doubled.
fn pairing_vech(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    DVector::from_fn(crate::matrixcalc::half_dim(p), |pos, _| {
        let (i, j) = vech_pair(pos, p);
        if i == j {
            m[(i, i)]
        } else {
            2.0 * m[(i, j)]
        }
    })
}

/// `F(Q, Sigma(theta)) = r^T W(theta)^{-1} r` with `r = vech Q - vech Sigma(theta)`.
///
/// Evaluated as `||L^{-1} R L^{-T}||_F^2 / 2` with `R = Q - Sigma`, which is the
/// same quantity because `W^{-1} = D^T (Sigma^{-1} (x) Sigma^{-1}) D / 2`.
pub fn contrast(q: &RealisedCov, params: &ParamVector) -> Result<f64> {
    check_dims(q, params)?;
    let sigma = params.sigma();
    let l = sigma_cholesky(&sigma)?;
    let e = whiten(&l, &(q.q.as_matrix() - sigma.as_matrix()));
    Ok(0.5 * e.norm_squared())
}

/// The two additive pieces of the contrast gradient.
#[derive(Debug, Clone)]
pub struct GradientParts {
    /// `-2 Delta^T W^{-1} r`: derivative through the residual with `W` frozen.
    pub residual: DVector<f64>,
    /// `-u^T (dW/dtheta_j) u` with `u = W^{-1} r`: derivative through the weight.
    pub weight: DVector<f64>,
}

impl GradientParts {
    pub fn total(&self) -> DVector<f64> {
        &self.residual + &self.weight
    }
}

/// Contrast value and both gradient terms.
pub fn contrast_with_parts(q: &RealisedCov, params: &ParamVector) -> Result<(f64, GradientParts)> {
    check_dims(q, params)?;
    let sigma = params.sigma();
    let l = sigma_cholesky(&sigma)?;
    let e = whiten(&l, &(q.q.as_matrix() - sigma.as_matrix()));
    let value = 0.5 * e.norm_squared();
    let delta = delta_jacobian(params);

    // With U = Sigma^{-1} R Sigma^{-1} / 2 (u on the diagonal, u/2 off it),
    // u = W^{-1} r pairs as <U, .> and u^T dW u = 4 <U Sigma U, dSigma>.
    let u = unwhiten(&l, &e) * 0.5;
    let usu = unwhiten(&l, &(&e * &e)) * 0.25;
    let residual = delta.tr_mul(&pairing_vech(&u)) * -2.0;
    let weight = delta.tr_mul(&pairing_vech(&usu)) * -4.0;
    Ok((value, GradientParts { residual, weight }))
}

/// Analytic gradient of [`contrast`] in the packed parameter.
pub fn contrast_grad(q: &RealisedCov, params: &ParamVector) -> Result<DVector<f64>> {
    Ok(contrast_with_parts(q, params)?.1.total())
}

fn cholesky_of(m: &SymMatrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    m.as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Excess negative Gaussian quasi-log-likelihood,
/// `log det Sigma - log det Q + tr(Sigma^{-1} Q) - p`; zero iff `Sigma = Q`.
pub fn quasi_loglik_excess(q: &RealisedCov, params: &ParamVector) -> Result<f64> {
    Ok(quasi_loglik_with_grad(q, params)?.0)
}

/// Value and gradient of [`quasi_loglik_excess`].
///
/// With `Sigma = L L^T` and `E = L^{-1} (Q - Sigma) L^{-T}` the value is
/// `sum_i (mu_i - log(1 + mu_i))` over the eigenvalues of `E`, which stays
/// accurate as `Q - Sigma` shrinks.
pub fn quasi_loglik_with_grad(
    q: &RealisedCov,
    params: &ParamVector,
) -> Result<(f64, DVector<f64>)> {
    check_dims(q, params)?;
    let p = params.p();
    cholesky_of(&q.q, "realised covariance Q_XX")?;
    let sigma = params.sigma();
    let chol = cholesky_of(&sigma, "Sigma(theta)")?;
    let l = chol.l();
    let resid = q.q.as_matrix() - sigma.as_matrix();
    let half = l
        .solve_lower_triangular(&resid)
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma(theta)".into()))?;
    let e = l
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma(theta)".into()))?;
    let e = SymMatrix::from_lower(&e);
    let value: f64 = e
        .as_matrix()
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .map(|&mu| mu - mu.ln_1p())
        .sum::<f64>()
        .max(0.0);

    // dM = <Sigma^{-1} (Sigma - Q) Sigma^{-1}, dSigma> = <-L^{-T} E L^{-1}, dSigma>
    let lt = l.transpose();
    let right = lt
        .solve_upper_triangular(e.as_matrix())
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma(theta)".into()))?;
    let g = -lt
        .solve_upper_triangular(&right.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma(theta)".into()))?;
    let mut g_vech = DVector::zeros(crate::matrixcalc::half_dim(p));
    for pos in 0..g_vech.len() {
        let (i, j) = vech_pair(pos, p);
        g_vech[pos] = if i == j {
            g[(i, i)]
        } else {
            g[(i, j)] + g[(j, i)]
        };
    }
    Ok((value, delta_jacobian(params).tr_mul(&g_vech)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcalc::vech;
    use crate::model::{fixtures::theta_2_0, weight_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rc(q: SymMatrix) -> RealisedCov {
        RealisedCov {
            q,
            n: 1000,
            h: 1e-3,
        }
    }

    fn random_params(p: usize, k: usize, rng: &mut ChaCha8Rng) -> ParamVector {
        let a = DMatrix::from_fn(p - k, k, |_, _| rng.random_range(-2.0..2.0));
        let l = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.5..1.5));
        let ff = SymMatrix::from_lower(&(&l * l.transpose() + DMatrix::identity(k, k)));
        let ee = DVector::from_fn(p, |_, _| rng.random_range(0.5..3.0));
        ParamVector::new(a, ff, ee).unwrap()
    }

    fn perturbed_cov(params: &ParamVector, scale: f64, rng: &mut ChaCha8Rng) -> SymMatrix {
        let p = params.p();
        let g = DMatrix::from_fn(p, p, |_, _| rng.random_range(-scale..scale));
        SymMatrix::from_lower(&(params.sigma().as_matrix() + &g * g.transpose()))
    }

    fn fd_grad(f: impl Fn(&ParamVector) -> f64, params: &ParamVector) -> DVector<f64> {
        let (p, k) = (params.p(), params.k());
        let theta = params.pack();
        DVector::from_fn(theta.len(), |j, _| {
            let step = 1e-6 * (1.0 + theta[j].abs());
            let mut up = theta.clone();
            up[j] += step;
            let mut dn = theta.clone();
            dn[j] -= step;
            (f(&ParamVector::unpack(&up, p, k).unwrap())
                - f(&ParamVector::unpack(&dn, p, k).unwrap()))
                / (2.0 * step)
        })
    }

    #[test]
    fn zero_at_exact_fit() {
        let pv = theta_2_0();
        let q = rc(pv.sigma());
        assert_eq!(contrast(&q, &pv).unwrap(), 0.0);
        let g = contrast_grad(&q, &pv).unwrap();
        assert_eq!(g.amax(), 0.0);
        assert!(quasi_loglik_excess(&q, &pv).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_explicit_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let pv = random_params(5, 2, &mut rng);
            let q = perturbed_cov(&pv, 1.0, &mut rng);
            let r = vech(&q) - vech(&pv.sigma());
            let w = weight_matrix(&pv.sigma()).unwrap().into_matrix();
            let winv = w.try_inverse().unwrap();
            let direct = (r.transpose() * winv * &r)[(0, 0)];
            let ours = contrast(&rc(q), &pv).unwrap();
            assert!((ours - direct).abs() <= 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn matches_trace_form() {
        // r^T W^{-1} r = tr((R S^{-1})^2) / 2 for R = Q - S.
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let pv = random_params(6, 2, &mut rng);
        let q = perturbed_cov(&pv, 2.0, &mut rng);
        let s = pv.sigma();
        let rs = (q.as_matrix() - s.as_matrix()) * s.as_matrix().clone().try_inverse().unwrap();
        let trace_form = 0.5 * (&rs * &rs).trace();
        let ours = contrast(&rc(q), &pv).unwrap();
        assert!((ours - trace_form).abs() <= 1e-10 * trace_form);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for &(p, k) in &[(3usize, 1usize), (6, 2), (6, 1), (3, 2)] {
            for _ in 0..20 {
                let pv = random_params(p, k, &mut rng);
                let q = rc(perturbed_cov(&pv, 1.0, &mut rng));
                let g = contrast_grad(&q, &pv).unwrap();
                let fd = fd_grad(|x| contrast(&q, x).unwrap(), &pv);
                let rel = (&g - &fd).amax() / g.amax().max(1e-8);
                assert!(rel < 1e-5, "p={p} k={k} rel={rel}");
            }
        }
    }

    #[test]
    fn residual_term_is_frozen_weight_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let pv = random_params(3, 1, &mut rng);
        let q = rc(perturbed_cov(&pv, 1.0, &mut rng));
        let winv = weight_matrix(&pv.sigma())
            .unwrap()
            .into_matrix()
            .try_inverse()
            .unwrap();
        let frozen = |x: &ParamVector| {
            let r = vech(&q.q) - vech(&x.sigma());
            (r.transpose() * &winv * &r)[(0, 0)]
        };
        let (_, parts) = contrast_with_parts(&q, &pv).unwrap();
        let fd = fd_grad(frozen, &pv);
        assert!((&parts.residual - &fd).amax() < 1e-6 * parts.residual.amax());
        let r = vech(&q.q) - vech(&pv.sigma());
        let explicit = delta_jacobian(&pv).transpose() * &winv * r * -2.0;
        assert!((&parts.residual - explicit).amax() < 1e-10 * parts.residual.amax());
    }

    #[test]
    fn contrast_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..50 {
            let pv = random_params(4, 1, &mut rng);
            let q = perturbed_cov(&random_params(4, 1, &mut rng), 0.5, &mut rng);
            assert!(contrast(&rc(q), &pv).unwrap() >= 0.0);
        }
    }

    #[test]
    fn quasi_likelihood_closed_form() {
        // Sigma = 2Q: log 2^p - 0 + p/2 - p = p (log 2 - 1/2)
        let p = 6;
        let base = theta_2_0();
        let half = ParamVector::new(
            base.a.clone(),
            SymMatrix::from_lower(&(base.sigma_ff.as_matrix() * 0.5)),
            &base.sigma_ee * 0.5,
        )
        .unwrap();
        let q = rc(half.sigma());
        let m = quasi_loglik_excess(
            &q,
            &ParamVector::new(base.a.clone(), base.sigma_ff.clone(), base.sigma_ee.clone())
                .unwrap(),
        )
        .unwrap();
        let expected = p as f64 * (2f64.ln() - 1.0 + 0.5);
        assert!((m - expected).abs() < 1e-10);
    }

    #[test]
    fn quasi_likelihood_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let pv = random_params(6, 2, &mut rng);
        let q = rc(perturbed_cov(&pv, 1.0, &mut rng));
        let (_, g) = quasi_loglik_with_grad(&q, &pv).unwrap();
        let fd = fd_grad(|x| quasi_loglik_excess(&q, x).unwrap(), &pv);
        assert!((&g - &fd).amax() < 1e-5 * g.amax());
    }

    #[test]
    fn quasi_likelihood_requires_pd_q() {
        let pv = theta_2_0();
        let q = rc(SymMatrix::zeros(6));
        assert!(matches!(
            quasi_loglik_excess(&q, &pv),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn singular_weight_is_an_error() {
        let mut pv = theta_2_0();
        pv.sigma_ee.fill(0.0);
        let q = rc(theta_2_0().sigma());
        assert!(matches!(
            contrast(&q, &pv),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(matches!(
            contrast_grad(&q, &pv),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
