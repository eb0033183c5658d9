//! Exact Gaussian transition of the linear OU system
//! `dx = -(B x - mu) dt + S dW`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Precomputed one-step transition over a fixed step `h`:
/// `x -> e^{-Bh} x + int_0^h e^{-Bu} du mu + L z` with `L L^T` the exact
/// transition covariance.
#[derive(Debug, Clone)]
pub struct OuTransition {
    decay: DMatrix<f64>,
    offset: DVector<f64>,
    noise_map: DMatrix<f64>,
    covariance: DMatrix<f64>,
}

impl OuTransition {
    pub fn new(b: &DMatrix<f64>, mu: &DVector<f64>, s: &DMatrix<f64>, h: f64) -> Result<Self> {
        let d = b.nrows();
        if !b.is_square() || mu.len() != d || s.nrows() != d {
            return Err(Error::Dimension(format!(
                "OU transition: B {}x{}, mu {}, S {}x{}",
                b.nrows(),
                b.ncols(),
                mu.len(),
                s.nrows(),
                s.ncols()
            )));
        }
        let decay = (-b * h).exp();

        // Augmented generator [[-B, mu], [0, 0]] integrates the mean offset
        // without inverting B, so singular B needs no special case.
        let mut aug = DMatrix::zeros(d + 1, d + 1);
        aug.view_mut((0, 0), (d, d)).copy_from(&(-b));
        aug.view_mut((0, d), (d, 1)).copy_from(mu);
        let aug = (aug * h).exp();
        let offset = aug.view((0, d), (d, 1)).column(0).into_owned();

        // Van Loan: exp([[B, SS^T], [0, -B^T]] h) = [[., F12], [0, F22]],
        // covariance = F22^T F12 = e^{-Bh} F12.
        let sst = s * s.transpose();
        let mut vl = DMatrix::zeros(2 * d, 2 * d);
        vl.view_mut((0, 0), (d, d)).copy_from(b);
        vl.view_mut((0, d), (d, d)).copy_from(&sst);
        vl.view_mut((d, d), (d, d)).copy_from(&(-b.transpose()));
        let vl = (vl * h).exp();
        let f12 = vl.view((0, d), (d, d)).into_owned();
        let cov = &decay * f12;
        let covariance = (&cov + cov.transpose()) * 0.5;

        let noise_map = aligned_sqrt(&covariance, s, &sst, h)?;
        Ok(OuTransition {
            decay,
            offset,
            noise_map,
            covariance,
        })
    }

    /// Advances `state` by one step using the standard normal vector `noise`
    /// (length = columns of `S`).
    pub fn step(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        &self.decay * state + &self.offset + &self.noise_map * noise
    }

    pub fn decay(&self) -> &DMatrix<f64> {
        &self.decay
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// A factor `L` with `L L^T = cov` that reduces to `S sqrt(h)` when `B = 0`,
/// so exact and Euler steps driven by the same normals stay close.
///
/// `L = chol(cov) chol(S S^T h)^{-1} S sqrt(h)`; requires `S S^T` positive
/// definite unless `S` is identically zero.
fn aligned_sqrt(
    cov: &DMatrix<f64>,
    s: &DMatrix<f64>,
    sst: &DMatrix<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    if s.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(s.nrows(), s.ncols()));
    }
    let base = (sst * h).cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("exact OU step needs S S^T of full rank".into())
    })?;
    let target = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("OU transition covariance".into()))?;
    let scaled = s * h.sqrt();
    let whitened = base
        .l()
        .solve_lower_triangular(&scaled)
        .ok_or_else(|| Error::NotPositiveDefinite("dispersion factor".into()))?;
    Ok(target.l() * whitened)
}

/// One exact OU step from `state` with standard normal `noise`.
pub fn exact_ou_step(
    state: &DVector<f64>,
    b: &DMatrix<f64>,
    mu: &DVector<f64>,
    s: &DMatrix<f64>,
    h: f64,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(OuTransition::new(b, mu, s, h)?.step(state, noise))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Taylor series with scaling and squaring, independent of nalgebra's Pade.
    fn expm_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = a.abs().row_sum().max();
        let mut s = 0;
        while norm / f64::powi(2.0, s) > 0.1 {
            s += 1;
        }
        let scaled = a / f64::powi(2.0, s);
        let n = a.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut acc = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            acc += &term;
        }
        for _ in 0..s {
            acc = &acc * &acc;
        }
        acc
    }

    #[test]
    fn brownian_step_when_drift_vanishes() {
        let d = 2;
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 5.0, 1.0]);
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let z = DVector::from_vec(vec![0.3, -1.2]);
        let h = 0.01;
        let out = exact_ou_step(&x, &DMatrix::zeros(d, d), &DVector::zeros(d), &s, h, &z).unwrap();
        let expected = &x + &s * &z * h.sqrt();
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn scalar_decay() {
        let h = 0.37;
        let x = DVector::from_vec(vec![1.5]);
        let out = exact_ou_step(
            &x,
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::zeros(1),
            &DMatrix::zeros(1, 1),
            h,
            &DVector::from_vec(vec![0.7]),
        )
        .unwrap();
        assert!((out[0] - (-2.0 * h).exp() * 1.5).abs() < 1e-14);
    }

    #[test]
    fn mean_matches_matrix_exponential_oracle() {
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.2, 0.4]);
        let mu = DVector::from_vec(vec![2.0, 4.0]);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 5.0, 1.0]);
        let h = 0.1;
        let x = DVector::from_vec(vec![3.0, 5.0]);
        let tr = OuTransition::new(&b, &mu, &s, h).unwrap();
        let mean = tr.step(&x, &DVector::zeros(2));
        let decay = expm_oracle(&(-&b * h));
        let binv = b.clone().try_inverse().unwrap();
        let expected = &decay * &x + (DMatrix::identity(2, 2) - &decay) * binv * &mu;
        assert!((mean - expected).amax() < 1e-10);
    }

    #[test]
    fn scalar_covariance_closed_form() {
        let (b, sigma, h) = (3.0, 2.0, 0.05);
        let tr = OuTransition::new(
            &DMatrix::from_element(1, 1, b),
            &DVector::zeros(1),
            &DMatrix::from_element(1, 1, sigma),
            h,
        )
        .unwrap();
        let expected = sigma * sigma * (1.0 - (-2.0 * b * h).exp()) / (2.0 * b);
        assert!((tr.covariance()[(0, 0)] - expected).abs() < 1e-14);
    }

    #[test]
    fn covariance_matches_quadrature() {
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.2, 0.4]);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 5.0, 1.0]);
        let h = 0.5;
        let tr = OuTransition::new(&b, &DVector::zeros(2), &s, h).unwrap();
        // Simpson's rule on int_0^h e^{-Bu} S S^T e^{-B^T u} du
        let m = 200;
        let du = h / m as f64;
        let sst = &s * s.transpose();
        let mut acc = DMatrix::zeros(2, 2);
        for i in 0..=m {
            let e = expm_oracle(&(-&b * (i as f64 * du)));
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += &e * &sst * e.transpose() * w;
        }
        acc *= du / 3.0;
        assert!((tr.covariance() - acc).amax() < 1e-9);
        let l = &tr.noise_map;
        assert!((l * l.transpose() - tr.covariance()).amax() < 1e-10);
    }

    #[test]
    fn singular_b_mean_is_drifted_brownian() {
        let h = 0.2;
        let mu = DVector::from_vec(vec![1.0, -2.0]);
        let tr = OuTransition::new(&DMatrix::zeros(2, 2), &mu, &DMatrix::zeros(2, 2), h).unwrap();
        let out = tr.step(&DVector::zeros(2), &DVector::zeros(2));
        assert!((out - &mu * h).amax() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(OuTransition::new(
            &DMatrix::zeros(2, 2),
            &DVector::zeros(3),
            &DMatrix::zeros(2, 2),
            0.1
        )
        .is_err());
    }
}
