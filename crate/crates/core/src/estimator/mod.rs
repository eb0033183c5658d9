//! Realised covariance, the minimum-contrast estimator and its asymptotic
//! standard errors.

mod contrast;
mod fit;
pub mod optimize;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use contrast::{
    contrast, contrast_grad, contrast_with_parts, quasi_loglik_excess, quasi_loglik_with_grad,
    GradientParts, WEIGHT_PD_TOL,
};
pub use fit::{
    default_init, fit, fit_quasi_likelihood, moment_init, BlockBounds, FitOptions, FitReport,
    FitResult, ParamBounds, Weighting, UNIQUE_VAR_FLOOR,
};

use crate::error::{Error, Result};
use crate::matrixcalc::SymMatrix;
use crate::sde_sim::SamplePath;

/// `Q_XX = (1/T) sum_i dX_i dX_i^T` with `T = n h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealisedCov {
    pub q: SymMatrix,
    /// Number of increments.
    pub n: usize,
    pub h: f64,
}

impl RealisedCov {
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }
}

/// Realised covariance of the observed coordinates of `path`.
pub fn realised_cov(path: &SamplePath) -> Result<RealisedCov> {
    if path.x.nrows() < 2 {
        return Err(Error::InvalidParameter(format!(
            "realised covariance needs at least 2 observations, got {}",
            path.x.nrows()
        )));
    }
    let h = path.h();
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid grid step {h}")));
    }
    let n = path.n();
    let p = path.p();
    let mut acc = DMatrix::<f64>::zeros(p, p);
    let mut inc = vec![0.0; p];
    for i in 1..=n {
        for (j, d) in inc.iter_mut().enumerate() {
            *d = path.x[(i, j)] - path.x[(i - 1, j)];
        }
        for b in 0..p {
            for a in b..p {
                acc[(a, b)] += inc[a] * inc[b];
            }
        }
    }
    acc /= n as f64 * h;
    Ok(RealisedCov {
        q: SymMatrix::from_lower(&acc),
        n,
        h,
    })
}
