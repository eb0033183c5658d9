//! Factor-model covariance structure.
//!
//! The observed `p`-vector loads on `k` latent factors through
//! `Lambda = (I_k, A)^T`, so `Sigma(theta) = Lambda Sigma_ff Lambda^T + Sigma_ee`
//! with `Sigma_ee` diagonal. Parameters are packed as
//! `(vec A, vech Sigma_ff, sigma_1^2, ..., sigma_p^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixcalc::{half_dim, vech, vech_index, vech_pair, SymMatrix};

/// Asymptotic regime the sampling scheme is meant to exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `T = n h -> infinity`, `h -> 0`.
    #[default]
    Ergodic,
    /// `T` fixed, `h -> 0`.
    NonErgodic,
}

/// Dimensions and sampling scheme of a factor model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub p: usize,
    pub k: usize,
    #[serde(default)]
    pub regime: Regime,
    pub n: usize,
    pub h: f64,
}

impl ModelSpec {
    pub fn new(p: usize, k: usize, regime: Regime, n: usize, h: f64) -> Result<Self> {
        let spec = ModelSpec { p, k, regime, n, h };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k >= self.p {
            return Err(Error::Config(format!(
                "factor count must satisfy 1 <= k < p (p={}, k={})",
                self.p, self.k
            )));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!(
                "step h must be positive and finite, got {}",
                self.h
            )));
        }
        Ok(())
    }

    /// Same dimensions and sampling, different factor count.
    pub fn with_k(&self, k: usize) -> Self {
        ModelSpec { k, ..*self }
    }

    /// Number of free parameters `q_k = (p-k)k + k(k+1)/2 + p`.
    pub fn q(&self) -> usize {
        param_count(self.p, self.k)
    }

    /// Degrees of freedom `p(p+1)/2 - q_k`; may be non-positive.
    pub fn df(&self) -> i64 {
        half_dim(self.p) as i64 - self.q() as i64
    }

    pub fn is_testable(&self) -> bool {
        self.df() >= 1
    }

    /// Observation horizon `T = n h`.
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.h
    }
}

pub fn param_count(p: usize, k: usize) -> usize {
    (p - k) * k + half_dim(k) + p
}

/// Structured parameter vector of a `k`-factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    /// Free loadings, `(p-k) x k`.
    pub a: DMatrix<f64>,
    /// Factor covariance, `k x k`.
    pub sigma_ff: SymMatrix,
    /// Unique variances `sigma_i^2`, length `p`.
    pub sigma_ee: DVector<f64>,
}

impl ParamVector {
    pub fn new(a: DMatrix<f64>, sigma_ff: SymMatrix, sigma_ee: DVector<f64>) -> Result<Self> {
        let k = sigma_ff.dim();
        let p = sigma_ee.len();
        if k == 0 || k >= p || a.nrows() != p - k || a.ncols() != k {
            return Err(Error::Dimension(format!(
                "loadings {}x{}, factor covariance {k}x{k} and {p} unique variances are inconsistent",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(ParamVector {
            a,
            sigma_ff,
            sigma_ee,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma_ee.len()
    }

    pub fn k(&self) -> usize {
        self.sigma_ff.dim()
    }

    pub fn q(&self) -> usize {
        param_count(self.p(), self.k())
    }

    /// Packs into `(vec A, vech Sigma_ff, sigma^2)`.
    pub fn pack(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.q());
        out.extend_from_slice(self.a.as_slice());
        out.extend(vech(&self.sigma_ff).iter());
        out.extend(self.sigma_ee.iter());
        DVector::from_vec(out)
    }

    pub fn unpack(v: &DVector<f64>, p: usize, k: usize) -> Result<Self> {
        if k == 0 || k >= p {
            return Err(Error::Dimension(format!(
                "need 1 <= k < p, got p={p}, k={k}"
            )));
        }
        let q = param_count(p, k);
        if v.len() != q {
            return Err(Error::Dimension(format!(
                "packed parameter has length {}, expected {q} for p={p}, k={k}",
                v.len()
            )));
        }
        let na = (p - k) * k;
        let nf = half_dim(k);
        let a = DMatrix::from_column_slice(p - k, k, &v.as_slice()[..na]);
        let mut ff = DMatrix::zeros(k, k);
        for pos in 0..nf {
            let (i, j) = vech_pair(pos, k);
            ff[(i, j)] = v[na + pos];
            ff[(j, i)] = v[na + pos];
        }
        let sigma_ee = DVector::from_column_slice(&v.as_slice()[na + nf..]);
        Ok(ParamVector {
            a,
            sigma_ff: SymMatrix::from_lower(&ff),
            sigma_ee,
        })
    }

    pub fn unpack_spec(v: &DVector<f64>, spec: &ModelSpec) -> Result<Self> {
        Self::unpack(v, spec.p, spec.k)
    }

    /// `Lambda = (I_k, A^T)^T`, `p x k`.
    pub fn loading_matrix(&self) -> DMatrix<f64> {
        let (p, k) = (self.p(), self.k());
        let mut lambda = DMatrix::zeros(p, k);
        for i in 0..k {
            lambda[(i, i)] = 1.0;
        }
        lambda.view_mut((k, 0), (p - k, k)).copy_from(&self.a);
        lambda
    }

    /// `Sigma(theta) = Lambda Sigma_ff Lambda^T + diag(sigma^2)`.
    pub fn sigma(&self) -> SymMatrix {
        let lambda = self.loading_matrix();
        let mut s = &lambda * self.sigma_ff.as_matrix() * lambda.transpose();
        for i in 0..self.p() {
            s[(i, i)] += self.sigma_ee[i];
        }
        SymMatrix::from_lower(&s)
    }

    /// Every unique variance strictly positive.
    pub fn has_positive_unique_variances(&self) -> bool {
        self.sigma_ee.iter().all(|&s| s > 0.0)
    }
}

/// Free function form of [`ParamVector::loading_matrix`].
pub fn loading_matrix(params: &ParamVector) -> DMatrix<f64> {
    params.loading_matrix()
}

/// Free function form of [`ParamVector::sigma`].
pub fn sigma_of_theta(params: &ParamVector) -> SymMatrix {
    params.sigma()
}

/// `W = 2 D^+ (Sigma (x) Sigma) D^{+T}` assembled entrywise: the entry for
/// `vech` positions `(i,j), (k,l)` is `S_ik S_jl + S_il S_jk`.
///
/// Fails when `sigma` is not positive definite.
pub fn weight_matrix(sigma: &SymMatrix) -> Result<SymMatrix> {
    if !sigma.is_positive_definite() {
        return Err(Error::NotPositiveDefinite(
            "covariance passed to weight_matrix".into(),
        ));
    }
    Ok(weight_matrix_unchecked(sigma))
}

pub(crate) fn weight_matrix_unchecked(sigma: &SymMatrix) -> SymMatrix {
    let p = sigma.dim();
    let m = half_dim(p);
    let s = sigma.as_matrix();
    let pairs: Vec<(usize, usize)> = (0..m).map(|pos| vech_pair(pos, p)).collect();
    let mut w = DMatrix::zeros(m, m);
    for (c, &(k, l)) in pairs.iter().enumerate() {
        for (r, &(i, j)) in pairs.iter().enumerate().skip(c) {
            let v = s[(i, k)] * s[(j, l)] + s[(i, l)] * s[(j, k)];
            w[(r, c)] = v;
            w[(c, r)] = v;
        }
    }
    SymMatrix::from_lower(&w)
}

/// Analytic Jacobian `d vech Sigma(theta) / d theta`, `p(p+1)/2 x q_k`.
pub fn delta_jacobian(params: &ParamVector) -> DMatrix<f64> {
    let (p, k) = (params.p(), params.k());
    let m = half_dim(p);
    let lambda = params.loading_matrix();
    let lf = &lambda * params.sigma_ff.as_matrix();
    let mut delta = DMatrix::zeros(m, params.q());
    let mut col = 0;

    // vec A: entry (a, b) of A is row k+a of Lambda.
    for b in 0..k {
        for a in 0..(p - k) {
            let row = k + a;
            // dSigma_rs = [r==row] LF_sb + LF_rb [s==row]
            for s in 0..p {
                let (hi, lo) = if row >= s { (row, s) } else { (s, row) };
                let contrib = if s == row {
                    2.0 * lf[(row, b)]
                } else {
                    lf[(s, b)]
                };
                delta[(vech_index(hi, lo, p), col)] += contrib;
            }
            col += 1;
        }
    }

    // vech Sigma_ff
    for pos in 0..half_dim(k) {
        let (c, d) = vech_pair(pos, k);
        for j in 0..p {
            for i in j..p {
                let v = if c == d {
                    lambda[(i, c)] * lambda[(j, c)]
                } else {
                    lambda[(i, c)] * lambda[(j, d)] + lambda[(i, d)] * lambda[(j, c)]
                };
                delta[(vech_index(i, j, p), col)] = v;
            }
        }
        col += 1;
    }

    for i in 0..p {
        delta[(vech_index(i, i, p), col)] = 1.0;
        col += 1;
    }
    delta
}

/// `Sigma(theta)`, `W(theta)` and `Delta(theta)` evaluated together.
#[derive(Debug, Clone)]
pub struct CovStructure {
    pub sigma: SymMatrix,
    pub w: SymMatrix,
    pub delta: DMatrix<f64>,
}

impl CovStructure {
    pub fn at(params: &ParamVector) -> Result<Self> {
        let sigma = params.sigma();
        let w = weight_matrix(&sigma)?;
        Ok(CovStructure {
            sigma,
            w,
            delta: delta_jacobian(params),
        })
    }

    /// `(Delta^T W^{-1} Delta)^{-1}`, the asymptotic covariance of
    /// `sqrt(n)(theta_hat - theta)`.
    pub fn asymptotic_covariance(&self) -> Result<SymMatrix> {
        let chol = self
            .w
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("weight matrix".into()))?;
        let winv_delta = chol.solve(&self.delta);
        let info = self.delta.transpose() * winv_delta;
        let info_chol = SymMatrix::from_lower(&info)
            .into_matrix()
            .cholesky()
            .ok_or_else(|| {
                Error::NotPositiveDefinite("information matrix (rank-deficient Jacobian)".into())
            })?;
        Ok(SymMatrix::from_lower(&info_chol.inverse()))
    }
}

/// JSON document describing a model: dimensions, sampling and (optionally)
/// a parameter value. `a` is row-major, `sigma_ff` is `vech`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub p: usize,
    pub k: usize,
    #[serde(default)]
    pub regime: Regime,
    pub n: usize,
    pub h: f64,
    #[serde(
        default,
        rename = "A",
        alias = "a",
        skip_serializing_if = "Option::is_none"
    )]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_ff: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_ee: Option<Vec<f64>>,
}

impl ModelDoc {
    pub fn from_parts(spec: &ModelSpec, params: Option<&ParamVector>) -> Self {
        let (a, sigma_ff, sigma_ee) = match params {
            Some(pv) => {
                let a: Vec<f64> = (0..pv.a.nrows())
                    .flat_map(|i| (0..pv.a.ncols()).map(move |j| (i, j)))
                    .map(|(i, j)| pv.a[(i, j)])
                    .collect();
                (
                    Some(a),
                    Some(vech(&pv.sigma_ff).iter().copied().collect()),
                    Some(pv.sigma_ee.iter().copied().collect()),
                )
            }
            None => (None, None, None),
        };
        ModelDoc {
            p: spec.p,
            k: spec.k,
            regime: spec.regime,
            n: spec.n,
            h: spec.h,
            a,
            sigma_ff,
            sigma_ee,
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.p, self.k, self.regime, self.n, self.h)
    }

    /// The parameter value, if all three blocks are present.
    pub fn params(&self) -> Result<Option<ParamVector>> {
        let (p, k) = (self.p, self.k);
        match (&self.a, &self.sigma_ff, &self.sigma_ee) {
            (None, None, None) => Ok(None),
            (Some(a), Some(ff), Some(ee)) => {
                if a.len() != (p - k) * k {
                    return Err(Error::Config(format!(
                        "field A: expected {} values",
                        (p - k) * k
                    )));
                }
                if ff.len() != half_dim(k) {
                    return Err(Error::Config(format!(
                        "field sigma_ff: expected {} values",
                        half_dim(k)
                    )));
                }
                if ee.len() != p {
                    return Err(Error::Config(format!(
                        "field sigma_ee: expected {p} values"
                    )));
                }
                let a = DMatrix::from_row_slice(p - k, k, a);
                let sigma_ff = crate::matrixcalc::unvech(&DVector::from_column_slice(ff))?;
                ParamVector::new(a, sigma_ff, DVector::from_column_slice(ee)).map(Some)
            }
            _ => Err(Error::Config(
                "fields A, sigma_ff and sigma_ee must be given together".into(),
            )),
        }
    }
}
