//! Simulation of the latent factor system and the observed path
//! `X_t = Lambda f_t + e_t` on the grid `t_i = i h`.
//!
//! Factors follow `df = b(f) dt + S dW` (`W` is `r`-dimensional), unique
//! factors follow `de_i = b_i(e_i) dt + sigma_i dB_i` with independent
//! scalar Brownian motions. See [`rng`] for the random-number contract.

mod drift;
pub mod io;
mod ou;
pub mod rng;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use drift::{CustomDrift, Drift, DriftDoc, DriftFn, DriftRegistry, Numeric};
pub use ou::{exact_ou_step, OuTransition};

use crate::error::{Error, Result};
use crate::matrixcalc::SymMatrix;
use crate::model::{ModelDoc, ModelSpec, ParamVector, Regime};

/// Integration scheme between observation times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler-Maruyama with `substeps` steps per observation interval.
    #[default]
    Euler,
    /// Exact Gaussian OU transition; the normals of all substeps of an
    /// interval are pooled into one draw. Linear OU drifts only.
    ExactOu,
}

/// Full description of one simulated data set.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub spec: ModelSpec,
    /// Free loadings `A`, `(p-k) x k`.
    pub loadings: DMatrix<f64>,
    pub factor_drift: Drift,
    /// `S`, `k x r`.
    pub factor_dispersion: DMatrix<f64>,
    pub unique_drifts: Vec<Drift>,
    /// Standard deviations `sigma_i`.
    pub unique_dispersions: DVector<f64>,
    pub f0: DVector<f64>,
    pub e0: DVector<f64>,
    pub seed: u64,
    pub substeps: usize,
    pub scheme: Scheme,
    pub keep_latents: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let (p, k) = (self.spec.p, self.spec.k);
        if self.loadings.shape() != (p - k, k) {
            return Err(Error::Config(format!("loadings must be {}x{k}", p - k)));
        }
        if self.factor_dispersion.nrows() != k || self.factor_dispersion.ncols() == 0 {
            return Err(Error::Config(format!(
                "factor_dispersion must have {k} rows"
            )));
        }
        if let Some(d) = self.factor_drift.dim() {
            if d != k {
                return Err(Error::Config(format!(
                    "factor_drift has dimension {d}, expected {k}"
                )));
            }
        }
        if self.unique_drifts.len() != p {
            return Err(Error::Config(format!(
                "expected {p} unique_drifts, got {}",
                self.unique_drifts.len()
            )));
        }
        if self
            .unique_drifts
            .iter()
            .any(|d| d.dim().is_some_and(|d| d != 1))
        {
            return Err(Error::Config(
                "unique drifts must be one-dimensional".into(),
            ));
        }
        if self.unique_dispersions.len() != p {
            return Err(Error::Config(format!("expected {p} unique_dispersions")));
        }
        if self
            .unique_dispersions
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::Config(
                "unique_dispersions must be finite and non-negative".into(),
            ));
        }
        if self.f0.len() != k || self.e0.len() != p {
            return Err(Error::Config(format!(
                "f0 must have length {k} and e0 length {p}"
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        if self.scheme == Scheme::ExactOu
            && (matches!(self.factor_drift, Drift::Custom(_))
                || self
                    .unique_drifts
                    .iter()
                    .any(|d| matches!(d, Drift::Custom(_))))
        {
            return Err(Error::Config(
                "exact_ou scheme requires linear_ou drifts".into(),
            ));
        }
        Ok(())
    }

    /// The generating parameter: `A`, `S S^T` and `sigma_i^2`.
    pub fn truth(&self) -> ParamVector {
        let sff =
            SymMatrix::from_lower(&(&self.factor_dispersion * self.factor_dispersion.transpose()));
        let see = self.unique_dispersions.map(|s| s * s);
        ParamVector {
            a: self.loadings.clone(),
            sigma_ff: sff,
            sigma_ee: see,
        }
    }

    /// Declared Lipschitz bounds: factor drift first, then each unique drift.
    pub fn lipschitz_bounds(&self) -> Vec<f64> {
        std::iter::once(self.factor_drift.lipschitz())
            .chain(self.unique_drifts.iter().map(Drift::lipschitz))
            .collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn from_doc(doc: &SimConfigDoc, registry: &DriftRegistry) -> Result<Self> {
        let spec = doc.model.spec()?;
        let (p, k) = (spec.p, spec.k);
        let a = doc
            .model
            .a
            .as_ref()
            .ok_or_else(|| Error::Config("missing field `model.A` (loadings)".into()))?;
        if a.len() != (p - k) * k {
            return Err(Error::Config(format!(
                "field model.A: expected {} values",
                (p - k) * k
            )));
        }
        let cfg = SimConfig {
            spec,
            loadings: DMatrix::from_row_slice(p - k, k, a),
            factor_drift: doc.factor_drift.resolve(registry)?,
            factor_dispersion: doc.factor_dispersion.to_matrix()?,
            unique_drifts: doc
                .unique_drifts
                .iter()
                .map(|d| d.resolve(registry))
                .collect::<Result<_>>()?,
            unique_dispersions: DVector::from_column_slice(&doc.unique_dispersions),
            f0: DVector::from_column_slice(&doc.f0),
            e0: DVector::from_column_slice(&doc.e0),
            seed: doc.seed,
            substeps: doc.substeps,
            scheme: doc.scheme,
            keep_latents: doc.keep_latents,
        };
        cfg.validate()?;
        if doc.model.sigma_ff.is_some() || doc.model.sigma_ee.is_some() {
            let stated = doc
                .model
                .params()?
                .ok_or_else(|| Error::Config("model parameters are incomplete".into()))?;
            let truth = cfg.truth();
            let gap = (stated.pack() - truth.pack()).amax();
            if gap > 1e-9 * (1.0 + truth.pack().amax()) {
                return Err(Error::Config(
                    "model sigma_ff/sigma_ee disagree with S S^T and unique_dispersions^2".into(),
                ));
            }
        }
        Ok(cfg)
    }

    pub fn to_doc(&self) -> SimConfigDoc {
        SimConfigDoc {
            model: ModelDoc::from_parts(&self.spec, Some(&self.truth())),
            factor_drift: self.factor_drift.to_doc(),
            factor_dispersion: Numeric::Matrix(
                self.factor_dispersion
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            ),
            unique_drifts: self.unique_drifts.iter().map(Drift::to_doc).collect(),
            unique_dispersions: self.unique_dispersions.iter().copied().collect(),
            f0: self.f0.iter().copied().collect(),
            e0: self.e0.iter().copied().collect(),
            seed: self.seed,
            substeps: self.substeps,
            scheme: self.scheme,
            keep_latents: self.keep_latents,
        }
    }
}

fn default_substeps() -> usize {
    1
}

/// JSON form of [`SimConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfigDoc {
    pub model: ModelDoc,
    pub factor_drift: DriftDoc,
    pub factor_dispersion: Numeric,
    pub unique_drifts: Vec<DriftDoc>,
    pub unique_dispersions: Vec<f64>,
    pub f0: Vec<f64>,
    pub e0: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub keep_latents: bool,
}

/// Observations on the uniform grid, optionally with the latent paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    /// `(n+1) x p`.
    pub x: DMatrix<f64>,
    /// `(n+1) x k`.
    pub f: Option<DMatrix<f64>>,
    /// `(n+1) x p`.
    pub e: Option<DMatrix<f64>>,
}

impl SamplePath {
    pub fn n(&self) -> usize {
        self.x.nrows().saturating_sub(1)
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Grid step, read from the first interval.
    pub fn h(&self) -> f64 {
        if self.times.len() < 2 {
            f64::NAN
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Keeps only the rows at indices `0, stride, 2*stride, ...`.
    pub fn thin(&self, stride: usize) -> SamplePath {
        let rows: Vec<usize> = (0..self.x.nrows()).step_by(stride.max(1)).collect();
        let pick = |m: &DMatrix<f64>| m.select_rows(rows.iter());
        SamplePath {
            times: rows.iter().map(|&i| self.times[i]).collect(),
            x: pick(&self.x),
            f: self.f.as_ref().map(pick),
            e: self.e.as_ref().map(pick),
        }
    }
}

/// The reference two-factor, six-variable OU design: `A = [[3,1],[1,5],[7,-4],[-3,2]]`,
/// factor drift `mu - B f` with `B = [[.5,.3],[.2,.4]]`, `mu = (2,4)`,
/// `S = [[2,3],[5,1]]`, `f0 = (3,5)`; unique factors are zero-mean OU with
/// rates `(3,2,3,2,6,2)` and volatilities `(2,4,5,1,3,2)`, started at 0.
pub fn two_factor_design(n: usize, h: f64, regime: Regime, seed: u64) -> SimConfig {
    SimConfig {
        spec: ModelSpec {
            p: 6,
            k: 2,
            regime,
            n,
            h,
        },
        loadings: DMatrix::from_row_slice(4, 2, &[3.0, 1.0, 1.0, 5.0, 7.0, -4.0, -3.0, 2.0]),
        factor_drift: Drift::LinearOu {
            b: DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.2, 0.4]),
            mu: DVector::from_vec(vec![2.0, 4.0]),
        },
        factor_dispersion: DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 5.0, 1.0]),
        unique_drifts: [3.0, 2.0, 3.0, 2.0, 6.0, 2.0]
            .iter()
            .map(|&b| Drift::LinearOu {
                b: DMatrix::from_element(1, 1, b),
                mu: DVector::zeros(1),
            })
            .collect(),
        unique_dispersions: DVector::from_vec(vec![2.0, 4.0, 5.0, 1.0, 3.0, 2.0]),
        f0: DVector::from_vec(vec![3.0, 5.0]),
        e0: DVector::zeros(6),
        seed,
        substeps: 1,
        scheme: Scheme::Euler,
        keep_latents: false,
    }
}

/// Integrates the system described by `config`. Deterministic in `config.seed`.
pub fn simulate(config: &SimConfig) -> Result<SamplePath> {
    config.validate()?;
    let (p, k, n) = (config.spec.p, config.spec.k, config.spec.n);
    let h = config.spec.h;
    let m = config.substeps;
    let dt = h / m as f64;
    let sqdt = dt.sqrt();
    let r = config.factor_dispersion.ncols();

    let truth = config.truth();
    let lambda = truth.loading_matrix();

    let mut factor_rng = rng::substream(config.seed, rng::FACTOR_STREAM);
    let mut unique_rngs: Vec<_> = (0..p)
        .map(|i| rng::substream(config.seed, rng::unique_stream(i)))
        .collect();

    let exact = match config.scheme {
        Scheme::Euler => None,
        Scheme::ExactOu => {
            let fac = match &config.factor_drift {
                Drift::LinearOu { b, mu } => {
                    OuTransition::new(b, mu, &config.factor_dispersion, h)?
                }
                Drift::Custom(_) => unreachable!("validated"),
            };
            let uniq = config
                .unique_drifts
                .iter()
                .zip(config.unique_dispersions.iter())
                .map(|(d, &s)| match d {
                    Drift::LinearOu { b, mu } => {
                        OuTransition::new(b, mu, &DMatrix::from_element(1, 1, s), h)
                    }
                    Drift::Custom(_) => unreachable!("validated"),
                })
                .collect::<Result<Vec<_>>>()?;
            Some((fac, uniq))
        }
    };

    let mut x = DMatrix::zeros(n + 1, p);
    let mut f_out = config.keep_latents.then(|| DMatrix::zeros(n + 1, k));
    let mut e_out = config.keep_latents.then(|| DMatrix::zeros(n + 1, p));

    let mut f = config.f0.clone();
    let mut e = config.e0.clone();
    let mut zf = DVector::zeros(r);
    let mut zf_sum = DVector::zeros(r);
    let mut ze_sum = vec![0.0; p];

    let record = |row: usize,
                  f: &DVector<f64>,
                  e: &DVector<f64>,
                  x: &mut DMatrix<f64>,
                  f_out: &mut Option<DMatrix<f64>>,
                  e_out: &mut Option<DMatrix<f64>>| {
        let obs = &lambda * f + e;
        x.row_mut(row).copy_from(&obs.transpose());
        if let Some(fo) = f_out {
            fo.row_mut(row).copy_from(&f.transpose());
        }
        if let Some(eo) = e_out {
            eo.row_mut(row).copy_from(&e.transpose());
        }
    };
    record(0, &f, &e, &mut x, &mut f_out, &mut e_out);

    for step in 1..=n {
        match &exact {
            None => {
                for _ in 0..m {
                    for z in zf.iter_mut() {
                        *z = factor_rng.sample(StandardNormal);
                    }
                    let drift = config.factor_drift.eval(&f);
                    f += drift * dt + &config.factor_dispersion * &zf * sqdt;
                    for i in 0..p {
                        let z: f64 = unique_rngs[i].sample(StandardNormal);
                        e[i] += config.unique_drifts[i].eval_scalar(e[i]) * dt
                            + config.unique_dispersions[i] * sqdt * z;
                    }
                }
            }
            Some((fac, uniq)) => {
                zf_sum.fill(0.0);
                ze_sum.iter_mut().for_each(|z| *z = 0.0);
                for _ in 0..m {
                    for z in zf_sum.iter_mut() {
                        *z += factor_rng.sample::<f64, _>(StandardNormal);
                    }
                    for (i, acc) in ze_sum.iter_mut().enumerate() {
                        *acc += unique_rngs[i].sample::<f64, _>(StandardNormal);
                    }
                }
                let scale = 1.0 / (m as f64).sqrt();
                f = fac.step(&f, &(&zf_sum * scale));
                for i in 0..p {
                    let next = uniq[i].step(
                        &DVector::from_element(1, e[i]),
                        &DVector::from_element(1, ze_sum[i] * scale),
                    );
                    e[i] = next[0];
                }
            }
        }
        if f.iter().chain(e.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        record(step, &f, &e, &mut x, &mut f_out, &mut e_out);
    }

    Ok(SamplePath {
        times: (0..=n).map(|i| i as f64 * h).collect(),
        x,
        f: f_out,
        e: e_out,
    })
}
