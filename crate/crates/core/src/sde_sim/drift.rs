use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A user-supplied drift with its declared global Lipschitz constant. The
/// constant is recorded, not verified.
#[derive(Clone)]
pub struct CustomDrift {
    pub name: String,
    pub lipschitz: f64,
    pub func: DriftFn,
}

impl fmt::Debug for CustomDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDrift")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

/// Drift of one diffusion block.
#[derive(Debug, Clone)]
pub enum Drift {
    /// `b(x) = -(B x - mu)`.
    LinearOu {
        b: DMatrix<f64>,
        mu: DVector<f64>,
    },
    Custom(CustomDrift),
}

impl Drift {
    pub fn linear_ou(b: DMatrix<f64>, mu: DVector<f64>) -> Result<Self> {
        if !b.is_square() || b.nrows() != mu.len() {
            return Err(Error::Dimension(format!(
                "linear OU drift: B is {}x{} but mu has length {}",
                b.nrows(),
                b.ncols(),
                mu.len()
            )));
        }
        Ok(Drift::LinearOu { b, mu })
    }

    pub fn scalar_ou(b: f64, mu: f64) -> Self {
        Drift::LinearOu {
            b: DMatrix::from_element(1, 1, b),
            mu: DVector::from_element(1, mu),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Drift::LinearOu { b, mu } => mu - b * x,
            Drift::Custom(c) => (c.func)(x),
        }
    }

    /// Scalar evaluation for one-dimensional blocks.
    pub fn eval_scalar(&self, x: f64) -> f64 {
        match self {
            Drift::LinearOu { b, mu } => mu[0] - b[(0, 0)] * x,
            Drift::Custom(c) => (c.func)(&DVector::from_element(1, x))[0],
        }
    }

    /// Dimension for linear drifts; `None` for custom ones.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Drift::LinearOu { mu, .. } => Some(mu.len()),
            Drift::Custom(_) => None,
        }
    }

    /// Declared or implied Lipschitz bound (operator 2-norm of `B`).
    pub fn lipschitz(&self) -> f64 {
        match self {
            Drift::LinearOu { b, .. } => b.clone().singular_values().max(),
            Drift::Custom(c) => c.lipschitz,
        }
    }

    pub fn to_doc(&self) -> DriftDoc {
        match self {
            Drift::LinearOu { b, mu } => DriftDoc::LinearOu {
                b: Numeric::Matrix(b.row_iter().map(|r| r.iter().copied().collect()).collect()),
                mu: Numeric::Vector(mu.iter().copied().collect()),
            },
            Drift::Custom(c) => DriftDoc::Custom {
                name: c.name.clone(),
                lipschitz: c.lipschitz,
            },
        }
    }
}

/// A scalar, vector or row-major matrix in a JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Numeric {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Numeric {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            Numeric::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            Numeric::Vector(v) => Ok(DMatrix::from_row_slice(1, v.len(), v)),
            Numeric::Matrix(rows) => {
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(Error::Config("ragged matrix rows".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
            }
        }
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        match self {
            Numeric::Scalar(v) => Ok(DVector::from_element(1, *v)),
            Numeric::Vector(v) => Ok(DVector::from_column_slice(v)),
            Numeric::Matrix(_) => Err(Error::Config("expected a vector, found a matrix".into())),
        }
    }
}

/// JSON form of a drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftDoc {
    LinearOu { b: Numeric, mu: Numeric },
    Custom { name: String, lipschitz: f64 },
}

impl DriftDoc {
    pub fn resolve(&self, registry: &DriftRegistry) -> Result<Drift> {
        match self {
            DriftDoc::LinearOu { b, mu } => Drift::linear_ou(b.to_matrix()?, mu.to_vector()?),
            DriftDoc::Custom { name, lipschitz } => {
                let mut d = registry.get(name)?;
                d.lipschitz = *lipschitz;
                Ok(Drift::Custom(d))
            }
        }
    }
}

/// Named custom drifts available to JSON configs. `zero` is always present.
#[derive(Debug, Clone)]
pub struct DriftRegistry {
    entries: BTreeMap<String, CustomDrift>,
}

impl Default for DriftRegistry {
    fn default() -> Self {
        let mut r = DriftRegistry {
            entries: BTreeMap::new(),
        };
        r.register(
            "zero",
            0.0,
            Arc::new(|x: &DVector<f64>| DVector::zeros(x.len())),
        );
        r
    }
}

impl DriftRegistry {
    pub fn register(&mut self, name: &str, lipschitz: f64, func: DriftFn) {
        self.entries.insert(
            name.to_string(),
            CustomDrift {
                name: name.to_string(),
                lipschitz,
                func,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<CustomDrift> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownDrift(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_ou_eval() {
        let d = Drift::linear_ou(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.2, 0.4]),
            DVector::from_vec(vec![2.0, 4.0]),
        )
        .unwrap();
        let v = d.eval(&DVector::from_vec(vec![3.0, 5.0]));
        assert!((v[0] - (2.0 - 1.5 - 1.5)).abs() < 1e-15);
        assert!((v[1] - (4.0 - 0.6 - 2.0)).abs() < 1e-15);
        assert_eq!(Drift::scalar_ou(3.0, 0.0).eval_scalar(2.0), -6.0);
    }

    #[test]
    fn doc_parsing() {
        let doc: DriftDoc = serde_json::from_str(r#"{"kind":"linear_ou","b":3,"mu":0}"#).unwrap();
        let d = doc.resolve(&DriftRegistry::default()).unwrap();
        assert_eq!(d.dim(), Some(1));
        let doc: DriftDoc =
            serde_json::from_str(r#"{"kind":"custom","name":"zero","lipschitz":0.0}"#).unwrap();
        assert!(doc.resolve(&DriftRegistry::default()).is_ok());
        let doc: DriftDoc =
            serde_json::from_str(r#"{"kind":"custom","name":"nope","lipschitz":1.0}"#).unwrap();
        assert!(matches!(
            doc.resolve(&DriftRegistry::default()),
            Err(Error::UnknownDrift(_))
        ));
    }

    #[test]
    fn mismatched_dims_rejected() {
        assert!(Drift::linear_ou(DMatrix::zeros(2, 2), DVector::zeros(3)).is_err());
    }
}
