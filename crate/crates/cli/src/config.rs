//! Loading JSON configs and applying `--override key=value` edits.

use std::path::Path;

use hfactor::estimator::FitOptions;
use hfactor::hypothesis_test::DEFAULT_ALPHA;
use hfactor::matrixcalc::unvech;
use hfactor::model::{ParamVector, Regime};
use hfactor::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Reads `path` (or starts from `{}` when absent), applies the overrides and
/// returns the resolved JSON document.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Value> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    Ok(doc)
}

/// Deserializes a resolved document, reporting the offending field.
pub fn parse<T: DeserializeOwned>(doc: &Value, what: &str) -> Result<T> {
    serde_json::from_value(doc.clone()).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// `a.b.2.c=value`: the value is read as JSON when it parses, otherwise as a
/// string. Missing objects along the path are created.
pub fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    if key.is_empty() {
        return Err(Error::Config(format!("override `{item}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for segment in key.split('.') {
        node = match node {
            Value::Array(items) => {
                let idx: usize = segment.parse().map_err(|_| {
                    Error::Config(format!(
                        "override `{key}`: `{segment}` is not an array index"
                    ))
                })?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!(
                        "override `{key}`: index {idx} out of range ({len})"
                    ))
                })?
            }
            Value::Object(map) => map.entry(segment).or_insert(Value::Null),
            other => {
                if !other.is_null() {
                    return Err(Error::Config(format!(
                        "override `{key}`: `{segment}` is inside a scalar"
                    )));
                }
                *other = Value::Object(Default::default());
                other
                    .as_object_mut()
                    .expect("just created")
                    .entry(segment)
                    .or_insert(Value::Null)
            }
        };
    }
    *node = value;
    Ok(())
}

/// Starting parameter given explicitly: `A` row-major, `sigma_ff` as vech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitDoc {
    #[serde(rename = "A", alias = "a")]
    pub a: Vec<f64>,
    pub sigma_ff: Vec<f64>,
    pub sigma_ee: Vec<f64>,
}

impl InitDoc {
    pub fn to_params(&self, p: usize, k: usize) -> Result<ParamVector> {
        if self.a.len() != (p - k) * k
            || self.sigma_ff.len() != k * (k + 1) / 2
            || self.sigma_ee.len() != p
        {
            return Err(Error::Config(format!(
                "init: expected {} loadings, {} factor covariances and {p} unique variances for p={p}, k={k}",
                (p - k) * k,
                k * (k + 1) / 2
            )));
        }
        ParamVector::new(
            DMatrix::from_row_slice(p - k, k, &self.a),
            unvech(&DVector::from_column_slice(&self.sigma_ff))?,
            DVector::from_column_slice(&self.sigma_ee),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Contrast,
    QuasiLikelihood,
}

/// Settings shared by `fit`, `test` and `select`. `p`, `n` and `h` come
/// from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    pub k: Option<usize>,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub df_override: Option<u32>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub init: Option<InitDoc>,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
