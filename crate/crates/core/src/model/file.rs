//! Model definition files.
//!
//! ```toml
//! schema_version = 1
//! horizon = 2
//!
//! [spaces]
//! kind = "finite"            # or "continuous" with `dimension = 1`
//! cardinality = 2            # or `sizes = [2, 2, 2]`
//!
//! [initial]
//! probabilities = [1.0, 0.0] # continuous: `point = 0.0` or `mean`/`std`
//!
//! [transition]
//! matrix = [[0.5, 0.5], [0.2, 0.8]]   # or `matrices = [...]` per step,
//!                                     # or `family = "ar1"`, `a`, `sigma`
//! [payoff]
//! values = [[0, 0], [0, 0], [1, 2]]   # or `preset = "put"`, `strike`
//!
//! [criteria]
//! values = [[0.5, 1.0], [0.5, 1.0]]   # or `constant = [0.5, 1.0]`,
//!                                     # or `preset = "discount" | "soft-barrier"`
//! [epsilon]
//! value = 0.0                         # or `values = [...]`
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use super::{AnyModel, Ar1Criteria, Ar1Initial, Ar1Payoff, FiniteChain, FiniteChainParts, GaussianAr1, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDefinition {
    pub schema_version: u32,
    pub horizon: usize,
    pub spaces: SpacesSection,
    pub initial: InitialSection,
    pub transition: TransitionSection,
    pub payoff: PayoffSection,
    #[serde(default)]
    pub criteria: CriteriaSection,
    #[serde(default)]
    pub epsilon: EpsilonSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacesSection {
    pub kind: String,
    pub cardinality: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub dimension: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub probabilities: Option<Vec<f64>>,
    pub point: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSection {
    pub matrix: Option<Vec<Vec<f64>>>,
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
    pub family: Option<String>,
    pub a: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    pub values: Option<Vec<Vec<f64>>>,
    pub preset: Option<String>,
    pub strike: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaSection {
    pub values: Option<Vec<Vec<f64>>>,
    pub constant: Option<Vec<f64>>,
    pub bounds: Option<Vec<f64>>,
    pub preset: Option<String>,
    pub rate: Option<f64>,
    pub beta: Option<f64>,
    pub barrier: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSection {
    pub value: Option<f64>,
    pub values: Option<Vec<f64>>,
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn conv<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn required<V: Clone>(v: &Option<V>, key: &str) -> Result<V> {
    v.clone().ok_or_else(|| cfg(format!("missing key `{key}`")))
}

/// Parses a model definition from TOML text.
pub fn parse_model_definition<T: Scalar>(text: &str) -> Result<AnyModel<T>> {
    let def: ModelDefinition = toml::from_str(text).map_err(|e| cfg(e.to_string()))?;
    def.build()
}

pub fn load_model_file<T: Scalar>(path: &Path) -> Result<AnyModel<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
    parse_model_definition(&text)
}

impl ModelDefinition {
    pub fn build<T: Scalar>(&self) -> Result<AnyModel<T>> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(cfg(format!(
                "unsupported schema_version {} (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut model = match self.spaces.kind.as_str() {
            "finite" => AnyModel::Finite(self.build_finite()?),
            "continuous" => AnyModel::Ar1(self.build_ar1()?),
            other => return Err(cfg(format!("spaces.kind: unknown kind `{other}`"))),
        };
        let n = self.horizon;
        match (&self.epsilon.value, &self.epsilon.values) {
            (Some(_), Some(_)) => return Err(cfg("epsilon: give either `value` or `values`")),
            (Some(v), None) => model.set_epsilon(T::lit(*v)),
            (None, Some(values)) => {
                if values.len() != n {
                    return Err(cfg(format!("epsilon.values: {} entries for horizon {n}", values.len())));
                }
                for (k, v) in values.iter().enumerate() {
                    match &mut model {
                        AnyModel::Finite(m) => m.set_epsilon_at(k, T::lit(*v)),
                        AnyModel::Ar1(m) => m.set_epsilon_at(k, T::lit(*v)),
                    }
                }
            }
            (None, None) => {}
        }
        Ok(model)
    }

    fn build_finite<T: Scalar>(&self) -> Result<FiniteChain<T>> {
        let n = self.horizon;
        let sizes = match (&self.spaces.cardinality, &self.spaces.sizes) {
            (Some(c), None) => vec![*c; n + 1],
            (None, Some(s)) if s.len() == n + 1 => s.clone(),
            (None, Some(s)) => return Err(cfg(format!("spaces.sizes: {} entries for horizon {n}", s.len()))),
            _ => return Err(cfg("spaces: give exactly one of `cardinality` or `sizes`")),
        };
        let initial = conv(&required(&self.initial.probabilities, "initial.probabilities")?);
        let transitions: Vec<Matrix<T>> = match (&self.transition.matrix, &self.transition.matrices) {
            (Some(m), None) => {
                let m = Matrix::from_rows(m.iter().map(|r| conv(r)).collect())?;
                vec![m; n]
            }
            (None, Some(ms)) if ms.len() == n => {
                ms.iter().map(|m| Matrix::from_rows(m.iter().map(|r| conv(r)).collect())).collect::<Result<_>>()?
            }
            (None, Some(ms)) => return Err(cfg(format!("transition.matrices: {} entries for horizon {n}", ms.len()))),
            _ => return Err(cfg("transition: give exactly one of `matrix` or `matrices`")),
        };
        let payoffs: Vec<Vec<T>> = required(&self.payoff.values, "payoff.values")?.iter().map(|v| conv(v)).collect();
        let criteria: Vec<Vec<T>> = match (&self.criteria.values, &self.criteria.constant) {
            (Some(v), None) => v.iter().map(|g| conv(g)).collect(),
            (None, Some(g)) => vec![conv(g); n],
            (None, None) => sizes[..n].iter().map(|&s| vec![T::one(); s]).collect(),
            _ => return Err(cfg("criteria: give at most one of `values` or `constant`")),
        };
        let chain = FiniteChain::from_parts(FiniteChainParts {
            initial,
            transitions,
            payoffs,
            criteria,
            criteria_bounds: self.criteria.bounds.as_ref().map(|b| conv(b)),
            epsilon: None,
        })?;
        if chain.sizes() != sizes.as_slice() {
            return Err(cfg(format!("declared sizes {sizes:?} disagree with matrices {:?}", chain.sizes())));
        }
        Ok(chain)
    }

    fn build_ar1<T: Scalar>(&self) -> Result<GaussianAr1<T>> {
        if self.spaces.dimension.unwrap_or(1) != 1 {
            return Err(cfg("spaces.dimension: only dimension 1 is supported"));
        }
        let family = required(&self.transition.family, "transition.family")?;
        if family != "ar1" {
            return Err(cfg(format!("transition.family: unknown family `{family}`")));
        }
        let a = T::lit(required(&self.transition.a, "transition.a")?);
        let sigma = T::lit(required(&self.transition.sigma, "transition.sigma")?);
        let initial = match (&self.initial.point, &self.initial.mean, &self.initial.std) {
            (Some(p), None, None) => Ar1Initial::Point(T::lit(*p)),
            (None, Some(m), Some(s)) => Ar1Initial::Normal { mean: T::lit(*m), std: T::lit(*s) },
            _ => return Err(cfg("initial: give `point` or both `mean` and `std`")),
        };
        let payoff = match self.payoff.preset.as_deref() {
            Some("put") => Ar1Payoff::Put { strike: T::lit(required(&self.payoff.strike, "payoff.strike")?) },
            Some("constant") => Ar1Payoff::Constant(T::lit(required(&self.payoff.value, "payoff.value")?)),
            Some(other) => return Err(cfg(format!("payoff.preset: unknown preset `{other}`"))),
            None => return Err(cfg("missing key `payoff.preset`")),
        };
        let c = &self.criteria;
        let criteria = match c.preset.as_deref() {
            Some("discount") => Ar1Criteria::Discount { rate: T::lit(required(&c.rate, "criteria.rate")?) },
            Some("soft-barrier") => Ar1Criteria::SoftBarrier {
                beta: T::lit(required(&c.beta, "criteria.beta")?),
                barrier: T::lit(required(&c.barrier, "criteria.barrier")?),
            },
            Some("constant") => Ar1Criteria::Constant(T::lit(required(&c.value, "criteria.value")?)),
            Some(other) => return Err(cfg(format!("criteria.preset: unknown preset `{other}`"))),
            None => Ar1Criteria::Constant(T::one()),
        };
        GaussianAr1::new(self.horizon, a, sigma, initial, payoff, criteria)
    }
}
