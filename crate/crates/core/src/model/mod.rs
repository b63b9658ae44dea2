//! Markov chains, payoffs and multiplicative criteria.
//!
//! A model supplies, for every time `k` in `0..=n`, a state space `E_k`, the
//! payoff `f_k >= 0`, and for `k < n` the criterion `G_k >= 0` together with
//! its declared sup-norm and selection level `epsilon_k`. Transitions
//! `M_k(x, dy) = H_k(x, y) lambda_k(dy)` are given through their density `H_k`
//! against counting measure (finite spaces) or Lebesgue measure (continuous
//! spaces) and through a sampler.

mod ar1;
mod file;
mod finite;

use std::fmt::Debug;

use rand::Rng;

pub use ar1::{build_gaussian_ar1, Ar1Criteria, Ar1Initial, Ar1Payoff, GaussianAr1};
pub use file::{load_model_file, parse_model_definition, ModelDefinition};
pub use finite::{toy_chain, FiniteChain, FiniteChainParts, Matrix, RandomChainSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of a time slice `E_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSpace {
    Finite { cardinality: usize },
    Continuous { dimension: usize },
}

/// A Markov chain with payoffs `f_k` and multiplicative criteria `G_k`.
///
/// Evaluation methods are pure. Samplers mutate only the random stream they
/// are handed.
pub trait MarkovModel<T: Scalar>: Send + Sync {
    type State: Clone + Debug + PartialEq + Send + Sync;

    /// Number of transition steps `n`.
    fn horizon(&self) -> usize;

    fn space(&self, k: usize) -> StateSpace;

    /// Whether `x` is a point of `E_k`.
    fn contains(&self, k: usize, x: &Self::State) -> bool;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Raw density `H_k(x, y)` of `M_k(x, .)`, `1 <= k <= n`. No checks.
    fn density(&self, k: usize, x: &Self::State, y: &Self::State) -> T;

    /// Draws from `M_k(x, .)`, `1 <= k <= n`.
    fn sample_next<R: Rng + ?Sized>(&self, k: usize, x: &Self::State, rng: &mut R) -> Self::State;

    fn payoff(&self, k: usize, x: &Self::State) -> T;

    /// `G_k(x)` for `k < n`.
    fn criterion(&self, k: usize, x: &Self::State) -> T;

    /// Declared `||G_k||`.
    fn criterion_bound(&self, k: usize) -> T;

    /// Selection level `epsilon_k`.
    fn epsilon(&self, k: usize) -> T;

    /// Index of `x` when `E_k` is finite. Used to merge coincident mesh points.
    fn atom(&self, _k: usize, _x: &Self::State) -> Option<usize> {
        None
    }

    /// Human readable rendering of a state for CSV output.
    fn state_label(&self, x: &Self::State) -> String {
        format!("{x:?}")
    }

    fn validate(&self) -> ValidationReport;
}

/// Which invariant a [`Violation`] breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// `epsilon_k * ||G_k|| > 1`.
    EpsilonBound {
        epsilon: f64,
        bound: f64,
    },
    /// Negative `epsilon_k`.
    NegativeEpsilon,
    /// A transition row that does not sum to one.
    NonStochasticRow {
        row: usize,
        sum: f64,
    },
    /// `H_k(x, y) <= 0` or non-finite.
    NonPositiveDensity {
        row: usize,
        col: usize,
    },
    NegativePayoff {
        state: String,
    },
    NegativeCriterion {
        state: String,
    },
    NonFiniteValue {
        state: String,
    },
    /// `G_k(x)` exceeds the declared `||G_k||`.
    CriterionAboveBound {
        state: String,
        value: f64,
        bound: f64,
    },
    InitialLaw {
        sum: f64,
    },
    /// Any other structural defect.
    Other(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Offending time index, if the violation is tied to one.
    pub k: Option<usize>,
    pub kind: ViolationKind,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use ViolationKind::*;
        match self {
            EpsilonBound { epsilon, bound } => {
                write!(f, "epsilon {epsilon} times ||G|| = {bound} exceeds 1")
            }
            NegativeEpsilon => write!(f, "negative epsilon"),
            NonStochasticRow { row, sum } => write!(f, "transition row {row} sums to {sum}"),
            NonPositiveDensity { row, col } => write!(f, "non-positive density at ({row}, {col})"),
            NegativePayoff { state } => write!(f, "negative payoff at state {state}"),
            NegativeCriterion { state } => write!(f, "negative criterion at state {state}"),
            NonFiniteValue { state } => write!(f, "non-finite value at state {state}"),
            CriterionAboveBound { state, value, bound } => {
                write!(f, "criterion {value} at state {state} exceeds declared bound {bound}")
            }
            InitialLaw { sum } => write!(f, "initial law sums to {sum}"),
            Other(m) => f.write_str(m),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.k {
            Some(k) => write!(f, "k={k}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Every invariant violation found in a model; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub(crate) fn push(&mut self, k: Option<usize>, kind: ViolationKind) {
        self.violations.push(Violation { k, kind });
    }

    /// True when every violation is an epsilon constraint.
    pub fn only_epsilon(&self) -> bool {
        self.violations
            .iter()
            .all(|v| matches!(v.kind, ViolationKind::EpsilonBound { .. } | ViolationKind::NegativeEpsilon))
    }
}

/// Returns every violated invariant of `model`.
pub fn validate_model<T: Scalar, M: MarkovModel<T>>(model: &M) -> ValidationReport {
    model.validate()
}

/// Checks the `epsilon_k * ||G_k|| <= 1` constraint for every `k < n`.
pub(crate) fn check_epsilons<T: Scalar, M: MarkovModel<T> + ?Sized>(model: &M, report: &mut ValidationReport) {
    for k in 0..model.horizon() {
        let eps = model.epsilon(k);
        let bound = model.criterion_bound(k);
        if eps < T::zero() {
            report.push(Some(k), ViolationKind::NegativeEpsilon);
        } else if eps * bound > T::one() + T::lit(1e-12) {
            report.push(Some(k), ViolationKind::EpsilonBound { epsilon: eps.as_f64(), bound: bound.as_f64() });
        }
    }
}

/// `H_k(x, y)`, checked for range, membership and strict positivity.
pub fn transition_density<T: Scalar, M: MarkovModel<T>>(model: &M, k: usize, x: &M::State, y: &M::State) -> Result<T> {
    if k == 0 || k > model.horizon() {
        return Err(Error::Contract(format!("transition index k={k} outside 1..={}", model.horizon())));
    }
    if !model.contains(k - 1, x) || !model.contains(k, y) {
        return Err(Error::Contract(format!("states {x:?} -> {y:?} outside E_{} x E_{k}", k - 1)));
    }
    let h = model.density(k, x, y);
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::ModelContract {
            k,
            detail: format!("density H_{k}({x:?}, {y:?}) = {h} is not positive and finite"),
        });
    }
    Ok(h)
}

/// Draws `x_k ~ M_k(x, .)` from `rng`.
pub fn sample_transition<T: Scalar, M: MarkovModel<T>, R: Rng + ?Sized>(
    model: &M,
    k: usize,
    x: &M::State,
    rng: &mut R,
) -> Result<M::State> {
    if k == 0 || k > model.horizon() {
        return Err(Error::Contract(format!("transition index k={k} outside 1..={}", model.horizon())));
    }
    Ok(model.sample_next(k, x, rng))
}

/// Either builtin model family, as loaded from a name or a definition file.
#[derive(Debug, Clone)]
pub enum AnyModel<T: Scalar> {
    Finite(FiniteChain<T>),
    Ar1(GaussianAr1<T>),
}

impl<T: Scalar> AnyModel<T> {
    /// The finite chain, or an unsupported-model error naming `operation`.
    pub fn as_finite(&self, operation: &str) -> Result<&FiniteChain<T>> {
        match self {
            AnyModel::Finite(m) => Ok(m),
            AnyModel::Ar1(_) => {
                Err(Error::UnsupportedModel(format!("{operation} requires a finite state space model")))
            }
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            AnyModel::Finite(m) => MarkovModel::<T>::horizon(m),
            AnyModel::Ar1(m) => MarkovModel::<T>::horizon(m),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        match self {
            AnyModel::Finite(m) => MarkovModel::<T>::validate(m),
            AnyModel::Ar1(m) => MarkovModel::<T>::validate(m),
        }
    }

    /// Replaces every selection level with `epsilon`.
    pub fn set_epsilon(&mut self, epsilon: T) {
        match self {
            AnyModel::Finite(m) => m.set_epsilon(epsilon),
            AnyModel::Ar1(m) => m.set_epsilon(epsilon),
        }
    }
}

/// Looks up a builtin model by name (`toychain`, `ar1`).
pub fn builtin<T: Scalar>(name: &str) -> Option<AnyModel<T>> {
    match name {
        "toychain" => Some(AnyModel::Finite(toy_chain())),
        "ar1" => Some(AnyModel::Ar1(GaussianAr1::builtin())),
        _ => None,
    }
}
