use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_epsilons, MarkovModel, StateSpace, ValidationReport, ViolationKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

type StepFn<T> = Arc<dyn Fn(usize, T) -> T + Send + Sync>;

/// Law of `X_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ar1Initial<T> {
    Point(T),
    Normal { mean: T, std: T },
}

/// Payoff `f_k`.
#[derive(Clone)]
pub enum Ar1Payoff<T> {
    /// `max(strike - x, 0)`.
    Put {
        strike: T,
    },
    Constant(T),
    Custom(StepFn<T>),
}

/// Criteria `G_k`.
#[derive(Clone)]
pub enum Ar1Criteria<T> {
    /// `G = exp(-rate)`.
    Discount {
        rate: T,
    },
    /// `G(x) = exp(-beta * max(0, x - barrier)^2)`.
    SoftBarrier {
        beta: T,
        barrier: T,
    },
    Constant(T),
    /// User function with its declared sup-norm.
    Custom {
        g: StepFn<T>,
        bound: T,
    },
}

impl<T: fmt::Debug> fmt::Debug for Ar1Payoff<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ar1Payoff::Put { strike } => f.debug_struct("Put").field("strike", strike).finish(),
            Ar1Payoff::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Ar1Payoff::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Ar1Criteria<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ar1Criteria::Discount { rate } => f.debug_struct("Discount").field("rate", rate).finish(),
            Ar1Criteria::SoftBarrier { beta, barrier } => {
                f.debug_struct("SoftBarrier").field("beta", beta).field("barrier", barrier).finish()
            }
            Ar1Criteria::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Ar1Criteria::Custom { bound, .. } => f.debug_struct("Custom").field("bound", bound).finish(),
        }
    }
}

/// `X_{k+1} = a X_k + sigma Z` on the real line.
#[derive(Debug, Clone)]
pub struct GaussianAr1<T> {
    horizon: usize,
    a: T,
    sigma: T,
    initial: Ar1Initial<T>,
    payoff: Ar1Payoff<T>,
    criteria: Ar1Criteria<T>,
    epsilon: Vec<T>,
}

impl<T: Scalar> GaussianAr1<T> {
    pub fn new(
        horizon: usize,
        a: T,
        sigma: T,
        initial: Ar1Initial<T>,
        payoff: Ar1Payoff<T>,
        criteria: Ar1Criteria<T>,
    ) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::ModelContract {
                k: 0,
                detail: format!("AR(1) volatility must be positive, got {sigma}"),
            });
        }
        if let Ar1Initial::Normal { std, .. } = initial {
            if !(std > T::zero()) {
                return Err(Error::ModelContract { k: 0, detail: format!("initial std must be positive, got {std}") });
            }
        }
        Ok(GaussianAr1 { horizon, a, sigma, initial, payoff, criteria, epsilon: vec![T::zero(); horizon] })
    }

    /// `n = 3`, `a = 0.5`, `sigma = 1`, `X_0 = 0`, put struck at 1, discount rate 0.05.
    pub fn builtin() -> Self {
        Self::new(
            3,
            T::lit(0.5),
            T::one(),
            Ar1Initial::Point(T::zero()),
            Ar1Payoff::Put { strike: T::one() },
            Ar1Criteria::Discount { rate: T::lit(0.05) },
        )
        .expect("builtin parameters are valid")
    }

    pub fn set_epsilon(&mut self, epsilon: T) {
        self.epsilon.iter_mut().for_each(|e| *e = epsilon);
    }

    pub fn set_epsilon_at(&mut self, k: usize, epsilon: T) {
        self.epsilon[k] = epsilon;
    }

    pub fn coefficient(&self) -> T {
        self.a
    }

    pub fn volatility(&self) -> T {
        self.sigma
    }

    pub fn initial(&self) -> Ar1Initial<T> {
        self.initial
    }
}

/// Gaussian AR(1) model; `sigma <= 0` is rejected.
pub fn build_gaussian_ar1<T: Scalar>(
    horizon: usize,
    a: T,
    sigma: T,
    payoff: Ar1Payoff<T>,
    criteria: Ar1Criteria<T>,
) -> Result<GaussianAr1<T>> {
    GaussianAr1::new(horizon, a, sigma, Ar1Initial::Point(T::zero()), payoff, criteria)
}

impl<T: Scalar> MarkovModel<T> for GaussianAr1<T> {
    type State = T;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn space(&self, _k: usize) -> StateSpace {
        StateSpace::Continuous { dimension: 1 }
    }

    fn contains(&self, _k: usize, x: &T) -> bool {
        x.is_finite()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self.initial {
            Ar1Initial::Point(x) => x,
            Ar1Initial::Normal { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * T::lit(z)
            }
        }
    }

    fn density(&self, _k: usize, x: &T, y: &T) -> T {
        let z = (*y - self.a * *x) / self.sigma;
        let norm = self.sigma * T::lit((2.0 * std::f64::consts::PI).sqrt());
        (-(z * z) / T::lit(2.0)).exp() / norm
    }

    fn sample_next<R: Rng + ?Sized>(&self, _k: usize, x: &T, rng: &mut R) -> T {
        let z: f64 = rng.sample(StandardNormal);
        self.a * *x + self.sigma * T::lit(z)
    }

    fn payoff(&self, k: usize, x: &T) -> T {
        match &self.payoff {
            Ar1Payoff::Put { strike } => (*strike - *x).max(T::zero()),
            Ar1Payoff::Constant(c) => *c,
            Ar1Payoff::Custom(f) => f(k, *x),
        }
    }

    fn criterion(&self, k: usize, x: &T) -> T {
        match &self.criteria {
            Ar1Criteria::Discount { rate } => (-*rate).exp(),
            Ar1Criteria::SoftBarrier { beta, barrier } => {
                let excess = (*x - *barrier).max(T::zero());
                (-*beta * excess * excess).exp()
            }
            Ar1Criteria::Constant(c) => *c,
            Ar1Criteria::Custom { g, .. } => g(k, *x),
        }
    }

    fn criterion_bound(&self, _k: usize) -> T {
        match &self.criteria {
            Ar1Criteria::Discount { rate } => (-*rate).exp(),
            Ar1Criteria::SoftBarrier { beta, .. } => {
                if *beta >= T::zero() {
                    T::one()
                } else {
                    T::infinity()
                }
            }
            Ar1Criteria::Constant(c) => *c,
            Ar1Criteria::Custom { bound, .. } => *bound,
        }
    }

    fn epsilon(&self, k: usize) -> T {
        self.epsilon[k]
    }

    fn state_label(&self, x: &T) -> String {
        format!("{x}")
    }

    /// Checks parameters, the epsilon constraint, and `f`/`G` on a fixed
    /// probe of simulated paths (the functions cannot be inspected everywhere).
    fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if !self.a.is_finite() {
            report.push(None, ViolationKind::Other(format!("AR(1) coefficient {} is not finite", self.a)));
        }
        check_epsilons(self, &mut report);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..64 {
            let mut x = self.sample_initial(&mut rng);
            for k in 0..=self.horizon {
                if k > 0 {
                    x = self.sample_next(k, &x, &mut rng);
                }
                let f = self.payoff(k, &x);
                if !f.is_finite() {
                    if seen.insert((k, 0)) {
                        report.push(Some(k), ViolationKind::NonFiniteValue { state: format!("{x}") });
                    }
                } else if f < T::zero() && seen.insert((k, 1)) {
                    report.push(Some(k), ViolationKind::NegativePayoff { state: format!("{x}") });
                }
                if k < self.horizon {
                    let g = self.criterion(k, &x);
                    let bound = self.criterion_bound(k);
                    if !g.is_finite() {
                        if seen.insert((k, 2)) {
                            report.push(Some(k), ViolationKind::NonFiniteValue { state: format!("{x}") });
                        }
                    } else if g < T::zero() {
                        if seen.insert((k, 3)) {
                            report.push(Some(k), ViolationKind::NegativeCriterion { state: format!("{x}") });
                        }
                    } else if g > bound && seen.insert((k, 4)) {
                        report.push(
                            Some(k),
                            ViolationKind::CriterionAboveBound {
                                state: format!("{x}"),
                                value: g.as_f64(),
                                bound: bound.as_f64(),
                            },
                        );
                    }
                }
            }
        }
        report
    }
}
