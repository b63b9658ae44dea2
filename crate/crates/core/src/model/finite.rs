use rand::Rng;

use super::{check_epsilons, MarkovModel, StateSpace, ValidationReport, ViolationKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Contract("ragged matrix rows".into()));
        }
        Ok(Matrix { rows: n_rows, cols: n_cols, data: rows.into_iter().flatten().collect() })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Matrix { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `(M f)(x) = sum_y M(x, y) f(y)`.
    pub fn apply(&self, f: &[T]) -> Vec<T> {
        debug_assert_eq!(f.len(), self.cols);
        (0..self.rows).map(|i| self.row(i).iter().zip(f).fold(T::zero(), |acc, (&m, &v)| acc + m * v)).collect()
    }
}

/// Plain-data form of a [`FiniteChain`], for construction and fault injection.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChainParts<T> {
    /// `eta_0` as a probability vector over `E_0`.
    pub initial: Vec<T>,
    /// `transitions[k - 1]` is the matrix of `M_k`, `k = 1..=n`.
    pub transitions: Vec<Matrix<T>>,
    /// `payoffs[k]` is `f_k` over `E_k`, `k = 0..=n`.
    pub payoffs: Vec<Vec<T>>,
    /// `criteria[k]` is `G_k` over `E_k`, `k = 0..n`.
    pub criteria: Vec<Vec<T>>,
    /// Declared `||G_k||`; `None` uses `max_x G_k(x)`.
    pub criteria_bounds: Option<Vec<T>>,
    /// `epsilon_k`, `k = 0..n`; `None` means zero everywhere.
    pub epsilon: Option<Vec<T>>,
}

/// Markov chain on finite slices `E_k = {0, .., |E_k| - 1}`.
///
/// Shapes are checked on construction; the probabilistic invariants are
/// reported by [`MarkovModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain<T> {
    sizes: Vec<usize>,
    initial: Vec<T>,
    transitions: Vec<Matrix<T>>,
    payoffs: Vec<Vec<T>>,
    criteria: Vec<Vec<T>>,
    criteria_bounds: Vec<T>,
    epsilon: Vec<T>,
}

impl<T: Scalar> FiniteChain<T> {
    pub fn from_parts(parts: FiniteChainParts<T>) -> Result<Self> {
        let FiniteChainParts { initial, transitions, payoffs, criteria, criteria_bounds, epsilon } = parts;
        let n = transitions.len();
        let shape = |detail: String| Error::ModelContract { k: 0, detail };

        let mut sizes = Vec::with_capacity(n + 1);
        sizes.push(initial.len());
        if initial.is_empty() {
            return Err(shape("E_0 is empty".into()));
        }
        for (i, m) in transitions.iter().enumerate() {
            if m.rows() != sizes[i] || m.cols() == 0 {
                return Err(Error::ModelContract {
                    k: i + 1,
                    detail: format!("transition is {}x{}, expected {} rows", m.rows(), m.cols(), sizes[i]),
                });
            }
            sizes.push(m.cols());
        }
        if payoffs.len() != n + 1 {
            return Err(shape(format!("{} payoff vectors for horizon {n}", payoffs.len())));
        }
        if criteria.len() != n {
            return Err(shape(format!("{} criteria vectors for horizon {n}", criteria.len())));
        }
        for (k, f) in payoffs.iter().enumerate() {
            if f.len() != sizes[k] {
                return Err(Error::ModelContract {
                    k,
                    detail: format!("payoff has {} entries, |E_k| = {}", f.len(), sizes[k]),
                });
            }
        }
        for (k, g) in criteria.iter().enumerate() {
            if g.len() != sizes[k] {
                return Err(Error::ModelContract {
                    k,
                    detail: format!("criteria has {} entries, |E_k| = {}", g.len(), sizes[k]),
                });
            }
        }
        let criteria_bounds = match criteria_bounds {
            Some(b) if b.len() != n => return Err(shape(format!("{} criteria bounds for horizon {n}", b.len()))),
            Some(b) => b,
            None => criteria.iter().map(|g| g.iter().copied().fold(T::zero(), T::max)).collect(),
        };
        let epsilon = match epsilon {
            Some(e) if e.len() != n => return Err(shape(format!("{} epsilon values for horizon {n}", e.len()))),
            Some(e) => e,
            None => vec![T::zero(); n],
        };
        Ok(FiniteChain { sizes, initial, transitions, payoffs, criteria, criteria_bounds, epsilon })
    }

    /// Time-homogeneous chain: one matrix and one criteria vector reused at every step.
    pub fn homogeneous(
        horizon: usize,
        initial: Vec<T>,
        matrix: Matrix<T>,
        payoffs: Vec<Vec<T>>,
        criteria: Vec<T>,
    ) -> Result<Self> {
        Self::from_parts(FiniteChainParts {
            initial,
            transitions: vec![matrix; horizon],
            payoffs,
            criteria: vec![criteria; horizon],
            criteria_bounds: None,
            epsilon: None,
        })
    }

    pub fn into_parts(self) -> FiniteChainParts<T> {
        FiniteChainParts {
            initial: self.initial,
            transitions: self.transitions,
            payoffs: self.payoffs,
            criteria: self.criteria,
            criteria_bounds: Some(self.criteria_bounds),
            epsilon: Some(self.epsilon),
        }
    }

    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    /// `|E_k|`.
    pub fn size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn initial_law(&self) -> &[T] {
        &self.initial
    }

    /// Matrix of `M_k`, `1 <= k <= n`.
    pub fn transition(&self, k: usize) -> &Matrix<T> {
        &self.transitions[k - 1]
    }

    pub fn payoff_vector(&self, k: usize) -> &[T] {
        &self.payoffs[k]
    }

    pub fn criteria_vector(&self, k: usize) -> &[T] {
        &self.criteria[k]
    }

    pub fn criteria_bounds(&self) -> &[T] {
        &self.criteria_bounds
    }

    pub fn set_epsilon(&mut self, epsilon: T) {
        self.epsilon.iter_mut().for_each(|e| *e = epsilon);
    }

    pub fn set_epsilon_at(&mut self, k: usize, epsilon: T) {
        self.epsilon[k] = epsilon;
    }

    /// Same chain with every `G_k` replaced by the constant `value`.
    pub fn with_constant_criteria(&self, value: T) -> Self {
        let mut out = self.clone();
        for (k, g) in out.criteria.iter_mut().enumerate() {
            g.iter_mut().for_each(|v| *v = value);
            out.criteria_bounds[k] = value;
        }
        out
    }

    /// Draws a random valid chain. Rows and the initial law are strictly
    /// positive; `G` values are uniform on `criteria_range`.
    pub fn random<R: Rng + ?Sized>(spec: &RandomChainSpec, rng: &mut R) -> Self {
        let horizon = rng.random_range(0..=spec.max_horizon);
        let sizes: Vec<usize> = (0..=horizon).map(|_| rng.random_range(1..=spec.max_states)).collect();
        let prob_vector = |len: usize, rng: &mut R| -> Vec<T> {
            let raw: Vec<f64> = (0..len).map(|_| 0.05 + rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| T::lit(w / total)).collect()
        };
        let initial = prob_vector(sizes[0], rng);
        let transitions = (1..=horizon)
            .map(|k| {
                let rows = (0..sizes[k - 1]).map(|_| prob_vector(sizes[k], rng)).collect();
                Matrix::from_rows(rows).expect("rectangular")
            })
            .collect();
        let payoffs =
            sizes.iter().map(|&s| (0..s).map(|_| T::lit(spec.payoff_max * rng.random::<f64>())).collect()).collect();
        let (lo, hi) = spec.criteria_range;
        let criteria = sizes[..horizon]
            .iter()
            .map(|&s| (0..s).map(|_| T::lit(lo + (hi - lo) * rng.random::<f64>())).collect())
            .collect();
        Self::from_parts(FiniteChainParts {
            initial,
            transitions,
            payoffs,
            criteria,
            criteria_bounds: None,
            epsilon: None,
        })
        .expect("generated shapes are consistent")
    }
}

/// Parameters of [`FiniteChain::random`].
#[derive(Debug, Clone, Copy)]
pub struct RandomChainSpec {
    pub max_horizon: usize,
    pub max_states: usize,
    pub payoff_max: f64,
    pub criteria_range: (f64, f64),
}

impl Default for RandomChainSpec {
    fn default() -> Self {
        RandomChainSpec { max_horizon: 4, max_states: 4, payoff_max: 2.0, criteria_range: (0.0, 1.0) }
    }
}

fn sample_index<T: Scalar, R: Rng + ?Sized>(probabilities: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probabilities.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final partial sum
    last_positive
}

impl<T: Scalar> MarkovModel<T> for FiniteChain<T> {
    type State = usize;

    fn horizon(&self) -> usize {
        self.transitions.len()
    }

    fn space(&self, k: usize) -> StateSpace {
        StateSpace::Finite { cardinality: self.sizes[k] }
    }

    fn contains(&self, k: usize, x: &usize) -> bool {
        k < self.sizes.len() && *x < self.sizes[k]
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial, rng)
    }

    fn density(&self, k: usize, x: &usize, y: &usize) -> T {
        self.transitions[k - 1].get(*x, *y)
    }

    fn sample_next<R: Rng + ?Sized>(&self, k: usize, x: &usize, rng: &mut R) -> usize {
        sample_index(self.transitions[k - 1].row(*x), rng)
    }

    fn payoff(&self, k: usize, x: &usize) -> T {
        self.payoffs[k][*x]
    }

    fn criterion(&self, k: usize, x: &usize) -> T {
        self.criteria[k][*x]
    }

    fn criterion_bound(&self, k: usize) -> T {
        self.criteria_bounds[k]
    }

    fn epsilon(&self, k: usize) -> T {
        self.epsilon[k]
    }

    fn atom(&self, _k: usize, x: &usize) -> Option<usize> {
        Some(*x)
    }

    fn state_label(&self, x: &usize) -> String {
        x.to_string()
    }

    fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let init_sum: T = self.initial.iter().copied().sum();
        if self.initial.iter().any(|p| !(*p >= T::zero()) || !p.is_finite())
            || (init_sum.as_f64() - 1.0).abs() > ROW_SUM_TOLERANCE
        {
            report.push(Some(0), ViolationKind::InitialLaw { sum: init_sum.as_f64() });
        }
        for k in 1..=self.horizon() {
            let m = self.transition(k);
            for row in 0..m.rows() {
                let sum: T = m.row(row).iter().copied().sum();
                if (sum.as_f64() - 1.0).abs() > ROW_SUM_TOLERANCE {
                    report.push(Some(k), ViolationKind::NonStochasticRow { row, sum: sum.as_f64() });
                }
                for (col, h) in m.row(row).iter().enumerate() {
                    if !(*h > T::zero()) || !h.is_finite() {
                        report.push(Some(k), ViolationKind::NonPositiveDensity { row, col });
                    }
                }
            }
        }
        for (k, f) in self.payoffs.iter().enumerate() {
            for (x, v) in f.iter().enumerate() {
                if !v.is_finite() {
                    report.push(Some(k), ViolationKind::NonFiniteValue { state: x.to_string() });
                } else if *v < T::zero() {
                    report.push(Some(k), ViolationKind::NegativePayoff { state: x.to_string() });
                }
            }
        }
        for (k, g) in self.criteria.iter().enumerate() {
            let bound = self.criteria_bounds[k];
            for (x, v) in g.iter().enumerate() {
                if !v.is_finite() {
                    report.push(Some(k), ViolationKind::NonFiniteValue { state: x.to_string() });
                } else if *v < T::zero() {
                    report.push(Some(k), ViolationKind::NegativeCriterion { state: x.to_string() });
                } else if *v > bound {
                    report.push(
                        Some(k),
                        ViolationKind::CriterionAboveBound {
                            state: x.to_string(),
                            value: v.as_f64(),
                            bound: bound.as_f64(),
                        },
                    );
                }
            }
        }
        check_epsilons(self, &mut report);
        report
    }
}

/// Two-state, two-step fixture: `P = [[0.5, 0.5], [0.2, 0.8]]`,
/// `f_2 = (1, 2)`, `G_0 = G_1 = (0.5, 1)`, `eta_0 = delta_0`.
pub fn toy_chain<T: Scalar>() -> FiniteChain<T> {
    let l = T::lit;
    let matrix = Matrix::from_rows(vec![vec![l(0.5), l(0.5)], vec![l(0.2), l(0.8)]]).expect("2x2");
    FiniteChain::homogeneous(
        2,
        vec![l(1.0), l(0.0)],
        matrix,
        vec![vec![l(0.0), l(0.0)], vec![l(0.0), l(0.0)], vec![l(1.0), l(2.0)]],
        vec![l(0.5), l(1.0)],
    )
    .expect("toy chain shapes")
}
