use crate::error::{Error, Result};
use crate::model::{FiniteChain, FiniteChainParts, Matrix};
use crate::oracle::snell_standard;
use crate::scalar::Scalar;
use rand::Rng;

/// Both sides of the perturbation inequality at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessRow<T> {
    pub k: usize,
    pub state: usize,
    /// `|u_k(x) - u^_k(x)|`.
    pub lhs: T,
    /// Perturbation bound at `(k, x)`.
    pub rhs: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport<T> {
    pub rows: Vec<RobustnessRow<T>>,
    /// `max (lhs - rhs)`; non-positive when the inequality holds everywhere.
    pub max_excess: T,
}

impl<T: Scalar> RobustnessReport<T> {
    pub fn holds(&self, tolerance: T) -> bool {
        self.max_excess <= tolerance
    }
}

/// Checks
///
/// ```text
/// |u_k - u^_k| <= sum_{l=k}^{n} M^_{k,l} |f_l - f^_l|
///               + sum_{l=k}^{n-1} M^_{k,l} |(M_{l+1} - M^_{l+1}) u_{l+1}|
/// ```
///
/// for the standard envelopes of `original` (`u`) and `perturbed` (`u^`),
/// where `M^_{k,l} = M^_{k+1} .. M^_l`. The right side is accumulated
/// backward: `R_k = |f_k - f^_k| + |(M_{k+1} - M^_{k+1}) u_{k+1}| + M^_{k+1} R_{k+1}`.
pub fn robustness_bound_check<T: Scalar>(
    original: &FiniteChain<T>,
    perturbed: &FiniteChain<T>,
) -> Result<RobustnessReport<T>> {
    if original.sizes() != perturbed.sizes() {
        return Err(Error::Contract("perturbed model must share the state spaces".into()));
    }
    let n = original.horizon();
    let u = snell_standard(original);
    let u_hat = snell_standard(perturbed);
    let abs_diff = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).collect() };

    let mut rhs = vec![Vec::new(); n + 1];
    rhs[n] = abs_diff(original.payoff_vector(n), perturbed.payoff_vector(n));
    for k in (0..n).rev() {
        let drift =
            abs_diff(&original.transition(k + 1).apply(&u[k + 1]), &perturbed.transition(k + 1).apply(&u[k + 1]));
        let carried = perturbed.transition(k + 1).apply(&rhs[k + 1]);
        let payoff = abs_diff(original.payoff_vector(k), perturbed.payoff_vector(k));
        rhs[k] = (0..payoff.len()).map(|x| payoff[x] + drift[x] + carried[x]).collect();
    }

    let mut rows = Vec::new();
    let mut max_excess = T::neg_infinity();
    for k in 0..=n {
        for x in 0..original.size(k) {
            let lhs = (u[k][x] - u_hat[k][x]).abs();
            max_excess = max_excess.max(lhs - rhs[k][x]);
            rows.push(RobustnessRow { k, state: x, lhs, rhs: rhs[k][x] });
        }
    }
    Ok(RobustnessReport { rows, max_excess })
}

/// Random perturbation of payoffs and transitions on the same state spaces.
///
/// Payoffs move by `U(-scale, scale)` and are clipped at zero; each row of
/// `M_k` is mixed with a random probability row using a weight drawn from
/// `U(0, scale)` (capped at one).
pub fn random_perturbation<T: Scalar, R: Rng + ?Sized>(
    model: &FiniteChain<T>,
    rng: &mut R,
    scale: f64,
) -> FiniteChain<T> {
    let parts = model.clone().into_parts();
    let payoffs = parts
        .payoffs
        .iter()
        .map(|f| f.iter().map(|&v| (v + T::lit(scale * (2.0 * rng.random::<f64>() - 1.0))).max(T::zero())).collect())
        .collect();
    let transitions = parts
        .transitions
        .iter()
        .map(|m| {
            let rows = (0..m.rows())
                .map(|i| {
                    let raw: Vec<f64> = (0..m.cols()).map(|_| 0.05 + rng.random::<f64>()).collect();
                    let total: f64 = raw.iter().sum();
                    let lambda = T::lit((scale * rng.random::<f64>()).min(1.0));
                    m.row(i)
                        .iter()
                        .zip(&raw)
                        .map(|(&p, &r)| (T::one() - lambda) * p + lambda * T::lit(r / total))
                        .collect()
                })
                .collect();
            Matrix::from_rows(rows).expect("rectangular")
        })
        .collect();
    FiniteChain::from_parts(FiniteChainParts { payoffs, transitions, ..parts }).expect("shapes unchanged")
}
