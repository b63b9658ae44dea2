//! Exact dynamic programming on finite chains.
//!
//! Three Snell recursions are provided: the standard envelope
//! `u_k = f_k max M_{k+1} u_{k+1}`, the criteria envelope
//! `v_k = f_k max G_k M_{k+1} v_{k+1}`, and the path-space envelope over
//! histories `(x_0, .., x_k)` with gains `f_k(x_k) prod_{p<k} G_p(x_p)`. The
//! path-space values must equal `v_k(x_k) prod_{p<k} G_p(x_p)`, which
//! [`check_path_equivalence`] verifies by brute force.

use crate::error::{Error, Result};
use crate::model::FiniteChain;
use crate::scalar::Scalar;

/// Feasibility guards for the exhaustive oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationCaps {
    /// Maximum number of full paths `prod_k |E_k|`.
    pub paths: u128,
    /// Maximum number of deterministic Markov stopping policies.
    pub policies: u128,
}

impl Default for EnumerationCaps {
    fn default() -> Self {
        EnumerationCaps { paths: 1_000_000, policies: 1 << 20 }
    }
}

/// Exact value tables and flow of a finite model.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution<T> {
    /// Criteria envelope `v_k` over `E_k`, `k = 0..=n`.
    pub values: Vec<Vec<T>>,
    /// Standard envelope `u_k` (criteria ignored).
    pub standard: Option<Vec<Vec<T>>>,
    pub flow: EtaFlow<T>,
}

impl<T: Scalar> OracleSolution<T> {
    /// `eta_0(v_0)`, the optimal expected gain.
    pub fn initial_value(&self, model: &FiniteChain<T>) -> T {
        dot(model.initial_law(), &self.values[0])
    }
}

/// Normalized flow `eta_k` with the masses `eta_k(G_k)` and `Z_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaFlow<T> {
    /// `eta[k]` is a probability vector over `E_k`, `k = 0..=n`.
    pub eta: Vec<Vec<T>>,
    /// `masses[k] = eta_k(G_k)`, `k = 0..n`.
    pub masses: Vec<T>,
    /// `Z_n = prod_k eta_k(G_k)`.
    pub normalizer: T,
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `(Q_k f)(x) = G_{k-1}(x) sum_y M_k(x, y) f(y)`, `1 <= k <= n`.
pub fn apply_q<T: Scalar>(model: &FiniteChain<T>, k: usize, f: &[T]) -> Vec<T> {
    model.transition(k).apply(f).into_iter().zip(model.criteria_vector(k - 1)).map(|(m, &g)| g * m).collect()
}

/// `Phi_k(eta)`: reweight `eta` by `G_{k-1}`, normalize, and move by `M_k`.
pub fn phi_step<T: Scalar>(model: &FiniteChain<T>, k: usize, eta: &[T]) -> Result<Vec<T>> {
    let g = model.criteria_vector(k - 1);
    let mass = dot(eta, g);
    if !(mass > T::zero()) {
        return Err(Error::DegenerateFlow { step: k });
    }
    let m = model.transition(k);
    let mut out = vec![T::zero(); m.cols()];
    for (x, (&e, &gx)) in eta.iter().zip(g).enumerate() {
        let w = e * gx;
        if w == T::zero() {
            continue;
        }
        for (y, o) in out.iter_mut().enumerate() {
            *o = *o + w * m.get(x, y);
        }
    }
    Ok(out.into_iter().map(|o| o / mass).collect())
}

/// Standard Snell envelope `u_k = f_k max M_{k+1} u_{k+1}`.
pub fn snell_standard<T: Scalar>(model: &FiniteChain<T>) -> Vec<Vec<T>> {
    backward(model, false)
}

/// Criteria envelope `v_k = f_k max G_k M_{k+1} v_{k+1}`.
pub fn snell_with_criteria<T: Scalar>(model: &FiniteChain<T>) -> Vec<Vec<T>> {
    backward(model, true)
}

fn backward<T: Scalar>(model: &FiniteChain<T>, with_criteria: bool) -> Vec<Vec<T>> {
    let n = model.horizon();
    let mut values = vec![Vec::new(); n + 1];
    values[n] = model.payoff_vector(n).to_vec();
    for k in (0..n).rev() {
        let cont = if with_criteria {
            apply_q(model, k + 1, &values[k + 1])
        } else {
            model.transition(k + 1).apply(&values[k + 1])
        };
        values[k] = model.payoff_vector(k).iter().zip(cont).map(|(&f, c)| f.max(c)).collect();
    }
    values
}

/// Exact flow `eta_k = Phi_k(eta_{k-1})` and normalizer `Z_n`.
pub fn compute_eta_flow<T: Scalar>(model: &FiniteChain<T>) -> Result<EtaFlow<T>> {
    let n = model.horizon();
    let mut eta = vec![model.initial_law().to_vec()];
    let mut masses = Vec::with_capacity(n);
    for k in 1..=n {
        masses.push(dot(&eta[k - 1], model.criteria_vector(k - 1)));
        let next = phi_step(model, k, &eta[k - 1])?;
        eta.push(next);
    }
    let normalizer = masses.iter().fold(T::one(), |acc, &m| acc * m);
    Ok(EtaFlow { eta, masses, normalizer })
}

/// Value tables, standard envelope and flow in one call.
pub fn solve<T: Scalar>(model: &FiniteChain<T>) -> Result<OracleSolution<T>> {
    Ok(OracleSolution {
        values: snell_with_criteria(model),
        standard: Some(snell_standard(model)),
        flow: compute_eta_flow(model)?,
    })
}

/// Path-space envelope values, one table per time, indexed in mixed radix
/// `(((x_0 |E_1| + x_1) |E_2| + x_2) ..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable<T> {
    sizes: Vec<usize>,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> PathTable<T> {
    pub fn horizon(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Number of paths `(x_0, .., x_k)`.
    pub fn path_count(&self, k: usize) -> usize {
        self.values[k].len()
    }

    pub fn values(&self, k: usize) -> &[T] {
        &self.values[k]
    }

    /// `u_k(x_0, .., x_k)` for `path = [x_0, .., x_k]`.
    pub fn value(&self, path: &[usize]) -> T {
        let k = path.len() - 1;
        self.values[k][self.index(path)]
    }

    fn index(&self, path: &[usize]) -> usize {
        path.iter().enumerate().fold(0, |acc, (j, &x)| if j == 0 { x } else { acc * self.sizes[j] + x })
    }

    /// Decodes path `index` at time `k`.
    pub fn path(&self, k: usize, mut index: usize) -> Vec<usize> {
        let mut path = vec![0; k + 1];
        for j in (0..=k).rev() {
            path[j] = index % self.sizes[j];
            index /= self.sizes[j];
        }
        path
    }
}

fn path_gain<T: Scalar>(model: &FiniteChain<T>, path: &[usize]) -> T {
    let k = path.len() - 1;
    criteria_product(model, path) * model.payoff_vector(k)[path[k]]
}

fn criteria_product<T: Scalar>(model: &FiniteChain<T>, path: &[usize]) -> T {
    let k = path.len() - 1;
    path[..k].iter().enumerate().fold(T::one(), |acc, (p, &x)| acc * model.criteria_vector(p)[x])
}

/// Path-space envelope by explicit enumeration of every history.
pub fn snell_path_space<T: Scalar>(model: &FiniteChain<T>, caps: &EnumerationCaps) -> Result<PathTable<T>> {
    let sizes = model.sizes().to_vec();
    let total: u128 = sizes.iter().map(|&s| s as u128).product();
    if total > caps.paths {
        return Err(Error::EnumerationTooLarge { what: "paths", required: total, cap: caps.paths });
    }
    let n = model.horizon();
    let mut table = PathTable { sizes: sizes.clone(), values: vec![Vec::new(); n + 1] };
    let count_at = |k: usize| sizes[..=k].iter().product::<usize>();
    table.values[n] = (0..count_at(n)).map(|i| path_gain(model, &table.path(n, i))).collect();
    for k in (0..n).rev() {
        let next_size = sizes[k + 1];
        let m = model.transition(k + 1);
        let values: Vec<T> = (0..count_at(k))
            .map(|i| {
                let path = table.path(k, i);
                let x = path[k];
                let cont =
                    (0..next_size).fold(T::zero(), |acc, y| acc + m.get(x, y) * table.values[k + 1][i * next_size + y]);
                path_gain(model, &path).max(cont)
            })
            .collect();
        table.values[k] = values;
    }
    Ok(table)
}

/// `max |u_k(x_0..x_k) - v_k(x_k) prod_{p<k} G_p(x_p)|` over all enumerated paths.
pub fn path_equivalence_discrepancy<T: Scalar>(model: &FiniteChain<T>, table: &PathTable<T>, values: &[Vec<T>]) -> T {
    let mut worst = T::zero();
    for k in 0..=table.horizon() {
        for (i, &u) in table.values(k).iter().enumerate() {
            let path = table.path(k, i);
            let rhs = values[k][path[k]] * criteria_product(model, &path);
            worst = worst.max((u - rhs).abs());
        }
    }
    worst
}

/// Brute-force check that the path-space envelope factors through `v_k`.
pub fn check_path_equivalence<T: Scalar>(model: &FiniteChain<T>, caps: &EnumerationCaps) -> Result<T> {
    let table = snell_path_space(model, caps)?;
    Ok(path_equivalence_discrepancy(model, &table, &snell_with_criteria(model)))
}

/// Result of exhaustive stopping-policy search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityCheck<T> {
    /// Best expected gain over all deterministic Markov stopping rules.
    pub best_value: T,
    /// `|best_value - eta_0(v_0)|`.
    pub gap: T,
    pub policies: u128,
}

/// Expected gain `E[f_tau prod_{p<tau} G_p]` of the Markov rule that stops at
/// `(k, x)` when bit `offsets[k] + x` of `policy` is set, and always at `n`.
fn policy_value<T: Scalar>(model: &FiniteChain<T>, offsets: &[usize], policy: u64) -> T {
    let n = model.horizon();
    let mut mass = model.initial_law().to_vec();
    let mut gain = T::zero();
    for (k, &offset) in offsets.iter().enumerate().take(n) {
        let f = model.payoff_vector(k);
        let g = model.criteria_vector(k);
        let mut carried = vec![T::zero(); mass.len()];
        for x in 0..mass.len() {
            if policy >> (offset + x) & 1 == 1 {
                gain = gain + mass[x] * f[x];
            } else {
                carried[x] = mass[x] * g[x];
            }
        }
        let m = model.transition(k + 1);
        let mut next = vec![T::zero(); m.cols()];
        for (x, &c) in carried.iter().enumerate() {
            if c == T::zero() {
                continue;
            }
            for (y, v) in next.iter_mut().enumerate() {
                *v = *v + c * m.get(x, y);
            }
        }
        mass = next;
    }
    gain + dot(&mass, model.payoff_vector(n))
}

/// Evaluates every deterministic Markov stopping policy exactly by forward
/// propagation of the surviving criteria-weighted mass.
///
/// Stopping at `n` is forced, so only decisions at `k < n` are enumerated.
/// Markov rules suffice because the dynamic programming optimum is attained
/// by the rule `stop iff v_k = f_k`.
pub fn verify_optimality<T: Scalar>(model: &FiniteChain<T>, caps: &EnumerationCaps) -> Result<OptimalityCheck<T>> {
    let n = model.horizon();
    let mut offsets = Vec::with_capacity(n);
    let mut bits = 0usize;
    for k in 0..n {
        offsets.push(bits);
        bits += model.size(k);
    }
    let policies: u128 = 1u128 << bits.min(127);
    if bits >= 64 || policies > caps.policies {
        return Err(Error::EnumerationTooLarge { what: "policies", required: policies, cap: caps.policies });
    }
    let best_value =
        (0..policies as u64).map(|policy| policy_value(model, &offsets, policy)).fold(T::neg_infinity(), T::max);
    let target = dot(model.initial_law(), &snell_with_criteria(model)[0]);
    Ok(OptimalityCheck { best_value, gap: (best_value - target).abs(), policies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_chain, FiniteChainParts, Matrix, RandomChainSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn standard_envelope_on_toy_chain() {
        let u = snell_standard(&toy_chain::<f64>());
        assert_eq!(u[2], vec![1.0, 2.0]);
        // independent matrix-vector product: row 0 of P times (1, 2)
        assert!(close(u[1][0], 0.5 * 1.0 + 0.5 * 2.0));
        assert!(close(u[1][1], 0.2 * 1.0 + 0.8 * 2.0));
        assert!(close(u[1][0], 1.5));
    }

    #[test]
    fn constant_payoff_is_its_own_envelope() {
        let mut parts = toy_chain::<f64>().into_parts();
        parts.payoffs = vec![vec![3.0, 3.0]; 3];
        let u = snell_standard(&FiniteChain::from_parts(parts).unwrap());
        assert!(u.iter().flatten().all(|&v| close(v, 3.0)));
    }

    #[test]
    fn horizon_zero_returns_payoff() {
        let m = FiniteChain::<f64>::from_parts(FiniteChainParts {
            initial: vec![0.3, 0.7],
            transitions: vec![],
            payoffs: vec![vec![1.5, 0.25]],
            criteria: vec![],
            criteria_bounds: None,
            epsilon: None,
        })
        .unwrap();
        assert_eq!(snell_standard(&m), vec![vec![1.5, 0.25]]);
        assert_eq!(snell_with_criteria(&m), vec![vec![1.5, 0.25]]);
        let check = verify_optimality(&m, &EnumerationCaps::default()).unwrap();
        assert!(close(check.best_value, 0.3 * 1.5 + 0.7 * 0.25));
        let flow = compute_eta_flow(&m).unwrap();
        assert_eq!(flow.normalizer, 1.0);
    }

    #[test]
    fn criteria_envelope_on_toy_chain() {
        let v = snell_with_criteria(&toy_chain::<f64>());
        assert_eq!(v[2], vec![1.0, 2.0]);
        assert!(close(v[1][0], 0.75) && close(v[1][1], 1.8));
        assert!(close(v[0][0], 0.6375) && close(v[0][1], 1.59));
    }

    #[test]
    fn unit_criteria_reduce_to_standard() {
        let m = toy_chain::<f64>().with_constant_criteria(1.0);
        assert_eq!(snell_with_criteria(&m), snell_standard(&m));
    }

    #[test]
    fn zero_criteria_stop_immediately() {
        let mut parts = toy_chain::<f64>().into_parts();
        parts.payoffs[0] = vec![0.1, 0.2];
        parts.payoffs[1] = vec![0.3, 0.4];
        let m = FiniteChain::from_parts(parts).unwrap().with_constant_criteria(0.0);
        let v = snell_with_criteria(&m);
        for (k, row) in v.iter().enumerate().take(2) {
            assert_eq!(row, m.payoff_vector(k));
        }
    }

    #[test]
    fn path_space_values_on_toy_chain() {
        let m = toy_chain::<f64>();
        let table = snell_path_space(&m, &EnumerationCaps::default()).unwrap();
        assert_eq!(table.path_count(2), 8);
        assert!(close(table.value(&[0, 1]), 0.9));
        assert!(close(table.value(&[0]), 0.6375));
        assert!(close(table.value(&[0, 0, 1]), 0.5));
    }

    #[test]
    fn path_equivalence_on_toy_chain() {
        let m = toy_chain::<f64>();
        assert!(check_path_equivalence(&m, &EnumerationCaps::default()).unwrap() <= 1e-12);
        let unit = m.with_constant_criteria(1.0);
        assert_eq!(check_path_equivalence(&unit, &EnumerationCaps::default()).unwrap(), 0.0);
    }

    #[test]
    fn perturbed_values_are_detected() {
        let m = toy_chain::<f64>();
        let table = snell_path_space(&m, &EnumerationCaps::default()).unwrap();
        let mut v = snell_with_criteria(&m);
        v[1].iter_mut().for_each(|x| *x += 0.1);
        assert!(path_equivalence_discrepancy(&m, &table, &v) >= 0.05);
    }

    #[test]
    fn path_cap_is_enforced() {
        let caps = EnumerationCaps { paths: 4, policies: 1 << 20 };
        match snell_path_space(&toy_chain::<f64>(), &caps) {
            Err(Error::EnumerationTooLarge { cap: 4, required: 8, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flow_on_toy_chain() {
        let flow = compute_eta_flow(&toy_chain::<f64>()).unwrap();
        assert_eq!(flow.eta[0], vec![1.0, 0.0]);
        assert!(close(flow.eta[1][0], 0.5) && close(flow.eta[1][1], 0.5));
        assert!(close(flow.masses[0], 0.5) && close(flow.masses[1], 0.75));
        assert!(close(flow.normalizer, 0.375));
        for e in &flow.eta {
            assert!(close(e.iter().sum(), 1.0));
        }
    }

    #[test]
    fn unit_criteria_flow_is_marginal_law() {
        let m = toy_chain::<f64>().with_constant_criteria(1.0);
        let flow = compute_eta_flow(&m).unwrap();
        assert_eq!(flow.normalizer, 1.0);
        // marginal of X_2 from delta_0: (0.5, 0.5) P
        assert!(close(flow.eta[2][0], 0.35) && close(flow.eta[2][1], 0.65));
    }

    #[test]
    fn zero_initial_criteria_degenerate() {
        let mut parts = toy_chain::<f64>().into_parts();
        parts.criteria[0] = vec![0.0, 0.0];
        let m = FiniteChain::from_parts(parts).unwrap();
        assert_eq!(compute_eta_flow(&m), Err(Error::DegenerateFlow { step: 1 }));
    }

    #[test]
    fn optimality_on_toy_chain() {
        let m = toy_chain::<f64>();
        let check = verify_optimality(&m, &EnumerationCaps::default()).unwrap();
        assert!(close(check.best_value, 0.6375));
        assert!(check.gap <= 1e-10);
        assert_eq!(check.policies, 16);
    }

    #[test]
    fn zero_payoff_has_zero_value() {
        let mut parts = toy_chain::<f64>().into_parts();
        parts.payoffs[2] = vec![0.0, 0.0];
        let check = verify_optimality(&FiniteChain::from_parts(parts).unwrap(), &EnumerationCaps::default()).unwrap();
        assert_eq!(check.best_value, 0.0);
    }

    #[test]
    fn policy_cap_is_enforced() {
        let caps = EnumerationCaps { paths: 1_000_000, policies: 8 };
        assert!(matches!(
            verify_optimality(&toy_chain::<f64>(), &caps),
            Err(Error::EnumerationTooLarge { what: "policies", .. })
        ));
    }

    #[test]
    fn normalizer_matches_path_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let m: FiniteChain<f64> = FiniteChain::random(&RandomChainSpec::default(), &mut rng);
            let Ok(flow) = compute_eta_flow(&m) else { continue };
            let n = m.horizon();
            let table = snell_path_space(&m, &EnumerationCaps::default()).unwrap();
            let mut total = 0.0;
            for i in 0..table.path_count(n) {
                let path = table.path(n, i);
                let mut prob = m.initial_law()[path[0]];
                for k in 1..=n {
                    prob *= m.transition(k).get(path[k - 1], path[k]);
                }
                total += prob * criteria_product(&m, &path);
            }
            assert!((flow.normalizer - total).abs() <= 1e-10);
        }
    }

    #[test]
    fn dp_optimality_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let m: FiniteChain<f64> = FiniteChain::random(&RandomChainSpec::default(), &mut rng);
            let v = snell_with_criteria(&m);
            for k in 0..m.horizon() {
                let cont = apply_q(&m, k + 1, &v[k + 1]);
                for x in 0..m.size(k) {
                    let f = m.payoff_vector(k)[x];
                    assert!(v[k][x] >= f && v[k][x] >= cont[x]);
                    assert!(v[k][x] == f || v[k][x] == cont[x]);
                }
            }
        }
    }

    #[test]
    fn single_precision_agrees_with_double() {
        let v32 = snell_with_criteria(&toy_chain::<f32>());
        let v64 = snell_with_criteria(&toy_chain::<f64>());
        for (a, b) in v32.iter().flatten().zip(v64.iter().flatten()) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
        let _ = Matrix::<f32>::identity(2);
    }
}
