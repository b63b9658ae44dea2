use super::khintchine::{khintchine_constant, smallest_even_at_least};
use crate::error::{Error, Result};
use crate::model::FiniteChain;
use crate::oracle::apply_q;
use crate::scalar::Scalar;

/// `h_k(y) = max_x H_k(x, y) / min_x H_k(x, y)` over the rows of `M_k`.
///
/// A zero entry in column `y` makes `h_k(y)` infinite.
pub fn sup_ratio_h<T: Scalar>(model: &FiniteChain<T>, k: usize) -> Result<Vec<T>> {
    if k == 0 || k > model.horizon() {
        return Err(Error::Contract(format!("h_k needs 1 <= k <= n, got k={k}")));
    }
    let m = model.transition(k);
    Ok((0..m.cols())
        .map(|y| {
            let column = (0..m.rows()).map(|x| m.get(x, y));
            let (lo, hi) = column.fold((T::infinity(), T::zero()), |(lo, hi), h| (lo.min(h), hi.max(h)));
            if lo <= T::zero() {
                T::infinity()
            } else {
                hi / lo
            }
        })
        .collect())
}

/// Constants and value of the non-asymptotic `L_p` error bound at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<T> {
    pub p: u32,
    /// Smallest even integer `>= p`.
    pub p_prime: u32,
    pub a_p: T,
    pub n_particles: usize,
    pub k: usize,
    pub state: usize,
    /// `q_{k,l}` for `l = k..n`.
    pub q: Vec<T>,
    /// `b_{k,l} = ||h_{k+1}|| prod_{m=k}^{l-1} ||G_m||`, bounding `||Q^_{k,l}(1)||`.
    pub b: Vec<T>,
    /// `[Q_{k,l+1}(h_{l+1}^{p'-1} v_{l+1}^{p'})(x)]^{1/p'}` for `l = k..n`.
    pub terms: Vec<T>,
    /// `sum_l 2 a(p) / sqrt(N) q_{k,l} terms_l`.
    pub bound: T,
    /// `c = sum_l 2 q_{k,l} terms_l`, the concentration constant.
    pub concentration_constant: T,
    pub diagnostic: Option<String>,
}

/// Bound on `|| v^_k(x) - v_k(x) ||_{L_p}` from the exact value tables.
///
/// The sum runs over `l = k..n`, including the first-step term `l = k`
/// (empty criteria product, `Q_{k,k+1} = Q_{k+1}`).
pub fn theoretical_lp_bound<T: Scalar>(
    model: &FiniteChain<T>,
    values: &[Vec<T>],
    p: u32,
    n_particles: usize,
    k: usize,
    x: usize,
) -> Result<BoundReport<T>> {
    let n = model.horizon();
    if k > n || x >= model.size(k) {
        return Err(Error::Contract(format!("query point ({k}, {x}) outside the model")));
    }
    if n_particles == 0 {
        return Err(Error::Contract("particle count must be at least 1".into()));
    }
    let a_p = khintchine_constant::<T>(p)?;
    let p_prime = smallest_even_at_least(p);
    let pp = T::from_count(p_prime as usize);
    let exponent = (pp - T::one()) / pp;
    let sqrt_n = T::from_count(n_particles).sqrt();

    let mut report = BoundReport {
        p,
        p_prime,
        a_p,
        n_particles,
        k,
        state: x,
        q: Vec::new(),
        b: Vec::new(),
        terms: Vec::new(),
        bound: T::zero(),
        concentration_constant: T::zero(),
        diagnostic: None,
    };
    if k == n {
        return Ok(report);
    }

    let h: Vec<Vec<T>> = (1..=n).map(|j| sup_ratio_h(model, j)).collect::<Result<_>>()?;
    let h_at = |j: usize| &h[j - 1];
    let sup = |v: &[T]| v.iter().copied().fold(T::zero(), T::max);
    if let Some(j) = (k + 1..=n).find(|&j| h_at(j).iter().any(|v| v.is_infinite())) {
        report.diagnostic = Some(format!("h_{j} is infinite (zero transition density); the bound is vacuous"));
        report.bound = T::infinity();
        report.concentration_constant = T::infinity();
        return Ok(report);
    }
    let h_norm = sup(h_at(k + 1));
    let g_norm = |m: usize| model.criteria_bounds()[m];

    for l in k..n {
        let g_prod = (k..l).fold(T::one(), |acc, m| acc * g_norm(m));
        let b = h_norm * g_prod;
        let q = (g_norm(l) * b).powf(exponent);
        // Q_{k,l+1} = Q_{k+1} .. Q_{l+1} applied to h_{l+1}^{p'-1} v_{l+1}^{p'}
        let mut f: Vec<T> = h_at(l + 1)
            .iter()
            .zip(&values[l + 1])
            .map(|(&hv, &v)| hv.powi(p_prime as i32 - 1) * v.powi(p_prime as i32))
            .collect();
        for j in (k + 1..=l + 1).rev() {
            f = apply_q(model, j, &f);
        }
        let term = f[x].powf(T::one() / pp);
        report.q.push(q);
        report.b.push(b);
        report.terms.push(term);
        report.concentration_constant = report.concentration_constant + T::lit(2.0) * q * term;
    }
    report.bound = a_p * report.concentration_constant / sqrt_n;
    Ok(report)
}
