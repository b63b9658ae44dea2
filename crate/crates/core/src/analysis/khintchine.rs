use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Falling factorial `(m)_q = m (m - 1) .. (m - q + 1) = m! / (m - q)!`.
pub fn falling_factorial<T: Scalar>(m: u32, q: u32) -> T {
    (0..q).fold(T::one(), |acc, i| acc * T::from_count((m - i) as usize))
}

/// Smallest even integer `p' >= p`.
pub fn smallest_even_at_least(p: u32) -> u32 {
    p + (p % 2)
}

/// Moment constant `a(p)` of the Khintchine-type inequality for empirical
/// averages:
///
/// ```text
/// a(2q)^(2q)     = (2q)_q 2^(-q)
/// a(2q+1)^(2q+1) = (2q+1)_(q+1) / sqrt(q + 1/2) 2^(-(q + 1/2))
/// ```
///
/// `(m)_q` is the falling factorial, so that `a(2) = 1`.
pub fn khintchine_constant<T: Scalar>(p: u32) -> Result<T> {
    if p < 1 {
        return Err(Error::Contract(format!("Khintchine order must be >= 1, got {p}")));
    }
    let q = p / 2;
    let power = if p.is_multiple_of(2) {
        falling_factorial::<T>(p, q) * T::lit(2.0).powi(-(q as i32))
    } else {
        let half = T::from_count(q as usize) + T::lit(0.5);
        falling_factorial::<T>(p, q + 1) / half.sqrt() * T::lit(2.0).powf(-half)
    };
    Ok(power.powf(T::one() / T::from_count(p as usize)))
}
