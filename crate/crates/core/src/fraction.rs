//! Exact rational arithmetic for enclosure ratios and order-statistic ranks.
//!
//! Boundary fractions such as `q = 0.8` are carried as exact rationals so that
//! the boundary recurrence and the rank `k = ceil(q * n)` never suffer from
//! binary rounding (`2 * 0.8 - 1` is not `0.6` in `f64`).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::scalar::{cmp, Scalar};

pub type Fraction = BigRational;

/// Reads the shortest decimal representation of `v` as an exact rational,
/// so `0.8` becomes `4/5` rather than the nearest binary fraction.
pub fn from_decimal(v: f64) -> Option<Fraction> {
    if !v.is_finite() {
        return None;
    }
    let text = format!("{v}");
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (whole, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let numer: BigInt = format!("{whole}{frac}").parse().ok()?;
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let value = Fraction::new(numer, denom);
    Some(if negative { -value } else { value })
}

pub fn from_ratio(numer: usize, denom: usize) -> Fraction {
    Fraction::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn to_f64(q: &Fraction) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// `ceil(q * n)` computed exactly.
pub fn ceil_count(q: &Fraction, n: usize) -> usize {
    let scaled = q * Fraction::from_integer(BigInt::from(n));
    let ceiled = scaled.ceil().to_integer();
    if ceiled.is_negative() {
        0
    } else {
        ceiled.to_usize().unwrap_or(usize::MAX)
    }
}

/// The k-th smallest value with `k = ceil(p * n)` clamped to `[1, n]`.
/// Returns `None` for an empty slice.
pub fn order_statistic<T: Scalar>(values: &[T], p: &Fraction) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let k = ceil_count(p, values.len()).clamp(1, values.len());
    let mut sorted = values.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, cmp);
    Some(*kth)
}

pub fn half() -> Fraction {
    from_ratio(1, 2)
}

pub fn is_unit_interval(q: &Fraction) -> bool {
    !q.is_negative() && q <= &Fraction::one()
}

pub fn is_positive(q: &Fraction) -> bool {
    q > &Fraction::zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parse_is_exact() {
        assert_eq!(from_decimal(0.8).unwrap(), from_ratio(4, 5));
        assert_eq!(from_decimal(0.05).unwrap(), from_ratio(1, 20));
        assert_eq!(from_decimal(1.0).unwrap(), Fraction::one());
        assert_eq!(from_decimal(-0.5).unwrap(), -half());
        assert!(from_decimal(f64::NAN).is_none());
    }

    #[test]
    fn ceil_count_has_no_rounding_drift() {
        // 0.7 * 10 evaluates to 7.000000000000001 in f64.
        assert_eq!(ceil_count(&from_decimal(0.7).unwrap(), 10), 7);
        assert_eq!(ceil_count(&from_decimal(0.8).unwrap(), 5), 4);
        assert_eq!(ceil_count(&from_ratio(1, 3), 4), 2);
        assert_eq!(ceil_count(&Fraction::zero(), 4), 0);
    }

    #[test]
    fn order_statistic_clamps_rank() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(order_statistic(&v, &Fraction::zero()), Some(1.0));
        assert_eq!(order_statistic(&v, &Fraction::one()), Some(3.0));
        assert_eq!(order_statistic::<f64>(&[], &half()), None);
    }
}
