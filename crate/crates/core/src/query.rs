//! Query strategies and the adaptive-boundary recurrence.
//!
//! The adaptive boundary (AB) is the sphere around the center enclosing a
//! fraction `q_t` of all samples. Each stage queries the unlabeled samples
//! whose scores sit closest to that boundary; the fraction of abnormal answers
//! `r_t` then moves the boundary inward (`r_t > 0.5`) or outward (`r_t < 0.5`):
//!
//! ```text
//! q_{t+1} = clamp(q_t - 2 (1 - q_t) (r_t - 1/2), q_floor, 1)
//! q_{t+1} = (q_t + q_{t-1}) / 2                          if q_t = 1
//! ```

use std::fmt;
use std::str::FromStr;

use num_traits::{FromPrimitive, Num};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fraction::{self, Fraction};
use crate::scalar::{cmp, Scalar};

pub const DEFAULT_Q1: f64 = 0.8;
pub const DEFAULT_Q_FLOOR: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("no scores")]
    EmptyScores,
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: String },
    #[error("budget {budget} exceeds the unlabeled pool of {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("decision-boundary querying needs a soft-boundary model")]
    RequiresSoftBoundary,
    #[error("pool index {index} has no score (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Adaptive boundary.
    Ab,
    /// High confidence: highest scores first.
    Hc,
    /// Decision boundary: closest to the soft-boundary radius.
    Db,
    Random,
}

impl Strategy {
    pub fn token(self) -> &'static str {
        match self {
            Strategy::Ab => "ab",
            Strategy::Hc => "hc",
            Strategy::Db => "db",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ab" => Ok(Strategy::Ab),
            "hc" => Ok(Strategy::Hc),
            "db" => Ok(Strategy::Db),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown strategy `{other}` (expected ab | hc | db | random)")),
        }
    }
}

/// Score of the k-th smallest sample with `k = ceil(q * n)`, over all samples.
pub fn boundary_threshold<T: Scalar>(all_scores: &[T], q: &Fraction) -> Result<T, QueryError> {
    if all_scores.is_empty() {
        return Err(QueryError::EmptyScores);
    }
    if !fraction::is_positive(q) || !fraction::is_unit_interval(q) {
        return Err(QueryError::OutOfRange {
            name: "q",
            value: q.to_string(),
        });
    }
    Ok(fraction::order_statistic(all_scores, q).expect("non-empty"))
}

fn check_pool<T>(scores: &[T], pool: &[usize], budget: usize) -> Result<(), QueryError> {
    if budget == 0 {
        return Err(QueryError::ZeroBudget);
    }
    if budget > pool.len() {
        return Err(QueryError::BudgetExceedsPool {
            budget,
            pool: pool.len(),
        });
    }
    if let Some(&index) = pool.iter().find(|&&i| i >= scores.len()) {
        return Err(QueryError::IndexOutOfRange { index, n: scores.len() });
    }
    Ok(())
}

/// The `budget` pool indices with the smallest key, ties by smaller index.
fn smallest_by_key<T: Scalar>(pool: &[usize], budget: usize, key: impl Fn(usize) -> T) -> Vec<usize> {
    let mut keyed: Vec<(T, usize)> = pool.iter().map(|&i| (key(i), i)).collect();
    let order = |a: &(T, usize), b: &(T, usize)| cmp(&a.0, &b.0).then(a.1.cmp(&b.1));
    if budget < keyed.len() {
        keyed.select_nth_unstable_by(budget - 1, order);
        keyed.truncate(budget);
    }
    keyed.sort_by(order);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Adaptive-boundary query: unlabeled samples closest to `threshold`.
///
/// `scores` is indexed by sample; `pool` lists the unlabeled indices.
pub fn query_ab<T: Scalar>(scores: &[T], pool: &[usize], threshold: T, budget: usize) -> Result<Vec<usize>, QueryError> {
    check_pool(scores, pool, budget)?;
    Ok(smallest_by_key(pool, budget, |i| (scores[i] - threshold).abs()))
}

/// High-confidence query: highest scores first.
pub fn query_hc<T: Scalar>(scores: &[T], pool: &[usize], budget: usize) -> Result<Vec<usize>, QueryError> {
    check_pool(scores, pool, budget)?;
    Ok(smallest_by_key(pool, budget, |i| -scores[i]))
}

/// Decision-boundary query: closest to the soft-boundary radius `R^2`.
pub fn query_db<T: Scalar>(
    scores: &[T],
    pool: &[usize],
    radius_sq: Option<T>,
    budget: usize,
) -> Result<Vec<usize>, QueryError> {
    let r2 = radius_sq.ok_or(QueryError::RequiresSoftBoundary)?;
    check_pool(scores, pool, budget)?;
    Ok(smallest_by_key(pool, budget, |i| (scores[i] - r2).abs()))
}

/// Uniform sample without replacement from `pool`.
pub fn query_random<R: Rng + ?Sized>(pool: &[usize], budget: usize, rng: &mut R) -> Result<Vec<usize>, QueryError> {
    if budget == 0 {
        return Err(QueryError::ZeroBudget);
    }
    if budget > pool.len() {
        return Err(QueryError::BudgetExceedsPool {
            budget,
            pool: pool.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), budget)
        .into_iter()
        .map(|k| pool[k])
        .collect())
}

/// Numeric types the boundary recurrence can run on: exact rationals or
/// floats.
pub trait BoundaryValue: Clone + Num + PartialOrd + FromPrimitive + fmt::Display {}
impl<Q: Clone + Num + PartialOrd + FromPrimitive + fmt::Display> BoundaryValue for Q {}

fn in_range<Q: BoundaryValue>(name: &'static str, v: &Q, lo: &Q, hi: &Q) -> Result<(), QueryError> {
    if v < lo || v > hi {
        return Err(QueryError::OutOfRange {
            name,
            value: v.to_string(),
        });
    }
    Ok(())
}

/// One step of the boundary recurrence. `q_prev` is only consulted when
/// `q_t = 1`; without it the boundary stays at 1.
pub fn update_q<Q: BoundaryValue>(q_t: &Q, q_prev: Option<&Q>, r_t: &Q, q_floor: &Q) -> Result<Q, QueryError> {
    let zero = Q::zero();
    let one = Q::one();
    let two = one.clone() + one.clone();
    in_range("q_floor", q_floor, &zero, &one)?;
    in_range("q_t", q_t, q_floor, &one)?;
    in_range("r_t", r_t, &zero, &one)?;
    if *q_t == one {
        let prev = q_prev.unwrap_or(q_t);
        in_range("q_prev", prev, q_floor, &one)?;
        return Ok((q_t.clone() + prev.clone()) / two);
    }
    let half = one.clone() / two.clone();
    let delta = two * (one.clone() - q_t.clone()) * (r_t.clone() - half);
    let next = q_t.clone() - delta;
    Ok(if next < *q_floor {
        q_floor.clone()
    } else if next > one {
        one
    } else {
        next
    })
}

/// Current enclosure ratio plus its history and the observed abnormal ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveBoundaryState {
    q_current: Fraction,
    q_prev: Option<Fraction>,
    q_floor: Fraction,
    q_history: Vec<Fraction>,
    r_history: Vec<Fraction>,
}

impl AdaptiveBoundaryState {
    pub fn new(q1: Fraction, q_floor: Fraction) -> Result<Self, QueryError> {
        in_range("q_floor", &q_floor, &Fraction::from_integer(0.into()), &Fraction::from_integer(1.into()))?;
        in_range("q1", &q1, &q_floor, &Fraction::from_integer(1.into()))?;
        Ok(Self {
            q_current: q1.clone(),
            q_prev: None,
            q_floor,
            q_history: vec![q1],
            r_history: Vec::new(),
        })
    }

    /// Builds the state from decimal settings such as `0.8` and `0.05`.
    pub fn from_decimals(q1: f64, q_floor: f64) -> Result<Self, QueryError> {
        let parse = |name, v: f64| {
            fraction::from_decimal(v).ok_or(QueryError::OutOfRange {
                name,
                value: v.to_string(),
            })
        };
        Self::new(parse("q1", q1)?, parse("q_floor", q_floor)?)
    }

    pub fn q_current(&self) -> &Fraction {
        &self.q_current
    }

    pub fn q_floor(&self) -> &Fraction {
        &self.q_floor
    }

    /// `q_1, q_2, ...`, always one longer than [`Self::r_history`].
    pub fn q_history(&self) -> &[Fraction] {
        &self.q_history
    }

    pub fn r_history(&self) -> &[Fraction] {
        &self.r_history
    }

    /// Records `r_t = abnormal / budget` and advances the boundary.
    pub fn record(&mut self, abnormal: usize, budget: usize) -> Result<&Fraction, QueryError> {
        if budget == 0 {
            return Err(QueryError::ZeroBudget);
        }
        let r_t = fraction::from_ratio(abnormal, budget);
        let next = update_q(&self.q_current, self.q_prev.as_ref(), &r_t, &self.q_floor)?;
        self.r_history.push(r_t);
        self.q_prev = Some(std::mem::replace(&mut self.q_current, next.clone()));
        self.q_history.push(next);
        Ok(&self.q_current)
    }
}

#[derive(Serialize, Deserialize)]
struct BoundaryRepr {
    q_current: String,
    q_prev: Option<String>,
    q_floor: String,
    q_history: Vec<String>,
    r_history: Vec<String>,
}

impl Serialize for AdaptiveBoundaryState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let txt = |q: &Fraction| q.to_string();
        BoundaryRepr {
            q_current: txt(&self.q_current),
            q_prev: self.q_prev.as_ref().map(txt),
            q_floor: txt(&self.q_floor),
            q_history: self.q_history.iter().map(txt).collect(),
            r_history: self.r_history.iter().map(txt).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AdaptiveBoundaryState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = BoundaryRepr::deserialize(d)?;
        let parse = |s: &str| s.parse::<Fraction>().map_err(|_| D::Error::custom(format!("bad fraction `{s}`")));
        Ok(Self {
            q_current: parse(&repr.q_current)?,
            q_prev: repr.q_prev.as_deref().map(parse).transpose()?,
            q_floor: parse(&repr.q_floor)?,
            q_history: repr.q_history.iter().map(|s| parse(s)).collect::<Result<_, _>>()?,
            r_history: repr.r_history.iter().map(|s| parse(s)).collect::<Result<_, _>>()?,
        })
    }
}
