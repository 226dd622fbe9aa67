//! Deep SVDD: objectives, anomaly scores, hypersphere center and radius.
//!
//! The anomaly score of `x` is `||phi(x) - c||^2`. Two sample losses are
//! supported: one-class (`s`) and soft-boundary (`nu * R^2 + max(0, s - R^2)`,
//! with the `nu * R^2` term kept per sample).

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fraction;
use crate::nn::{DenseNet, NnError};
use crate::scalar::{ordered_sum, Scalar};

/// Minimum magnitude of each center coordinate.
pub const CENTER_EPS: f64 = 0.1;

/// Epochs before the soft-boundary radius is first fitted.
pub const RADIUS_WARMUP_EPOCHS: usize = 10;

const MODEL_MAGIC: &str = "activesvdd-svdd 1";

#[derive(Debug, Error)]
pub enum SvddError {
    #[error("empty input")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("soft-boundary model has no radius")]
    MissingRadius,
    #[error("operation requires a soft-boundary model")]
    NotSoftBoundary,
    #[error("nu must lie in (0, 1], got {0}")]
    InvalidNu(f64),
    #[error("center must be finite")]
    NonFiniteCenter,
    #[error("index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("model checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Objective {
    #[serde(rename = "oc")]
    OneClass,
    #[serde(rename = "sb")]
    SoftBoundary,
}

impl Objective {
    pub fn token(self) -> &'static str {
        match self {
            Objective::OneClass => "oc",
            Objective::SoftBoundary => "sb",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oc" => Ok(Objective::OneClass),
            "sb" => Ok(Objective::SoftBoundary),
            other => Err(format!("unknown objective `{other}` (expected oc | sb)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvddModel<T> {
    encoder: DenseNet<T>,
    center: Array1<T>,
    objective: Objective,
    nu: T,
    radius_sq: Option<T>,
}

impl<T: Scalar> SvddModel<T> {
    /// A soft-boundary model starts with `R^2 = 0`.
    pub fn new(encoder: DenseNet<T>, center: Array1<T>, objective: Objective, nu: T) -> Result<Self, SvddError> {
        if center.len() != encoder.output_width() {
            return Err(SvddError::DimensionMismatch {
                expected: encoder.output_width(),
                found: center.len(),
            });
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(SvddError::NonFiniteCenter);
        }
        if !(nu > T::zero() && nu <= T::one()) {
            return Err(SvddError::InvalidNu(nu.as_f64()));
        }
        let radius_sq = (objective == Objective::SoftBoundary).then(T::zero);
        Ok(Self {
            encoder,
            center,
            objective,
            nu,
            radius_sq,
        })
    }

    pub fn encoder(&self) -> &DenseNet<T> {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.encoder
    }

    pub fn center(&self) -> &Array1<T> {
        &self.center
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn radius_sq(&self) -> Option<T> {
        self.radius_sq
    }

    pub fn set_radius_sq(&mut self, r2: T) -> Result<(), SvddError> {
        match self.objective {
            Objective::SoftBoundary => {
                self.radius_sq = Some(r2);
                Ok(())
            }
            Objective::OneClass => Err(SvddError::NotSoftBoundary),
        }
    }

    /// Encoder outputs for every row.
    pub fn features(&self, data: ArrayView2<'_, T>) -> Result<Array2<T>, SvddError> {
        Ok(self.encoder.predict(data)?)
    }

    pub fn scores(&self, data: ArrayView2<'_, T>) -> Result<Array1<T>, SvddError> {
        Ok(squared_distances(self.features(data)?.view(), self.center.view()))
    }

    pub fn score(&self, x: ArrayView1<'_, T>) -> Result<T, SvddError> {
        let row = x.insert_axis(Axis(0));
        Ok(self.scores(row)?[0])
    }

    /// Per-sample loss for a given score.
    pub fn sample_loss(&self, s: T) -> Result<T, SvddError> {
        match self.objective {
            Objective::OneClass => Ok(s),
            Objective::SoftBoundary => {
                let r2 = self.radius_sq.ok_or(SvddError::MissingRadius)?;
                Ok(soft_boundary_sample(s, self.nu, r2))
            }
        }
    }

    /// Mean sample loss over encoder outputs, with its gradient with respect
    /// to those outputs.
    pub(crate) fn mean_loss_and_grad(&self, features: ArrayView2<'_, T>) -> Result<(T, Array2<T>), SvddError> {
        let m = features.nrows();
        if m == 0 {
            return Err(SvddError::Empty);
        }
        let scores = squared_distances(features, self.center.view());
        let losses = scores.iter().map(|&s| self.sample_loss(s)).collect::<Result<Vec<_>, _>>()?;
        let loss = ordered_sum(losses) / T::from_usize(m).unwrap();
        let scale = T::lit(2.0) / T::from_usize(m).unwrap();
        let mut grad = &features - &self.center.view().insert_axis(Axis(0));
        for (mut row, &s) in grad.rows_mut().into_iter().zip(&scores) {
            let active = match self.objective {
                Objective::OneClass => true,
                Objective::SoftBoundary => s > self.radius_sq.unwrap_or_else(T::zero),
            };
            if active {
                row *= scale;
            } else {
                row.fill(T::zero());
            }
        }
        Ok((loss, grad))
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), SvddError> {
        let io = |e: std::io::Error| SvddError::Nn(NnError::Io(e));
        writeln!(out, "{MODEL_MAGIC}").map_err(io)?;
        writeln!(out, "objective {}", self.objective).map_err(io)?;
        writeln!(out, "nu {:?}", self.nu).map_err(io)?;
        match self.radius_sq {
            Some(r2) => writeln!(out, "radius_sq {r2:?}").map_err(io)?,
            None => writeln!(out, "radius_sq none").map_err(io)?,
        }
        write!(out, "center ").map_err(io)?;
        crate::nn::checkpoint_values(&mut out, self.center.iter().copied()).map_err(io)?;
        self.encoder.write_checkpoint(out)?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self, SvddError> {
        let bad = |m: &str| SvddError::Checkpoint(m.to_string());
        let mut lines = input.lines();
        let mut next = |key: &str| -> Result<String, SvddError> {
            let line = lines
                .next()
                .ok_or_else(|| bad("unexpected end"))?
                .map_err(|e| SvddError::Nn(NnError::Io(e)))?;
            if key.is_empty() {
                return Ok(line);
            }
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| SvddError::Checkpoint(format!("expected `{key}` line, found `{line}`")))
        };
        if next("")?.trim() != MODEL_MAGIC {
            return Err(bad("unrecognized header"));
        }
        let objective: Objective = next("objective")?.trim().parse().map_err(|e: String| bad(&e))?;
        let nu: T = next("nu")?.trim().parse().map_err(|_| bad("bad nu"))?;
        let radius_text = next("radius_sq")?;
        let radius_sq = match radius_text.trim() {
            "none" => None,
            v => Some(v.parse::<T>().map_err(|_| bad("bad radius"))?),
        };
        let center_text = next("center")?;
        let center: Vec<T> = center_text
            .split_whitespace()
            .map(|v| v.parse::<T>().map_err(|_| bad("bad center value")))
            .collect::<Result<_, _>>()?;
        let encoder = DenseNet::read_from_lines(&mut lines)?;
        let mut model = SvddModel::new(encoder, Array1::from(center), objective, nu)?;
        match (objective, radius_sq) {
            (Objective::SoftBoundary, Some(r2)) => model.radius_sq = Some(r2),
            (Objective::OneClass, None) => {}
            _ => return Err(bad("radius present iff objective is sb")),
        }
        Ok(model)
    }
}

pub fn soft_boundary_sample<T: Scalar>(s: T, nu: T, r2: T) -> T {
    nu * r2 + (s - r2).max(T::zero())
}

/// Row-wise `||f_i - c||^2`.
pub fn squared_distances<T: Scalar>(features: ArrayView2<'_, T>, center: ArrayView1<'_, T>) -> Array1<T> {
    features
        .rows()
        .into_iter()
        .map(|row| ordered_sum(row.iter().zip(center).map(|(&f, &c)| (f - c) * (f - c))))
        .collect()
}

/// Mean encoder output with every coordinate pushed to magnitude at least
/// `eps` (sign preserved, zero counts as positive).
pub fn init_center<T: Scalar>(encoder: &DenseNet<T>, data: ArrayView2<'_, T>, eps: T) -> Result<Array1<T>, SvddError> {
    if data.nrows() == 0 {
        return Err(SvddError::Empty);
    }
    let features = encoder.predict(data)?;
    Ok(snap_center(&features, eps))
}

pub(crate) fn snap_center<T: Scalar>(features: &Array2<T>, eps: T) -> Array1<T> {
    let n = T::from_usize(features.nrows()).unwrap();
    let mean = features.sum_axis(Axis(0)) / n;
    mean.mapv(|c| {
        if c.abs() < eps {
            if c >= T::zero() {
                eps
            } else {
                -eps
            }
        } else {
            c
        }
    })
}

pub fn oc_loss<T: Scalar>(model: &SvddModel<T>, batch: ArrayView2<'_, T>) -> Result<T, SvddError> {
    if batch.nrows() == 0 {
        return Err(SvddError::Empty);
    }
    let scores = model.scores(batch)?;
    Ok(ordered_sum(scores.iter().copied()) / T::from_usize(scores.len()).unwrap())
}

pub fn sb_loss<T: Scalar>(model: &SvddModel<T>, batch: ArrayView2<'_, T>) -> Result<T, SvddError> {
    let r2 = model.radius_sq.ok_or(SvddError::MissingRadius)?;
    if batch.nrows() == 0 {
        return Err(SvddError::Empty);
    }
    let scores = model.scores(batch)?;
    let losses = scores.iter().map(|&s| soft_boundary_sample(s, model.nu, r2));
    Ok(ordered_sum(losses) / T::from_usize(scores.len()).unwrap())
}

/// Loss of the model's own objective averaged over `batch`.
pub fn base_loss<T: Scalar>(model: &SvddModel<T>, batch: ArrayView2<'_, T>) -> Result<T, SvddError> {
    match model.objective {
        Objective::OneClass => oc_loss(model, batch),
        Objective::SoftBoundary => sb_loss(model, batch),
    }
}

/// `R^2` as the k-th smallest score with `k = ceil((1 - nu) * n)`, clamped to
/// at least 1.
pub fn update_radius<T: Scalar>(scores: &[T], nu: T) -> Result<T, SvddError> {
    if scores.is_empty() {
        return Err(SvddError::Empty);
    }
    let nu_exact = fraction::from_decimal(nu.as_f64()).ok_or(SvddError::InvalidNu(nu.as_f64()))?;
    let p = fraction::from_ratio(1, 1) - nu_exact;
    Ok(fraction::order_statistic(scores, &p).expect("non-empty"))
}

/// Projection of the mean one-class gradient onto sample `i`'s gradient:
/// `<g_i, g_bar> / |g_i|` with `g_i = 2 (phi_i - c)`. Zero when `g_i = 0`.
pub fn effective_gradient<T: Scalar>(features: ArrayView2<'_, T>, center: ArrayView1<'_, T>, i: usize) -> Result<T, SvddError> {
    let n = features.nrows();
    if i >= n {
        return Err(SvddError::IndexOutOfRange { index: i, n });
    }
    let two = T::lit(2.0);
    let diffs = &features - &center.insert_axis(Axis(0));
    let g_bar = diffs.sum_axis(Axis(0)) * (two / T::from_usize(n).unwrap());
    let g_i = diffs.row(i).mapv(|v| v * two);
    let norm = g_i.dot(&g_i).sqrt();
    if norm.is_zero() {
        return Ok(T::zero());
    }
    Ok(g_i.dot(&g_bar) / norm)
}
