//! Label bookkeeping and the semi-supervised training objectives.
//!
//! Three methods share one trainer:
//!
//! * `nce`: base loss over `U ∪ L_N ∖ Q_A^PS` plus the contrastive pair term
//!   `-(1 / (|L_N| + |L_A|)) Σ_{i ∈ L_N} Σ_{j ∈ L_A} ln(1 - s_i / (s_i + s_j))`.
//! * `dsad`: base loss over `U ∪ L_N` plus `η · mean_{j ∈ L_A} 1 / (s_j + 1e-6)`.
//! * `exclude`: base loss over `U ∪ L_N`; labeled anomalies are dropped.
//!
//! The base loss is the model's own sample loss, which for a one-class model
//! is the score itself.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;
use crate::nn::{shuffled_batches, Adam, Gradients, NnError};
use crate::scalar::{cmp, ordered_sum, Scalar};
use crate::svdd::{squared_distances, update_radius, Objective, SvddError, SvddModel};

/// Denominator guard for the contrast ratio when both scores vanish.
pub const NCE_SCORE_EPS: f64 = 1e-9;
/// Upper clamp on the contrast ratio before taking `ln(1 - h)`.
pub const NCE_MAX_RATIO: f64 = 1.0 - 1e-12;
/// Offset added to labeled-anomaly scores before inversion in DSAD.
pub const DSAD_SCORE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SslError {
    #[error("index {index} is not in the unlabeled pool")]
    NotUnlabeled { index: usize },
    #[error("index {index} appears twice in one labeling batch")]
    DuplicateIndex { index: usize },
    #[error("the compactness set is empty")]
    EmptyCompactSet,
    #[error("invalid training setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Svdd(#[from] SvddError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SslMethod {
    Nce,
    Dsad,
    Exclude,
}

impl SslMethod {
    pub fn token(self) -> &'static str {
        match self {
            SslMethod::Nce => "nce",
            SslMethod::Dsad => "dsad",
            SslMethod::Exclude => "exclude",
        }
    }
}

impl fmt::Display for SslMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SslMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nce" => Ok(SslMethod::Nce),
            "dsad" => Ok(SslMethod::Dsad),
            "exclude" => Ok(SslMethod::Exclude),
            other => Err(format!("unknown ssl method `{other}` (expected nce | dsad | exclude)")),
        }
    }
}

/// Samples labeled in one stage, split by answer, in query order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLabels {
    pub normal: Vec<usize>,
    pub abnormal: Vec<usize>,
}

impl StageLabels {
    pub fn len(&self) -> usize {
        self.normal.len() + self.abnormal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Disjoint unlabeled, labeled-normal and labeled-abnormal index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelState {
    n: usize,
    unlabeled: BTreeSet<usize>,
    normal: BTreeSet<usize>,
    abnormal: BTreeSet<usize>,
    stages: Vec<StageLabels>,
}

impl LabelState {
    /// Everything unlabeled.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            unlabeled: (0..n).collect(),
            normal: BTreeSet::new(),
            abnormal: BTreeSet::new(),
            stages: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn normal(&self) -> &BTreeSet<usize> {
        &self.normal
    }

    pub fn abnormal(&self) -> &BTreeSet<usize> {
        &self.abnormal
    }

    pub fn stages(&self) -> &[StageLabels] {
        &self.stages
    }

    pub fn labeled_count(&self) -> usize {
        self.normal.len() + self.abnormal.len()
    }

    pub fn label_of(&self, index: usize) -> Option<Label> {
        if self.normal.contains(&index) {
            Some(Label::Normal)
        } else if self.abnormal.contains(&index) {
            Some(Label::Abnormal)
        } else {
            None
        }
    }

    /// Moves one stage's answers out of `U`. Either every answer is applied
    /// or none is.
    pub fn apply(&mut self, answers: &[(usize, Label)]) -> Result<&StageLabels, SslError> {
        let mut seen = BTreeSet::new();
        for &(index, _) in answers {
            if !self.unlabeled.contains(&index) {
                return Err(SslError::NotUnlabeled { index });
            }
            if !seen.insert(index) {
                return Err(SslError::DuplicateIndex { index });
            }
        }
        let mut record = StageLabels::default();
        for &(index, label) in answers {
            self.unlabeled.remove(&index);
            match label {
                Label::Normal => {
                    self.normal.insert(index);
                    record.normal.push(index);
                }
                Label::Abnormal => {
                    self.abnormal.insert(index);
                    record.abnormal.push(index);
                }
            }
        }
        self.stages.push(record);
        Ok(self.stages.last().expect("just pushed"))
    }

    /// Whether `U`, `L_N` and `L_A` partition `0..n`.
    pub fn is_partition(&self) -> bool {
        let total = self.unlabeled.len() + self.normal.len() + self.abnormal.len();
        total == self.n
            && self.normal.is_disjoint(&self.unlabeled)
            && self.abnormal.is_disjoint(&self.unlabeled)
            && self.normal.is_disjoint(&self.abnormal)
            && self
                .unlabeled
                .iter()
                .chain(&self.normal)
                .chain(&self.abnormal)
                .all(|&i| i < self.n)
    }
}

/// Median with the mean of the two middle values for even counts.
pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(cmp);
    let m = sorted.len();
    Some(if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / T::lit(2.0)
    })
}

/// Unlabeled samples scoring strictly above the median labeled-anomaly score.
pub fn pseudo_abnormal<T: Scalar>(scores: &[T], unlabeled: &BTreeSet<usize>, abnormal: &BTreeSet<usize>) -> BTreeSet<usize> {
    let anomaly_scores: Vec<T> = abnormal.iter().map(|&j| scores[j]).collect();
    match median(&anomaly_scores) {
        None => BTreeSet::new(),
        Some(cut) => unlabeled.iter().copied().filter(|&i| scores[i] > cut).collect(),
    }
}

/// Index lists a training phase draws from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainingSets {
    /// Rows of the mini-batched base-loss term.
    pub compact: Vec<usize>,
    pub normal: Vec<usize>,
    pub abnormal: Vec<usize>,
}

impl TrainingSets {
    /// Every sample in the base term, no labels.
    pub fn unsupervised(n: usize) -> Self {
        Self {
            compact: (0..n).collect(),
            ..Self::default()
        }
    }

    /// Sets for `method` given the labels and the stage's pseudo-abnormal set.
    pub fn for_method(method: SslMethod, labels: &LabelState, pseudo_abnormal: &BTreeSet<usize>) -> Self {
        let mut compact: BTreeSet<usize> = labels.unlabeled.union(&labels.normal).copied().collect();
        if method == SslMethod::Nce {
            compact.retain(|i| !pseudo_abnormal.contains(i));
        }
        Self {
            compact: compact.into_iter().collect(),
            normal: labels.normal.iter().copied().collect(),
            abnormal: labels.abnormal.iter().copied().collect(),
        }
    }
}

/// Contrast ratio `h = s_i / (s_i + s_j)`. The denominator gets
/// [`NCE_SCORE_EPS`] only when both scores are below it.
pub fn nce_pair_term<T: Scalar>(s_i: T, s_j: T) -> T {
    pair_ratio(s_i, s_j).0
}

/// `(h, dh/ds_i, dh/ds_j)`.
fn pair_ratio<T: Scalar>(s_i: T, s_j: T) -> (T, T, T) {
    let eps = T::lit(NCE_SCORE_EPS);
    let guard = if s_i < eps && s_j < eps { eps } else { T::zero() };
    let denom = s_i + s_j + guard;
    let d2 = denom * denom;
    (s_i / denom, (s_j + guard) / d2, -s_i / d2)
}

/// `(-ln(1 - h), d/ds_i, d/ds_j)` with `h` clamped to [`NCE_MAX_RATIO`].
fn pair_loss<T: Scalar>(s_i: T, s_j: T) -> (T, T, T) {
    let (h, dh_i, dh_j) = pair_ratio(s_i, s_j);
    let cap = T::lit(NCE_MAX_RATIO);
    if h > cap {
        return (-(T::one() - cap).ln(), T::zero(), T::zero());
    }
    let outer = T::one() / (T::one() - h);
    (-(T::one() - h).ln(), outer * dh_i, outer * dh_j)
}

/// Pair term of the NCE loss over precomputed scores.
pub fn nce_contrast<T: Scalar>(normal_scores: &[T], abnormal_scores: &[T]) -> T {
    if normal_scores.is_empty() || abnormal_scores.is_empty() {
        return T::zero();
    }
    let m = T::from_usize(normal_scores.len() + abnormal_scores.len()).unwrap();
    let sum = ordered_sum(
        normal_scores
            .iter()
            .flat_map(|&si| abnormal_scores.iter().map(move |&sj| pair_loss(si, sj).0)),
    );
    sum / m
}

/// Anomaly term of DSAD over precomputed scores.
pub fn dsad_repulsion<T: Scalar>(abnormal_scores: &[T], eta: T) -> T {
    if abnormal_scores.is_empty() {
        return T::zero();
    }
    let eps = T::lit(DSAD_SCORE_EPS);
    let m = T::from_usize(abnormal_scores.len()).unwrap();
    eta * ordered_sum(abnormal_scores.iter().map(|&s| T::one() / (s + eps))) / m
}

/// Training objective: a method plus its weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SslObjective<T> {
    pub method: SslMethod,
    pub eta: T,
}

impl<T: Scalar> SslObjective<T> {
    pub fn new(method: SslMethod, eta: T) -> Self {
        Self { method, eta }
    }

    /// Plain base loss over the compact set.
    pub fn unsupervised() -> Self {
        Self::new(SslMethod::Exclude, T::one())
    }

    fn uses_normals(&self) -> bool {
        self.method == SslMethod::Nce
    }

    fn uses_anomalies(&self) -> bool {
        matches!(self.method, SslMethod::Nce | SslMethod::Dsad)
    }

    /// Loss with the base term averaged over the whole compact set.
    pub fn loss(&self, model: &SvddModel<T>, data: ArrayView2<'_, T>, sets: &TrainingSets) -> Result<T, SslError> {
        if sets.compact.is_empty() {
            return Err(SslError::EmptyCompactSet);
        }
        let scores_of = |idx: &[usize]| -> Result<Vec<T>, SslError> {
            if idx.is_empty() {
                return Ok(Vec::new());
            }
            Ok(model.scores(data.select(Axis(0), idx).view())?.to_vec())
        };
        let compact = scores_of(&sets.compact)?;
        let samples = compact.iter().map(|&s| model.sample_loss(s)).collect::<Result<Vec<_>, _>>()?;
        let mut loss = ordered_sum(samples) / T::from_usize(compact.len()).unwrap();
        if self.uses_anomalies() && !sets.abnormal.is_empty() {
            let abnormal = scores_of(&sets.abnormal)?;
            loss += match self.method {
                    SslMethod::Nce => nce_contrast(&scores_of(&sets.normal)?, &abnormal),
                    _ => dsad_repulsion(&abnormal, self.eta),
                };
        }
        Ok(loss)
    }

    /// Loss and encoder gradient for one mini-batch of compact rows, with the
    /// labeled terms evaluated over the full labeled sets. All rows share one
    /// forward and one backward pass.
    pub fn batch_loss_and_grad(
        &self,
        model: &SvddModel<T>,
        data: ArrayView2<'_, T>,
        batch: &[usize],
        sets: &TrainingSets,
    ) -> Result<(T, Gradients<T>), SslError> {
        if batch.is_empty() {
            return Err(SslError::EmptyCompactSet);
        }
        let normals: &[usize] = if self.uses_normals() { &sets.normal } else { &[] };
        let anomalies: &[usize] = if self.uses_anomalies() { &sets.abnormal } else { &[] };
        let rows: Vec<usize> = batch.iter().chain(normals).chain(anomalies).copied().collect();
        let (features, tape) = model.encoder().forward(data.select(Axis(0), &rows).view())?;
        let (mb, ln) = (batch.len(), normals.len());
        let (base, base_grad) = model.mean_loss_and_grad(features.slice(s![..mb, ..]))?;
        let mut grad = Array2::zeros(features.raw_dim());
        grad.slice_mut(s![..mb, ..]).assign(&base_grad);
        let mut loss = base;

        // d loss / d s for each labeled row, chained through 2 (phi - c) below
        let labeled = features.slice(s![mb.., ..]);
        let scores = squared_distances(labeled, model.center().view());
        let mut dscore = vec![T::zero(); scores.len()];
        match self.method {
            SslMethod::Nce if ln > 0 && !anomalies.is_empty() => {
                let m = T::from_usize(ln + anomalies.len()).unwrap();
                let mut terms = Vec::with_capacity(ln * anomalies.len());
                for i in 0..ln {
                    for j in ln..scores.len() {
                        let (value, d_i, d_j) = pair_loss(scores[i], scores[j]);
                        terms.push(value);
                        dscore[i] += d_i / m;
                        dscore[j] += d_j / m;
                    }
                }
                loss += ordered_sum(terms) / m;
            }
            SslMethod::Dsad if !anomalies.is_empty() => {
                let eps = T::lit(DSAD_SCORE_EPS);
                let scale = self.eta / T::from_usize(anomalies.len()).unwrap();
                for (d, &s) in dscore.iter_mut().zip(&scores) {
                    *d = -scale / ((s + eps) * (s + eps));
                }
                loss += dsad_repulsion(scores.as_slice().expect("contiguous"), self.eta);
            }
            _ => {}
        }
        let two = T::lit(2.0);
        for (k, &d) in dscore.iter().enumerate() {
            if d != T::zero() {
                let diff = &features.row(mb + k) - model.center();
                grad.row_mut(mb + k).assign(&(diff * (two * d)));
            }
        }
        let back = model.encoder().backward(&tape, grad.view())?;
        Ok((loss, back.params))
    }
}

/// Full-data NCE loss: base term over the compact set plus the
/// pair term.
pub fn nce_loss<T: Scalar>(model: &SvddModel<T>, data: ArrayView2<'_, T>, sets: &TrainingSets) -> Result<T, SslError> {
    SslObjective::new(SslMethod::Nce, T::one()).loss(model, data, sets)
}

pub fn dsad_loss<T: Scalar>(model: &SvddModel<T>, data: ArrayView2<'_, T>, sets: &TrainingSets, eta: T) -> Result<T, SslError> {
    SslObjective::new(SslMethod::Dsad, eta).loss(model, data, sets)
}

pub fn exclusion_loss<T: Scalar>(model: &SvddModel<T>, data: ArrayView2<'_, T>, sets: &TrainingSets) -> Result<T, SslError> {
    SslObjective::unsupervised().loss(model, data, sets)
}

/// Settings of one training phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs before the soft-boundary radius is refitted after every epoch.
    pub radius_warmup: usize,
}

/// Trains `model` for one phase and returns the mean batch loss of every
/// epoch. A soft-boundary radius is refitted on the
/// compact-set scores at the end of each epoch past the warm-up.
pub fn train_phase<T: Scalar, R: Rng + ?Sized>(
    model: &mut SvddModel<T>,
    data: ArrayView2<'_, T>,
    sets: &TrainingSets,
    objective: &SslObjective<T>,
    config: &PhaseConfig,
    adam: &mut Adam<T>,
    rng: &mut R,
) -> Result<Vec<T>, SslError> {
    if sets.compact.is_empty() {
        return Err(SslError::EmptyCompactSet);
    }
    if config.batch_size == 0 {
        return Err(SslError::InvalidSetting("batch size must be positive".into()));
    }
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = shuffled_batches(&sets.compact, config.batch_size, rng);
        let mut losses = Vec::with_capacity(batches.len());
        for batch in &batches {
            let (loss, grads) = objective.batch_loss_and_grad(model, data, batch, sets)?;
            adam.step(model.encoder_mut(), &grads)?;
            losses.push(loss);
        }
        trace.push(ordered_sum(losses.iter().copied()) / T::from_usize(losses.len()).unwrap());
        if model.objective() == Objective::SoftBoundary && epoch + 1 >= config.radius_warmup {
            let scores = model.scores(data.select(Axis(0), &sets.compact).view())?;
            let r2 = update_radius(scores.as_slice().expect("contiguous"), model.nu())?;
            model.set_radius_sq(r2)?;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, AdamConfig, Dense, DenseNet};
    use crate::svdd::oc_loss;
    use ndarray::{arr1, arr2, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One-dimensional identity encoder with center 0, so a row `[x]` scores `x^2`.
    fn scalar_model(objective: Objective) -> SvddModel<f64> {
        let enc = DenseNet::from_layers(vec![Dense {
            weights: Array2::eye(1),
            bias: None,
            activation: Activation::Identity,
        }])
        .unwrap();
        SvddModel::new(enc, arr1(&[0.0]), objective, 0.5).unwrap()
    }

    fn rows_with_scores(scores: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((scores.len(), 1), |(i, _)| scores[i].sqrt())
    }

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn pseudo_abnormal_examples() {
        // L_A = {0,1,2} with scores 1,3,5; U = {3,4,5} with scores 2,4,3
        let scores = [1.0, 3.0, 5.0, 2.0, 4.0, 3.0];
        assert_eq!(pseudo_abnormal(&scores, &set(&[3, 4, 5]), &set(&[0, 1, 2])), set(&[4]));
        assert!(pseudo_abnormal(&scores, &set(&[3, 4, 5]), &set(&[])).is_empty());
        let even = [1.0, 3.0, 2.0, 2.1];
        assert_eq!(pseudo_abnormal(&even, &set(&[2, 3]), &set(&[0, 1])), set(&[3]));
    }

    #[test]
    fn pair_term_examples() {
        assert_eq!(nce_pair_term(2.0, 2.0), 0.5);
        assert_eq!(nce_pair_term(1.0, 3.0), 0.25);
        assert_eq!(nce_pair_term(0.0, 2.0), 0.0);
        assert_eq!(pair_loss(0.0, 2.0).0, 0.0);
        assert_eq!(nce_pair_term(0.0, 0.0), 0.0);
        assert!(pair_loss(1.0f64, 0.0).0.is_finite());
    }

    #[test]
    fn nce_hand_example() {
        // compact scores {1, 2}; L_N = {score 1}, L_A = {score 3}
        let x = rows_with_scores(&[1.0, 2.0, 3.0]);
        let m = scalar_model(Objective::OneClass);
        let sets = TrainingSets {
            compact: vec![0, 1],
            normal: vec![0],
            abnormal: vec![2],
        };
        let v = nce_loss(&m, x.view(), &sets).unwrap();
        assert!((v - (1.5 - 0.5 * 0.75f64.ln())).abs() < 1e-12);
        assert!((v - 1.643841).abs() < 1e-6);
    }

    #[test]
    fn nce_without_labels_is_oc_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = DenseNet::<f64>::new(&[3, 5, 2], false, &mut rng).unwrap();
        let m = SvddModel::new(enc, arr1(&[0.2, -0.4]), Objective::OneClass, 0.5).unwrap();
        let x = Array2::from_shape_fn((9, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let nce = nce_loss(&m, x.view(), &TrainingSets::unsupervised(9)).unwrap();
        assert_eq!(nce.to_bits(), oc_loss(&m, x.view()).unwrap().to_bits());
    }

    #[test]
    fn dsad_examples() {
        let x = rows_with_scores(&[1.0, 3.0, 2.0]);
        let m = scalar_model(Objective::OneClass);
        let no_anomalies = TrainingSets {
            compact: vec![0, 1],
            ..TrainingSets::default()
        };
        assert!((dsad_loss(&m, x.view(), &no_anomalies, 1.0).unwrap() - 2.0).abs() < 1e-12);
        let one = TrainingSets {
            compact: vec![0, 1],
            normal: vec![],
            abnormal: vec![2],
        };
        let v = dsad_loss(&m, x.view(), &one, 1.0).unwrap();
        assert!((v - 2.0 - 1.0 / (2.0 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn exclusion_ignores_anomalies() {
        let x = rows_with_scores(&[1.0, 3.0, 7.0]);
        let m = scalar_model(Objective::OneClass);
        let with = TrainingSets {
            compact: vec![0, 1],
            normal: vec![0],
            abnormal: vec![2],
        };
        let without = TrainingSets {
            compact: vec![0, 1],
            normal: vec![0],
            abnormal: vec![],
        };
        assert_eq!(exclusion_loss(&m, x.view(), &with).unwrap(), exclusion_loss(&m, x.view(), &without).unwrap());
        assert!((exclusion_loss(&m, x.view(), &with).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            exclusion_loss(&m, x.view(), &TrainingSets::default()),
            Err(SslError::EmptyCompactSet)
        ));
    }

    #[test]
    fn label_state_moves_and_rejects() {
        let mut ls = LabelState::new(5);
        ls.apply(&[(1, Label::Abnormal), (3, Label::Normal)]).unwrap();
        assert!(ls.is_partition());
        assert_eq!(ls.labeled_count(), 2);
        assert_eq!(ls.label_of(1), Some(Label::Abnormal));
        assert!(matches!(ls.apply(&[(1, Label::Normal)]), Err(SslError::NotUnlabeled { index: 1 })));
        assert!(matches!(
            ls.apply(&[(0, Label::Normal), (0, Label::Normal)]),
            Err(SslError::DuplicateIndex { index: 0 })
        ));
        assert_eq!(ls.stages().len(), 1);
        assert_eq!(ls.unlabeled().len(), 3);
    }

    #[test]
    fn sets_exclude_pseudo_abnormal_for_nce_only() {
        let mut ls = LabelState::new(6);
        ls.apply(&[(0, Label::Normal), (1, Label::Abnormal)]).unwrap();
        let ps = set(&[4]);
        let nce = TrainingSets::for_method(SslMethod::Nce, &ls, &ps);
        assert_eq!(nce.compact, vec![0, 2, 3, 5]);
        let dsad = TrainingSets::for_method(SslMethod::Dsad, &ls, &ps);
        assert_eq!(dsad.compact, vec![0, 2, 3, 4, 5]);
        assert_eq!(dsad.abnormal, vec![1]);
    }

    fn finite_difference_check(objective: Objective, method: SslMethod) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let enc = DenseNet::<f64>::new(&[3, 6, 4], false, &mut rng).unwrap();
        let mut m = SvddModel::new(enc, arr1(&[0.3, -0.2, 0.5, 0.1]), objective, 0.5).unwrap();
        if objective == Objective::SoftBoundary {
            m.set_radius_sq(0.05).unwrap();
        }
        let x = Array2::from_shape_fn((10, 3), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin() * 1.5);
        let sets = TrainingSets {
            compact: vec![0, 1, 2, 3, 4, 5, 6],
            normal: vec![2, 7],
            abnormal: vec![8, 9],
        };
        let obj = SslObjective::new(method, 1.0);
        let (value, grads) = obj.batch_loss_and_grad(&m, x.view(), &sets.compact, &sets).unwrap();
        assert!((value - obj.loss(&m, x.view(), &sets).unwrap()).abs() < 1e-12);
        let analytic = grads.flatten();
        let base = m.encoder().parameters();
        let h = 1e-5;
        for k in 0..base.len() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[k] += delta;
                let mut mm = m.clone();
                mm.encoder_mut().set_parameters(&p).unwrap();
                obj.loss(&mm, x.view(), &sets).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = fd.abs().max(analytic[k].abs()).max(1e-8);
            assert!((fd - analytic[k]).abs() / denom < 1e-4, "param {k}: fd {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for method in [SslMethod::Nce, SslMethod::Dsad, SslMethod::Exclude] {
            finite_difference_check(Objective::OneClass, method);
        }
        finite_difference_check(Objective::SoftBoundary, SslMethod::Nce);
    }

    #[test]
    fn one_nce_step_contrasts_the_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = DenseNet::<f64>::new(&[2, 4, 2], false, &mut rng).unwrap();
        let mut m = SvddModel::new(enc, arr1(&[0.1, 0.1]), Objective::OneClass, 0.5).unwrap();
        let x = arr2(&[[0.5, -0.3], [1.0, 0.8], [-0.2, 0.4]]);
        let sets = TrainingSets {
            compact: vec![2],
            normal: vec![0],
            abnormal: vec![1],
        };
        let before = m.scores(x.view()).unwrap();
        let obj = SslObjective::new(SslMethod::Nce, 1.0);
        let (_, grads) = obj.batch_loss_and_grad(&m, x.view(), &[2], &sets).unwrap();
        let mut adam = Adam::new(m.encoder(), AdamConfig { lr: 1e-4, ..AdamConfig::default() });
        adam.step(m.encoder_mut(), &grads).unwrap();
        let after: Array1<f64> = m.scores(x.view()).unwrap();
        assert!(after[0] < before[0] || after[1] > before[1]);
    }

    #[test]
    fn training_is_deterministic_and_refits_radius() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 5 + j) as f64 * 0.71).cos());
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let enc = DenseNet::<f64>::new(&[2, 4, 2], false, &mut rng).unwrap();
            let mut m = SvddModel::new(enc, arr1(&[0.2, 0.2]), Objective::SoftBoundary, 0.5).unwrap();
            let cfg = PhaseConfig {
                epochs: 3,
                batch_size: 16,
                radius_warmup: 2,
            };
            let mut adam = Adam::new(m.encoder(), AdamConfig::default());
            let trace = train_phase(&mut m, x.view(), &TrainingSets::unsupervised(40), &SslObjective::unsupervised(), &cfg, &mut adam, &mut rng).unwrap();
            (m, trace)
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.radius_sq().unwrap() > 0.0);
    }
}
