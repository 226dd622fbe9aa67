//! The active-learning loop: initial unsupervised training, then stages of
//! query, label, semi-supervised retraining and boundary update.
//!
//! Randomness is split into independent ChaCha8 streams of one seed (network
//! initialization, pretraining, fine-tuning, and per-stage training and
//! querying), so a stage-0 model can be shared across runs that differ only
//! downstream and an interactive session replays a batch run exactly.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use num_traits::ToPrimitive;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize, DataError, Dataset, GroundTruth, Label};
use crate::eval::{auc, EvalError, LossSummary, RunMetrics, StageRecord};
use crate::fraction::{self, Fraction};
use crate::nn::{pretrain_autoencoder, Adam, AdamConfig, DenseNet, NnError, TrainConfig};
use crate::query::{self, AdaptiveBoundaryState, QueryError, Strategy};
use crate::scalar::Scalar;
use crate::ssl::{pseudo_abnormal, train_phase, LabelState, PhaseConfig, SslError, SslMethod, SslObjective, TrainingSets};
use crate::svdd::{init_center, Objective, SvddError, SvddModel, CENTER_EPS, RADIUS_WARMUP_EPOCHS};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage needs {needed} unlabeled samples but only {available} remain")]
    PoolExhausted { needed: usize, available: usize },
    #[error("all {0} stages are complete")]
    Done(usize),
    #[error("expected answers for {expected} queried samples, got {found}")]
    AnswerMismatch { expected: usize, found: usize },
    #[error("oracle: {0}")]
    Oracle(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Svdd(#[from] SvddError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Per-stage query budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRule {
    /// Fraction of `n` queried per stage, rounded half up, at least 1.
    pub fraction: f64,
    /// Below this `n` the fixed small budget applies.
    pub min_n_for_fraction: usize,
    pub small_budget: usize,
    /// Overrides everything above when set.
    pub fixed: Option<usize>,
}

impl Default for BudgetRule {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            min_n_for_fraction: 500,
            small_budget: 6,
            fixed: None,
        }
    }
}

impl BudgetRule {
    pub fn budget(&self, n: usize) -> usize {
        if let Some(b) = self.fixed {
            return b;
        }
        if n < self.min_n_for_fraction {
            return self.small_budget;
        }
        let exact = fraction::from_decimal(self.fraction).unwrap_or_else(|| fraction::from_ratio(1, 100));
        let scaled = exact * Fraction::from_integer(n.into()) + fraction::half();
        scaled.floor().to_integer().to_usize().unwrap_or(usize::MAX).max(1)
    }
}

/// Budget under the default rule: 1% of `n` rounded half up, or 6 below 500.
pub fn default_budget(n: usize) -> usize {
    BudgetRule::default().budget(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveLoopConfig {
    pub objective: Objective,
    pub nu: f64,
    /// Encoder widths after the input layer.
    pub widths: Vec<usize>,
    pub ssl: SslMethod,
    pub eta: f64,
    pub strategy: Strategy,
    pub q1: f64,
    pub q_floor: f64,
    pub budget: BudgetRule,
    pub stages: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Retraining epochs per stage.
    pub stage_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ActiveLoopConfig {
    fn default() -> Self {
        Self {
            objective: Objective::OneClass,
            nu: 0.5,
            widths: vec![32, 16, 8],
            ssl: SslMethod::Nce,
            eta: 1.0,
            strategy: Strategy::Ab,
            q1: query::DEFAULT_Q1,
            q_floor: query::DEFAULT_Q_FLOOR,
            budget: BudgetRule::default(),
            stages: 5,
            pretrain_epochs: 100,
            finetune_epochs: 50,
            stage_epochs: 50,
            batch_size: 128,
            adam: AdamConfig::default(),
        }
    }
}

impl ActiveLoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |m: &str| Err(LoopError::Config(m.to_string()));
        if self.strategy == Strategy::Db && self.objective != Objective::SoftBoundary {
            return bad("the db strategy requires the sb objective");
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad("nu must lie in (0, 1]");
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be a non-empty list of positive sizes");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and non-negative");
        }
        if !(self.q_floor > 0.0 && self.q_floor <= 1.0) {
            return bad("q_floor must lie in (0, 1]");
        }
        if !(self.q1 >= self.q_floor && self.q1 <= 1.0) {
            return bad("q1 must lie in [q_floor, 1]");
        }
        if !(self.budget.fraction > 0.0 && self.budget.fraction <= 1.0) {
            return bad("budget fraction must lie in (0, 1]");
        }
        if self.budget.small_budget == 0 || self.budget.fixed == Some(0) {
            return bad("budget must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// Whether two configurations train identical stage-0 models.
    pub fn same_initial_model(&self, other: &Self) -> bool {
        self.objective == other.objective
            && self.nu.to_bits() == other.nu.to_bits()
            && self.widths == other.widths
            && self.pretrain_epochs == other.pretrain_epochs
            && self.finetune_epochs == other.finetune_epochs
            && self.batch_size == other.batch_size
            && self.adam == other.adam
    }

    fn boundary(&self) -> Result<AdaptiveBoundaryState, LoopError> {
        Ok(AdaptiveBoundaryState::from_decimals(self.q1, self.q_floor)?)
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_PRETRAIN: u64 = 1;
const STREAM_FINETUNE: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn stage_train_stream(seed: u64, stage: usize) -> ChaCha8Rng {
    stream(seed, 16 + 2 * stage as u64)
}

fn stage_query_stream(seed: u64, stage: usize) -> ChaCha8Rng {
    stream(seed, 17 + 2 * stage as u64)
}

/// Answers label queries.
pub trait Oracle {
    fn label(&mut self, index: usize) -> Result<Label, LoopError>;
}

/// Reads answers from the dataset's hidden labels.
pub struct GroundTruthOracle<'a> {
    truth: GroundTruth<'a>,
}

impl<'a> GroundTruthOracle<'a> {
    pub fn new(truth: GroundTruth<'a>) -> Self {
        Self { truth }
    }
}

impl Oracle for GroundTruthOracle<'_> {
    fn label(&mut self, index: usize) -> Result<Label, LoopError> {
        self.truth
            .label(index)
            .ok_or_else(|| LoopError::Oracle(format!("no label for index {index}")))
    }
}

/// Answers from a fixed table, e.g. labels collected from a person.
pub struct TableOracle {
    answers: BTreeMap<usize, Label>,
}

impl TableOracle {
    pub fn new(answers: BTreeMap<usize, Label>) -> Self {
        Self { answers }
    }
}

impl Oracle for TableOracle {
    fn label(&mut self, index: usize) -> Result<Label, LoopError> {
        self.answers
            .get(&index)
            .copied()
            .ok_or_else(|| LoopError::Oracle(format!("no answer for index {index}")))
    }
}

/// Stage-0 model plus the loss traces of its two training phases.
#[derive(Clone, Debug)]
pub struct InitialModel<T> {
    pub model: SvddModel<T>,
    /// Optimizer state after fine-tuning.
    pub optimizer: Adam<T>,
    pub pretrain_trace: Vec<T>,
    pub finetune_trace: Vec<T>,
}

/// Autoencoder pretraining, center initialization, then base-objective
/// fine-tuning over all samples.
pub fn train_initial<T: Scalar>(config: &ActiveLoopConfig, data: ArrayView2<'_, T>, seed: u64) -> Result<InitialModel<T>, LoopError> {
    config.validate()?;
    if data.nrows() == 0 {
        return Err(LoopError::Nn(NnError::EmptyData));
    }
    let mut widths = vec![data.ncols()];
    widths.extend(&config.widths);
    let encoder = DenseNet::new(&widths, false, &mut stream(seed, STREAM_INIT))?;
    let pretrain = TrainConfig {
        epochs: config.pretrain_epochs,
        batch_size: config.batch_size,
        adam: config.adam,
    };
    let (encoder, pretrain_trace) = pretrain_autoencoder(encoder, data, &pretrain, &mut stream(seed, STREAM_PRETRAIN))?;
    let center = init_center(&encoder, data, T::lit(CENTER_EPS))?;
    let mut model = SvddModel::new(encoder, center, config.objective, T::lit(config.nu))?;
    let phase = PhaseConfig {
        epochs: config.finetune_epochs,
        batch_size: config.batch_size,
        radius_warmup: RADIUS_WARMUP_EPOCHS,
    };
    let mut optimizer = Adam::new(model.encoder(), config.adam);
    let finetune_trace = train_phase(
        &mut model,
        data,
        &TrainingSets::unsupervised(data.nrows()),
        &SslObjective::unsupervised(),
        &phase,
        &mut optimizer,
        &mut stream(seed, STREAM_FINETUNE),
    )?;
    Ok(InitialModel {
        model,
        optimizer,
        pretrain_trace,
        finetune_trace,
    })
}

/// Mutable state of one run between stages.
#[derive(Clone, Debug)]
pub struct RunState<T> {
    pub model: SvddModel<T>,
    pub optimizer: Adam<T>,
    pub labels: LabelState,
    pub boundary: AdaptiveBoundaryState,
    /// Current scores of every sample.
    pub scores: Vec<T>,
    pub budget: usize,
    pub seed: u64,
    pub records: Vec<StageRecord>,
}

impl<T: Scalar> RunState<T> {
    /// State after stage 0. `truth` enables AUC recording.
    pub fn start(
        config: &ActiveLoopConfig,
        data: ArrayView2<'_, T>,
        initial: InitialModel<T>,
        seed: u64,
        truth: Option<GroundTruth<'_>>,
    ) -> Result<Self, LoopError> {
        config.validate()?;
        let n = data.nrows();
        let scores = initial.model.scores(data)?.to_vec();
        let labels = LabelState::new(n);
        let record = StageRecord {
            stage: 0,
            auc: stage_auc(&scores, truth)?,
            r: None,
            q: None,
            q_next: None,
            q_exact: None,
            q_next_exact: None,
            queried: Vec::new(),
            queried_normal: 0,
            queried_abnormal: 0,
            pseudo_abnormal: 0,
            labeled_normal: 0,
            labeled_abnormal: 0,
            unlabeled: n,
            loss: LossSummary::from_trace(&initial.finetune_trace),
        };
        Ok(Self {
            model: initial.model,
            optimizer: initial.optimizer,
            labels,
            boundary: config.boundary()?,
            scores,
            budget: config.budget.budget(n),
            seed,
            records: vec![record],
        })
    }

    pub fn completed_stages(&self) -> usize {
        self.records.len() - 1
    }

    pub fn is_done(&self, config: &ActiveLoopConfig) -> bool {
        self.completed_stages() >= config.stages
    }

    fn unlabeled(&self) -> Vec<usize> {
        self.labels.unlabeled().iter().copied().collect()
    }

    /// Boundary threshold `d_q` for the current `q` over all scores.
    pub fn threshold(&self) -> Result<T, LoopError> {
        Ok(query::boundary_threshold(&self.scores, self.boundary.q_current())?)
    }

    /// Indices to label in the next stage, in selection order.
    pub fn select_queries(&self, config: &ActiveLoopConfig) -> Result<Vec<usize>, LoopError> {
        if self.is_done(config) {
            return Err(LoopError::Done(config.stages));
        }
        let pool = self.unlabeled();
        if pool.len() < self.budget {
            return Err(LoopError::PoolExhausted {
                needed: self.budget,
                available: pool.len(),
            });
        }
        let b = self.budget;
        Ok(match config.strategy {
            Strategy::Ab => query::query_ab(&self.scores, &pool, self.threshold()?, b)?,
            Strategy::Hc => query::query_hc(&self.scores, &pool, b)?,
            Strategy::Db => query::query_db(&self.scores, &pool, self.model.radius_sq(), b)?,
            Strategy::Random => {
                let mut rng = stage_query_stream(self.seed, self.completed_stages() + 1);
                query::query_random(&pool, b, &mut rng)?
            }
        })
    }

    /// Applies one stage's answers, retrains, scores, and advances the
    /// boundary. `answers` must cover exactly one budget of queries.
    pub fn complete_stage(
        &mut self,
        config: &ActiveLoopConfig,
        data: ArrayView2<'_, T>,
        answers: &[(usize, Label)],
        truth: Option<GroundTruth<'_>>,
    ) -> Result<&StageRecord, LoopError> {
        if self.is_done(config) {
            return Err(LoopError::Done(config.stages));
        }
        if answers.len() != self.budget {
            return Err(LoopError::AnswerMismatch {
                expected: self.budget,
                found: answers.len(),
            });
        }
        let stage = self.completed_stages() + 1;
        let stage_labels = self.labels.apply(answers)?.clone();
        // scored by the previous stage's model
        let pseudo = pseudo_abnormal(&self.scores, self.labels.unlabeled(), self.labels.abnormal());
        let sets = TrainingSets::for_method(config.ssl, &self.labels, &pseudo);
        let phase = PhaseConfig {
            epochs: config.stage_epochs,
            batch_size: config.batch_size,
            radius_warmup: 0,
        };
        let objective = SslObjective::new(config.ssl, T::lit(config.eta));
        let trace = train_phase(
            &mut self.model,
            data,
            &sets,
            &objective,
            &phase,
            &mut self.optimizer,
            &mut stage_train_stream(self.seed, stage),
        )?;
        self.scores = self.model.scores(data)?.to_vec();

        let q = self.boundary.q_current().clone();
        let q_next = self.boundary.record(stage_labels.abnormal.len(), self.budget)?.clone();
        let r = self.boundary.r_history().last().expect("just recorded");
        let record = StageRecord {
            stage,
            auc: stage_auc(&self.scores, truth)?,
            r: Some(fraction::to_f64(r)),
            q: Some(fraction::to_f64(&q)),
            q_next: Some(fraction::to_f64(&q_next)),
            q_exact: Some(q.to_string()),
            q_next_exact: Some(q_next.to_string()),
            queried: answers.iter().map(|&(i, _)| i).collect(),
            queried_normal: stage_labels.normal.len(),
            queried_abnormal: stage_labels.abnormal.len(),
            pseudo_abnormal: pseudo.len(),
            labeled_normal: self.labels.normal().len(),
            labeled_abnormal: self.labels.abnormal().len(),
            unlabeled: self.labels.unlabeled().len(),
            loss: LossSummary::from_trace(&trace),
        };
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Query, ask `oracle`, and complete the stage.
    pub fn run_stage<O: Oracle + ?Sized>(
        &mut self,
        config: &ActiveLoopConfig,
        data: ArrayView2<'_, T>,
        oracle: &mut O,
        truth: Option<GroundTruth<'_>>,
    ) -> Result<&StageRecord, LoopError> {
        let queried = self.select_queries(config)?;
        let answers = queried
            .iter()
            .map(|&i| Ok((i, oracle.label(i)?)))
            .collect::<Result<Vec<_>, LoopError>>()?;
        self.complete_stage(config, data, &answers, truth)
    }
}

fn stage_auc<T: Scalar>(scores: &[T], truth: Option<GroundTruth<'_>>) -> Result<Option<f64>, LoopError> {
    match truth {
        Some(t) => Ok(Some(auc(scores, t.bits())?)),
        None => Ok(None),
    }
}

/// Standardized feature matrix used for training and scoring.
pub fn prepare_features<T: Scalar>(dataset: &Dataset<T>) -> Result<Array2<T>, LoopError> {
    Ok(standardize(dataset)?.features().to_owned())
}

fn finish_run<T: Scalar>(
    config: &ActiveLoopConfig,
    dataset: &Dataset<T>,
    data: ArrayView2<'_, T>,
    initial: InitialModel<T>,
    seed: u64,
) -> Result<RunMetrics, LoopError> {
    let truth = dataset.ground_truth();
    let mut state = RunState::start(config, data, initial, seed, Some(truth))?;
    let mut oracle = GroundTruthOracle::new(truth);
    while !state.is_done(config) {
        state.run_stage(config, data, &mut oracle, Some(truth))?;
    }
    Ok(RunMetrics {
        dataset: dataset.name().to_string(),
        objective: config.objective,
        strategy: config.strategy,
        ssl: config.ssl,
        seed,
        budget: state.budget,
        stages: state.records,
    })
}

fn check_runnable<T: Scalar>(config: &ActiveLoopConfig, dataset: &Dataset<T>) -> Result<(), LoopError> {
    config.validate()?;
    let n = dataset.n();
    let b = config.budget.budget(n);
    if b * config.stages > n {
        return Err(LoopError::PoolExhausted {
            needed: b * config.stages,
            available: n,
        });
    }
    auc(&vec![T::zero(); n], dataset.ground_truth().bits())?;
    Ok(())
}

/// One seeded run against the ground-truth oracle.
pub fn run_single<T: Scalar>(config: &ActiveLoopConfig, dataset: &Dataset<T>, seed: u64) -> Result<RunMetrics, LoopError> {
    check_runnable(config, dataset)?;
    let data = prepare_features(dataset)?;
    let initial = train_initial(config, data.view(), seed)?;
    finish_run(config, dataset, data.view(), initial, seed)
}

/// Runs every seed (in parallel) and returns metrics in seed order.
pub fn run_experiment<T: Scalar + Send + Sync>(
    config: &ActiveLoopConfig,
    dataset: &Dataset<T>,
    seeds: &[u64],
) -> Result<Vec<RunMetrics>, LoopError> {
    Ok(run_grid(std::slice::from_ref(config), dataset, seeds)?.pop().unwrap_or_default())
}

/// Runs every (configuration, seed) cell. Configurations that share initial
/// settings reuse one stage-0 model per seed. The result holds one list per
/// configuration, in seed order.
pub fn run_grid<T: Scalar + Send + Sync>(
    configs: &[ActiveLoopConfig],
    dataset: &Dataset<T>,
    seeds: &[u64],
) -> Result<Vec<Vec<RunMetrics>>, LoopError> {
    if seeds.is_empty() {
        return Err(LoopError::Config("at least one seed is required".into()));
    }
    for c in configs {
        check_runnable(c, dataset)?;
    }
    let data = prepare_features(dataset)?;
    let view = data.view();
    // representative config index for each config's stage-0 model
    let leaders: Vec<usize> = (0..configs.len())
        .map(|i| (0..=i).find(|&j| configs[j].same_initial_model(&configs[i])).expect("i matches itself"))
        .collect();
    let mut unique: Vec<usize> = leaders.clone();
    unique.sort_unstable();
    unique.dedup();

    let cells: Vec<(usize, usize)> = unique.iter().flat_map(|&l| (0..seeds.len()).map(move |s| (l, s))).collect();
    let initials: BTreeMap<(usize, usize), InitialModel<T>> = cells
        .par_iter()
        .map(|&(l, s)| Ok(((l, s), train_initial(&configs[l], view, seeds[s])?)))
        .collect::<Result<_, LoopError>>()?;

    let runs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..seeds.len()).map(move |s| (c, s))).collect();
    let mut results: Vec<((usize, usize), RunMetrics)> = runs
        .par_iter()
        .map(|&(c, s)| {
            let initial = initials[&(leaders[c], s)].clone();
            Ok(((c, s), finish_run(&configs[c], dataset, view, initial, seeds[s])?))
        })
        .collect::<Result<_, LoopError>>()?;
    results.sort_by_key(|(k, _)| *k);
    let mut out: Vec<Vec<RunMetrics>> = vec![Vec::with_capacity(seeds.len()); configs.len()];
    for ((c, _), m) in results {
        out[c].push(m);
    }
    Ok(out)
}
