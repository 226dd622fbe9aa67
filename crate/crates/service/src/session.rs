//! One labeling session: a run driven stage by stage by human answers.

use std::collections::BTreeMap;
use std::sync::Arc;

use activesvdd::active::{prepare_features, train_initial};
use activesvdd::eval::{LossSummary, StageRecord};
use activesvdd::{ActiveLoopConfig, Dataset64, Label, LoopError, RunConfig, RunState64};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::pca::project_2d;

/// Version of the JSON field layout served under `/api`.
pub const API_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("data: {0}")]
    Data(#[from] activesvdd::DataError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    QueryPending,
    Ready,
    Busy,
    Done,
}

/// What a session was created from; enough to rebuild it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub config: RunConfig,
    pub seed: u64,
    /// Record AUC against the dataset's label column after each stage.
    pub ground_truth: bool,
}

/// On-disk form. Models are not stored; resuming replays the recorded
/// answers, which reproduces the state exactly because runs are seeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistedSession {
    pub api_version: u32,
    pub id: Uuid,
    pub spec: SessionSpec,
    /// Answers of each completed stage, in query order.
    pub stages: Vec<Vec<(usize, Label)>>,
    /// Labels received for the pending batch.
    pub received: BTreeMap<usize, Label>,
}

/// Immutable inputs shared with background retraining.
#[derive(Debug)]
pub struct SessionData {
    pub spec: SessionSpec,
    pub loop_config: ActiveLoopConfig,
    pub dataset: Dataset64,
    pub features: Array2<f64>,
}

impl SessionData {
    fn truth(&self) -> Option<activesvdd::data::GroundTruth<'_>> {
        self.spec.ground_truth.then(|| self.dataset.ground_truth())
    }
}

/// A stage's model state together with its query batch and projection.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub state: RunState64,
    pub pending: Vec<usize>,
    pub projection: Array2<f64>,
}

impl Snapshot {
    fn build(data: &SessionData, state: RunState64) -> Result<Self, SessionError> {
        let pending = if state.is_done(&data.loop_config) {
            Vec::new()
        } else {
            state.select_queries(&data.loop_config)?
        };
        let encoded = state
            .model
            .features(data.features.view())
            .map_err(|e| SessionError::Loop(e.into()))?;
        Ok(Self {
            projection: project_2d(encoded.view()),
            state,
            pending,
        })
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: Uuid,
    pub data: Arc<SessionData>,
    pub snapshot: Snapshot,
    pub received: BTreeMap<usize, Label>,
    pub history: Vec<Vec<(usize, Label)>>,
    pub busy: bool,
    pub last_error: Option<String>,
}

impl Session {
    /// Loads the data, trains the stage-0 model and selects the first batch.
    /// Blocking.
    pub fn create(id: Uuid, spec: SessionSpec) -> Result<Self, SessionError> {
        spec.config.validate().map_err(|e| SessionError::Invalid(e.to_string()))?;
        let loop_config = spec.config.loop_config();
        let dataset: Dataset64 = spec.config.load_dataset()?;
        let budget = loop_config.budget.budget(dataset.n());
        if budget * loop_config.stages > dataset.n() {
            return Err(SessionError::Invalid(format!(
                "{} stages of {budget} queries need more than the {} samples available",
                loop_config.stages,
                dataset.n()
            )));
        }
        let features = prepare_features(&dataset)?;
        let data = Arc::new(SessionData {
            spec,
            loop_config,
            dataset,
            features,
        });
        let initial = train_initial(&data.loop_config, data.features.view(), data.spec.seed)?;
        let state = RunState64::start(&data.loop_config, data.features.view(), initial, data.spec.seed, data.truth())?;
        let snapshot = Snapshot::build(&data, state)?;
        Ok(Self {
            id,
            data,
            snapshot,
            received: BTreeMap::new(),
            history: Vec::new(),
            busy: false,
            last_error: None,
        })
    }

    /// Rebuilds a persisted session by replaying its answers. Blocking.
    pub fn restore(saved: PersistedSession) -> Result<Self, SessionError> {
        let mut session = Self::create(saved.id, saved.spec)?;
        for answers in saved.stages {
            session.snapshot = run_stage(&session.data, session.snapshot.state.clone(), &answers)?.0;
            session.history.push(answers);
        }
        for (index, label) in saved.received {
            session.label(index, label)?;
        }
        Ok(session)
    }

    pub fn persisted(&self) -> PersistedSession {
        PersistedSession {
            api_version: API_VERSION,
            id: self.id,
            spec: self.data.spec.clone(),
            stages: self.history.clone(),
            received: self.received.clone(),
        }
    }

    pub fn status(&self) -> Status {
        if self.busy {
            Status::Busy
        } else if self.snapshot.state.is_done(&self.data.loop_config) {
            Status::Done
        } else if self.received.len() == self.snapshot.pending.len() {
            Status::Ready
        } else {
            Status::QueryPending
        }
    }

    fn ensure_idle(&self) -> Result<(), SessionError> {
        match self.status() {
            Status::Busy => Err(SessionError::Conflict("session is retraining".into())),
            Status::Done => Err(SessionError::Conflict("session has completed every stage".into())),
            _ => Ok(()),
        }
    }

    /// Records or overwrites the label of a pending sample.
    pub fn label(&mut self, index: usize, label: Label) -> Result<(), SessionError> {
        self.ensure_idle()?;
        if !self.snapshot.pending.contains(&index) {
            return Err(SessionError::Invalid(format!("sample {index} is not in the pending batch")));
        }
        self.received.insert(index, label);
        Ok(())
    }

    /// Answers in query order once every pending sample is labeled.
    pub fn answers(&self) -> Result<Vec<(usize, Label)>, SessionError> {
        self.ensure_idle()?;
        if self.status() != Status::Ready {
            return Err(SessionError::Conflict(format!(
                "{} of {} pending samples labeled",
                self.received.len(),
                self.snapshot.pending.len()
            )));
        }
        Ok(self.snapshot.pending.iter().map(|&i| (i, self.received[&i])).collect())
    }

    /// Installs the result of a finished stage.
    pub fn finish_stage(&mut self, answers: Vec<(usize, Label)>, snapshot: Snapshot) {
        self.snapshot = snapshot;
        self.history.push(answers);
        self.received.clear();
        self.busy = false;
        self.last_error = None;
    }

    pub fn view(&self) -> SessionView {
        let state = &self.snapshot.state;
        SessionView {
            api_version: API_VERSION,
            id: self.id,
            status: self.status(),
            stage: state.completed_stages(),
            stages: self.data.loop_config.stages,
            budget: state.budget,
            n: self.data.dataset.n(),
            d: self.data.dataset.d(),
            dataset: self.data.dataset.name().to_string(),
            q: activesvdd::fraction::to_f64(state.boundary.q_current()),
            q_exact: state.boundary.q_current().to_string(),
            pending: self.snapshot.pending.len(),
            received: self.received.len(),
            seed: self.data.spec.seed,
            ground_truth: self.data.spec.ground_truth,
            config: self.data.spec.config.clone(),
            last_error: self.last_error.clone(),
        }
    }

    pub fn query_view(&self) -> Result<QueryView, SessionError> {
        let state = &self.snapshot.state;
        let threshold = if state.is_done(&self.data.loop_config) {
            None
        } else {
            Some(state.threshold()?)
        };
        let raw = self.data.dataset.features();
        let items = self
            .snapshot
            .pending
            .iter()
            .map(|&i| QueryItem {
                index: i,
                score: state.scores[i],
                distance: threshold.map(|d| (state.scores[i] - d).abs()),
                features: raw.row(i).to_vec(),
                projection: [self.snapshot.projection[[i, 0]], self.snapshot.projection[[i, 1]]],
                label: self.received.get(&i).copied(),
            })
            .collect();
        let status = self.status();
        Ok(QueryView {
            api_version: API_VERSION,
            id: self.id,
            status,
            stage: state.completed_stages() + 1,
            ready: status == Status::Ready,
            threshold,
            columns: self.data.dataset.columns().to_vec(),
            items,
        })
    }

    pub fn metrics_view(&self) -> MetricsView {
        let records = &self.snapshot.state.records;
        let labels = &self.snapshot.state.labels;
        let stages = &records[1..];
        MetricsView {
            api_version: API_VERSION,
            id: self.id,
            stage: self.snapshot.state.completed_stages(),
            r_trace: stages.iter().filter_map(|s| s.r).collect(),
            q_trace: stages.iter().filter_map(|s| s.q).collect(),
            q_next_trace: stages.iter().filter_map(|s| s.q_next).collect(),
            auc_trace: self
                .data
                .spec
                .ground_truth
                .then(|| records.iter().map(|s| s.auc).collect()),
            loss_trace: records.iter().map(|s| s.loss).collect(),
            labeled_normal: labels.normal().len(),
            labeled_abnormal: labels.abnormal().len(),
            unlabeled: labels.unlabeled().len(),
            records: records.clone(),
        }
    }

    pub fn projection_view(&self) -> ProjectionView {
        let labels = &self.snapshot.state.labels;
        ProjectionView {
            api_version: API_VERSION,
            id: self.id,
            points: self.snapshot.projection.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
            labels: (0..self.data.dataset.n()).map(|i| labels.label_of(i)).collect(),
            pending: self.snapshot.pending.clone(),
        }
    }
}

/// Retrains on one stage's answers and builds the next snapshot. Blocking.
pub fn run_stage(
    data: &SessionData,
    mut state: RunState64,
    answers: &[(usize, Label)],
) -> Result<(Snapshot, StageRecord), SessionError> {
    let record = state
        .complete_stage(&data.loop_config, data.features.view(), answers, data.truth())?
        .clone();
    Ok((Snapshot::build(data, state)?, record))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub api_version: u32,
    pub id: Uuid,
    pub status: Status,
    /// Completed stages.
    pub stage: usize,
    pub stages: usize,
    pub budget: usize,
    pub n: usize,
    pub d: usize,
    pub dataset: String,
    pub q: f64,
    pub q_exact: String,
    pub pending: usize,
    pub received: usize,
    pub seed: u64,
    pub ground_truth: bool,
    pub config: RunConfig,
    pub last_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub index: usize,
    pub score: f64,
    /// `|score - d_q|`; absent once the session is done.
    pub distance: Option<f64>,
    /// Feature values as loaded, before standardization.
    pub features: Vec<f64>,
    pub projection: [f64; 2],
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub api_version: u32,
    pub id: Uuid,
    pub status: Status,
    /// Stage the pending batch belongs to.
    pub stage: usize,
    pub ready: bool,
    pub threshold: Option<f64>,
    pub columns: Vec<String>,
    pub items: Vec<QueryItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub api_version: u32,
    pub id: Uuid,
    pub stage: usize,
    pub r_trace: Vec<f64>,
    pub q_trace: Vec<f64>,
    pub q_next_trace: Vec<f64>,
    pub auc_trace: Option<Vec<Option<f64>>>,
    pub loss_trace: Vec<LossSummary>,
    pub labeled_normal: usize,
    pub labeled_abnormal: usize,
    pub unlabeled: usize,
    pub records: Vec<StageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionView {
    pub api_version: u32,
    pub id: Uuid,
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<Option<Label>>,
    pub pending: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvanceView {
    pub api_version: u32,
    pub record: StageRecord,
    pub query: QueryView,
}
