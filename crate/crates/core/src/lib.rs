//! Active anomaly detection with Deep SVDD.
//!
//! A bias-free MLP encoder is pretrained as an autoencoder and fine-tuned
//! toward a fixed hypersphere center. Each active-learning stage queries the
//! unlabeled samples nearest an adaptive boundary, retrains with a
//! contrastive semi-supervised loss, and moves the boundary according to how
//! many queried samples turned out abnormal.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); boundary
//! fractions are exact rationals ([`Fraction`]). The aliases below fix the
//! scalar for everyday use.

pub mod active;
pub mod config;
pub mod data;
pub mod eval;
pub mod fraction;
pub mod nn;
pub mod query;
pub mod scalar;
pub mod ssl;
pub mod svdd;

pub use active::{
    default_budget, run_experiment, run_grid, run_single, train_initial, ActiveLoopConfig, BudgetRule, GroundTruthOracle,
    InitialModel, LoopError, Oracle, RunState, TableOracle,
};
pub use config::{ConfigError, RunConfig};
pub use data::{DataError, Label};
pub use eval::{auc, GroupSummary, RunMetrics, StageRecord};
pub use fraction::Fraction;
pub use query::{AdaptiveBoundaryState, Strategy};
pub use scalar::Scalar;
pub use ssl::{LabelState, SslMethod};
pub use svdd::Objective;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type DenseNet64 = nn::DenseNet<f64>;
pub type DenseNet32 = nn::DenseNet<f32>;
pub type SvddModel64 = svdd::SvddModel<f64>;
pub type SvddModel32 = svdd::SvddModel<f32>;
pub type RunState64 = active::RunState<f64>;
pub type RunState32 = active::RunState<f32>;
