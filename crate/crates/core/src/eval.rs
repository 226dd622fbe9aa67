//! AUC, per-run stage records, multi-seed aggregation and table export.
//!
//! Aggregated CSV columns, one row per group and stage:
//!
//! ```text
//! dataset,objective,strategy,ssl,stage,auc_mean,auc_std,r_mean,q_mean,n_runs
//! ```
//!
//! `r_mean` and `q_mean` are empty for stage 0. `auc_std` is the sample
//! standard deviation across seeds (0 for a single run).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::Strategy;
use crate::scalar::{cmp, Scalar};
use crate::ssl::SslMethod;
use crate::svdd::Objective;

pub const CSV_COLUMNS: [&str; 10] = [
    "dataset", "objective", "strategy", "ssl", "stage", "auc_mean", "auc_std", "r_mean", "q_mean", "n_runs",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUC needs both classes (found {positives} abnormal of {n})")]
    SingleClass { positives: usize, n: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label values must be 0 or 1, found {0}")]
    BadLabel(u8),
    #[error("nothing to aggregate")]
    EmptyGroup,
    #[error("runs in group {group} disagree on stage count")]
    InconsistentStages { group: String },
    #[error("stage {stage} of a run has no AUC")]
    MissingAuc { stage: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected CSV header: {0}")]
    Header(String),
}

/// Mann-Whitney AUC with ties counted as one half, in `O(n log n)`.
pub fn auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::BadLabel(bad));
    }
    let n = scores.len();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass { positives, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(&scores[a], &scores[b]));
    // twice the Mann-Whitney U, kept integral so ties are exact
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        let group_neg = (end - start) as u128 - group_pos;
        twice_u += 2 * group_pos * negatives_below + group_pos * group_neg;
        negatives_below += group_neg;
        start = end;
    }
    Ok(twice_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Loss summary of one training phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub epochs: usize,
    pub first: Option<f64>,
    pub last: Option<f64>,
    pub min: Option<f64>,
}

impl LossSummary {
    pub fn from_trace<T: Scalar>(trace: &[T]) -> Self {
        let values: Vec<f64> = trace.iter().map(|v| v.as_f64()).collect();
        Self {
            epochs: values.len(),
            first: values.first().copied(),
            last: values.last().copied(),
            min: values.iter().copied().reduce(f64::min),
        }
    }
}

/// Everything recorded about one stage of one run. Stage 0 is the initial
/// unsupervised model and carries no query fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub auc: Option<f64>,
    /// Fraction of the stage's queries answered abnormal.
    pub r: Option<f64>,
    /// Boundary fraction in force when the stage queried.
    pub q: Option<f64>,
    /// Boundary fraction after the stage's update.
    pub q_next: Option<f64>,
    /// `q` and `q_next` as exact ratios such as `3/5`.
    pub q_exact: Option<String>,
    pub q_next_exact: Option<String>,
    pub queried: Vec<usize>,
    pub queried_normal: usize,
    pub queried_abnormal: usize,
    pub pseudo_abnormal: usize,
    pub labeled_normal: usize,
    pub labeled_abnormal: usize,
    pub unlabeled: usize,
    pub loss: LossSummary,
}

/// Stage-indexed records of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dataset: String,
    pub objective: Objective,
    pub strategy: Strategy,
    pub ssl: SslMethod,
    pub seed: u64,
    pub budget: usize,
    pub stages: Vec<StageRecord>,
}

impl RunMetrics {
    pub fn auc_trace(&self) -> Vec<Option<f64>> {
        self.stages.iter().map(|s| s.auc).collect()
    }

    /// `r_t` for completed stages 1..T.
    pub fn r_trace(&self) -> Vec<f64> {
        self.stages.iter().filter_map(|s| s.r).collect()
    }

    /// `q_t` for completed stages 1..T.
    pub fn q_trace(&self) -> Vec<f64> {
        self.stages.iter().filter_map(|s| s.q).collect()
    }

    fn key(&self) -> GroupKey {
        GroupKey {
            dataset: self.dataset.clone(),
            objective: self.objective,
            strategy: self.strategy,
            ssl: self.ssl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    dataset: String,
    objective: Objective,
    strategy: Strategy,
    ssl: SslMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub r_mean: Option<f64>,
    pub q_mean: Option<f64>,
    pub n_runs: usize,
}

/// Per-stage statistics for one (dataset, objective, strategy, ssl) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub dataset: String,
    pub objective: Objective,
    pub strategy: Strategy,
    pub ssl: SslMethod,
    pub stages: Vec<StageSummary>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn summarize(stage: usize, auc: &[f64], r: &[f64], q: &[f64]) -> StageSummary {
    let opt_mean = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
    StageSummary {
        stage,
        auc_mean: mean(auc),
        auc_std: sample_std(auc),
        r_mean: opt_mean(r),
        q_mean: opt_mean(q),
        n_runs: auc.len(),
    }
}

/// Groups runs by (dataset, objective, strategy, ssl) and summarizes each
/// stage across seeds. Groups come out sorted by key.
pub fn aggregate(runs: &[RunMetrics]) -> Result<Vec<GroupSummary>, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut groups: BTreeMap<GroupKey, Vec<&RunMetrics>> = BTreeMap::new();
    for run in runs {
        groups.entry(run.key()).or_default().push(run);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (key, members) in groups {
        let stages = members[0].stages.len();
        if members.iter().any(|r| r.stages.len() != stages) {
            return Err(EvalError::InconsistentStages {
                group: format!("{}/{}/{}/{}", key.dataset, key.objective, key.strategy, key.ssl),
            });
        }
        let mut summaries = Vec::with_capacity(stages);
        for t in 0..stages {
            let records: Vec<&StageRecord> = members.iter().map(|r| &r.stages[t]).collect();
            let auc = records
                .iter()
                .map(|s| s.auc.ok_or(EvalError::MissingAuc { stage: s.stage }))
                .collect::<Result<Vec<_>, _>>()?;
            let r: Vec<f64> = records.iter().filter_map(|s| s.r).collect();
            let q: Vec<f64> = records.iter().filter_map(|s| s.q).collect();
            summaries.push(summarize(records[0].stage, &auc, &r, &q));
        }
        out.push(GroupSummary {
            dataset: key.dataset,
            objective: key.objective,
            strategy: key.strategy,
            ssl: key.ssl,
            stages: summaries,
        });
    }
    Ok(out)
}

/// Name given to cross-dataset groups.
pub const AGGREGATED_DATASET: &str = "aggregated";

/// Averages per-dataset means for each (objective, strategy, ssl). The
/// standard deviation is taken across datasets and `n_runs` counts datasets.
pub fn aggregate_across_datasets(groups: &[GroupSummary]) -> Result<Vec<GroupSummary>, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut by_method: BTreeMap<(Objective, Strategy, SslMethod), Vec<&GroupSummary>> = BTreeMap::new();
    for g in groups {
        by_method.entry((g.objective, g.strategy, g.ssl)).or_default().push(g);
    }
    let mut out = Vec::new();
    for ((objective, strategy, ssl), members) in by_method {
        let stages = members[0].stages.len();
        if members.iter().any(|g| g.stages.len() != stages) {
            return Err(EvalError::InconsistentStages {
                group: format!("{objective}/{strategy}/{ssl}"),
            });
        }
        let summaries = (0..stages)
            .map(|t| {
                let col = |f: &dyn Fn(&StageSummary) -> Option<f64>| -> Vec<f64> {
                    members.iter().filter_map(|g| f(&g.stages[t])).collect()
                };
                summarize(members[0].stages[t].stage, &col(&|s| Some(s.auc_mean)), &col(&|s| s.r_mean), &col(&|s| s.q_mean))
            })
            .collect();
        out.push(GroupSummary {
            dataset: AGGREGATED_DATASET.to_string(),
            objective,
            strategy,
            ssl,
            stages: summaries,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    dataset: String,
    objective: Objective,
    strategy: Strategy,
    ssl: SslMethod,
    stage: usize,
    auc_mean: f64,
    auc_std: f64,
    r_mean: Option<f64>,
    q_mean: Option<f64>,
    n_runs: usize,
}

pub fn write_summary_csv<W: Write>(groups: &[GroupSummary], writer: W) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for g in groups {
        for s in &g.stages {
            w.serialize(CsvRow {
                dataset: g.dataset.clone(),
                objective: g.objective,
                strategy: g.strategy,
                ssl: g.ssl,
                stage: s.stage,
                auc_mean: s.auc_mean,
                auc_std: s.auc_std,
                r_mean: s.r_mean,
                q_mean: s.q_mean,
                n_runs: s.n_runs,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a summary CSV; consecutive rows with the same key form one group.
pub fn read_summary_csv<R: Read>(reader: R) -> Result<Vec<GroupSummary>, EvalError> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(EvalError::Header(header.join(",")));
    }
    let mut groups: Vec<GroupSummary> = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row?;
        let summary = StageSummary {
            stage: row.stage,
            auc_mean: row.auc_mean,
            auc_std: row.auc_std,
            r_mean: row.r_mean,
            q_mean: row.q_mean,
            n_runs: row.n_runs,
        };
        match groups.last_mut() {
            Some(g) if g.dataset == row.dataset && g.objective == row.objective && g.strategy == row.strategy && g.ssl == row.ssl => {
                g.stages.push(summary)
            }
            _ => groups.push(GroupSummary {
                dataset: row.dataset,
                objective: row.objective,
                strategy: row.strategy,
                ssl: row.ssl,
                stages: vec![summary],
            }),
        }
    }
    Ok(groups)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Writes `groups` to `path` as CSV or pretty JSON.
pub fn export(groups: &[GroupSummary], path: &Path, format: ExportFormat) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    match format {
        ExportFormat::Csv => write_summary_csv(groups, file),
        ExportFormat::Json => {
            let mut file = file;
            serde_json::to_writer_pretty(&mut file, groups)?;
            file.write_all(b"\n").map_err(io)
        }
    }
}

pub fn import(path: &Path, format: ExportFormat) -> Result<Vec<GroupSummary>, EvalError> {
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        ExportFormat::Csv => read_summary_csv(file),
        ExportFormat::Json => Ok(serde_json::from_reader(std::io::BufReader::new(file))?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        hits += 1.0;
                    } else if scores[i] == scores[j] {
                        hits += 0.5;
                    }
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.4, 0.2, 0.8, 0.6], &[0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(pairwise(&[0.4, 0.2, 0.8, 0.6], &[0, 1, 1, 0]), 0.5);
        assert!(matches!(auc(&[1.0, 2.0], &[0, 0]), Err(EvalError::SingleClass { .. })));
        assert!(matches!(auc(&[1.0], &[0, 1]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn auc_matches_pairwise_with_ties() {
        let scores = [3.0, 1.0, 3.0, 2.0, 1.0, 3.0, 0.0, 2.0];
        let labels = [1, 0, 0, 1, 1, 0, 0, 1];
        assert!((auc(&scores, &labels).unwrap() - pairwise(&scores, &labels)).abs() < 1e-12);
    }

    fn run(strategy: Strategy, seed: u64, aucs: &[f64]) -> RunMetrics {
        RunMetrics {
            dataset: "d".into(),
            objective: Objective::OneClass,
            strategy,
            ssl: SslMethod::Nce,
            seed,
            budget: 1,
            stages: aucs
                .iter()
                .enumerate()
                .map(|(t, &a)| StageRecord {
                    stage: t,
                    auc: Some(a),
                    r: (t > 0).then_some(0.5),
                    q: (t > 0).then_some(0.8),
                    q_next: None,
                    q_exact: None,
                    q_next_exact: None,
                    queried: vec![],
                    queried_normal: 0,
                    queried_abnormal: 0,
                    pseudo_abnormal: 0,
                    labeled_normal: 0,
                    labeled_abnormal: 0,
                    unlabeled: 0,
                    loss: LossSummary::from_trace::<f64>(&[]),
                })
                .collect(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let runs = [
            run(Strategy::Ab, 0, &[0.5, 0.5, 0.5, 0.6]),
            run(Strategy::Ab, 1, &[0.5, 0.5, 0.5, 0.8]),
            run(Strategy::Hc, 0, &[0.1, 0.1, 0.1, 0.1]),
        ];
        let groups = aggregate(&runs).unwrap();
        assert_eq!(groups.len(), 2);
        let ab = &groups[0];
        assert_eq!(ab.strategy, Strategy::Ab);
        assert!((ab.stages[3].auc_mean - 0.7).abs() < 1e-12);
        assert!((ab.stages[3].auc_std - 0.141421).abs() < 1e-6);
        assert_eq!(ab.stages[0].auc_std, 0.0);
        assert_eq!(ab.stages[0].r_mean, None);
        assert_eq!(groups[1].stages[3].auc_mean, 0.1);
        assert_eq!(groups[1].stages[3].n_runs, 1);
        assert!(matches!(aggregate(&[]), Err(EvalError::EmptyGroup)));
    }

    #[test]
    fn csv_round_trip_and_header() {
        let groups = aggregate(&[run(Strategy::Ab, 0, &[0.1234567890123, 0.7]), run(Strategy::Ab, 1, &[0.3, 0.9])]).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&groups, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(read_summary_csv(buf.as_slice()).unwrap(), groups);

        let mut empty = Vec::new();
        write_summary_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), CSV_COLUMNS.join(","));
    }

    #[test]
    fn cross_dataset_averages_means() {
        let mut a = run(Strategy::Ab, 0, &[0.6]);
        let mut b = run(Strategy::Ab, 0, &[0.8]);
        a.dataset = "a".into();
        b.dataset = "b".into();
        let per = aggregate(&[a, b]).unwrap();
        let agg = aggregate_across_datasets(&per).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].dataset, AGGREGATED_DATASET);
        assert!((agg[0].stages[0].auc_mean - 0.7).abs() < 1e-12);
        assert_eq!(agg[0].stages[0].n_runs, 2);
    }
}
