//! Metric events, rolling scores, forward-transfer tables and the variance
//! report.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::env::TaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PhaseKind {
    AgnosticExplore,
    AgnosticCompress,
    Progress,
    Compress,
    Fisher,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::AgnosticExplore => "agnostic_explore",
            PhaseKind::AgnosticCompress => "agnostic_compress",
            PhaseKind::Progress => "progress",
            PhaseKind::Compress => "compress",
            PhaseKind::Fisher => "fisher",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "event", rename_all = "snake_case"))]
pub enum MetricEvent {
    Episode {
        score: f64,
    },
    Update {
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
        grad_norm: f64,
        penalty: f64,
    },
    Distill {
        kl: f64,
        penalty: f64,
        penalty_active: bool,
        grad_norm: f64,
    },
    Intrinsic {
        mean: f64,
        max: f64,
        forward_loss: f64,
        feature_variance: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRecord {
    pub step: u64,
    pub phase: PhaseKind,
    pub task: TaskKind,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub visit: Option<usize>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub sample: Option<usize>,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub event: MetricEvent,
}

pub trait MetricSink {
    fn record(&mut self, rec: &MetricRecord);
}

impl MetricSink for Vec<MetricRecord> {
    fn record(&mut self, rec: &MetricRecord) {
        self.push(rec.clone());
    }
}

/// Drops everything.
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _: &MetricRecord) {}
}

/// Stamps events with the current phase context.
pub struct Recorder<'a> {
    pub sink: &'a mut dyn MetricSink,
    pub phase: PhaseKind,
    pub task: TaskKind,
    pub visit: Option<usize>,
    pub sample: Option<usize>,
}

impl Recorder<'_> {
    pub fn emit(&mut self, step: u64, event: MetricEvent) {
        let rec = MetricRecord { step, phase: self.phase, task: self.task, visit: self.visit, sample: self.sample, event };
        self.sink.record(&rec);
    }
}

/// Trailing mean over the last `min(window, available)` scores, one value per
/// input score.
pub fn rolling_score(scores: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(scores.len());
    for i in 0..scores.len() {
        let n = (i + 1).min(window);
        out.push(scores[i + 1 - n..=i].iter().sum::<f64>() / n as f64);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Arrow {
    Up,
    Down,
}

impl Arrow {
    pub fn symbol(self) -> &'static str {
        match self {
            Arrow::Up => "up",
            Arrow::Down => "down",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransferCell {
    pub algorithm: String,
    pub visit: usize,
    pub task: TaskKind,
    pub score: Option<f64>,
    pub arrow: Option<Arrow>,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransferTable {
    /// Sorted by `(algorithm, task, visit)`.
    pub cells: Vec<TransferCell>,
}

/// Final-window score of one (algorithm, visit, task) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalScore {
    pub algorithm: String,
    pub visit: usize,
    pub task: TaskKind,
    pub score: Option<f64>,
}

/// Builds the table; each cell's arrow compares it strictly with the same
/// (algorithm, task) cell of the previous visit. Ties and missing neighbours
/// get no arrow.
pub fn transfer_table(scores: &[FinalScore]) -> TransferTable {
    let mut by_key: BTreeMap<(String, TaskKind, usize), Option<f64>> = BTreeMap::new();
    for s in scores {
        by_key.insert((s.algorithm.clone(), s.task, s.visit), s.score);
    }
    let cells = by_key
        .iter()
        .map(|((alg, task, visit), score)| {
            let prev = visit
                .checked_sub(1)
                .and_then(|pv| by_key.get(&(alg.clone(), *task, pv)))
                .copied()
                .flatten();
            let arrow = match (prev, *score) {
                (Some(p), Some(s)) if s > p => Some(Arrow::Up),
                (Some(p), Some(s)) if s < p => Some(Arrow::Down),
                _ => None,
            };
            TransferCell { algorithm: alg.clone(), visit: *visit, task: *task, score: *score, arrow }
        })
        .collect();
    TransferTable { cells }
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlgorithmVariance {
    pub across_visits: f64,
    pub across_tasks: f64,
    /// Mean over visits of the min-max normalized score, per task.
    pub normalized: BTreeMap<TaskKind, f64>,
    pub mean_normalized: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceReport {
    pub algorithms: BTreeMap<String, AlgorithmVariance>,
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Per-task min-max over all present cells; a task whose cells are all equal
/// normalizes to 1.
pub fn normalize_scores(table: &TransferTable) -> BTreeMap<(String, TaskKind, usize), f64> {
    let mut range: BTreeMap<TaskKind, (f64, f64)> = BTreeMap::new();
    for c in &table.cells {
        if let Some(s) = c.score {
            let e = range.entry(c.task).or_insert((s, s));
            e.0 = e.0.min(s);
            e.1 = e.1.max(s);
        }
    }
    let mut out = BTreeMap::new();
    for c in &table.cells {
        if let Some(s) = c.score {
            let (lo, hi) = range[&c.task];
            let v = if hi > lo { (s - lo) / (hi - lo) } else { 1.0 };
            out.insert((c.algorithm.clone(), c.task, c.visit), v);
        }
    }
    out
}

pub fn variance_report(table: &TransferTable) -> VarianceReport {
    let norm = normalize_scores(table);
    let mut algs: BTreeMap<String, Vec<&TransferCell>> = BTreeMap::new();
    for c in &table.cells {
        algs.entry(c.algorithm.clone()).or_default().push(c);
    }
    let mut report = VarianceReport::default();
    for (alg, cells) in algs {
        let mut per_task: BTreeMap<TaskKind, Vec<f64>> = BTreeMap::new();
        let mut per_visit: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut norm_task: BTreeMap<TaskKind, Vec<f64>> = BTreeMap::new();
        for c in cells {
            if let Some(s) = c.score {
                per_task.entry(c.task).or_default().push(s);
                per_visit.entry(c.visit).or_default().push(s);
                norm_task.entry(c.task).or_default().push(norm[&(alg.clone(), c.task, c.visit)]);
            }
        }
        let across_visits = mean(&per_task.values().map(|v| population_variance(v)).collect::<Vec<_>>());
        let across_tasks = mean(&per_visit.values().map(|v| population_variance(v)).collect::<Vec<_>>());
        let normalized: BTreeMap<TaskKind, f64> = norm_task.iter().map(|(t, v)| (*t, mean(v))).collect();
        let mean_normalized = mean(&normalized.values().copied().collect::<Vec<_>>());
        report.algorithms.insert(alg, AlgorithmVariance { across_visits, across_tasks, normalized, mean_normalized });
    }
    report
}
