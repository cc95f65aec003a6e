//! Offline reports computed purely from metric streams.
//!
//! Visits are 1-based in every report file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tapd_core::env::TaskKind;
use tapd_core::metrics::{
    rolling_score, transfer_table, variance_report, Arrow, FinalScore, MetricEvent, MetricRecord, PhaseKind,
    TransferCell, TransferTable, VarianceReport,
};
use tapd_core::schedule::ExperimentConfig;

use crate::error::{Error, Result};
use crate::run::{read_metrics, RunManifest};

pub const SCORES_HEADER: &str = "step,task,visit,score";
pub const ENTROPY_HEADER: &str = "step,task,visit,entropy";
pub const TRANSFER_HEADER: &str = "algorithm,visit,task,score,arrow";
pub const PLOT_SCRIPT: &str = include_str!("plot_reports.py");

fn progress_episodes(records: &[MetricRecord]) -> BTreeMap<(usize, TaskKind), Vec<(u64, f64)>> {
    let mut out: BTreeMap<(usize, TaskKind), Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        if let (PhaseKind::Progress, Some(v), MetricEvent::Episode { score }) = (r.phase, r.visit, &r.event) {
            out.entry((v, r.task)).or_default().push((r.step, *score));
        }
    }
    out
}

/// Rolling raw score over each progress phase, one row per episode.
pub fn scores_csv(records: &[MetricRecord], window: usize) -> String {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for ((visit, task), eps) in progress_episodes(records) {
        let scores: Vec<f64> = eps.iter().map(|e| e.1).collect();
        for ((step, _), s) in eps.iter().zip(rolling_score(&scores, window)) {
            let _ = writeln!(out, "{step},{task},{},{s}", visit + 1);
        }
    }
    out
}

/// Mean policy entropy of each progress update.
pub fn entropy_csv(records: &[MetricRecord]) -> String {
    let mut rows: BTreeMap<(usize, TaskKind), Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        if let (PhaseKind::Progress, Some(v), MetricEvent::Update { entropy, .. }) = (r.phase, r.visit, &r.event) {
            rows.entry((v, r.task)).or_default().push((r.step, *entropy));
        }
    }
    let mut out = String::from(ENTROPY_HEADER);
    out.push('\n');
    for ((visit, task), xs) in rows {
        for (step, e) in xs {
            let _ = writeln!(out, "{step},{task},{},{e}", visit + 1);
        }
    }
    out
}

/// Mean of the last `window` progress episodes of every configured
/// (visit, task) cell; cells without episodes are absent.
pub fn final_scores(records: &[MetricRecord], cfg: &ExperimentConfig, algorithm: &str) -> Vec<FinalScore> {
    let eps = progress_episodes(records);
    let mut out = Vec::new();
    for visit in 0..cfg.visits {
        for &task in &cfg.tasks {
            let score = eps.get(&(visit, task)).filter(|e| !e.is_empty()).map(|e| {
                let tail = &e[e.len().saturating_sub(cfg.eval_window)..];
                tail.iter().map(|x| x.1).sum::<f64>() / tail.len() as f64
            });
            out.push(FinalScore { algorithm: algorithm.to_string(), visit, task, score });
        }
    }
    out
}

pub fn transfer_table_csv(table: &TransferTable) -> String {
    let mut out = String::from(TRANSFER_HEADER);
    out.push('\n');
    for c in &table.cells {
        let score = c.score.map(|s| s.to_string()).unwrap_or_default();
        let arrow = c.arrow.map(Arrow::symbol).unwrap_or("");
        let _ = writeln!(out, "{},{},{},{score},{arrow}", c.algorithm, c.visit + 1, c.task);
    }
    out
}

pub fn parse_transfer_table_csv(text: &str, path: &Path) -> Result<TransferTable> {
    let mut lines = text.lines();
    if lines.next() != Some(TRANSFER_HEADER) {
        return Err(Error::format(path, format!("expected header `{TRANSFER_HEADER}`")));
    }
    let mut cells = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = |what: &str| Error::format(path, format!("row {}: {what}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let visit: usize = f[1].parse().map_err(|_| bad("bad visit"))?;
        let visit = visit.checked_sub(1).ok_or_else(|| bad("visits start at 1"))?;
        let task = TaskKind::from_name(f[2]).map_err(|_| bad("unknown task"))?;
        let score = match f[3] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("bad score"))?),
        };
        let arrow = match f[4] {
            "" => None,
            "up" => Some(Arrow::Up),
            "down" => Some(Arrow::Down),
            _ => return Err(bad("bad arrow")),
        };
        cells.push(TransferCell { algorithm: f[0].to_string(), visit, task, score, arrow });
    }
    Ok(TransferTable { cells })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}

/// One loaded run.
pub struct RunData {
    pub label: String,
    pub config: ExperimentConfig,
    pub records: Vec<MetricRecord>,
}

pub fn load_run(manifest_path: &Path) -> Result<RunData> {
    let manifest = RunManifest::load(manifest_path)?;
    let config = manifest.experiment_config(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let records = read_metrics(&dir.join(&manifest.metrics))?;
    let label = config.algorithm.name().to_string();
    Ok(RunData { label, config, records })
}

/// Combined table over runs. Runs sharing an algorithm are averaged cell by
/// cell (e.g. several seeds).
pub fn combined_table(runs: &[RunData]) -> TransferTable {
    let mut sums: BTreeMap<(String, TaskKind, usize), (f64, usize, bool)> = BTreeMap::new();
    for run in runs {
        for s in final_scores(&run.records, &run.config, &run.label) {
            let e = sums.entry((s.algorithm, s.task, s.visit)).or_insert((0.0, 0, false));
            match s.score {
                Some(v) => {
                    e.0 += v;
                    e.1 += 1;
                }
                None => e.2 = true,
            }
        }
    }
    let scores: Vec<FinalScore> = sums
        .into_iter()
        .map(|((algorithm, task, visit), (sum, n, missing))| FinalScore {
            algorithm,
            visit,
            task,
            score: (n > 0 && !missing).then(|| sum / n as f64),
        })
        .collect();
    transfer_table(&scores)
}

/// Writes every report for the given runs into `out`. Per-run curves go to
/// `out` directly for a single run and to `out/<label>-<n>/` otherwise.
/// Returns the written paths.
pub fn emit_reports(runs: &[RunData], out: &Path, format: TableFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: &str| -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        fs::write(&path, text).map_err(Error::io(&path))?;
        written.push(path);
        Ok(())
    };
    for (i, run) in runs.iter().enumerate() {
        let dir = if runs.len() == 1 { out.to_path_buf() } else { out.join(format!("{}-{i}", run.label)) };
        put(dir.join("scores.csv"), &scores_csv(&run.records, run.config.eval_window))?;
        put(dir.join("entropy.csv"), &entropy_csv(&run.records))?;
    }
    let table = combined_table(runs);
    match format {
        TableFormat::Csv => put(out.join("transfer_table.csv"), &transfer_table_csv(&table))?,
        TableFormat::Json => {
            let path = out.join("transfer_table.json");
            let text = serde_json::to_string_pretty(&table).map_err(Error::json(&path))?;
            put(path, &(text + "\n"))?
        }
    }
    let report: VarianceReport = variance_report(&table);
    let path = out.join("variance_report.json");
    let text = serde_json::to_string_pretty(&report).map_err(Error::json(&path))?;
    put(path, &(text + "\n"))?;
    put(out.join("plot_reports.py"), PLOT_SCRIPT)?;
    Ok(written)
}
