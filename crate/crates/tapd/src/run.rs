//! Run directories: configuration, manifest, metrics stream and checkpoints.
//!
//! ```text
//! <run>/config.cfg          canonical configuration
//! <run>/manifest.json       RunManifest
//! <run>/metrics.jsonl       one MetricRecord per line
//! <run>/checkpoints/latest  snapshot after the last completed unit
//! <run>/checkpoints/final   snapshot of the finished run
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tapd_core::metrics::{MetricRecord, MetricSink};
use tapd_core::schedule::{Experiment, ExperimentConfig, PhaseRecord};

use crate::checkpoint::{load_snapshot, save_snapshot};
use crate::config::{config_hash, parse_config, render_config};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.jsonl";
pub const CONFIG: &str = "config.cfg";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checksums {
    pub active: String,
    pub kb: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Canonical configuration text; `config_hash` is its SHA-256.
    pub config: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub global_step: u64,
    pub units_completed: usize,
    pub units_total: usize,
    pub records: Vec<PhaseRecord>,
    /// Paths relative to the run directory.
    pub metrics: String,
    pub checkpoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksums: Option<Checksums>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(Error::json(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(Error::json(path))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text + "\n").map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }

    /// Parses the embedded configuration and checks it against the hash.
    pub fn experiment_config(&self, path: &Path) -> Result<ExperimentConfig> {
        let cfg = parse_config(&self.config)?;
        if config_hash(&cfg) != self.config_hash {
            return Err(Error::format(path, "config hash does not match the embedded configuration"));
        }
        Ok(cfg)
    }
}

/// Writes metric records as JSON lines. IO errors are held until
/// [`JsonlSink::finish`] since the sink interface cannot fail.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
    lines: u64,
    error: Option<Error>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(Error::io(path))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file), lines: 0, error: None })
    }

    /// Opens an existing stream keeping only its first `keep` lines.
    pub fn truncate_to(path: &Path, keep: u64) -> Result<Self> {
        let file = File::open(path).map_err(Error::io(path))?;
        let mut bytes = 0u64;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        for _ in 0..keep {
            line.clear();
            let n = reader.read_line(&mut line).map_err(Error::io(path))?;
            if n == 0 || !line.ends_with('\n') {
                return Err(Error::format(path, format!("metrics stream holds fewer than {keep} lines")));
            }
            bytes += n as u64;
        }
        let file = OpenOptions::new().write(true).open(path).map_err(Error::io(path))?;
        file.set_len(bytes).map_err(Error::io(path))?;
        let file = OpenOptions::new().append(true).open(path).map_err(Error::io(path))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file), lines: keep, error: None })
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush().map_err(Error::io(&self.path))
    }

    pub fn finish(mut self) -> Result<u64> {
        self.flush()?;
        Ok(self.lines)
    }
}

impl MetricSink for JsonlSink {
    fn record(&mut self, rec: &MetricRecord) {
        if self.error.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.out, rec)
            .map_err(Error::json(&self.path))
            .and_then(|_| self.out.write_all(b"\n").map_err(Error::io(&self.path)));
        match res {
            Ok(()) => self.lines += 1,
            Err(e) => self.error = Some(e),
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Options for [`train`] and [`resume`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Stop after this many units in this invocation; the run stays resumable.
    pub max_units: Option<usize>,
}

fn checksums(exp: &Experiment) -> Checksums {
    Checksums {
        active: format!("{:016x}", exp.assembly().active().checksum()),
        kb: format!("{:016x}", exp.assembly().kb().checksum()),
    }
}

fn drive(dir: &Path, mut exp: Experiment, mut sink: JsonlSink, mut manifest: RunManifest, opts: RunOptions) -> Result<RunManifest> {
    let manifest_path = dir.join(MANIFEST);
    let latest = dir.join("checkpoints").join("latest");
    let mut done = 0;
    while !exp.is_finished() && opts.max_units.is_none_or(|m| done < m) {
        if let Err(e) = exp.run_next(&mut sink) {
            sink.flush()?;
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.records = exp.records().to_vec();
            manifest.global_step = exp.global_step();
            manifest.save(&manifest_path)?;
            return Err(e.into());
        }
        done += 1;
        sink.flush()?;
        save_snapshot(&latest, &exp.snapshot(), sink.lines())?;
        manifest.records = exp.records().to_vec();
        manifest.global_step = exp.global_step();
        manifest.units_completed = exp.next_unit();
        manifest.checkpoints = vec!["checkpoints/latest".into()];
        log::info!("unit {}/{} done at step {}", manifest.units_completed, manifest.units_total, manifest.global_step);
        manifest.save(&manifest_path)?;
    }
    let lines = sink.finish()?;
    if exp.is_finished() {
        let fin = dir.join("checkpoints").join("final");
        save_snapshot(&fin, &exp.snapshot(), lines)?;
        manifest.status = RunStatus::Completed;
        manifest.checkpoints = vec!["checkpoints/latest".into(), "checkpoints/final".into()];
        manifest.checksums = Some(checksums(&exp));
        manifest.save(&manifest_path)?;
    }
    Ok(manifest)
}

/// Starts a fresh run in `dir` (created if needed; an existing manifest is
/// an error).
pub fn train(cfg: &ExperimentConfig, dir: &Path, opts: RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        return Err(Error::format(&manifest_path, "run directory already holds a manifest; use resume"));
    }
    let text = render_config(cfg);
    let cfg_path = dir.join(CONFIG);
    fs::write(&cfg_path, &text).map_err(Error::io(&cfg_path))?;
    let exp = Experiment::new(cfg.clone())?;
    let manifest = RunManifest {
        config_hash: config_hash(cfg),
        config: text,
        status: RunStatus::Running,
        error: None,
        global_step: 0,
        units_completed: 0,
        units_total: exp.units().len(),
        records: Vec::new(),
        metrics: METRICS.into(),
        checkpoints: Vec::new(),
        checksums: None,
    };
    manifest.save(&manifest_path)?;
    let sink = JsonlSink::create(&dir.join(METRICS))?;
    drive(dir, exp, sink, manifest, opts)
}

/// Continues a run from its latest checkpoint. Metrics written after that
/// checkpoint are discarded and regenerated, so a resumed run produces the
/// same files as an uninterrupted one.
pub fn resume(manifest_path: &Path, opts: RunOptions) -> Result<RunManifest> {
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = RunManifest::load(manifest_path)?;
    let cfg = manifest.experiment_config(manifest_path)?;
    if manifest.status == RunStatus::Completed {
        return Ok(manifest);
    }
    let latest = dir.join("checkpoints").join("latest");
    let (exp, lines) = if latest.join("state.json").exists() {
        let (snap, lines) = load_snapshot(&latest)?;
        (Experiment::from_snapshot(cfg, snap)?, lines)
    } else {
        (Experiment::new(cfg)?, 0)
    };
    let sink = JsonlSink::truncate_to(&dir.join(&manifest.metrics), lines)?;
    manifest.status = RunStatus::Running;
    manifest.error = None;
    manifest.records = exp.records().to_vec();
    manifest.global_step = exp.global_step();
    manifest.units_completed = exp.next_unit();
    drive(&dir, exp, sink, manifest, opts)
}
