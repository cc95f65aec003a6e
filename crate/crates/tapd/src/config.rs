//! Flat `key=value` experiment configuration files.
//!
//! Keys are the hyperparameter names of the reference table (`lr`,
//! `ewc-lambda`, `num-steps`, ...) plus a handful of artifact keys
//! (`algorithm`, `variation`, `profile`, `seed`, `tasks`, ...). The `profile`
//! key selects the base configuration; every other key overrides it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use tapd_core::env::TaskKind;
use tapd_core::schedule::{Algorithm, ExperimentConfig, Profile};

use crate::error::{Error, Result};

/// Every accepted key, in rendering order.
pub const KEYS: &[&str] = &[
    "algorithm",
    "variation",
    "profile",
    "seed",
    "tasks",
    "agnostic-tasks",
    "agnostic-phase",
    "obs-size",
    "frame-skip",
    "max-episode-steps",
    "num-processes",
    "num-steps",
    "num-env-steps-progress",
    "num-env-steps-agnostic",
    "num-env-steps-agnostic-compress",
    "num-env-steps-compress",
    "num-samples-drawn-in-task-agnostic-phase",
    "num-visits",
    "num-steps-fisher",
    "batch-size-fisher",
    "lr",
    "eps",
    "alpha",
    "gamma",
    "entropy-coef",
    "value-loss-coef",
    "max-grad-norm",
    "ewc-lambda",
    "ewc-gamma",
    "ewc-start",
    "intrinsic-eps",
    "freeze-encoder",
    "eval-steps",
    "eval-window",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

/// Accepts plain integers and scientific notation that denotes one (`3e5`).
fn parse_count(key: &str, value: &str) -> Result<u64> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = parse_value(key, value)?;
    if f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(53) {
        Ok(f as u64)
    } else {
        Err(Error::Config(format!("`{key}` must be a nonnegative integer, got `{value}`")))
    }
}

fn parse_tasks(key: &str, value: &str) -> Result<Vec<TaskKind>> {
    let tasks: Vec<TaskKind> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| TaskKind::from_name(s).map_err(Error::from))
        .collect::<Result<_>>()?;
    if tasks.is_empty() {
        return Err(Error::Config(format!("`{key}` lists no tasks")));
    }
    Ok(tasks)
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str, agnostic_phase: &mut Option<bool>) -> Result<()> {
    let count = |v| parse_count(key, v);
    match key {
        "algorithm" => cfg.algorithm = Algorithm::from_name(value)?,
        "variation" => cfg.variation = parse_value(key, value)?,
        "profile" => {}
        "seed" => cfg.seed = parse_value(key, value)?,
        "tasks" => cfg.tasks = parse_tasks(key, value)?,
        "agnostic-tasks" => cfg.agnostic_tasks = parse_tasks(key, value)?,
        "agnostic-phase" => *agnostic_phase = Some(parse_bool(key, value)?),
        "obs-size" => cfg.env.obs_size = count(value)? as usize,
        "frame-skip" => cfg.env.frame_skip = count(value)? as usize,
        "max-episode-steps" => cfg.env.max_episode_steps = count(value)? as usize,
        "num-processes" => cfg.num_processes = count(value)? as usize,
        "num-steps" => cfg.num_steps = count(value)? as usize,
        "num-env-steps-progress" => cfg.steps_active = count(value)?,
        "num-env-steps-agnostic" => cfg.steps_agnostic = count(value)?,
        "num-env-steps-agnostic-compress" => cfg.steps_agnostic_compress = count(value)?,
        "num-env-steps-compress" => cfg.steps_compress = count(value)?,
        "num-samples-drawn-in-task-agnostic-phase" => cfg.agnostic_samples = count(value)? as usize,
        "num-visits" => cfg.visits = count(value)? as usize,
        "num-steps-fisher" => cfg.fisher.steps = count(value)? as usize,
        "batch-size-fisher" => cfg.fisher.batch = count(value)? as usize,
        "lr" => cfg.optim.lr = parse_value(key, value)?,
        "eps" => cfg.optim.eps = parse_value(key, value)?,
        "alpha" => cfg.optim.alpha = parse_value(key, value)?,
        "gamma" => cfg.a2c.gamma = parse_value(key, value)?,
        "entropy-coef" => cfg.a2c.entropy_coef = parse_value(key, value)?,
        "value-loss-coef" => cfg.a2c.value_loss_coef = parse_value(key, value)?,
        "max-grad-norm" => cfg.a2c.max_grad_norm = parse_value(key, value)?,
        "ewc-lambda" => cfg.ewc.lambda = parse_value(key, value)?,
        "ewc-gamma" => cfg.ewc.gamma = parse_value(key, value)?,
        "ewc-start" => cfg.ewc.start = count(value)?,
        "intrinsic-eps" => cfg.intrinsic.eps = parse_value(key, value)?,
        "freeze-encoder" => cfg.intrinsic.freeze_encoder = parse_bool(key, value)?,
        "eval-steps" => cfg.eval_steps = count(value)?,
        "eval-window" => cfg.eval_window = count(value)? as usize,
        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// Parses a configuration document. Lines are `key = value`; `#` starts a
/// comment. Unknown and repeated keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key=value`, got `{line}`", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
        pairs.push((key, value));
    }
    let profile = match pairs.iter().find(|(k, _)| *k == "profile") {
        Some((_, v)) => Profile::from_name(v)?,
        None => Profile::Toy,
    };
    let mut cfg = ExperimentConfig::for_profile(profile);
    let mut agnostic_phase = None;
    for (key, value) in pairs {
        apply(&mut cfg, key, value, &mut agnostic_phase)?;
    }
    if let Some(flag) = agnostic_phase {
        if flag != (cfg.algorithm == Algorithm::Tapd) {
            return Err(Error::Config(format!(
                "agnostic-phase = {flag} contradicts algorithm `{}`",
                cfg.algorithm
            )));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn join(tasks: &[TaskKind]) -> String {
    tasks.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")
}

/// Canonical rendering: every key, fixed order, shortest round-trip floats.
/// `parse_config(&render_config(c)) == c` for every valid `c`.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    put("algorithm", cfg.algorithm.name().into());
    put("variation", cfg.variation.to_string());
    put("profile", cfg.profile.name().into());
    put("seed", cfg.seed.to_string());
    put("tasks", join(&cfg.tasks));
    put("agnostic-tasks", join(&cfg.agnostic_tasks));
    put("agnostic-phase", (cfg.algorithm == Algorithm::Tapd).to_string());
    put("obs-size", cfg.env.obs_size.to_string());
    put("frame-skip", cfg.env.frame_skip.to_string());
    put("max-episode-steps", cfg.env.max_episode_steps.to_string());
    put("num-processes", cfg.num_processes.to_string());
    put("num-steps", cfg.num_steps.to_string());
    put("num-env-steps-progress", cfg.steps_active.to_string());
    put("num-env-steps-agnostic", cfg.steps_agnostic.to_string());
    put("num-env-steps-agnostic-compress", cfg.steps_agnostic_compress.to_string());
    put("num-env-steps-compress", cfg.steps_compress.to_string());
    put("num-samples-drawn-in-task-agnostic-phase", cfg.agnostic_samples.to_string());
    put("num-visits", cfg.visits.to_string());
    put("num-steps-fisher", cfg.fisher.steps.to_string());
    put("batch-size-fisher", cfg.fisher.batch.to_string());
    put("lr", cfg.optim.lr.to_string());
    put("eps", cfg.optim.eps.to_string());
    put("alpha", cfg.optim.alpha.to_string());
    put("gamma", cfg.a2c.gamma.to_string());
    put("entropy-coef", cfg.a2c.entropy_coef.to_string());
    put("value-loss-coef", cfg.a2c.value_loss_coef.to_string());
    put("max-grad-norm", cfg.a2c.max_grad_norm.to_string());
    put("ewc-lambda", cfg.ewc.lambda.to_string());
    put("ewc-gamma", cfg.ewc.gamma.to_string());
    put("ewc-start", cfg.ewc.start.to_string());
    put("intrinsic-eps", cfg.intrinsic.eps.to_string());
    put("freeze-encoder", cfg.intrinsic.freeze_encoder.to_string());
    put("eval-steps", cfg.eval_steps.to_string());
    put("eval-window", cfg.eval_window.to_string());
    out
}

/// Hex SHA-256 of the canonical rendering.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(render_config(cfg).as_bytes()))
}
