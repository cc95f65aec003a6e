//! Experiment configuration and phase orchestration: the task-agnostic
//! explore/compress loop, progress phases, compress phases and the multi-visit
//! outer loop, for TAPD and the two baselines.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::a2c::{a2c_update, collect_rollout, A2cConfig, Acting, Regularizer, RewardSource};
use crate::columns::{AgentAssembly, Mode, Role};
use crate::consolidation::{
    compress_phase, estimate_fisher_diag, CompressConfig, EwcConfig, EwcPenalty, EwcState, FisherConfig,
};
use crate::curiosity::{ForwardModel, ForwardModelSpec, IntrinsicConfig};
use crate::env::{sample_task, EnvConfig, TaskId, TaskKind, VectorEnv};
use crate::error::{config_err, contract_err, Result};
use crate::metrics::{MetricEvent, MetricSink, PhaseKind, Recorder};
use crate::nn::{NetworkSpec, RmspropConfig, RmspropState, TensorMap};
use crate::rng::{derive_seed, domain, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Algorithm {
    Tapd,
    PncBaseline,
    OnlineEwcBaseline,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Tapd, Algorithm::PncBaseline, Algorithm::OnlineEwcBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tapd => "tapd",
            Algorithm::PncBaseline => "pnc_baseline",
            Algorithm::OnlineEwcBaseline => "online_ewc_baseline",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| config_err!("unknown algorithm `{s}`"))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Profile {
    /// 12x12 observations, small networks, desk-scale budgets.
    Toy,
    /// 84x84 observations, full-size networks, full budgets.
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Toy => "toy",
            Profile::Paper => "paper",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Profile::Toy),
            "paper" => Ok(Profile::Paper),
            _ => Err(config_err!("unknown profile `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub variation: u8,
    pub profile: Profile,
    pub seed: u64,
    pub tasks: Vec<TaskKind>,
    pub agnostic_tasks: Vec<TaskKind>,
    pub env: EnvConfig,
    pub num_processes: usize,
    pub num_steps: usize,
    pub steps_active: u64,
    pub steps_agnostic: u64,
    pub steps_agnostic_compress: u64,
    pub steps_compress: u64,
    pub agnostic_samples: usize,
    pub visits: usize,
    pub fisher: FisherConfig,
    pub optim: RmspropConfig,
    pub a2c: A2cConfig,
    pub ewc: EwcConfig,
    pub intrinsic: IntrinsicConfig,
    /// Episodes in the final evaluation window of a progress phase.
    pub eval_window: usize,
    /// Accepted for compatibility; scores come from training episodes.
    pub eval_steps: u64,
}

impl ExperimentConfig {
    pub fn toy() -> Self {
        Self {
            algorithm: Algorithm::Tapd,
            variation: 1,
            profile: Profile::Toy,
            seed: 0,
            tasks: alloc::vec![TaskKind::Volley, TaskKind::Swarm, TaskKind::Raid],
            agnostic_tasks: alloc::vec![TaskKind::Swarm, TaskKind::Raid],
            env: EnvConfig { obs_size: 12, frame_skip: 4, max_episode_steps: 100 },
            num_processes: 10,
            num_steps: 20,
            steps_active: 50_000,
            steps_agnostic: 10_000,
            steps_agnostic_compress: 10_000,
            steps_compress: 10_000,
            agnostic_samples: 6,
            visits: 3,
            fisher: FisherConfig::default(),
            optim: RmspropConfig::default(),
            a2c: A2cConfig::default(),
            ewc: EwcConfig { start: 3_000, ..EwcConfig::default() },
            intrinsic: IntrinsicConfig::default(),
            eval_window: 100,
            eval_steps: 100_000,
        }
    }

    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            tasks: alloc::vec![TaskKind::Volley, TaskKind::Swarm, TaskKind::Raid, TaskKind::Chase, TaskKind::Dodge],
            env: EnvConfig { obs_size: 84, frame_skip: 4, max_episode_steps: 500 },
            steps_active: 2_500_000,
            steps_agnostic: 300_000,
            steps_agnostic_compress: 300_000,
            steps_compress: 300_000,
            agnostic_samples: 25,
            ewc: EwcConfig::default(),
            ..Self::toy()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Toy => Self::toy(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        match self.profile {
            Profile::Toy => NetworkSpec::toy_actor_critic(self.env.obs_size),
            Profile::Paper => NetworkSpec::atari_actor_critic(),
        }
    }

    pub fn forward_model_spec(&self) -> ForwardModelSpec {
        match self.profile {
            Profile::Toy => ForwardModelSpec::toy(self.env.obs_size),
            Profile::Paper => ForwardModelSpec::atari(),
        }
    }

    pub fn rollout_size(&self) -> u64 {
        (self.num_processes * self.num_steps) as u64
    }

    fn uses_agnostic(&self) -> bool {
        self.algorithm == Algorithm::Tapd
    }

    fn agnostic_units(&self) -> usize {
        match (self.uses_agnostic(), self.variation) {
            (false, _) => 0,
            (true, 3) => self.agnostic_samples.min(1),
            (true, _) => self.agnostic_samples,
        }
    }

    /// Task set sampled in the task-agnostic phase.
    pub fn agnostic_set(&self) -> Vec<TaskKind> {
        if self.variation == 2 {
            self.agnostic_tasks.iter().take(1).copied().collect()
        } else {
            self.agnostic_tasks.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.variation) {
            return Err(config_err!("variation must be 1, 2 or 3, got {}", self.variation));
        }
        if self.num_processes == 0 || self.num_steps == 0 {
            return Err(config_err!("num-processes and num-steps must be positive"));
        }
        self.env.validate()?;
        self.intrinsic.validate()?;
        if self.profile == Profile::Paper && self.env.obs_size != 84 {
            return Err(config_err!("the paper profile uses 84x84 observations"));
        }
        if self.visits > 0 && self.tasks.is_empty() {
            return Err(config_err!("no progress tasks configured"));
        }
        if self.agnostic_units() > 0 && self.agnostic_tasks.is_empty() {
            return Err(config_err!("the task-agnostic phase needs at least one agnostic task"));
        }
        let per = self.rollout_size();
        for (name, v) in [
            ("num-env-steps-progress", self.steps_active),
            ("num-env-steps-agnostic", self.steps_agnostic),
            ("num-env-steps-agnostic-compress", self.steps_agnostic_compress),
            ("num-env-steps-compress", self.steps_compress),
            ("fisher samples", self.fisher.samples() as u64),
        ] {
            if v % per != 0 {
                return Err(config_err!("{name} = {v} is not a multiple of num-processes x num-steps = {per}"));
            }
        }
        if !(self.ewc.lambda >= 0.0 && self.ewc.gamma >= 0.0) {
            return Err(config_err!("ewc-lambda and ewc-gamma must be nonnegative"));
        }
        if self.eval_window == 0 {
            return Err(config_err!("evaluation window must be positive"));
        }
        crate::nn::RmspropState::new(
            &crate::nn::ParameterStore::new(TensorMap::new(), 0),
            self.optim,
        )?;
        Ok(())
    }

    pub fn compress_config(&self, steps: u64) -> CompressConfig {
        CompressConfig {
            steps,
            num_steps: self.num_steps,
            fisher: self.fisher,
            gamma: self.a2c.gamma,
            max_grad_norm: self.a2c.max_grad_norm,
        }
    }
}

/// One resumable step of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "unit", rename_all = "snake_case"))]
pub enum Unit {
    Agnostic { sample: usize },
    Visit { visit: usize, task: usize },
}

pub fn plan(cfg: &ExperimentConfig) -> Vec<Unit> {
    let mut units: Vec<Unit> = (0..cfg.agnostic_units()).map(|sample| Unit::Agnostic { sample }).collect();
    for visit in 0..cfg.visits {
        for task in 0..cfg.tasks.len() {
            units.push(Unit::Visit { visit, task });
        }
    }
    units
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseRecord {
    pub kind: PhaseKind,
    pub task: TaskKind,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub visit: Option<usize>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub sample: Option<usize>,
    pub start_step: u64,
    pub end_step: u64,
    pub summary: BTreeMap<String, f64>,
}

/// Everything needed to continue an experiment after its last completed unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub global_step: u64,
    pub next_unit: usize,
    pub records: Vec<PhaseRecord>,
    pub lateral_enabled: bool,
    pub active: TensorMap,
    pub active_seed: u64,
    pub kb: TensorMap,
    pub kb_seed: u64,
    pub active_opt: TensorMap,
    pub kb_opt: TensorMap,
    pub forward_model: Option<(TensorMap, TensorMap)>,
    pub ewc: EwcState,
}

pub struct Experiment {
    cfg: ExperimentConfig,
    units: Vec<Unit>,
    asm: AgentAssembly,
    fm: Option<ForwardModel>,
    ewc: EwcState,
    active_opt: RmspropState,
    kb_opt: RmspropState,
    global_step: u64,
    next_unit: usize,
    records: Vec<PhaseRecord>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn summary(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let asm = AgentAssembly::new(&cfg.network_spec(), cfg.seed)?;
        let fm = if cfg.agnostic_units() > 0 {
            Some(ForwardModel::new(
                &cfg.forward_model_spec(),
                derive_seed(cfg.seed, &[domain::FORWARD_MODEL_INIT]),
                cfg.optim,
            )?)
        } else {
            None
        };
        let ewc_params = match cfg.algorithm {
            Algorithm::OnlineEwcBaseline => asm.active().params(),
            _ => asm.kb().params(),
        };
        let ewc = EwcState::new(ewc_params, cfg.ewc);
        let active_opt = RmspropState::new(asm.active().params(), cfg.optim)?;
        let kb_opt = RmspropState::new(asm.kb().params(), cfg.optim)?;
        let units = plan(&cfg);
        Ok(Self { cfg, units, asm, fm, ewc, active_opt, kb_opt, global_step: 0, next_unit: 0, records: Vec::new() })
    }

    pub fn from_snapshot(cfg: ExperimentConfig, snap: Snapshot) -> Result<Self> {
        let mut exp = Self::new(cfg)?;
        if snap.next_unit > exp.units.len() {
            return Err(contract_err!("snapshot is past the end of the plan"));
        }
        let active = crate::nn::ParameterStore::new(snap.active, snap.active_seed);
        active.map().check_layout(exp.asm.active().params().map(), "active snapshot")?;
        exp.asm.reinit_active(snap.active_seed)?;
        exp.asm.load_params(Role::Active, &active)?;
        exp.asm.load_params(Role::KnowledgeBase, &crate::nn::ParameterStore::new(snap.kb, snap.kb_seed))?;
        exp.asm.set_lateral_enabled(snap.lateral_enabled);
        snap.active_opt.check_layout(&exp.active_opt.squared_avg, "active optimizer snapshot")?;
        snap.kb_opt.check_layout(&exp.kb_opt.squared_avg, "kb optimizer snapshot")?;
        exp.active_opt.squared_avg = snap.active_opt;
        exp.kb_opt.squared_avg = snap.kb_opt;
        match (&mut exp.fm, snap.forward_model) {
            (Some(fm), Some((p, o))) => {
                let mut opt = fm.optimizer().clone();
                opt.squared_avg = o;
                fm.load(&crate::nn::ParameterStore::new(p, fm.params().seed()), &opt)?;
            }
            (None, None) => {}
            _ => return Err(contract_err!("snapshot forward model does not match the configuration")),
        }
        snap.ewc.anchor.check_layout(&exp.ewc.anchor, "ewc snapshot")?;
        exp.ewc = snap.ewc;
        exp.global_step = snap.global_step;
        exp.next_unit = snap.next_unit;
        exp.records = snap.records;
        Ok(exp)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            global_step: self.global_step,
            next_unit: self.next_unit,
            records: self.records.clone(),
            lateral_enabled: self.asm.lateral_enabled(),
            active: self.asm.active().params().map().clone(),
            active_seed: self.asm.active().params().seed(),
            kb: self.asm.kb().params().map().clone(),
            kb_seed: self.asm.kb().params().seed(),
            active_opt: self.active_opt.squared_avg.clone(),
            kb_opt: self.kb_opt.squared_avg.clone(),
            forward_model: self.fm.as_ref().map(|f| (f.params().map().clone(), f.optimizer().squared_avg.clone())),
            ewc: self.ewc.clone(),
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn assembly(&self) -> &AgentAssembly {
        &self.asm
    }

    pub fn forward_model(&self) -> Option<&ForwardModel> {
        self.fm.as_ref()
    }

    pub fn ewc(&self) -> &EwcState {
        &self.ewc
    }

    pub fn records(&self) -> &[PhaseRecord] {
        &self.records
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn next_unit(&self) -> usize {
        self.next_unit
    }

    pub fn is_finished(&self) -> bool {
        self.next_unit >= self.units.len()
    }

    /// Runs every remaining unit.
    pub fn run(&mut self, sink: &mut dyn MetricSink) -> Result<()> {
        while self.run_next(sink)?.is_some() {}
        Ok(())
    }

    /// Runs the next unit and returns the records it appended, or `None`
    /// when the plan is exhausted.
    pub fn run_next(&mut self, sink: &mut dyn MetricSink) -> Result<Option<&[PhaseRecord]>> {
        let Some(&unit) = self.units.get(self.next_unit) else { return Ok(None) };
        let first = self.records.len();
        match unit {
            Unit::Agnostic { sample } => self.run_agnostic(sample, sink)?,
            Unit::Visit { visit, task } => self.run_visit(visit, task, sink)?,
        }
        self.next_unit += 1;
        Ok(Some(&self.records[first..]))
    }

    fn venv(&self, kind: TaskKind, path: &[u64]) -> Result<VectorEnv> {
        VectorEnv::for_task(kind, derive_seed(self.cfg.seed, path), self.cfg.num_processes, self.cfg.env)
    }

    /// Explore one sampled task on intrinsic reward, then distil it.
    fn run_agnostic(&mut self, sample: usize, sink: &mut dyn MetricSink) -> Result<()> {
        let s = sample as u64;
        let seed = self.cfg.seed;
        let set: Vec<TaskId> = self.cfg.agnostic_set().into_iter().map(|k| TaskId::new(k, 0)).collect();
        let kind = sample_task(&set, &mut rng_from(seed, &[domain::AGNOSTIC_SAMPLER, s]))?.kind;
        self.asm.reinit_active(derive_seed(seed, &[domain::AGNOSTIC_INIT, s]))?;
        self.active_opt.reset();
        let mut venv = self.venv(kind, &[domain::AGNOSTIC_ENV, s])?;
        let mut rng = rng_from(seed, &[domain::AGNOSTIC_ACT, s]);
        let mut rec = Recorder { sink, phase: PhaseKind::AgnosticExplore, task: kind, visit: None, sample: Some(sample) };
        let start = self.global_step;
        let per = self.cfg.rollout_size();
        let fm = self.fm.as_mut().ok_or_else(|| contract_err!("task-agnostic unit without a forward model"))?;
        let mut intrinsic = Vec::new();
        let mut scores = Vec::new();
        for _ in 0..self.cfg.steps_agnostic / per {
            let (mut buf, info) = collect_rollout(
                &Acting { asm: &self.asm, role: Role::Active },
                &mut venv,
                self.cfg.num_steps,
                RewardSource::Intrinsic(fm, &self.cfg.intrinsic),
                &mut rng,
            )?;
            for e in &info.episodes {
                rec.emit(self.global_step + ((e.step + 1) * buf.num_workers) as u64, MetricEvent::Episode { score: e.score });
                scores.push(e.score);
            }
            let cs = fm.curiosity_update(&buf.transitions(), &self.cfg.intrinsic, self.cfg.a2c.max_grad_norm)?;
            let st = a2c_update(&mut self.asm, Role::Active, &mut buf, &mut self.active_opt, &self.cfg.a2c, None)?;
            self.global_step += per;
            let is = info.intrinsic.unwrap_or_default();
            intrinsic.push(is.mean);
            rec.emit(
                self.global_step,
                MetricEvent::Intrinsic {
                    mean: is.mean,
                    max: is.max,
                    forward_loss: is.forward_loss_mean,
                    feature_variance: cs.feature_variance,
                },
            );
            rec.emit(self.global_step, update_event(&st));
        }
        let k = intrinsic.len().min(5);
        self.records.push(PhaseRecord {
            kind: PhaseKind::AgnosticExplore,
            task: kind,
            visit: None,
            sample: Some(sample),
            start_step: start,
            end_step: self.global_step,
            summary: summary(&[
                ("intrinsic_start", mean(&intrinsic[..k])),
                ("intrinsic_end", mean(&intrinsic[intrinsic.len() - k..])),
                ("episodes", scores.len() as f64),
                ("mean_score", mean(&scores)),
            ]),
        });
        let mut venv = self.venv(kind, &[domain::AGNOSTIC_COMPRESS_ENV, s])?;
        let mut rng = rng_from(seed, &[domain::AGNOSTIC_COMPRESS_ACT, s]);
        rec.phase = PhaseKind::AgnosticCompress;
        let out = compress_phase(
            &mut self.asm,
            &mut venv,
            &mut self.ewc,
            &mut self.kb_opt,
            &self.cfg.compress_config(self.cfg.steps_agnostic_compress),
            &mut self.global_step,
            &mut rng,
            &mut rec,
        )?;
        self.records.push(PhaseRecord {
            kind: PhaseKind::AgnosticCompress,
            task: kind,
            visit: None,
            sample: Some(sample),
            start_step: out.start,
            end_step: out.end,
            summary: compress_summary(&out),
        });
        Ok(())
    }

    fn run_visit(&mut self, visit: usize, index: usize, sink: &mut dyn MetricSink) -> Result<()> {
        let kind = self.cfg.tasks[index];
        let (v, i) = (visit as u64, index as u64);
        let seed = self.cfg.seed;
        let ewc_baseline = self.cfg.algorithm == Algorithm::OnlineEwcBaseline;
        if !ewc_baseline {
            self.asm.reinit_active(derive_seed(seed, &[domain::ACTIVE_INIT, v, i]))?;
            self.active_opt.reset();
        }
        let mut rec = Recorder { sink, phase: PhaseKind::Progress, task: kind, visit: Some(visit), sample: None };
        let mut venv = self.venv(kind, &[domain::PROGRESS_ENV, v, i])?;
        let mut rng = rng_from(seed, &[domain::PROGRESS_ACT, v, i]);
        let reg = if ewc_baseline { Some(&self.ewc) } else { None };
        let out = progress_phase(
            &mut self.asm,
            &mut self.active_opt,
            &mut venv,
            &ProgressConfig { steps: self.cfg.steps_active, num_steps: self.cfg.num_steps, a2c: self.cfg.a2c },
            reg,
            &mut self.global_step,
            &mut rng,
            &mut rec,
        )?;
        let (start, scores, entropy) = (out.start, out.scores, out.entropy);
        let w = scores.len().min(self.cfg.eval_window);
        let e = entropy.len().min(5);
        self.records.push(PhaseRecord {
            kind: PhaseKind::Progress,
            task: kind,
            visit: Some(visit),
            sample: None,
            start_step: start,
            end_step: self.global_step,
            summary: summary(&[
                ("episodes", scores.len() as f64),
                ("auc", mean(&scores)),
                ("final_window", mean(&scores[scores.len() - w..])),
                ("entropy_end", mean(&entropy[entropy.len() - e..])),
            ]),
        });
        let mut venv = self.venv(kind, &[domain::COMPRESS_ENV, v, i])?;
        let mut rng = rng_from(seed, &[domain::COMPRESS_ACT, v, i]);
        if ewc_baseline {
            rec.phase = PhaseKind::Fisher;
            let start = self.global_step;
            self.asm.set_mode(Role::Active, Mode::Frozen);
            let (f, used) = estimate_fisher_diag(
                &self.asm,
                Role::Active,
                &mut venv,
                &self.cfg.fisher,
                self.cfg.num_steps,
                self.cfg.a2c.gamma,
                &mut rng,
                Some(&mut rec),
                start,
            )?;
            self.asm.set_mode(Role::Active, Mode::Trainable);
            self.global_step += used;
            self.ewc.update_running_fisher(&f, self.asm.active().params())?;
            self.records.push(PhaseRecord {
                kind: PhaseKind::Fisher,
                task: kind,
                visit: Some(visit),
                sample: None,
                start_step: start,
                end_step: self.global_step,
                summary: summary(&[("fisher_mean", f.mean())]),
            });
            return Ok(());
        }
        rec.phase = PhaseKind::Compress;
        let out = compress_phase(
            &mut self.asm,
            &mut venv,
            &mut self.ewc,
            &mut self.kb_opt,
            &self.cfg.compress_config(self.cfg.steps_compress),
            &mut self.global_step,
            &mut rng,
            &mut rec,
        )?;
        self.records.push(PhaseRecord {
            kind: PhaseKind::Compress,
            task: kind,
            visit: Some(visit),
            sample: None,
            start_step: out.start,
            end_step: out.distill_end,
            summary: compress_summary(&out),
        });
        self.records.push(PhaseRecord {
            kind: PhaseKind::Fisher,
            task: kind,
            visit: Some(visit),
            sample: None,
            start_step: out.distill_end,
            end_step: out.end,
            summary: summary(&[("fisher_mean", out.fisher_mean)]),
        });
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProgressConfig {
    pub steps: u64,
    pub num_steps: usize,
    pub a2c: A2cConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgressOutcome {
    pub start: u64,
    pub end: u64,
    /// Raw scores of the episodes finished during the phase.
    pub scores: Vec<f64>,
    /// Mean policy entropy of each rollout.
    pub entropy: Vec<f64>,
}

/// A2C on extrinsic rewards for the active column, with laterals if the
/// assembly has them enabled. With `ewc`, its penalty joins the loss once
/// active.
#[allow(clippy::too_many_arguments)]
pub fn progress_phase(
    asm: &mut AgentAssembly,
    opt: &mut RmspropState,
    venv: &mut VectorEnv,
    cfg: &ProgressConfig,
    ewc: Option<&EwcState>,
    global_step: &mut u64,
    rng: &mut crate::rng::Rng,
    rec: &mut Recorder<'_>,
) -> Result<ProgressOutcome> {
    let per = (venv.num_workers() * cfg.num_steps) as u64;
    if !cfg.steps.is_multiple_of(per) {
        return Err(config_err!("progress budget {} is not a multiple of {per}", cfg.steps));
    }
    asm.set_mode(Role::Active, Mode::Trainable);
    asm.set_mode(Role::KnowledgeBase, Mode::Frozen);
    let start = *global_step;
    let mut scores = Vec::new();
    let mut entropy = Vec::new();
    for _ in 0..cfg.steps / per {
        let (mut buf, info) =
            collect_rollout(&Acting { asm, role: Role::Active }, venv, cfg.num_steps, RewardSource::Extrinsic, rng)?;
        for e in &info.episodes {
            rec.emit(*global_step + ((e.step + 1) * buf.num_workers) as u64, MetricEvent::Episode { score: e.score });
            scores.push(e.score);
        }
        entropy.push(info.mean_entropy);
        let pen = ewc.filter(|e| e.is_active(*global_step)).map(EwcPenalty);
        let reg = pen.as_ref().map(|p| p as &dyn Regularizer);
        let st = a2c_update(asm, Role::Active, &mut buf, opt, &cfg.a2c, reg)?;
        *global_step += per;
        rec.emit(*global_step, update_event(&st));
    }
    Ok(ProgressOutcome { start, end: *global_step, scores, entropy })
}

fn update_event(st: &crate::a2c::UpdateStats) -> MetricEvent {
    MetricEvent::Update {
        policy_loss: st.terms.policy,
        value_loss: st.terms.value,
        entropy: st.terms.entropy,
        grad_norm: st.grad_norm,
        penalty: st.penalty,
    }
}

fn compress_summary(out: &crate::consolidation::CompressOutcome) -> BTreeMap<String, f64> {
    summary(&[
        ("updates", out.updates as f64),
        ("kl_first", out.kl_first),
        ("kl_last", out.kl_last),
        ("penalty_active", if out.penalty_active { 1.0 } else { 0.0 }),
        ("fisher_mean", out.fisher_mean),
    ])
}

/// Checks a record sequence against the configuration's template: phase
/// kinds and tasks in order, contiguous steps starting at zero, per-phase
/// budgets, and penalty gating (off on the first consolidation, on afterwards
/// once past the EWC start step). Written independently of [`plan`].
pub fn check_template(cfg: &ExperimentConfig, records: &[PhaseRecord]) -> Result<()> {
    let fisher = cfg.fisher.samples() as u64;
    let mut expect: Vec<(PhaseKind, Option<TaskKind>, u64)> = Vec::new();
    if cfg.algorithm == Algorithm::Tapd {
        let pairs = if cfg.variation == 3 { usize::from(cfg.agnostic_samples > 0) } else { cfg.agnostic_samples };
        for _ in 0..pairs {
            expect.push((PhaseKind::AgnosticExplore, None, cfg.steps_agnostic));
            expect.push((PhaseKind::AgnosticCompress, None, cfg.steps_agnostic_compress + fisher));
        }
    }
    for _ in 0..cfg.visits {
        for &t in &cfg.tasks {
            expect.push((PhaseKind::Progress, Some(t), cfg.steps_active));
            if cfg.algorithm != Algorithm::OnlineEwcBaseline {
                expect.push((PhaseKind::Compress, Some(t), cfg.steps_compress));
            }
            expect.push((PhaseKind::Fisher, Some(t), fisher));
        }
    }
    if expect.len() != records.len() {
        return Err(contract_err!("expected {} phase records, found {}", expect.len(), records.len()));
    }
    let allowed: Vec<TaskKind> = if cfg.variation == 2 { cfg.agnostic_tasks.iter().take(1).copied().collect() } else { cfg.agnostic_tasks.clone() };
    let mut step = 0;
    let mut consolidations = 0;
    for (i, (r, (kind, task, budget))) in records.iter().zip(&expect).enumerate() {
        if r.kind != *kind {
            return Err(contract_err!("record {i}: expected {}, found {}", kind.name(), r.kind.name()));
        }
        match task {
            Some(t) if r.task != *t => return Err(contract_err!("record {i}: expected task {t}, found {}", r.task)),
            None if !allowed.contains(&r.task) => {
                return Err(contract_err!("record {i}: task {} outside the agnostic set", r.task))
            }
            _ => {}
        }
        if r.start_step != step || r.end_step - r.start_step != *budget {
            return Err(contract_err!("record {i}: steps {}..{} break contiguity or budget {budget}", r.start_step, r.end_step));
        }
        if matches!(r.kind, PhaseKind::Compress | PhaseKind::AgnosticCompress) {
            let active = r.summary.get("penalty_active").copied().unwrap_or(-1.0);
            let want = consolidations >= 1 && r.start_step >= cfg.ewc.start;
            let updates = r.summary.get("updates").copied().unwrap_or(0.0);
            if updates > 0.0 && (active == 1.0) != want {
                return Err(contract_err!("record {i}: penalty_active = {active}, expected {want}"));
            }
            consolidations += 1;
        }
        step = r.end_step;
    }
    Ok(())
}

/// Sum of every configured phase budget.
pub fn expected_total_steps(cfg: &ExperimentConfig) -> u64 {
    let fisher = cfg.fisher.samples() as u64;
    let agnostic = cfg.agnostic_units() as u64 * (cfg.steps_agnostic + cfg.steps_agnostic_compress + fisher);
    let per_task = match cfg.algorithm {
        Algorithm::OnlineEwcBaseline => cfg.steps_active + fisher,
        _ => cfg.steps_active + cfg.steps_compress + fisher,
    };
    agnostic + (cfg.visits * cfg.tasks.len()) as u64 * per_task
}
