//! Synchronous advantage actor-critic: rollout collection, n-step returns and
//! the combined policy/value/entropy loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::columns::{AgentAssembly, Mode, Role};
use crate::curiosity::{intrinsic_reward, ForwardModel, IntrinsicConfig, Transitions};
use crate::env::{EnvConfig, TaskId, TaskInstance, VectorEnv};
use crate::error::{config_err, contract_err, numeric_err, Result};
use crate::nn::{clip_global_norm, rmsprop_step, sample, CategoricalDist, GradientStore, RmspropState, NUM_ACTIONS};
use crate::rng::Rng;

/// Anything that maps an observation batch to action distributions and values.
pub trait Policy {
    fn evaluate(&self, obs: &[f64], batch: usize) -> Result<(Vec<CategoricalDist>, Vec<f64>)>;
}

/// One column of an assembly acting as a policy (laterals included for the
/// active column when enabled).
pub struct Acting<'a> {
    pub asm: &'a AgentAssembly,
    pub role: Role,
}

impl Policy for Acting<'_> {
    fn evaluate(&self, obs: &[f64], batch: usize) -> Result<(Vec<CategoricalDist>, Vec<f64>)> {
        let f = self.asm.forward(self.role, obs, batch)?;
        Ok((f.dists, f.values))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct A2cConfig {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_loss_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self { gamma: 0.99, entropy_coef: 0.01, value_loss_coef: 0.5, max_grad_norm: 0.5, normalize_advantages: false }
    }
}

#[derive(Clone, Copy)]
pub enum RewardSource<'a> {
    /// Clipped game rewards.
    Extrinsic,
    /// `ln(forward loss + eps)` from the curiosity model; game rewards are
    /// still tracked for episode scores.
    Intrinsic(&'a ForwardModel, &'a IntrinsicConfig),
}

/// Buffer `U`: `n` steps of `N` workers, step-major (`t * N + w`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub num_workers: usize,
    pub num_steps: usize,
    pub obs_len: usize,
    pub obs: Vec<f64>,
    /// True successor of each `obs` row (terminal stack across resets).
    pub next_obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    /// `V(s_n)` per worker.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self { num_workers: self.num_workers, obs_len: self.obs_len, ..Self::default() };
    }

    pub fn transitions(&self) -> Transitions<'_> {
        Transitions { obs: &self.obs, actions: &self.actions, next_obs: &self.next_obs }
    }

    fn check(&self) -> Result<()> {
        let m = self.num_workers * self.num_steps;
        let ok = m > 0
            && self.actions.len() == m
            && self.rewards.len() == m
            && self.values.len() == m
            && self.dones.len() == m
            && self.obs.len() == m * self.obs_len
            && self.bootstrap.len() == self.num_workers;
        if ok {
            Ok(())
        } else {
            Err(contract_err!("rollout buffer is empty or not rectangular"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeEnd {
    pub worker: usize,
    /// Vector step within the rollout at which the episode ended.
    pub step: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutInfo {
    pub episodes: Vec<EpisodeEnd>,
    pub mean_entropy: f64,
    /// Intrinsic statistics, present for intrinsic rollouts.
    pub intrinsic: Option<IntrinsicStats>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntrinsicStats {
    pub mean: f64,
    pub max: f64,
    pub forward_loss_mean: f64,
}

/// Runs `n` synchronous vector steps with actions sampled from `policy`.
pub fn collect_rollout(
    policy: &dyn Policy,
    venv: &mut VectorEnv,
    n: usize,
    source: RewardSource<'_>,
    rng: &mut Rng,
) -> Result<(RolloutBuffer, RolloutInfo)> {
    if n == 0 {
        return Err(config_err!("rollout length must be positive"));
    }
    let workers = venv.num_workers();
    let obs_len = venv.obs_len();
    let m = n * workers;
    let mut buf = RolloutBuffer {
        num_workers: workers,
        num_steps: n,
        obs_len,
        obs: Vec::with_capacity(m * obs_len),
        next_obs: Vec::with_capacity(m * obs_len),
        actions: Vec::with_capacity(m),
        rewards: Vec::with_capacity(m),
        values: Vec::with_capacity(m),
        log_probs: Vec::with_capacity(m),
        dones: Vec::with_capacity(m),
        bootstrap: Vec::new(),
    };
    let mut info = RolloutInfo::default();
    let mut entropy = 0.0;
    for t in 0..n {
        let obs = venv.observations().to_vec();
        let (dists, values) = policy.evaluate(&obs, workers)?;
        let actions: Vec<usize> = dists.iter().map(|d| sample(d, rng)).collect();
        let step = venv.step(&actions)?;
        for (w, d) in dists.iter().enumerate() {
            buf.log_probs.push(d.log_prob(actions[w]));
            entropy += d.entropy();
            if let Some(score) = step.episode_scores[w] {
                info.episodes.push(EpisodeEnd { worker: w, step: t, score });
            }
        }
        buf.obs.extend_from_slice(&obs);
        buf.next_obs.extend_from_slice(&step.next_obs);
        buf.actions.extend_from_slice(&actions);
        buf.rewards.extend_from_slice(&step.rewards);
        buf.values.extend_from_slice(&values);
        buf.dones.extend_from_slice(&step.dones);
    }
    let (_, boot) = policy.evaluate(venv.observations(), workers)?;
    buf.bootstrap = boot;
    info.mean_entropy = entropy / m as f64;
    if let RewardSource::Intrinsic(fm, cfg) = source {
        let losses = fm.forward_losses(&buf.transitions())?;
        buf.rewards = losses.iter().map(|&l| intrinsic_reward(l, cfg)).collect();
        info.intrinsic = Some(IntrinsicStats {
            mean: buf.rewards.iter().sum::<f64>() / m as f64,
            max: buf.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            forward_loss_mean: losses.iter().sum::<f64>() / m as f64,
        });
    }
    Ok((buf, info))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdvantageEstimate {
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// `R_t = r_t + gamma * R_{t+1} * (1 - done_t)` seeded with `R_n = V(s_n)`;
/// `A_t = R_t - V(s_t)`.
pub fn compute_returns_advantages(buf: &RolloutBuffer, gamma: f64) -> Result<AdvantageEstimate> {
    buf.check()?;
    let w = buf.num_workers;
    let m = buf.len();
    let mut returns = vec![0.0; m];
    for k in 0..w {
        let mut r = buf.bootstrap[k];
        for t in (0..buf.num_steps).rev() {
            let i = t * w + k;
            let keep = if buf.dones[i] { 0.0 } else { 1.0 };
            r = buf.rewards[i] + gamma * r * keep;
            returns[i] = r;
        }
    }
    let advantages = returns.iter().zip(&buf.values).map(|(r, v)| r - v).collect();
    Ok(AdvantageEstimate { returns, advantages })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Upstream gradients of the total loss on logits `[M, 4]` and values `[M]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossGrads {
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
}

/// `policy = -mean(log pi(a) * A)` with `A` constant, `value = mean((R - V)^2)`,
/// `entropy = mean H`, `total = policy + c_v * value - c_H * entropy`.
pub fn a2c_loss(
    actions: &[usize],
    dists: &[CategoricalDist],
    values: &[f64],
    adv: &AdvantageEstimate,
    cfg: &A2cConfig,
) -> Result<(LossTerms, LossGrads)> {
    let m = actions.len();
    if m == 0 || dists.len() != m || values.len() != m || adv.returns.len() != m || adv.advantages.len() != m {
        return Err(contract_err!("a2c loss inputs disagree in length"));
    }
    let a_used = if cfg.normalize_advantages { normalized(&adv.advantages) } else { adv.advantages.clone() };
    let inv = 1.0 / m as f64;
    let mut terms = LossTerms::default();
    let mut grads = LossGrads { logits: vec![0.0; m * NUM_ACTIONS], values: vec![0.0; m] };
    let mut hgrad = [0.0; NUM_ACTIONS];
    for i in 0..m {
        let d = &dists[i];
        let a = actions[i];
        if a >= d.len() {
            return Err(contract_err!("action {a} outside the distribution"));
        }
        let adv_i = a_used[i];
        terms.policy -= d.log_prob(a) * adv_i * inv;
        let h = d.entropy();
        terms.entropy += h * inv;
        let err = adv.returns[i] - values[i];
        terms.value += err * err * inv;
        d.entropy_logit_grad(&mut hgrad);
        let row = &mut grads.logits[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
        for (k, g) in row.iter_mut().enumerate() {
            let onehot = if k == a { 1.0 } else { 0.0 };
            *g = -adv_i * (onehot - d.probs()[k]) * inv - cfg.entropy_coef * hgrad[k] * inv;
        }
        grads.values[i] = -2.0 * cfg.value_loss_coef * err * inv;
    }
    terms.total = terms.policy + cfg.value_loss_coef * terms.value - cfg.entropy_coef * terms.entropy;
    if !terms.total.is_finite() {
        return Err(numeric_err!("non-finite a2c loss"));
    }
    Ok((terms, grads))
}

fn normalized(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var) + 1e-8;
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// Extra differentiable term added to the loss of a column.
pub trait Regularizer {
    /// Adds the term's gradient into `grads` and returns its value.
    fn apply(&self, params: &crate::nn::ParameterStore, grads: &mut GradientStore) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpdateStats {
    pub applied: bool,
    pub terms: LossTerms,
    pub penalty: f64,
    /// Norm of the gradient actually applied (after clipping).
    pub grad_norm: f64,
    pub pre_clip_norm: f64,
}

/// One A2C step on `role`: backward on the total loss (plus an optional
/// regularizer), global-norm clipping, RMSprop. The buffer is cleared.
/// Frozen columns are left untouched.
pub fn a2c_update(
    asm: &mut AgentAssembly,
    role: Role,
    buf: &mut RolloutBuffer,
    opt: &mut RmspropState,
    cfg: &A2cConfig,
    reg: Option<&dyn Regularizer>,
) -> Result<UpdateStats> {
    if asm.mode(role) == Mode::Frozen {
        log::warn!("a2c update on frozen {role:?} column ignored");
        buf.clear();
        return Ok(UpdateStats::default());
    }
    let adv = compute_returns_advantages(buf, cfg.gamma)?;
    let fwd = asm.forward(role, &buf.obs, buf.len())?;
    let (terms, lg) = a2c_loss(&buf.actions, &fwd.dists, &fwd.values, &adv, cfg)?;
    let mut grads = GradientStore::zeros_like(asm.column(role).params());
    asm.backward(&fwd, Some(&lg.logits), Some(&lg.values), &mut grads)?;
    let penalty = match reg {
        Some(r) => r.apply(asm.column(role).params(), &mut grads)?,
        None => 0.0,
    };
    let (clipped, pre_clip_norm) = clip_global_norm(&grads, cfg.max_grad_norm);
    if !pre_clip_norm.is_finite() {
        return Err(numeric_err!("non-finite a2c gradient"));
    }
    rmsprop_step(opt, asm.params_mut(role), &clipped)?;
    buf.clear();
    Ok(UpdateStats { applied: true, terms, penalty, grad_norm: clipped.global_norm(), pre_clip_norm })
}

/// Raw episode scores of `episodes` full episodes on a fresh instance.
pub fn evaluate(policy: &dyn Policy, task: TaskId, config: EnvConfig, episodes: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut env: TaskInstance = crate::env::generate_task(task, config)?;
    let mut scores = Vec::with_capacity(episodes);
    while scores.len() < episodes {
        let (d, _) = policy.evaluate(env.observation(), 1)?;
        let r = env.step(sample(&d[0], rng))?;
        if let Some(s) = r.episode_score {
            scores.push(s);
            env.reset();
        }
    }
    Ok(scores)
}
