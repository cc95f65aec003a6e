//! Compress-phase machinery: KL distillation of the active policy into the
//! knowledge base under an online-EWC penalty, diagonal Fisher estimation and
//! the running Fisher recursion `F <- gamma * F + F_new`.

use alloc::vec;
use alloc::vec::Vec;

use crate::a2c::{collect_rollout, compute_returns_advantages, Acting, Regularizer, RewardSource};
use crate::columns::{AgentAssembly, Mode, Role};
use crate::env::VectorEnv;
use crate::error::{config_err, contract_err, numeric_err, Result};
use crate::metrics::{MetricEvent, PhaseKind, Recorder};
use crate::nn::{
    clip_global_norm, kl_divergence, rmsprop_step, CategoricalDist, GradientStore, ParameterStore, RmspropState,
    TensorMap, NUM_ACTIONS,
};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EwcConfig {
    pub lambda: f64,
    pub gamma: f64,
    /// Global step before which the penalty stays off.
    pub start: u64,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self { lambda: 2.0, gamma: 0.3, start: 150_000 }
    }
}

/// Per-parameter nonnegative importance weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherDiagonal(pub TensorMap);

impl FisherDiagonal {
    pub fn zeros_like(params: &ParameterStore) -> Self {
        Self(params.map().zeros_like())
    }

    pub fn mean(&self) -> f64 {
        let n = self.0.num_scalars();
        if n == 0 {
            return 0.0;
        }
        self.0.iter().flat_map(|(_, t)| t.data.iter()).sum::<f64>() / n as f64
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|(_, t)| t.data.iter().all(|v| *v >= 0.0))
    }
}

/// Mean of elementwise squared per-sample gradients.
#[derive(Clone, Debug)]
pub struct FisherAccumulator {
    sum: TensorMap,
    count: usize,
}

impl FisherAccumulator {
    pub fn new(layout: &TensorMap) -> Self {
        Self { sum: layout.zeros_like(), count: 0 }
    }

    pub fn add(&mut self, g: &GradientStore) -> Result<()> {
        self.sum.check_layout(&g.0, "fisher sample")?;
        for ((_, s), (_, t)) in self.sum.iter_mut().zip(g.0.iter()) {
            s.data.iter_mut().zip(&t.data).for_each(|(a, b)| *a += b * b);
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> FisherDiagonal {
        if self.count > 0 {
            self.sum.scale(1.0 / self.count as f64);
        }
        FisherDiagonal(self.sum)
    }
}

/// Gradient of `log pi(a) * A` with respect to the logits: `A * (onehot - p)`.
pub fn score_logit_grad(d: &CategoricalDist, action: usize, advantage: f64, out: &mut [f64]) {
    for (k, (o, p)) in out.iter_mut().zip(d.probs()).enumerate() {
        let onehot = if k == action { 1.0 } else { 0.0 };
        *o = advantage * (onehot - p);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    pub config: EwcConfig,
    pub anchor: TensorMap,
    pub fisher: TensorMap,
    pub tasks_compressed: u32,
}

impl EwcState {
    pub fn new(params: &ParameterStore, config: EwcConfig) -> Self {
        Self { config, anchor: params.map().clone(), fisher: params.map().zeros_like(), tasks_compressed: 0 }
    }

    /// The penalty applies after the first consolidation once the global
    /// step has reached `start`.
    pub fn is_active(&self, global_step: u64) -> bool {
        self.tasks_compressed >= 1 && global_step >= self.config.start
    }

    /// Ungated `(lambda/2) * sum F (theta - theta*)^2`.
    pub fn penalty_value(&self, params: &ParameterStore) -> Result<f64> {
        params.map().check_layout(&self.anchor, "ewc anchor")?;
        let mut acc = 0.0;
        for (((_, p), (_, a)), (_, f)) in params.map().iter().zip(self.anchor.iter()).zip(self.fisher.iter()) {
            for ((x, y), w) in p.data.iter().zip(&a.data).zip(&f.data) {
                acc += w * (x - y) * (x - y);
            }
        }
        Ok(0.5 * self.config.lambda * acc)
    }

    /// Adds `lambda * F * (theta - theta*)` into `grads`; returns the penalty.
    pub fn penalty_grad_into(&self, params: &ParameterStore, grads: &mut GradientStore) -> Result<f64> {
        grads.0.check_layout(&self.anchor, "ewc gradient")?;
        let value = self.penalty_value(params)?;
        let lambda = self.config.lambda;
        for ((((_, g), (_, p)), (_, a)), (_, f)) in
            grads.0.iter_mut().zip(params.map().iter()).zip(self.anchor.iter()).zip(self.fisher.iter())
        {
            for (((gv, x), y), w) in g.data.iter_mut().zip(&p.data).zip(&a.data).zip(&f.data) {
                *gv += lambda * w * (x - y);
            }
        }
        Ok(value)
    }

    /// `F <- gamma * F + F_new`, anchor set to `params`, counter incremented.
    pub fn update_running_fisher(&mut self, f_new: &FisherDiagonal, params: &ParameterStore) -> Result<()> {
        self.fisher.check_layout(&f_new.0, "fisher update")?;
        params.map().check_layout(&self.anchor, "ewc anchor")?;
        if !f_new.is_nonnegative() {
            return Err(contract_err!("fisher estimate has negative entries"));
        }
        let g = self.config.gamma;
        for ((_, f), (_, n)) in self.fisher.iter_mut().zip(f_new.0.iter()) {
            f.data.iter_mut().zip(&n.data).for_each(|(a, b)| *a = g * *a + b);
        }
        self.anchor = params.map().clone();
        self.tasks_compressed += 1;
        Ok(())
    }
}

/// Penalty gated by [`EwcState::is_active`].
pub fn ewc_penalty(ewc: &EwcState, params: &ParameterStore, global_step: u64) -> Result<f64> {
    if ewc.is_active(global_step) {
        ewc.penalty_value(params)
    } else {
        params.map().check_layout(&ewc.anchor, "ewc anchor")?;
        Ok(0.0)
    }
}

/// The EWC penalty as an A2C regularizer (online-EWC baseline).
pub struct EwcPenalty<'a>(pub &'a EwcState);

impl Regularizer for EwcPenalty<'_> {
    fn apply(&self, params: &ParameterStore, grads: &mut GradientStore) -> Result<f64> {
        self.0.penalty_grad_into(params, grads)
    }
}

/// States visited by the kb policy and the active column's distributions there.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillBatch {
    pub obs: Vec<f64>,
    pub targets: Vec<CategoricalDist>,
}

/// Mean `KL(target || kb)` and its gradient on the kb logits, `(q - p) / M`.
pub fn mean_kl_with_grad(targets: &[CategoricalDist], kb: &[CategoricalDist]) -> Result<(f64, Vec<f64>)> {
    let m = targets.len();
    if m == 0 || kb.len() != m {
        return Err(contract_err!("distillation batch of {m} targets vs {} kb dists", kb.len()));
    }
    let inv = 1.0 / m as f64;
    let mut kl = 0.0;
    let mut g = vec![0.0; m * NUM_ACTIONS];
    for (i, (p, q)) in targets.iter().zip(kb).enumerate() {
        kl += kl_divergence(p, q) * inv;
        for k in 0..NUM_ACTIONS {
            g[i * NUM_ACTIONS + k] = (q.probs()[k] - p.probs()[k]) * inv;
        }
    }
    Ok((kl, g))
}

/// `mean KL(pi_active || pi_kb) + gated EWC penalty`.
pub fn distill_loss(
    batch: &DistillBatch,
    kb_dists: &[CategoricalDist],
    ewc: &EwcState,
    kb_params: &ParameterStore,
    global_step: u64,
) -> Result<f64> {
    let (kl, _) = mean_kl_with_grad(&batch.targets, kb_dists)?;
    Ok(kl + ewc_penalty(ewc, kb_params, global_step)?)
}

/// Fisher diagonal from given samples: mean over samples of the squared
/// gradient of `log pi(a|s) * A` with respect to `role`'s parameters.
pub fn fisher_from_samples(
    asm: &AgentAssembly,
    role: Role,
    obs: &[f64],
    actions: &[usize],
    advantages: &[f64],
) -> Result<FisherDiagonal> {
    let m = actions.len();
    let obs_len = asm.obs_len();
    if advantages.len() != m || obs.len() != m * obs_len {
        return Err(contract_err!("fisher samples disagree in length"));
    }
    let params = asm.column(role).params();
    let mut acc = FisherAccumulator::new(params.map());
    let mut lg = [0.0; NUM_ACTIONS];
    for i in 0..m {
        let f = asm.forward(role, &obs[i * obs_len..(i + 1) * obs_len], 1)?;
        score_logit_grad(&f.dists[0], actions[i], advantages[i], &mut lg);
        let mut g = GradientStore::zeros_like(params);
        asm.backward(&f, Some(&lg), None, &mut g)?;
        acc.add(&g)?;
    }
    Ok(acc.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FisherConfig {
    /// Number of minibatches.
    pub steps: usize,
    pub batch: usize,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self { steps: 100, batch: 32 }
    }
}

impl FisherConfig {
    pub fn samples(&self) -> usize {
        self.steps * self.batch
    }
}

/// Acts with `role` for `steps * batch` transitions (whole `n`-step rollouts),
/// scores each with the n-step advantage from the same column's critic, and
/// averages squared per-sample gradients. Returns the Fisher and the number
/// of environment transitions used.
#[allow(clippy::too_many_arguments)]
pub fn estimate_fisher_diag(
    asm: &AgentAssembly,
    role: Role,
    venv: &mut VectorEnv,
    cfg: &FisherConfig,
    num_steps: usize,
    gamma: f64,
    rng: &mut Rng,
    mut rec: Option<&mut Recorder<'_>>,
    start_step: u64,
) -> Result<(FisherDiagonal, u64)> {
    let per = num_steps * venv.num_workers();
    let total = cfg.samples();
    if per == 0 || !total.is_multiple_of(per) {
        return Err(config_err!("fisher samples {total} not a multiple of the rollout size {per}"));
    }
    let params = asm.column(role).params();
    let mut acc = FisherAccumulator::new(params.map());
    let mut lg = [0.0; NUM_ACTIONS];
    let mut step = start_step;
    for _ in 0..total / per {
        let (buf, info) = collect_rollout(&Acting { asm, role }, venv, num_steps, RewardSource::Extrinsic, rng)?;
        if let Some(r) = rec.as_deref_mut() {
            for e in &info.episodes {
                r.emit(step + ((e.step + 1) * buf.num_workers) as u64, MetricEvent::Episode { score: e.score });
            }
        }
        let adv = compute_returns_advantages(&buf, gamma)?;
        let obs_len = buf.obs_len;
        for i in 0..buf.len() {
            let f = asm.forward(role, &buf.obs[i * obs_len..(i + 1) * obs_len], 1)?;
            score_logit_grad(&f.dists[0], buf.actions[i], adv.advantages[i], &mut lg);
            let mut g = GradientStore::zeros_like(params);
            asm.backward(&f, Some(&lg), None, &mut g)?;
            acc.add(&g)?;
        }
        step += per as u64;
    }
    Ok((acc.finish(), step - start_step))
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompressConfig {
    /// Distillation environment steps.
    pub steps: u64,
    pub num_steps: usize,
    pub fisher: FisherConfig,
    pub gamma: f64,
    pub max_grad_norm: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompressOutcome {
    pub start: u64,
    pub distill_end: u64,
    pub end: u64,
    pub updates: usize,
    pub kl_first: f64,
    pub kl_last: f64,
    pub penalty_active: bool,
    pub fisher_mean: f64,
}

/// Distils the active policy into the kb by acting with the kb, minimizing
/// KL plus the gated penalty with RMSprop (optimizer state reset first), then
/// estimates the Fisher at the new kb, folds it into the running Fisher and
/// enables lateral connections. On error the kb and EWC state are restored.
///
/// Episodes seen while estimating the Fisher are recorded under
/// [`PhaseKind::Fisher`] when `rec.phase` is [`PhaseKind::Compress`].
#[allow(clippy::too_many_arguments)]
pub fn compress_phase(
    asm: &mut AgentAssembly,
    venv: &mut VectorEnv,
    ewc: &mut EwcState,
    kb_opt: &mut RmspropState,
    cfg: &CompressConfig,
    global_step: &mut u64,
    rng: &mut Rng,
    rec: &mut Recorder<'_>,
) -> Result<CompressOutcome> {
    let kb_before = asm.kb().params().clone();
    let ewc_before = ewc.clone();
    let step_before = *global_step;
    let phase = rec.phase;
    let res = compress_inner(asm, venv, ewc, kb_opt, cfg, global_step, rng, rec);
    rec.phase = phase;
    asm.set_mode(Role::KnowledgeBase, Mode::Frozen);
    asm.set_mode(Role::Active, Mode::Trainable);
    if res.is_err() {
        asm.load_params(Role::KnowledgeBase, &kb_before)?;
        *ewc = ewc_before;
        *global_step = step_before;
    }
    res
}

#[allow(clippy::too_many_arguments)]
fn compress_inner(
    asm: &mut AgentAssembly,
    venv: &mut VectorEnv,
    ewc: &mut EwcState,
    kb_opt: &mut RmspropState,
    cfg: &CompressConfig,
    global_step: &mut u64,
    rng: &mut Rng,
    rec: &mut Recorder<'_>,
) -> Result<CompressOutcome> {
    let per = (cfg.num_steps * venv.num_workers()) as u64;
    if per == 0 || !cfg.steps.is_multiple_of(per) {
        return Err(config_err!("compress budget {} not a multiple of the rollout size {per}", cfg.steps));
    }
    asm.set_mode(Role::Active, Mode::Frozen);
    asm.set_mode(Role::KnowledgeBase, Mode::Trainable);
    kb_opt.reset();
    let mut out = CompressOutcome { start: *global_step, ..Default::default() };
    let updates = (cfg.steps / per) as usize;
    for u in 0..updates {
        let (buf, info) =
            collect_rollout(&Acting { asm, role: Role::KnowledgeBase }, venv, cfg.num_steps, RewardSource::Extrinsic, rng)?;
        for e in &info.episodes {
            rec.emit(*global_step + ((e.step + 1) * buf.num_workers) as u64, MetricEvent::Episode { score: e.score });
        }
        let m = buf.len();
        let targets = asm.forward(Role::Active, &buf.obs, m)?.dists;
        let fwd = asm.forward(Role::KnowledgeBase, &buf.obs, m)?;
        let (kl, lg) = mean_kl_with_grad(&targets, &fwd.dists)?;
        let mut grads = GradientStore::zeros_like(asm.kb().params());
        asm.backward(&fwd, Some(&lg), None, &mut grads)?;
        let active = ewc.is_active(*global_step);
        let penalty = if active { ewc.penalty_grad_into(asm.kb().params(), &mut grads)? } else { 0.0 };
        let (clipped, pre) = clip_global_norm(&grads, cfg.max_grad_norm);
        if !pre.is_finite() {
            return Err(numeric_err!("non-finite distillation gradient"));
        }
        rmsprop_step(kb_opt, asm.params_mut(Role::KnowledgeBase), &clipped)?;
        *global_step += per;
        if u == 0 {
            out.kl_first = kl;
            out.penalty_active = active;
        }
        out.kl_last = kl;
        rec.emit(
            *global_step,
            MetricEvent::Distill { kl, penalty, penalty_active: active, grad_norm: clipped.global_norm() },
        );
    }
    out.updates = updates;
    out.distill_end = *global_step;
    asm.set_mode(Role::KnowledgeBase, Mode::Frozen);
    if rec.phase == PhaseKind::Compress {
        rec.phase = PhaseKind::Fisher;
    }
    let (fisher, used) = estimate_fisher_diag(
        asm,
        Role::KnowledgeBase,
        venv,
        &cfg.fisher,
        cfg.num_steps,
        cfg.gamma,
        rng,
        Some(rec),
        *global_step,
    )?;
    *global_step += used;
    ewc.update_running_fisher(&fisher, asm.kb().params())?;
    out.fisher_mean = fisher.mean();
    out.end = *global_step;
    asm.set_lateral_enabled(true);
    Ok(out)
}
