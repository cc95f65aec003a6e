//! Forward-dynamics curiosity: an encoder `phi`, a predictor `F` taking
//! `[phi(s_t), onehot(a_t)]`, the squared feature-prediction error, and the
//! intrinsic reward `ln(loss + eps)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, contract_err, Result};
use crate::nn::{
    clip_global_norm, rmsprop_step, GradientStore, LayerSpec, Network, NetworkSpec, OutputGrads, ParameterStore,
    RmspropConfig, RmspropState, Shape, NUM_ACTIONS,
};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntrinsicConfig {
    pub eps: f64,
    /// Train only the predictor, keeping the encoder at its initialization.
    pub freeze_encoder: bool,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self { eps: 1e-8, freeze_encoder: false }
    }
}

impl IntrinsicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(config_err!("intrinsic eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardModelSpec {
    pub encoder: NetworkSpec,
    pub hidden: usize,
}

impl ForwardModelSpec {
    pub fn toy(obs_size: usize) -> Self {
        Self { encoder: NetworkSpec::toy_encoder(obs_size), hidden: 64 }
    }

    /// Five stride-2 convolutions to 288 features, predictor 256 -> 288.
    pub fn atari() -> Self {
        Self { encoder: NetworkSpec::atari_encoder(), hidden: 256 }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn intrinsic_reward(loss: f64, cfg: &IntrinsicConfig) -> f64 {
    libm::log(loss + cfg.eps)
}

/// Transitions `(s_t, a_t, s_{t+1})`, row-major over samples.
#[derive(Clone, Copy, Debug)]
pub struct Transitions<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [usize],
    pub next_obs: &'a [f64],
}

impl Transitions<'_> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CuriosityStats {
    pub loss_before: f64,
    pub loss_after: f64,
    pub grad_norm: f64,
    /// Mean over feature dimensions of the batch variance of `phi(s_t)`.
    pub feature_variance: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardModel {
    encoder: Network,
    predictor: Network,
    params: ParameterStore,
    opt: RmspropState,
}

impl ForwardModel {
    pub fn new(spec: &ForwardModelSpec, seed: u64, optim: RmspropConfig) -> Result<Self> {
        if spec.encoder.heads.is_some() {
            return Err(config_err!("forward-model encoder must be headless"));
        }
        let encoder = Network::with_prefix(&spec.encoder, "encoder.")?;
        let Shape::Flat(feat) = encoder.output_shape() else {
            return Err(config_err!("forward-model encoder must end in a flat feature vector"));
        };
        let pspec = NetworkSpec {
            input: Shape::Flat(feat + NUM_ACTIONS),
            layers: vec![LayerSpec::dense(spec.hidden), LayerSpec::linear(feat)],
            heads: None,
            lateral_taps: vec![],
        };
        let predictor = Network::with_prefix(&pspec, "predictor.")?;
        let mut map = encoder.init_params(seed)?;
        map.append(predictor.init_params(crate::rng::derive_seed(seed, &[1]))?)?;
        let params = ParameterStore::new(map, seed);
        let opt = RmspropState::new(&params, optim)?;
        Ok(Self { encoder, predictor, params, opt })
    }

    pub fn feature_len(&self) -> usize {
        self.encoder.output_len()
    }

    pub fn obs_len(&self) -> usize {
        self.encoder.input_len()
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn optimizer(&self) -> &RmspropState {
        &self.opt
    }

    pub fn load(&mut self, params: &ParameterStore, opt: &RmspropState) -> Result<()> {
        self.params.copy_from(params)?;
        opt.squared_avg.check_layout(&self.opt.squared_avg, "forward-model optimizer")?;
        self.opt = opt.clone();
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn encode(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.encoder.forward(&self.params, obs, batch)?.output)
    }

    fn predictor_input(&self, feats: &[f64], actions: &[usize]) -> Result<Vec<f64>> {
        let f = self.feature_len();
        let mut x = Vec::with_capacity(actions.len() * (f + NUM_ACTIONS));
        for (row, &a) in feats.chunks(f).zip(actions) {
            if a >= NUM_ACTIONS {
                return Err(contract_err!("action {a} outside 0..{NUM_ACTIONS}"));
            }
            x.extend_from_slice(row);
            let mut hot = [0.0; NUM_ACTIONS];
            hot[a] = 1.0;
            x.extend_from_slice(&hot);
        }
        Ok(x)
    }

    fn check(&self, t: &Transitions<'_>) -> Result<usize> {
        let m = t.len();
        if m == 0 || t.obs.len() != m * self.obs_len() || t.next_obs.len() != m * self.obs_len() {
            return Err(contract_err!("transition batch shapes disagree ({} actions)", m));
        }
        Ok(m)
    }

    /// Per-sample `||phi(s_{t+1}) - F(phi(s_t), a_t)||^2`.
    pub fn forward_losses(&self, t: &Transitions<'_>) -> Result<Vec<f64>> {
        let m = self.check(t)?;
        let f = self.feature_len();
        let feats = self.encode(t.obs, m)?;
        let target = self.encode(t.next_obs, m)?;
        let pred = self.predictor.forward(&self.params, &self.predictor_input(&feats, t.actions)?, m)?.output;
        Ok(pred.chunks(f).zip(target.chunks(f)).map(|(p, q)| squared_distance(p, q)).collect())
    }

    pub fn forward_loss(&self, s: &[f64], a: usize, s_next: &[f64]) -> Result<f64> {
        Ok(self.forward_losses(&Transitions { obs: s, actions: &[a], next_obs: s_next })?[0])
    }

    /// Mean forward loss and its gradient; the target branch is a constant.
    pub fn loss_and_grads(&self, t: &Transitions<'_>, cfg: &IntrinsicConfig) -> Result<(f64, GradientStore, f64)> {
        let m = self.check(t)?;
        let f = self.feature_len();
        let enc = self.encoder.forward(&self.params, t.obs, m)?;
        let target = self.encode(t.next_obs, m)?;
        let pin = self.predictor_input(&enc.output, t.actions)?;
        let pred = self.predictor.forward(&self.params, &pin, m)?;
        let scale = 2.0 / m as f64;
        let gpred: Vec<f64> = pred.output.iter().zip(&target).map(|(p, q)| scale * (p - q)).collect();
        let loss = squared_distance(&pred.output, &target) / m as f64;
        let mut grads = GradientStore::zeros_like(&self.params);
        let ups = OutputGrads { output: Some(&gpred), logits: None, values: None };
        let aux = self.predictor.backward_into(&self.params, &pred.cache, ups, &mut grads, !cfg.freeze_encoder)?;
        if let Some(gin) = aux.input_grad {
            let genc: Vec<f64> = gin.chunks(f + NUM_ACTIONS).flat_map(|r| r[..f].iter().copied()).collect();
            let ups = OutputGrads { output: Some(&genc), logits: None, values: None };
            self.encoder.backward_into(&self.params, &enc.cache, ups, &mut grads, false)?;
        }
        Ok((loss, grads, feature_variance(&enc.output, f)))
    }

    /// One clipped RMSprop step on the mean forward loss. On failure the
    /// parameters are left as they were.
    pub fn curiosity_update(
        &mut self,
        t: &Transitions<'_>,
        cfg: &IntrinsicConfig,
        max_grad_norm: f64,
    ) -> Result<CuriosityStats> {
        let (loss_before, grads, feature_variance) = self.loss_and_grads(t, cfg)?;
        let (clipped, _) = clip_global_norm(&grads, max_grad_norm);
        let grad_norm = clipped.global_norm();
        rmsprop_step(&mut self.opt, &mut self.params, &clipped)?;
        let losses = self.forward_losses(t)?;
        let loss_after = losses.iter().sum::<f64>() / losses.len() as f64;
        Ok(CuriosityStats { loss_before, loss_after, grad_norm, feature_variance })
    }
}

fn feature_variance(feats: &[f64], f: usize) -> f64 {
    let m = feats.len() / f;
    let mut total = 0.0;
    for d in 0..f {
        let mean = feats.iter().skip(d).step_by(f).sum::<f64>() / m as f64;
        total += feats.iter().skip(d).step_by(f).map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
    }
    total / f as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, VectorEnv, TaskKind};
    use crate::rng::{rng_from, uniform01};
    use rand::Rng as _;

    fn model(seed: u64) -> ForwardModel {
        ForwardModel::new(&ForwardModelSpec::toy(12), seed, RmspropConfig::default()).unwrap()
    }

    fn random_batch(m: usize, seed: u64) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
        let mut rng = rng_from(seed, &[]);
        let s = (0..m * 576).map(|_| uniform01(&mut rng)).collect();
        let a = (0..m).map(|_| rng.random_range(0..4)).collect();
        let n = (0..m * 576).map(|_| uniform01(&mut rng)).collect();
        (s, a, n)
    }

    fn env_batch(kind: TaskKind, seed: u64) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
        let mut v = VectorEnv::for_task(kind, seed, 8, EnvConfig::default()).unwrap();
        let mut rng = rng_from(seed, &[1]);
        let (mut s, mut a, mut n) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..8 {
            let act: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
            s.extend_from_slice(v.observations());
            let r = v.step(&act).unwrap();
            n.extend_from_slice(&r.next_obs);
            a.extend(act);
        }
        (s, a, n)
    }

    #[test]
    fn shapes_and_determinism() {
        let fm = model(1);
        assert_eq!(fm.feature_len(), 32);
        let (s, _, _) = random_batch(2, 0);
        assert_eq!(fm.encode(&s, 2).unwrap(), fm.encode(&s, 2).unwrap());
        assert_eq!(fm.encode(&s, 2).unwrap().len(), 64);
        assert!(matches!(fm.encode(&s[..100], 1), Err(crate::Error::Contract(_))));
        let atari = ForwardModel::new(&ForwardModelSpec::atari(), 0, RmspropConfig::default()).unwrap();
        assert_eq!(atari.feature_len(), 288);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(squared_distance(&[0.0, 0.0], &[1.0, 1.0]), 2.0);
        assert_eq!(squared_distance(&[0.3, 0.1], &[0.3, 0.1]), 0.0);
        let cfg = IntrinsicConfig::default();
        assert!((intrinsic_reward(0.0, &cfg) - (-18.420680743952367)).abs() < 1e-12);
        assert_eq!(intrinsic_reward(1.0 - cfg.eps, &cfg), 0.0);
        assert!(intrinsic_reward(0.1, &cfg) < intrinsic_reward(0.2, &cfg));
        assert!(IntrinsicConfig { eps: 0.0, freeze_encoder: false }.validate().is_err());
    }

    #[test]
    fn zero_predictor_and_constant_target_gives_zero_gradient() {
        let mut fm = model(2);
        fm.params_mut().zero_prefix("predictor.");
        fm.params_mut().zero_prefix("encoder.");
        let (s, a, n) = random_batch(3, 1);
        let t = Transitions { obs: &s, actions: &a, next_obs: &n };
        let before = fm.params().clone();
        let st = fm.curiosity_update(&t, &IntrinsicConfig::default(), 0.5).unwrap();
        assert_eq!(st.loss_before, 0.0);
        assert_eq!(fm.params().map(), before.map());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let fm = model(3);
        let (s, a, n) = random_batch(3, 2);
        let t = Transitions { obs: &s, actions: &a, next_obs: &n };
        let cfg = IntrinsicConfig::default();
        let (_, g, _) = fm.loss_and_grads(&t, &cfg).unwrap();
        // The target is held fixed at its current value, so perturb against it.
        let target = fm.encode(&n, 3).unwrap();
        let loss = |fm: &ForwardModel| {
            let feats = fm.encode(&s, 3).unwrap();
            let pred = fm.predictor.forward(&fm.params, &fm.predictor_input(&feats, &a).unwrap(), 3).unwrap().output;
            squared_distance(&pred, &target) / 3.0
        };
        let mut fm = fm;
        for name in ["encoder.layer0.weight", "encoder.layer1.bias", "predictor.layer0.weight", "predictor.layer1.bias"] {
            let len = fm.params().require(name).unwrap().len();
            for k in [0, len / 3, len - 1] {
                let h = 1e-5;
                let orig = fm.params().require(name).unwrap().data[k];
                fm.params_mut().get_mut(name).unwrap().data[k] = orig + h;
                let up = loss(&fm);
                fm.params_mut().get_mut(name).unwrap().data[k] = orig - h;
                let down = loss(&fm);
                fm.params_mut().get_mut(name).unwrap().data[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = g.0.get(name).unwrap().data[k];
                assert!((fd - an).abs() <= 1e-7 + 1e-4 * fd.abs().max(an.abs()), "{name}[{k}] {an} vs {fd}");
            }
        }
    }

    #[test]
    fn frozen_encoder_gets_no_gradient() {
        let fm = model(4);
        let (s, a, n) = random_batch(2, 3);
        let cfg = IntrinsicConfig { freeze_encoder: true, ..Default::default() };
        let (_, g, _) = fm.loss_and_grads(&Transitions { obs: &s, actions: &a, next_obs: &n }, &cfg).unwrap();
        for (name, t) in g.0.iter() {
            if name.starts_with("encoder.") {
                assert!(t.data.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn repeated_updates_reduce_loss_on_fixed_transitions() {
        let mut ok = 0;
        for seed in 0..5 {
            let mut fm = model(seed);
            let (s, a, n) = env_batch(TaskKind::Volley, seed);
            let t = Transitions { obs: &s, actions: &a, next_obs: &n };
            let cfg = IntrinsicConfig::default();
            let first = fm.curiosity_update(&t, &cfg, 0.5).unwrap().loss_before;
            let mut last = first;
            for _ in 0..100 {
                last = fm.curiosity_update(&t, &cfg, 0.5).unwrap().loss_after;
            }
            if last < first {
                ok += 1;
            }
        }
        assert!(ok >= 4, "{ok}/5");
    }
}
