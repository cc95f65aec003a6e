//! Two-column agent: a trainable active column that receives lateral input
//! from a frozen knowledge-base column through small adaptor networks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, contract_err, Result};
use crate::nn::{
    dists_from_logits, CategoricalDist, ForwardOutput, GradientStore, LayerSpec, Network, NetworkSpec, OutputGrads,
    ParameterStore, Shape, NUM_ACTIONS,
};
use crate::rng::{derive_seed, domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    Trainable,
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Role {
    Active,
    KnowledgeBase,
}

#[derive(Clone, Debug)]
pub struct Column {
    role: Role,
    mode: Mode,
    net: Network,
    params: ParameterStore,
}

impl Column {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

/// Adaptor `f` for one junction. Spatial taps go through a 1x1 convolution,
/// vector taps through a dense projection; both then pass a one-hidden-layer
/// perceptron whose output is added to the active layer at the junction.
#[derive(Clone, Debug)]
pub struct LateralAdaptor {
    layer: usize,
    net: Network,
}

impl LateralAdaptor {
    fn new(j: usize, layer: usize, tap: Shape, junction: Shape) -> Result<Self> {
        let width = junction.len();
        let mut layers = match tap {
            Shape::Spatial { channels, .. } => vec![LayerSpec::conv(channels, 1, 1), LayerSpec::Flatten],
            Shape::Flat(n) => vec![LayerSpec::dense(n)],
        };
        layers.push(LayerSpec::dense(width));
        layers.push(LayerSpec::linear(width));
        let spec = NetworkSpec { input: tap, layers, heads: None, lateral_taps: vec![] };
        let net = Network::with_prefix(&spec, &format!("lateral{j}."))?;
        Ok(Self { layer, net })
    }

    /// Index of the active-column layer whose output receives this adaptor.
    pub fn junction(&self) -> usize {
        self.layer
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

/// Policy distributions, values and lateral taps of one column.
pub type ColumnOutputs = (Vec<CategoricalDist>, Vec<f64>, Vec<Vec<f64>>);

/// Forward pass of one column of an assembly, kept for backward.
#[derive(Clone, Debug)]
pub struct AssemblyForward {
    pub role: Role,
    pub dists: Vec<CategoricalDist>,
    pub values: Vec<f64>,
    /// Tap activations of the evaluated column.
    pub taps: Vec<Vec<f64>>,
    out: ForwardOutput,
    adaptors: Vec<ForwardOutput>,
}

impl AssemblyForward {
    pub fn logits(&self) -> &[f64] {
        &self.out.logits
    }

    pub fn batch(&self) -> usize {
        self.out.cache.batch()
    }
}

#[derive(Clone, Debug)]
pub struct AgentAssembly {
    active: Column,
    kb: Column,
    adaptors: Vec<LateralAdaptor>,
    lateral_enabled: bool,
}

impl AgentAssembly {
    /// Both columns share `spec`. The kb is seeded from
    /// `derive_seed(seed, [KB_INIT])` and the active column from
    /// `derive_seed(seed, [ACTIVE_INIT])`.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Self::with_seeds(spec, derive_seed(seed, &[domain::KB_INIT]), derive_seed(seed, &[domain::ACTIVE_INIT]))
    }

    pub fn with_seeds(spec: &NetworkSpec, kb_seed: u64, active_seed: u64) -> Result<Self> {
        if spec.heads.is_none() {
            return Err(config_err!("agent columns need policy and value heads"));
        }
        if spec.lateral_taps.is_empty() {
            return Err(config_err!("knowledge-base spec exports no lateral taps"));
        }
        let net = Network::new(spec)?;
        let adaptors = spec
            .lateral_taps
            .iter()
            .enumerate()
            .map(|(j, &layer)| {
                let shape = net.layer_shape(layer).expect("tap validated by Network::new");
                LateralAdaptor::new(j, layer, shape, shape)
            })
            .collect::<Result<Vec<_>>>()?;
        let kb_params = ParameterStore::new(net.init_params(kb_seed)?, kb_seed);
        let kb = Column { role: Role::KnowledgeBase, mode: Mode::Frozen, net: net.clone(), params: kb_params };
        let active_params = ParameterStore::new(Self::init_active(&net, &adaptors, active_seed)?, active_seed);
        let active = Column { role: Role::Active, mode: Mode::Trainable, net, params: active_params };
        Ok(Self { active, kb, adaptors, lateral_enabled: false })
    }

    fn init_active(net: &Network, adaptors: &[LateralAdaptor], seed: u64) -> Result<crate::nn::TensorMap> {
        let mut map = net.init_params(seed)?;
        for (j, a) in adaptors.iter().enumerate() {
            map.append(a.net.init_params(derive_seed(seed, &[domain::ADAPTOR_INIT, j as u64]))?)?;
        }
        Ok(map)
    }

    pub fn column(&self, role: Role) -> &Column {
        match role {
            Role::Active => &self.active,
            Role::KnowledgeBase => &self.kb,
        }
    }

    pub fn active(&self) -> &Column {
        &self.active
    }

    pub fn kb(&self) -> &Column {
        &self.kb
    }

    pub fn adaptors(&self) -> &[LateralAdaptor] {
        &self.adaptors
    }

    pub fn lateral_enabled(&self) -> bool {
        self.lateral_enabled
    }

    pub fn set_lateral_enabled(&mut self, on: bool) {
        self.lateral_enabled = on;
    }

    pub fn mode(&self, role: Role) -> Mode {
        self.column(role).mode
    }

    pub fn set_mode(&mut self, role: Role, mode: Mode) {
        match role {
            Role::Active => self.active.mode = mode,
            Role::KnowledgeBase => self.kb.mode = mode,
        }
    }

    pub fn obs_len(&self) -> usize {
        self.active.net.input_len()
    }

    /// Mutable parameters for optimizers. Callers check the mode.
    pub(crate) fn params_mut(&mut self, role: Role) -> &mut ParameterStore {
        match role {
            Role::Active => &mut self.active.params,
            Role::KnowledgeBase => &mut self.kb.params,
        }
    }

    /// Overwrites one column's parameters (checkpoint restore, rollback).
    pub fn load_params(&mut self, role: Role, params: &ParameterStore) -> Result<()> {
        self.params_mut(role).copy_from(params)
    }

    /// Re-draws the active column and every adaptor from `seed`; the kb and
    /// the lateral flag are untouched.
    pub fn reinit_active(&mut self, seed: u64) -> Result<()> {
        let map = Self::init_active(&self.active.net, &self.adaptors, seed)?;
        self.active.params = ParameterStore::new(map, seed);
        Ok(())
    }

    pub fn forward(&self, role: Role, obs: &[f64], batch: usize) -> Result<AssemblyForward> {
        let (out, adaptors) = match role {
            Role::KnowledgeBase => (self.kb.net.forward(&self.kb.params, obs, batch)?, Vec::new()),
            Role::Active if !self.lateral_enabled => (self.active.net.forward(&self.active.params, obs, batch)?, Vec::new()),
            Role::Active => {
                let kb = self.kb.net.forward(&self.kb.params, obs, batch)?;
                let adaptors = self
                    .adaptors
                    .iter()
                    .zip(&kb.taps)
                    .map(|(a, tap)| a.net.forward(&self.active.params, tap, batch))
                    .collect::<Result<Vec<_>>>()?;
                let junctions: Vec<(usize, &[f64])> =
                    self.adaptors.iter().zip(&adaptors).map(|(a, o)| (a.layer, &o.output[..])).collect();
                let out = self.active.net.forward_with_junctions(&self.active.params, obs, batch, &junctions)?;
                (out, adaptors)
            }
        };
        let dists = dists_from_logits(&out.logits, NUM_ACTIONS)?;
        Ok(AssemblyForward { role, dists, values: out.values.clone(), taps: out.taps.clone(), out, adaptors })
    }

    /// Policy distributions, values and taps of the active column.
    pub fn active_forward(&self, obs: &[f64], batch: usize) -> Result<ColumnOutputs> {
        let f = self.forward(Role::Active, obs, batch)?;
        Ok((f.dists, f.values, f.taps))
    }

    pub fn kb_forward(&self, obs: &[f64], batch: usize) -> Result<ColumnOutputs> {
        let f = self.forward(Role::KnowledgeBase, obs, batch)?;
        Ok((f.dists, f.values, f.taps))
    }

    /// Accumulates gradients of the evaluated column's parameters (active
    /// trunk plus adaptors, or kb) into `out`. The kb never receives gradient
    /// from an active-column pass.
    pub fn backward(
        &self,
        fwd: &AssemblyForward,
        logit_grads: Option<&[f64]>,
        value_grads: Option<&[f64]>,
        out: &mut GradientStore,
    ) -> Result<()> {
        let col = self.column(fwd.role);
        if !out.0.same_layout(col.params.map()) {
            return Err(contract_err!("gradient store does not mirror the {:?} column", fwd.role));
        }
        let ups = OutputGrads { output: None, logits: logit_grads, values: value_grads };
        let aux = col.net.backward_into(&col.params, &fwd.out.cache, ups, out, false)?;
        if fwd.adaptors.is_empty() {
            return Ok(());
        }
        for (a, af) in self.adaptors.iter().zip(&fwd.adaptors) {
            let g = aux
                .junction_grads
                .iter()
                .find(|(l, _)| *l == a.layer)
                .map(|(_, g)| g)
                .ok_or_else(|| contract_err!("missing junction gradient at layer {}", a.layer))?;
            let ups = OutputGrads { output: Some(g), logits: None, values: None };
            a.net.backward_into(&self.active.params, &af.cache, ups, out, false)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, uniform01};

    fn asm() -> AgentAssembly {
        AgentAssembly::new(&NetworkSpec::toy_actor_critic(12), 11).unwrap()
    }

    fn obs(batch: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed, &[]);
        (0..batch * 576).map(|_| uniform01(&mut rng)).collect()
    }

    #[test]
    fn topology() {
        let a = asm();
        assert_eq!(a.adaptors().len(), 2);
        assert_eq!(a.adaptors()[0].junction(), 1);
        assert_eq!(a.adaptors()[1].junction(), 3);
        assert!(!a.lateral_enabled());
        assert_eq!(a.mode(Role::KnowledgeBase), Mode::Frozen);
        assert!(a.active().params().get("lateral0.layer0.weight").is_some());
        assert!(a.kb().params().get("lateral0.layer0.weight").is_none());
        let atari = AgentAssembly::new(&NetworkSpec::atari_actor_critic(), 1).unwrap();
        assert_eq!(atari.adaptors().len(), 3);
    }

    #[test]
    fn tapless_spec_rejected() {
        let mut s = NetworkSpec::toy_actor_critic(12);
        s.lateral_taps.clear();
        assert!(matches!(AgentAssembly::new(&s, 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn disabled_laterals_equal_plain_forward() {
        let a = asm();
        let x = obs(3, 1);
        let f = a.forward(Role::Active, &x, 3).unwrap();
        let plain = crate::nn::Network::new(&NetworkSpec::toy_actor_critic(12))
            .unwrap()
            .forward(a.active().params(), &x, 3)
            .unwrap();
        assert_eq!(f.logits(), &plain.logits[..]);
        assert_eq!(f.values, plain.values);
    }

    #[test]
    fn zero_adaptors_equal_disabled_laterals() {
        let mut a = asm();
        let x = obs(4, 2);
        let before = a.forward(Role::Active, &x, 4).unwrap();
        a.params_mut(Role::Active).zero_prefix("lateral");
        let plain = a.forward(Role::Active, &x, 4).unwrap();
        a.set_lateral_enabled(true);
        let lat = a.forward(Role::Active, &x, 4).unwrap();
        assert_eq!(before.logits(), plain.logits());
        assert_eq!(lat.logits(), plain.logits());
        assert_eq!(lat.values, plain.values);
    }

    #[test]
    fn adaptors_change_output_when_enabled() {
        let mut a = asm();
        let x = obs(2, 3);
        let off = a.forward(Role::Active, &x, 2).unwrap();
        a.set_lateral_enabled(true);
        let on = a.forward(Role::Active, &x, 2).unwrap();
        assert_ne!(off.logits(), on.logits());
    }

    #[test]
    fn kb_forward_is_pure_network_forward() {
        let a = asm();
        let x = obs(2, 4);
        let (d, v, _) = a.kb_forward(&x, 2).unwrap();
        let raw = crate::nn::forward(a.kb().params(), &NetworkSpec::toy_actor_critic(12), &x, 2).unwrap();
        assert_eq!(v, raw.values);
        assert_eq!(d, dists_from_logits(&raw.logits, 4).unwrap());
    }

    #[test]
    fn zeroed_kb_heads_give_uniform_policy() {
        let mut a = asm();
        a.params_mut(Role::KnowledgeBase).zero_prefix("policy");
        let (d, _, _) = a.kb_forward(&obs(1, 5), 1).unwrap();
        assert!(d[0].probs().iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn reinit_touches_only_active() {
        let mut a = asm();
        a.set_lateral_enabled(true);
        let kb = a.kb().checksum();
        a.reinit_active(5).unwrap();
        let first = a.active().checksum();
        a.reinit_active(6).unwrap();
        assert_ne!(first, a.active().checksum());
        a.reinit_active(5).unwrap();
        assert_eq!(first, a.active().checksum());
        assert_eq!(kb, a.kb().checksum());
        assert!(a.lateral_enabled());
    }

    #[test]
    fn lateral_gradients_skip_kb_and_match_finite_differences() {
        let mut a = asm();
        a.set_lateral_enabled(true);
        let x = obs(2, 6);
        let w: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |a: &AgentAssembly| {
            let f = a.forward(Role::Active, &x, 2).unwrap();
            f.logits().iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() + f.values.iter().sum::<f64>()
        };
        let f = a.forward(Role::Active, &x, 2).unwrap();
        let mut g = GradientStore::zeros_like(a.active().params());
        a.backward(&f, Some(&w), Some(&[1.0, 1.0]), &mut g).unwrap();
        assert!(g.0.get("lateral1.layer2.weight").unwrap().data.iter().any(|v| *v != 0.0));
        for name in ["lateral0.layer0.weight", "lateral1.layer0.bias", "layer3.weight", "lateral0.layer3.weight"] {
            let n = a.active().params().require(name).unwrap().len();
            for k in [0, n / 2, n - 1] {
                let h = 1e-5;
                let orig = a.active().params().require(name).unwrap().data[k];
                a.params_mut(Role::Active).get_mut(name).unwrap().data[k] = orig + h;
                let up = loss(&a);
                a.params_mut(Role::Active).get_mut(name).unwrap().data[k] = orig - h;
                let down = loss(&a);
                a.params_mut(Role::Active).get_mut(name).unwrap().data[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = g.0.get(name).unwrap().data[k];
                assert!((fd - an).abs() <= 1e-6 + 1e-4 * an.abs().max(fd.abs()), "{name}[{k}]: {an} vs {fd}");
            }
        }
        let mut kb_grad = GradientStore::zeros_like(a.kb().params());
        assert!(a.backward(&f, Some(&w), None, &mut kb_grad).is_err());
    }
}
