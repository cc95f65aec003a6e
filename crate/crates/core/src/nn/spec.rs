use alloc::vec;
use alloc::vec::Vec;

/// Size of the agent-facing action space shared by every task.
pub const NUM_ACTIONS: usize = 4;

/// Number of grayscale frames in one observation.
pub const STACK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Shape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { channels, height, width } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize, activation: Activation },
    Flatten,
    Dense { width: usize, activation: Activation },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv { out_channels, kernel, stride, padding: 0, activation: Activation::Relu }
    }

    pub fn conv_padded(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv { out_channels, kernel, stride, padding, activation: Activation::Relu }
    }

    pub fn dense(width: usize) -> Self {
        LayerSpec::Dense { width, activation: Activation::Relu }
    }

    pub fn linear(width: usize) -> Self {
        LayerSpec::Dense { width, activation: Activation::Identity }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadSpec {
    pub policy: usize,
    pub value: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { policy: NUM_ACTIONS, value: 1 }
    }
}

/// Layer-by-layer description of a network column.
///
/// `lateral_taps` are indices into `layers` whose post-activation outputs are
/// exported; when the spec describes a knowledge-base column these are also the
/// junctions at which the active column receives lateral input.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub heads: Option<HeadSpec>,
    pub lateral_taps: Vec<usize>,
}

impl NetworkSpec {
    /// Desk-scale actor-critic: conv(8,3x3,s2) -> conv(8,3x3,s2) -> dense(64).
    pub fn toy_actor_critic(obs_size: usize) -> Self {
        Self {
            input: Shape::Spatial { channels: STACK, height: obs_size, width: obs_size },
            layers: vec![
                LayerSpec::conv(8, 3, 2),
                LayerSpec::conv(8, 3, 2),
                LayerSpec::Flatten,
                LayerSpec::dense(64),
            ],
            heads: Some(HeadSpec::default()),
            lateral_taps: vec![1, 3],
        }
    }

    /// The 84x84 actor-critic: conv(32,8x8,s4) -> conv(64,4x4,s2) ->
    /// conv(32,3x3,s1) -> dense(512) with a 1-unit critic and 4-unit actor.
    pub fn atari_actor_critic() -> Self {
        Self {
            input: Shape::Spatial { channels: STACK, height: 84, width: 84 },
            layers: vec![
                LayerSpec::conv(32, 8, 4),
                LayerSpec::conv(64, 4, 2),
                LayerSpec::conv(32, 3, 1),
                LayerSpec::Flatten,
                LayerSpec::dense(512),
            ],
            heads: Some(HeadSpec::default()),
            lateral_taps: vec![1, 2, 4],
        }
    }

    /// Forward-model encoder of the desk-scale profile (32 features at 12x12).
    pub fn toy_encoder(obs_size: usize) -> Self {
        Self {
            input: Shape::Spatial { channels: STACK, height: obs_size, width: obs_size },
            layers: vec![LayerSpec::conv(8, 3, 2), LayerSpec::conv(8, 3, 2), LayerSpec::Flatten],
            heads: None,
            lateral_taps: vec![],
        }
    }

    /// Forward-model encoder at 84x84: five conv(32,3x3,s2,pad 1) -> 288 features.
    pub fn atari_encoder() -> Self {
        let mut layers = vec![LayerSpec::conv_padded(32, 3, 2, 1); 5];
        layers.push(LayerSpec::Flatten);
        Self {
            input: Shape::Spatial { channels: STACK, height: 84, width: 84 },
            layers,
            heads: None,
            lateral_taps: vec![],
        }
    }
}
