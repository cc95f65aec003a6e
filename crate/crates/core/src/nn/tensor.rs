use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(contract_err!("shape {:?} needs {} values, got {}", shape, len, data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of uniquely named tensors.
///
/// Insertion order is preserved and is the iteration order everywhere
/// (initialization, checksums, serialization), which keeps every traversal
/// deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorMap {
    entries: Vec<(String, Tensor)>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(contract_err!("duplicate tensor name `{name}`"));
        }
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| contract_err!("missing tensor `{name}`"))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.get_mut(name).ok_or_else(|| contract_err!("missing tensor `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(&t.shape)))
                .collect(),
        }
    }

    /// True when both maps have the same names, in the same order, with the
    /// same shapes.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, ta), (b, tb))| a == b && ta.shape == tb.shape)
    }

    pub fn check_layout(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(contract_err!("{what}: key sets or shapes differ"))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in &mut self.entries {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flattened copy of every scalar in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    pub fn append(&mut self, other: TensorMap) -> Result<()> {
        for (name, t) in other.entries {
            self.insert(&name, t)?;
        }
        Ok(())
    }

    /// FNV-1a over names, shapes and the bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in &self.entries {
            eat(name.as_bytes());
            for d in &t.shape {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Learnable arrays of one network column (trunk, heads and any adaptors).
///
/// `generation` increments on every mutable access so forward caches can be
/// checked for staleness.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    map: TensorMap,
    seed: u64,
    generation: u64,
}

impl ParameterStore {
    pub fn new(map: TensorMap, seed: u64) -> Self {
        Self { map, seed, generation: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn map(&self) -> &TensorMap {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut TensorMap {
        self.generation += 1;
        &mut self.map
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.map.require(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.generation += 1;
        self.map.get_mut(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.map.num_scalars()
    }

    pub fn checksum(&self) -> u64 {
        self.map.checksum()
    }

    pub fn is_finite(&self) -> bool {
        self.map.all_finite()
    }

    /// Replaces every value with the one from `other` (same layout required).
    pub fn copy_from(&mut self, other: &ParameterStore) -> Result<()> {
        self.map.check_layout(&other.map, "copy_from")?;
        self.map = other.map.clone();
        self.seed = other.seed;
        self.generation += 1;
        Ok(())
    }

    /// Zeroes the entries whose names start with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.map_mut().iter_mut() {
            if name.starts_with(prefix) {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Gradients mirroring one [`ParameterStore`]'s key set.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientStore(pub TensorMap);

impl GradientStore {
    pub fn zeros_like(params: &ParameterStore) -> Self {
        Self(params.map().zeros_like())
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.0.sq_norm())
    }
}
