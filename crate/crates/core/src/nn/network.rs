use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;

use super::spec::{Activation, LayerSpec, NetworkSpec, Shape, NUM_ACTIONS};
use super::tensor::{GradientStore, ParameterStore, Tensor, TensorMap};
use crate::error::{config_err, contract_err, numeric_err, Result};
use crate::rng::{uniform01, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Op {
    Conv(ConvGeom),
    Dense { inputs: usize, outputs: usize },
    Flatten,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layer {
    op: Op,
    activation: Activation,
    out_shape: Shape,
    weight: String,
    bias: String,
}

impl Layer {
    fn in_len(&self) -> usize {
        match &self.op {
            Op::Conv(g) => g.in_c * g.in_h * g.in_w,
            Op::Dense { inputs, .. } => *inputs,
            Op::Flatten => self.out_shape.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Head {
    inputs: usize,
    outputs: usize,
    weight: String,
    bias: String,
}

/// A [`NetworkSpec`] whose shapes have been checked and resolved, bound to a
/// parameter-name prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    prefix: String,
    spec: NetworkSpec,
    layers: Vec<Layer>,
    policy: Option<Head>,
    value: Option<Head>,
    signature: u64,
}

/// Everything a forward pass produced that backward needs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    generation: u64,
    signature: u64,
    /// `inputs[i]` is what layer `i` consumed; `inputs[len]` feeds the heads.
    inputs: Vec<Vec<f64>>,
    /// Post-activation output of each layer, before any junction addition.
    outputs: Vec<Vec<f64>>,
    junctions: Vec<usize>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Final trunk activation (after any junction addition), `[batch, out]`.
    pub output: Vec<f64>,
    /// `[batch, policy]`, empty for headless networks.
    pub logits: Vec<f64>,
    /// `[batch, 1]`, empty for headless networks.
    pub values: Vec<f64>,
    /// One entry per `lateral_taps` index, in the spec's order.
    pub taps: Vec<Vec<f64>>,
    pub cache: ForwardCache,
}

/// Upstream gradients for [`Network::backward_into`].
#[derive(Clone, Copy, Debug, Default)]
pub struct OutputGrads<'a> {
    pub output: Option<&'a [f64]>,
    pub logits: Option<&'a [f64]>,
    pub values: Option<&'a [f64]>,
}

#[derive(Clone, Debug, Default)]
pub struct BackwardAux {
    pub input_grad: Option<Vec<f64>>,
    /// Gradient w.r.t. each junction addition, keyed by layer index.
    pub junction_grads: Vec<(usize, Vec<f64>)>,
}

fn fnv(h: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *h ^= u64::from(*b);
        *h = h.wrapping_mul(0x0100_0000_01b3);
    }
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        Self::with_prefix(spec, "")
    }

    /// Resolves shapes layer by layer. Parameter names are
    /// `{prefix}layer{i}.weight`, `{prefix}policy.bias`, ...
    pub fn with_prefix(spec: &NetworkSpec, prefix: &str) -> Result<Self> {
        if spec.input.is_empty() {
            return Err(config_err!("network input shape is empty"));
        }
        let mut shape = spec.input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let weight = format!("{prefix}layer{i}.weight");
            let bias = format!("{prefix}layer{i}.bias");
            let layer = match *ls {
                LayerSpec::Conv { out_channels, kernel, stride, padding, activation } => {
                    let Shape::Spatial { channels, height, width } = shape else {
                        return Err(config_err!("layer {i}: convolution needs a spatial input, got {shape:?}"));
                    };
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(config_err!("layer {i}: convolution with zero channels, kernel or stride"));
                    }
                    if height + 2 * padding < kernel || width + 2 * padding < kernel {
                        return Err(config_err!(
                            "layer {i}: kernel {kernel} larger than padded input {height}x{width}"
                        ));
                    }
                    let out_h = (height + 2 * padding - kernel) / stride + 1;
                    let out_w = (width + 2 * padding - kernel) / stride + 1;
                    let geom = ConvGeom {
                        in_c: channels,
                        in_h: height,
                        in_w: width,
                        out_c: out_channels,
                        out_h,
                        out_w,
                        kernel,
                        stride,
                        pad: padding,
                    };
                    let out_shape = Shape::Spatial { channels: out_channels, height: out_h, width: out_w };
                    Layer { op: Op::Conv(geom), activation, out_shape, weight, bias }
                }
                LayerSpec::Flatten => Layer {
                    op: Op::Flatten,
                    activation: Activation::Identity,
                    out_shape: Shape::Flat(shape.len()),
                    weight,
                    bias,
                },
                LayerSpec::Dense { width, activation } => {
                    let Shape::Flat(inputs) = shape else {
                        return Err(config_err!("layer {i}: dense layer needs a flat input (add a flatten layer)"));
                    };
                    if width == 0 {
                        return Err(config_err!("layer {i}: dense layer of width 0"));
                    }
                    Layer {
                        op: Op::Dense { inputs, outputs: width },
                        activation,
                        out_shape: Shape::Flat(width),
                        weight,
                        bias,
                    }
                }
            };
            shape = layer.out_shape;
            layers.push(layer);
        }
        for &t in &spec.lateral_taps {
            if t >= layers.len() {
                return Err(config_err!("lateral tap {t} out of range ({} layers)", layers.len()));
            }
        }
        let (policy, value) = match spec.heads {
            Some(h) => {
                let Shape::Flat(inputs) = shape else {
                    return Err(config_err!("heads need a flat trunk output, got {shape:?}"));
                };
                if h.policy != NUM_ACTIONS {
                    return Err(config_err!("policy head width {} != action space {}", h.policy, NUM_ACTIONS));
                }
                if h.value != 1 {
                    return Err(config_err!("value head width must be 1, got {}", h.value));
                }
                (
                    Some(Head {
                        inputs,
                        outputs: h.policy,
                        weight: format!("{prefix}policy.weight"),
                        bias: format!("{prefix}policy.bias"),
                    }),
                    Some(Head {
                        inputs,
                        outputs: 1,
                        weight: format!("{prefix}value.weight"),
                        bias: format!("{prefix}value.bias"),
                    }),
                )
            }
            None => (None, None),
        };
        let mut signature: u64 = 0xcbf2_9ce4_8422_2325;
        fnv(&mut signature, prefix.as_bytes());
        fnv(&mut signature, format!("{spec:?}").as_bytes());
        Ok(Self { prefix: prefix.into(), spec: spec.clone(), layers, policy, value, signature })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.len()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().len()
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.spec.input, |l| l.out_shape)
    }

    /// Output shape of layer `i`.
    pub fn layer_shape(&self, i: usize) -> Option<Shape> {
        self.layers.get(i).map(|l| l.out_shape)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_heads(&self) -> bool {
        self.policy.is_some()
    }

    /// Analytic parameter count (weights and biases of every layer and head).
    pub fn parameter_count(&self) -> usize {
        let layers: usize = self
            .layers
            .iter()
            .map(|l| match &l.op {
                Op::Conv(g) => g.out_c * g.in_c * g.kernel * g.kernel + g.out_c,
                Op::Dense { inputs, outputs } => inputs * outputs + outputs,
                Op::Flatten => 0,
            })
            .sum();
        let heads: usize = [&self.policy, &self.value]
            .iter()
            .filter_map(|h| h.as_ref())
            .map(|h| h.inputs * h.outputs + h.outputs)
            .sum();
        layers + heads
    }

    /// Uniform fan-in initialization: bound `sqrt(6/fan_in)` before a
    /// rectifier, `sqrt(3/fan_in)` before identity layers and heads; zero
    /// biases.
    pub fn init_params(&self, seed: u64) -> Result<TensorMap> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut map = TensorMap::new();
        let draw = |shape: &[usize], fan_in: usize, gain2: f64, rng: &mut Rng| {
            let bound = libm::sqrt(3.0 * gain2 / fan_in as f64);
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| (2.0 * uniform01(rng) - 1.0) * bound).collect();
            Tensor { shape: shape.to_vec(), data }
        };
        for l in &self.layers {
            let gain2 = if l.activation == Activation::Relu { 2.0 } else { 1.0 };
            match &l.op {
                Op::Conv(g) => {
                    let fan_in = g.in_c * g.kernel * g.kernel;
                    map.insert(&l.weight, draw(&[g.out_c, g.in_c, g.kernel, g.kernel], fan_in, gain2, &mut rng))?;
                    map.insert(&l.bias, Tensor::zeros(&[g.out_c]))?;
                }
                Op::Dense { inputs, outputs } => {
                    map.insert(&l.weight, draw(&[*outputs, *inputs], *inputs, gain2, &mut rng))?;
                    map.insert(&l.bias, Tensor::zeros(&[*outputs]))?;
                }
                Op::Flatten => {}
            }
        }
        for h in [&self.policy, &self.value].into_iter().flatten() {
            map.insert(&h.weight, draw(&[h.outputs, h.inputs], h.inputs, 1.0, &mut rng))?;
            map.insert(&h.bias, Tensor::zeros(&[h.outputs]))?;
        }
        Ok(map)
    }

    pub fn forward(&self, params: &ParameterStore, input: &[f64], batch: usize) -> Result<ForwardOutput> {
        self.forward_with_junctions(params, input, batch, &[])
    }

    /// Forward pass where `junctions[j] = (i, add)` adds `add` (shape
    /// `[batch, layer i output]`) to the output of layer `i` before it is
    /// consumed downstream.
    pub fn forward_with_junctions(
        &self,
        params: &ParameterStore,
        input: &[f64],
        batch: usize,
        junctions: &[(usize, &[f64])],
    ) -> Result<ForwardOutput> {
        if batch == 0 || input.len() != batch * self.input_len() {
            return Err(contract_err!(
                "input of {} values does not match batch {batch} x {:?}",
                input.len(),
                self.spec.input
            ));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(numeric_err!("non-finite value in network input"));
        }
        for (i, add) in junctions {
            let Some(shape) = self.layer_shape(*i) else {
                return Err(config_err!("junction at missing layer {i}"));
            };
            if add.len() != batch * shape.len() {
                return Err(config_err!(
                    "junction at layer {i}: got {} values, layer output is batch {batch} x {}",
                    add.len(),
                    shape.len()
                ));
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut outputs = Vec::with_capacity(self.layers.len());
        inputs.push(input.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let x = inputs.last().unwrap();
            let mut y = match &l.op {
                Op::Conv(g) => conv_forward(g, params.require(&l.weight)?, params.require(&l.bias)?, x, batch),
                Op::Dense { inputs, outputs } => dense_forward(
                    *inputs,
                    *outputs,
                    &params.require(&l.weight)?.data,
                    &params.require(&l.bias)?.data,
                    x,
                    batch,
                ),
                Op::Flatten => x.clone(),
            };
            if l.activation == Activation::Relu {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let mut next = y.clone();
            for (_, add) in junctions.iter().filter(|(j, _)| *j == i) {
                next.iter_mut().zip(add.iter()).for_each(|(a, b)| *a += b);
            }
            outputs.push(y);
            inputs.push(next);
        }
        let trunk = inputs.last().unwrap();
        let (logits, values) = match (&self.policy, &self.value) {
            (Some(p), Some(v)) => (
                dense_forward(
                    p.inputs,
                    p.outputs,
                    &params.require(&p.weight)?.data,
                    &params.require(&p.bias)?.data,
                    trunk,
                    batch,
                ),
                dense_forward(
                    v.inputs,
                    v.outputs,
                    &params.require(&v.weight)?.data,
                    &params.require(&v.bias)?.data,
                    trunk,
                    batch,
                ),
            ),
            _ => (Vec::new(), Vec::new()),
        };
        if logits.iter().chain(values.iter()).chain(trunk.iter()).any(|v| !v.is_finite()) {
            return Err(numeric_err!("non-finite network output"));
        }
        let taps = self.spec.lateral_taps.iter().map(|&t| outputs[t].clone()).collect();
        let output = trunk.clone();
        Ok(ForwardOutput {
            output,
            logits,
            values,
            taps,
            cache: ForwardCache {
                batch,
                generation: params.generation(),
                signature: self.signature,
                inputs,
                outputs,
                junctions: junctions.iter().map(|(i, _)| *i).collect(),
            },
        })
    }

    /// Exact reverse-mode pass; gradients are accumulated (added) into `out`.
    pub fn backward_into(
        &self,
        params: &ParameterStore,
        cache: &ForwardCache,
        grads: OutputGrads<'_>,
        out: &mut GradientStore,
        want_input_grad: bool,
    ) -> Result<BackwardAux> {
        if cache.signature != self.signature || cache.inputs.len() != self.layers.len() + 1 {
            return Err(contract_err!("forward cache belongs to a different network"));
        }
        if cache.generation != params.generation() {
            return Err(contract_err!("stale forward cache: parameters changed since the forward pass"));
        }
        let batch = cache.batch;
        let trunk = &cache.inputs[self.layers.len()];
        let out_len = self.output_len();
        let mut g = match grads.output {
            Some(go) => {
                if go.len() != batch * out_len {
                    return Err(contract_err!("output gradient has {} values, expected {}", go.len(), batch * out_len));
                }
                go.to_vec()
            }
            None => vec![0.0; batch * out_len],
        };
        for (head, upstream) in [(&self.policy, grads.logits), (&self.value, grads.values)] {
            let (Some(h), Some(up)) = (head, upstream) else { continue };
            if up.len() != batch * h.outputs {
                return Err(contract_err!("head gradient has {} values, expected {}", up.len(), batch * h.outputs));
            }
            let w = &params.require(&h.weight)?.data;
            let (dw, db) = grad_pair(out, &h.weight, &h.bias)?;
            dense_backward(h.inputs, h.outputs, w, trunk, up, batch, dw, db, Some(&mut g));
        }
        let mut aux = BackwardAux::default();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if cache.junctions.contains(&i) {
                aux.junction_grads.push((i, g.clone()));
            }
            if l.activation == Activation::Relu {
                g.iter_mut().zip(&cache.outputs[i]).for_each(|(gv, y)| {
                    if *y <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            let need_dx = i > 0 || want_input_grad;
            let x = &cache.inputs[i];
            g = match &l.op {
                Op::Conv(geom) => {
                    let w = &params.require(&l.weight)?.data;
                    let (dw, db) = grad_pair(out, &l.weight, &l.bias)?;
                    let mut dx = if need_dx { vec![0.0; batch * l.in_len()] } else { Vec::new() };
                    conv_backward(geom, w, x, &g, batch, dw, db, need_dx.then_some(&mut dx));
                    dx
                }
                Op::Dense { inputs, outputs } => {
                    let w = &params.require(&l.weight)?.data;
                    let (dw, db) = grad_pair(out, &l.weight, &l.bias)?;
                    let mut dx = if need_dx { vec![0.0; batch * inputs] } else { Vec::new() };
                    dense_backward(*inputs, *outputs, w, x, &g, batch, dw, db, need_dx.then_some(&mut dx));
                    dx
                }
                Op::Flatten => g,
            };
        }
        aux.junction_grads.reverse();
        if want_input_grad {
            aux.input_grad = Some(g);
        }
        Ok(aux)
    }
}

fn grad_pair<'a>(out: &'a mut GradientStore, w: &str, b: &str) -> Result<(&'a mut [f64], &'a mut [f64])> {
    let (wi, bi) = match (out.0.index_of(w), out.0.index_of(b)) {
        (Some(wi), Some(bi)) => (wi, bi),
        _ => return Err(contract_err!("gradient store lacks `{w}` / `{b}`")),
    };
    // Weight and bias entries are distinct, so split the borrow by position.
    let mut it = out.0.iter_mut().enumerate().filter(|(i, _)| *i == wi || *i == bi);
    let (i0, (_, t0)) = it.next().unwrap();
    let (_, (_, t1)) = it.next().unwrap();
    if i0 == wi {
        Ok((&mut t0.data, &mut t1.data))
    } else {
        Ok((&mut t1.data, &mut t0.data))
    }
}

fn dense_forward(inputs: usize, outputs: usize, w: &[f64], b: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        let yr = &mut y[n * outputs..(n + 1) * outputs];
        for (o, yv) in yr.iter_mut().enumerate() {
            let wr = &w[o * inputs..(o + 1) * inputs];
            *yv = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    inputs: usize,
    outputs: usize,
    w: &[f64],
    x: &[f64],
    gy: &[f64],
    batch: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut Vec<f64>>,
) {
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let go = gy[n * outputs + o];
            if go == 0.0 {
                continue;
            }
            db[o] += go;
            let dwr = &mut dw[o * inputs..(o + 1) * inputs];
            dwr.iter_mut().zip(xr).for_each(|(d, xv)| *d += go * xv);
            if let Some(dx) = dx.as_deref_mut() {
                let wr = &w[o * inputs..(o + 1) * inputs];
                dx[n * inputs..(n + 1) * inputs].iter_mut().zip(wr).for_each(|(d, wv)| *d += go * wv);
            }
        }
    }
}

fn conv_forward(g: &ConvGeom, w: &Tensor, b: &Tensor, x: &[f64], batch: usize) -> Vec<f64> {
    let (in_sz, out_sz) = (g.in_c * g.in_h * g.in_w, g.out_c * g.out_h * g.out_w);
    let k = g.kernel;
    let mut y = vec![0.0; batch * out_sz];
    for n in 0..batch {
        let xs = &x[n * in_sz..(n + 1) * in_sz];
        let ys = &mut y[n * out_sz..(n + 1) * out_sz];
        for oc in 0..g.out_c {
            let wo = &w.data[oc * g.in_c * k * k..(oc + 1) * g.in_c * k * k];
            for oy in 0..g.out_h {
                let y0 = (oy * g.stride) as isize - g.pad as isize;
                for ox in 0..g.out_w {
                    let x0 = (ox * g.stride) as isize - g.pad as isize;
                    let mut acc = b.data[oc];
                    for ic in 0..g.in_c {
                        let xc = &xs[ic * g.in_h * g.in_w..(ic + 1) * g.in_h * g.in_w];
                        let wc = &wo[ic * k * k..(ic + 1) * k * k];
                        for ky in 0..k {
                            let iy = y0 + ky as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            let row = &xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                            let wr = &wc[ky * k..(ky + 1) * k];
                            for (kx, wv) in wr.iter().enumerate() {
                                let ix = x0 + kx as isize;
                                if ix >= 0 && ix < g.in_w as isize {
                                    acc += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                    ys[(oc * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    g: &ConvGeom,
    w: &[f64],
    x: &[f64],
    gy: &[f64],
    batch: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut Vec<f64>>,
) {
    let (in_sz, out_sz) = (g.in_c * g.in_h * g.in_w, g.out_c * g.out_h * g.out_w);
    let k = g.kernel;
    for n in 0..batch {
        let xs = &x[n * in_sz..(n + 1) * in_sz];
        for oc in 0..g.out_c {
            let wbase = oc * g.in_c * k * k;
            for oy in 0..g.out_h {
                let y0 = (oy * g.stride) as isize - g.pad as isize;
                for ox in 0..g.out_w {
                    let go = gy[n * out_sz + (oc * g.out_h + oy) * g.out_w + ox];
                    if go == 0.0 {
                        continue;
                    }
                    db[oc] += go;
                    let x0 = (ox * g.stride) as isize - g.pad as isize;
                    for ic in 0..g.in_c {
                        let cbase = ic * g.in_h * g.in_w;
                        for ky in 0..k {
                            let iy = y0 + ky as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = x0 + kx as isize;
                                if ix < 0 || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xi = cbase + iy as usize * g.in_w + ix as usize;
                                let wi = wbase + (ic * k + ky) * k + kx;
                                dw[wi] += go * xs[xi];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[n * in_sz + xi] += go * w[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
