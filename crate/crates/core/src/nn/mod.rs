//! Minimal deterministic neural substrate: dense and convolutional layers with
//! exact reverse-mode gradients, categorical policy heads, RMSprop and global
//! gradient-norm clipping. Everything is `f64`.

mod dist;
mod network;
mod optim;
mod spec;
mod tensor;

pub use dist::{dist_from_logits, dists_from_logits, entropy, kl_divergence, sample, CategoricalDist, PROB_FLOOR};
pub use network::{BackwardAux, ForwardCache, ForwardOutput, Network, OutputGrads};
pub use optim::{clip_global_norm, rmsprop_step, RmspropConfig, RmspropState};
pub use spec::{Activation, HeadSpec, LayerSpec, NetworkSpec, Shape, NUM_ACTIONS, STACK};
pub use tensor::{GradientStore, ParameterStore, Tensor, TensorMap};

use crate::error::Result;

/// Initializes the parameters of `spec` deterministically from `seed`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<ParameterStore> {
    let net = Network::new(spec)?;
    Ok(ParameterStore::new(net.init_params(seed)?, seed))
}

pub fn forward(params: &ParameterStore, spec: &NetworkSpec, input: &[f64], batch: usize) -> Result<ForwardOutput> {
    Network::new(spec)?.forward(params, input, batch)
}

/// Gradients of every parameter of `spec` given upstream gradients on the
/// outputs recorded in `cache`.
pub fn backward(
    params: &ParameterStore,
    spec: &NetworkSpec,
    cache: &ForwardCache,
    loss_grads: OutputGrads<'_>,
) -> Result<GradientStore> {
    let net = Network::new(spec)?;
    let mut grads = GradientStore::zeros_like(params);
    net.backward_into(params, cache, loss_grads, &mut grads, false)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, uniform01};
    use crate::Error;
    use alloc::vec;
    use alloc::vec::Vec;

    fn toy() -> NetworkSpec {
        NetworkSpec::toy_actor_critic(12)
    }

    #[test]
    fn same_seed_builds_identical_stores() {
        let a = build_network(&toy(), 7).unwrap();
        let b = build_network(&toy(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), build_network(&toy(), 8).unwrap().checksum());
    }

    #[test]
    fn zero_width_dense_is_a_config_error() {
        let mut s = toy();
        s.layers[3] = LayerSpec::dense(0);
        match build_network(&s, 1) {
            Err(Error::Config(msg)) => assert!(msg.contains("layer 3"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn dense_without_flatten_is_rejected() {
        let mut s = toy();
        s.layers.remove(2);
        assert!(matches!(Network::new(&s), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_counts_match_hand_counts() {
        // conv 8*4*9+8, conv 8*8*9+8, dense 32*64+64, policy 64*4+4, value 64+1
        let toy_count = 296 + 584 + 2112 + 260 + 65;
        let net = Network::new(&toy()).unwrap();
        assert_eq!(net.parameter_count(), toy_count);
        assert_eq!(build_network(&toy(), 1).unwrap().num_scalars(), toy_count);
        // 84x84: conv 32*4*64+32, conv 64*32*16+64, conv 32*64*9+32,
        // dense 1568*512+512, policy 512*4+4, value 512+1
        let atari = Network::new(&NetworkSpec::atari_actor_critic()).unwrap();
        assert_eq!(atari.parameter_count(), 8224 + 32832 + 18464 + 803_328 + 2052 + 513);
        let enc = Network::new(&NetworkSpec::atari_encoder()).unwrap();
        assert_eq!(enc.output_len(), 288);
        assert_eq!(Network::new(&NetworkSpec::toy_encoder(12)).unwrap().output_len(), 32);
    }

    #[test]
    fn zero_input_through_zeroed_heads() {
        let mut p = build_network(&toy(), 3).unwrap();
        p.zero_prefix("policy.");
        p.zero_prefix("value.");
        let out = forward(&p, &toy(), &vec![0.0; 576], 1).unwrap();
        assert_eq!(out.logits, vec![0.0; 4]);
        assert_eq!(out.values, vec![0.0]);
    }

    #[test]
    fn batch_shapes_and_taps() {
        let p = build_network(&toy(), 3).unwrap();
        let mut rng = rng_from(5, &[]);
        let x: Vec<f64> = (0..10 * 576).map(|_| uniform01(&mut rng)).collect();
        let out = forward(&p, &toy(), &x, 10).unwrap();
        assert_eq!(out.logits.len(), 40);
        assert_eq!(out.values.len(), 10);
        assert_eq!(out.taps.len(), 2);
        assert_eq!(out.taps[0].len(), 10 * 32);
        assert_eq!(out.taps[1].len(), 10 * 64);
    }

    #[test]
    fn bad_inputs_rejected() {
        let p = build_network(&toy(), 3).unwrap();
        let mut x = vec![0.5; 576];
        assert!(matches!(forward(&p, &toy(), &x[..500], 1), Err(Error::Contract(_))));
        x[17] = f64::NAN;
        assert!(matches!(forward(&p, &toy(), &x, 1), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let p = build_network(&toy(), 3).unwrap();
        let out = forward(&p, &toy(), &vec![0.3; 576], 1).unwrap();
        let g = backward(&p, &toy(), &out.cache, OutputGrads {
            logits: Some(&[0.0; 4]),
            values: Some(&[0.0]),
            output: None,
        })
        .unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn single_dense_sum_loss_gradient_is_outer_product() {
        let spec = NetworkSpec {
            input: Shape::Flat(3),
            layers: vec![LayerSpec::linear(2)],
            heads: None,
            lateral_taps: vec![],
        };
        let p = build_network(&spec, 1).unwrap();
        let x = [0.5, -1.0, 2.0];
        let out = forward(&p, &spec, &x, 1).unwrap();
        let g = backward(&p, &spec, &out.cache, OutputGrads { output: Some(&[1.0, 1.0]), ..Default::default() }).unwrap();
        assert_eq!(g.0.get("layer0.weight").unwrap().data, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(g.0.get("layer0.bias").unwrap().data, vec![1.0, 1.0]);
    }

    #[test]
    fn unused_value_head_gets_zero_gradient() {
        let p = build_network(&toy(), 9).unwrap();
        let out = forward(&p, &toy(), &vec![0.7; 576], 1).unwrap();
        let g = backward(&p, &toy(), &out.cache, OutputGrads { logits: Some(&[1.0, -1.0, 0.5, 0.0]), ..Default::default() })
            .unwrap();
        assert!(g.0.get("value.weight").unwrap().data.iter().all(|v| *v == 0.0));
        assert!(g.0.get("policy.weight").unwrap().data.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn stale_cache_is_a_contract_error() {
        let mut p = build_network(&toy(), 9).unwrap();
        let out = forward(&p, &toy(), &vec![0.7; 576], 1).unwrap();
        p.get_mut("value.bias").unwrap().data[0] = 1.0;
        let r = backward(&p, &toy(), &out.cache, OutputGrads { values: Some(&[1.0]), ..Default::default() });
        assert!(matches!(r, Err(Error::Contract(_))));
        let other = NetworkSpec::toy_encoder(12);
        let q = build_network(&other, 1).unwrap();
        let r = backward(&q, &other, &out.cache, OutputGrads::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn junction_gradients_match_finite_differences() {
        let spec = NetworkSpec {
            input: Shape::Spatial { channels: 2, height: 5, width: 5 },
            layers: vec![LayerSpec::conv(3, 3, 1), LayerSpec::Flatten, LayerSpec::dense(6)],
            heads: Some(HeadSpec::default()),
            lateral_taps: vec![0, 2],
        };
        let net = Network::new(&spec).unwrap();
        let p = build_network(&spec, 4).unwrap();
        let mut rng = rng_from(1, &[]);
        let x: Vec<f64> = (0..50).map(|_| uniform01(&mut rng)).collect();
        let add0: Vec<f64> = (0..27).map(|_| uniform01(&mut rng) - 0.5).collect();
        let add2: Vec<f64> = (0..6).map(|_| uniform01(&mut rng) - 0.5).collect();
        let w = [0.3, -0.7, 1.1, 0.2];
        let loss = |a0: &[f64], a2: &[f64]| {
            let o = net.forward_with_junctions(&p, &x, 1, &[(0, a0), (2, a2)]).unwrap();
            o.logits.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() + 0.5 * o.values[0]
        };
        let o = net.forward_with_junctions(&p, &x, 1, &[(0, &add0), (2, &add2)]).unwrap();
        let mut g = GradientStore::zeros_like(&p);
        let aux = net
            .backward_into(&p, &o.cache, OutputGrads { logits: Some(&w), values: Some(&[0.5]), output: None }, &mut g, false)
            .unwrap();
        assert_eq!(aux.junction_grads.len(), 2);
        for (idx, (layer, jg)) in aux.junction_grads.iter().enumerate() {
            let base = if *layer == 0 { &add0 } else { &add2 };
            for k in 0..base.len() {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[k] += 1e-6;
                minus[k] -= 1e-6;
                let fd = if idx == 0 {
                    (loss(&plus, &add2) - loss(&minus, &add2)) / 2e-6
                } else {
                    (loss(&add0, &plus) - loss(&add0, &minus)) / 2e-6
                };
                assert!((fd - jg[k]).abs() < 1e-6, "layer {layer} k {k}: {fd} vs {}", jg[k]);
            }
        }
    }
}
