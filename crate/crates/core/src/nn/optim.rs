use alloc::vec::Vec;

use super::tensor::{GradientStore, ParameterStore, TensorMap};
use crate::error::{config_err, numeric_err, Result};

/// Non-centered RMSprop hyperparameters; `eps` is added outside the square
/// root.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RmspropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self { lr: 7e-4, alpha: 0.99, eps: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmspropState {
    pub squared_avg: TensorMap,
    pub config: RmspropConfig,
}

impl RmspropState {
    pub fn new(params: &ParameterStore, config: RmspropConfig) -> Result<Self> {
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(config_err!("rmsprop alpha must lie in (0, 1), got {}", config.alpha));
        }
        if !(config.eps > 0.0) || !(config.lr >= 0.0) {
            return Err(config_err!("rmsprop needs eps > 0 and lr >= 0"));
        }
        Ok(Self { squared_avg: params.map().zeros_like(), config })
    }

    pub fn reset(&mut self) {
        self.squared_avg = self.squared_avg.zeros_like();
    }
}

/// One RMSprop step. All new values are computed first; if any is non-finite
/// nothing is written and a numeric error is returned.
pub fn rmsprop_step(state: &mut RmspropState, params: &mut ParameterStore, grads: &GradientStore) -> Result<()> {
    params.map().check_layout(&grads.0, "rmsprop grads")?;
    params.map().check_layout(&state.squared_avg, "rmsprop state")?;
    let RmspropConfig { lr, alpha, eps } = state.config;
    let mut staged: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(grads.0.len());
    for (((_, g), (_, sq)), (_, p)) in grads.0.iter().zip(state.squared_avg.iter()).zip(params.map().iter()) {
        let mut new_sq = Vec::with_capacity(g.len());
        let mut new_p = Vec::with_capacity(g.len());
        for ((&gv, &sv), &pv) in g.data.iter().zip(&sq.data).zip(&p.data) {
            let s = alpha * sv + (1.0 - alpha) * gv * gv;
            let np = pv - lr * gv / (libm::sqrt(s) + eps);
            if !s.is_finite() || !np.is_finite() {
                return Err(numeric_err!("rmsprop produced a non-finite value"));
            }
            new_sq.push(s);
            new_p.push(np);
        }
        staged.push((new_sq, new_p));
    }
    let mut staged = staged.into_iter();
    for ((_, sq), (_, p)) in state.squared_avg.iter_mut().zip(params.map_mut().iter_mut()) {
        let (s, np) = staged.next().unwrap();
        sq.data = s;
        p.data = np;
    }
    Ok(())
}

/// Uniformly rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the clipped gradients and the norm before clipping.
pub fn clip_global_norm(grads: &GradientStore, max_norm: f64) -> (GradientStore, f64) {
    let norm = grads.global_norm();
    let mut out = grads.clone();
    if norm > max_norm && norm > 0.0 {
        out.0.scale(max_norm / norm);
    }
    (out, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use alloc::vec;

    fn single(name: &str, v: Vec<f64>) -> TensorMap {
        let mut m = TensorMap::new();
        m.insert(name, Tensor::from_vec(&[v.len()], v).unwrap()).unwrap();
        m
    }

    #[test]
    fn hand_computed_step() {
        let mut p = ParameterStore::new(single("w", vec![0.0]), 0);
        let mut st = RmspropState::new(&p, RmspropConfig::default()).unwrap();
        rmsprop_step(&mut st, &mut p, &GradientStore(single("w", vec![1.0]))).unwrap();
        let sq = st.squared_avg.get("w").unwrap().data[0];
        assert!((sq - 0.01).abs() < 1e-15);
        let expected = -7e-4 / (0.1 + 1e-5);
        assert!((p.get("w").unwrap().data[0] - expected).abs() < 1e-15);
        assert!((expected - -6.99930e-3).abs() < 1e-8);
    }

    #[test]
    fn zero_grad_is_a_fixed_point() {
        let mut p = ParameterStore::new(single("w", vec![0.3, -2.0]), 0);
        let before = p.clone();
        let mut st = RmspropState::new(&p, RmspropConfig::default()).unwrap();
        rmsprop_step(&mut st, &mut p, &GradientStore(single("w", vec![0.0, 0.0]))).unwrap();
        assert_eq!(p.map(), before.map());
        assert_eq!(st.squared_avg.get("w").unwrap().data, vec![0.0, 0.0]);
    }

    #[test]
    fn step_is_a_pure_function_of_inputs() {
        let p0 = ParameterStore::new(single("w", vec![0.1, 0.2]), 0);
        let g = GradientStore(single("w", vec![0.5, -0.25]));
        let mut runs = vec![];
        for _ in 0..2 {
            let mut p = p0.clone();
            let mut st = RmspropState::new(&p, RmspropConfig::default()).unwrap();
            rmsprop_step(&mut st, &mut p, &g).unwrap();
            runs.push((p.checksum(), st.squared_avg.checksum()));
        }
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn nan_gradient_aborts_without_writing() {
        let mut p = ParameterStore::new(single("w", vec![1.0, 1.0]), 0);
        let before = p.map().clone();
        let mut st = RmspropState::new(&p, RmspropConfig::default()).unwrap();
        let err = rmsprop_step(&mut st, &mut p, &GradientStore(single("w", vec![0.1, f64::NAN])));
        assert!(matches!(err, Err(crate::Error::Numeric(_))));
        assert_eq!(p.map(), &before);
        assert_eq!(st.squared_avg.get("w").unwrap().data, vec![0.0, 0.0]);
    }

    #[test]
    fn bad_alpha_rejected() {
        let p = ParameterStore::new(single("w", vec![0.0]), 0);
        let cfg = RmspropConfig { alpha: 1.0, ..RmspropConfig::default() };
        assert!(RmspropState::new(&p, cfg).is_err());
    }

    #[test]
    fn clip_examples() {
        let g = GradientStore(single("w", vec![3.0, 4.0]));
        let (c, n) = clip_global_norm(&g, 0.5);
        assert_eq!(n, 5.0);
        let d = &c.0.get("w").unwrap().data;
        assert!((d[0] - 0.3).abs() < 1e-15 && (d[1] - 0.4).abs() < 1e-15);

        let small = GradientStore(single("w", vec![0.3, 0.0]));
        assert_eq!(clip_global_norm(&small, 0.5).0, small);
        let zero = GradientStore(single("w", vec![0.0, 0.0]));
        assert_eq!(clip_global_norm(&zero, 0.5).0, zero);
    }
}
