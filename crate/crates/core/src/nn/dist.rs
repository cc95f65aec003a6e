use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{numeric_err, Result};
use crate::rng::uniform01;

/// Floor applied to probabilities before taking logarithms in log-prob and
/// KL computations.
pub const PROB_FLOOR: f64 = 1e-10;

#[inline]
fn ln_floor(p: f64) -> f64 {
    libm::log(p.max(PROB_FLOOR))
}

/// Categorical distribution over a small discrete action set.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl CategoricalDist {
    /// Builds a distribution from explicit probabilities (no renormalization).
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let log_probs = probs.iter().map(|&p| ln_floor(p)).collect();
        Self { probs, log_probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    /// Gradient of the entropy w.r.t. the logits that produced this
    /// distribution: `-p_j (ln p_j + H)`.
    pub fn entropy_logit_grad(&self, out: &mut [f64]) {
        let h = self.entropy();
        for (o, &p) in out.iter_mut().zip(&self.probs) {
            *o = if p > 0.0 { -p * (libm::log(p) + h) } else { 0.0 };
        }
    }
}

/// Softmax with max-subtraction.
pub fn dist_from_logits(logits: &[f64]) -> Result<CategoricalDist> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(numeric_err!("non-finite logits"));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = exps.iter().sum();
    Ok(CategoricalDist::from_probs(exps.into_iter().map(|e| e / s).collect()))
}

/// Splits a `[batch, width]` logit matrix into per-row distributions.
pub fn dists_from_logits(logits: &[f64], width: usize) -> Result<Vec<CategoricalDist>> {
    logits.chunks_exact(width).map(dist_from_logits).collect()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(d: &CategoricalDist) -> f64 {
    -d.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * libm::log(p)).sum::<f64>()
}

/// `KL(p || q)` with both sides floored at [`PROB_FLOOR`]; clamped at 0.
pub fn kl_divergence(p: &CategoricalDist, q: &CategoricalDist) -> f64 {
    let kl: f64 = p
        .probs
        .iter()
        .zip(&p.log_probs)
        .zip(&q.log_probs)
        .filter(|((&pi, _), _)| pi > 0.0)
        .map(|((&pi, &lp), &lq)| pi * (lp - lq))
        .sum();
    kl.max(0.0)
}

/// Inverse-CDF draw from one uniform variate.
pub fn sample(d: &CategoricalDist, rng: &mut impl RngCore) -> usize {
    let u = uniform01(rng);
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in d.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}
