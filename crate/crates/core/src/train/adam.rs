use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias-corrected moments, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamSet<S>) -> Self {
        let zeros = |n| vec![S::zero(); n];
        Self {
            config,
            step: 0,
            first: params.iter().map(|(_, _, t)| zeros(t.numel())).collect(),
            second: params.iter().map(|(_, _, t)| zeros(t.numel())).collect(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradient buffers of `params`. A parameter
    /// without a buffer counts as having zero gradient. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet<S>) -> Result<()> {
        for (_, name, t) in params.iter() {
            if t.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::NonFiniteGradient {
                    param: name.to_string(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (S::from_f64_lossy(c.beta1), S::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        let corr1 = S::from_f64_lossy(1.0 - c.beta1.powi(t));
        let corr2 = S::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = S::from_f64_lossy(c.lr);
        let eps = S::from_f64_lossy(c.eps);
        let wd = S::from_f64_lossy(c.weight_decay);

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let tensor = params.get_mut(id);
            let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
            let grad = tensor.grad().map(<[S]>::to_vec);
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let mut g = grad.as_ref().map_or(S::zero(), |g| g[i]);
                if c.weight_decay != 0.0 {
                    g += wd * data[i];
                }
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<S: Real>(params: &mut ParamSet<S>, max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|(_, _, t)| t.grad())
        .flat_map(|g| g.iter().map(|x| x.to_f64_lossy().powi(2)))
        .sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64_lossy(max_norm / norm);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if params.get(id).grad().is_some() {
                params.get_mut(id).grad_mut().iter_mut().for_each(|x| *x *= scale);
            }
        }
    }
    norm
}
