use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("optimizer step size must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err!("optimizer {name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(config_err!("optimizer epsilon must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer. First and second moments live in each
/// parameter's slots 0 and 1.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0 }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for p in store.iter_mut() {
            let Some(mut g) = p.tensor.grad.take() else { continue };
            let n = g.len();
            if p.slots.len() < 2 {
                p.slots = vec![vec![0.0; n], vec![0.0; n]];
            }
            let (m, rest) = p.slots.split_at_mut(1);
            let (m, v) = (&mut m[0], &mut rest[0]);
            let w = p.tensor.data_mut();
            for i in 0..n {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
            g.fill(0.0);
            p.tensor.grad = Some(g);
        }
    }
}
