//! Adam with state that can be written into checkpoints.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update of every parameter that has a gradient.
    pub fn apply(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let g = g.detach();
            let m = match self.m.get(name) {
                Some(m) => ((m * beta1)? + (&g * (1.0 - beta1))?)?,
                None => (&g * (1.0 - beta1))?,
            };
            let g2 = g.sqr()?;
            let v = match self.v.get(name) {
                Some(v) => ((v * beta2)? + (g2 * (1.0 - beta2))?)?,
                None => (g2 * (1.0 - beta2))?,
            };
            let update = (&m / c1)?.div(&((&v / c2)?.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new(0, DType::F64);
        let x = p.constant("x", &[2], 1.0).unwrap();
        let loss = (x.sqr().unwrap() * Tensor::new(&[1.0f64, -1.0], p.device()).unwrap()).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        adam.apply(&p, &grads).unwrap();
        let v: Vec<f64> = p.get("x").unwrap().as_tensor().to_vec1().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] - 1.1).abs() < 1e-6, "{v:?}");
    }
}
