use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    params: Vec<ParamId>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// Registers each param in `params` exactly once.
    pub fn new(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Result<Self> {
        let mut seen = params.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != params.len() {
            return Err(Error::contract("parameter registered twice with the optimizer"));
        }
        let first = params.iter().map(|&p| vec![0.0; store.get(p).numel()]).collect();
        let second = params.iter().map(|&p| vec![0.0; store.get(p).numel()]).collect();
        Ok(Self {
            config,
            step: 0,
            params,
            first,
            second,
        })
    }

    /// All trainable params in the store.
    pub fn for_trainable(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        let ids = store.ids().filter(|&id| store.get(id).requires_grad()).collect();
        Self::new(config, store, ids)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn moments(&self, slot: usize) -> (&[f64], &[f64]) {
        (&self.first[slot], &self.second[slot])
    }

    /// Restores optimizer state (used by checkpoint loading).
    pub fn restore(&mut self, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<()> {
        let shapes_ok = first.len() == self.first.len()
            && second.len() == self.second.len()
            && first.iter().zip(&self.first).all(|(a, b)| a.len() == b.len())
            && second.iter().zip(&self.second).all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(Error::Checkpoint("optimizer moment shapes differ".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// Applies one update to every registered parameter, then zeroes grads.
    /// Frozen parameters (`requires_grad == false`) are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &id in &self.params {
            let t = store.get(id);
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::contract(format!(
                    "parameter {} has no gradient",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, &id) in self.params.iter().enumerate() {
            let t = store.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            let g = t.grad().expect("checked above").to_vec();
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];
            for (((w, gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.zero_grad();
        }
        Ok(())
    }
}
