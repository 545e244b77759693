use serde::{Deserialize, Serialize};

use crate::numerics::{ParamStore, Real, Tensor};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.998,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter, plus the step count.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        OptimizerState {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor<T> {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor<T> {
        &self.second[index]
    }

    /// Applies one bias-corrected Adam update using the gradients stored in
    /// `params`. Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, params: &mut ParamStore<T>, lr: f64, cfg: &AdamConfig) -> Result<(), TrainError> {
        if params.len() != self.first.len() {
            return Err(TrainError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, (_, p)) in params.iter().enumerate() {
            if p.value.shape() != self.first[i].shape() {
                return Err(TrainError::Contract(format!("parameter {} changed shape", p.name)));
            }
            if !p.grad.all_finite() {
                return Err(TrainError::NonFiniteGradient { param: p.name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = p.grad.data();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let gk = g[k].to_f64_lossy();
                let mk = cfg.beta1 * m[k].to_f64_lossy() + (1.0 - cfg.beta1) * gk;
                let vk = cfg.beta2 * v[k].to_f64_lossy() + (1.0 - cfg.beta2) * gk * gk;
                m[k] = T::from_f64_lossy(mk);
                v[k] = T::from_f64_lossy(vk);
                let update = lr * (mk / c1) / ((vk / c2).sqrt() + cfg.eps);
                *w = T::from_f64_lossy(w.to_f64_lossy() - update);
            }
        }
        Ok(())
    }
}
