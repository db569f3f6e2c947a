//! AdamW with decoupled weight decay.

use ldg_tensor::{Element, Var};

use crate::error::{Result, TrainError};
use crate::settings::TrainSettings;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            lr: 1e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl From<&TrainSettings> for AdamWParams {
    fn from(s: &TrainSettings) -> Self {
        AdamWParams {
            lr: s.lr,
            weight_decay: s.weight_decay,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.adam_eps,
        }
    }
}

/// One tensor's update at step `t` (1-based): decay, then the
/// bias-corrected Adam step.
pub fn adamw_update<T: Element>(theta: &mut [T], grad: &[T], m: &mut [f64], v: &mut [f64], t: u64, hp: &AdamWParams) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let decay = 1.0 - hp.lr * hp.weight_decay;
    for i in 0..theta.len() {
        let g = grad[i].f64();
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        let p = theta[i].f64() * decay;
        theta[i] = T::lit(p - hp.lr * mhat / (vhat.sqrt() + hp.eps));
    }
}

/// Optimizer state for a fixed list of parameters.
pub struct AdamW<T: Element> {
    pub hp: AdamWParams,
    params: Vec<Var<T>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Completed steps.
    pub t: u64,
    /// Steps skipped because a gradient held a NaN or infinity.
    pub skipped: u64,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: Vec<Var<T>>, hp: AdamWParams) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect::<Vec<_>>();
        AdamW {
            hp,
            v: m.clone(),
            m,
            params,
            t: 0,
            skipped: 0,
        }
    }

    /// Applies one update from the accumulated gradients. Parameters without
    /// a gradient are left alone. Returns `false` when the step was skipped.
    pub fn step(&mut self) -> Result<bool> {
        let grads: Vec<_> = self.params.iter().map(Var::grad).collect();
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        self.t += 1;
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if g.numel() != p.numel() {
                return Err(TrainError::Contract(format!("gradient size {} for a parameter of size {}", g.numel(), p.numel())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let (t, hp) = (self.t, &self.hp);
            p.update_value(|theta| adamw_update(theta.data_mut(), g.data(), m, v, t, hp));
        }
        Ok(true)
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
