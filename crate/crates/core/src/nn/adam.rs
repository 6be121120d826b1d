use serde::{Deserialize, Serialize};

use super::params::{Gradients, Parameters};
use crate::error::{Error, Result};

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(model: &P) -> Self {
        Self::with_betas(model, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<P: Parameters + ?Sized>(model: &P, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        assert!(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0);
        let zeros: Vec<Vec<f64>> = model.param_tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            beta1,
            beta2,
            epsilon,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update to `model`. Weight decay shrinks every parameter by
    /// `lr · weight_decay` before the adaptive step and never enters the moments.
    pub fn step<P: Parameters + ?Sized>(
        &mut self,
        model: &mut P,
        grads: &Gradients,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Input(format!("learning rate must be finite and non-negative, got {lr}")));
        }
        if !grads.is_congruent(model) || self.m.len() != grads.tensors().len() {
            return Err(Error::Shape("gradients, optimizer state and model are not congruent".into()));
        }
        if let Some(idx) = grads.first_non_finite() {
            let name = model.param_names().swap_remove(idx);
            return Err(Error::Numeric(format!("non-finite gradient in parameter {name}")));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        for (((p, g), m), v) in model
            .param_tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
