use crate::error::{Result, TensorError};
use crate::tensor::Params;

/// Hyperparameters of [`AdamW`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &Params, config: AdamWConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| vec![0.0; t.len()])
                .collect::<Vec<_>>()
        };
        AdamW {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` holds one gradient per parameter, in
    /// parameter order. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut Params, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(TensorError::contract(
                "adamw",
                format!(
                    "{} gradients for {} parameters",
                    grads.len(),
                    params.len()
                ),
            ));
        }
        for ((id, name, t), g) in params.iter().zip(grads) {
            if g.len() != t.len() || self.first[id.0].len() != t.len() {
                return Err(TensorError::shapes("adamw", t.shape(), &[g.len()]));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;

        for (i, g) in grads.iter().enumerate() {
            let id = crate::tensor::ParamId(i);
            let w = params.get_mut(id).data_mut();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..w.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
