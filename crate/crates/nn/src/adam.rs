//! Adam optimizer with bias correction.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamSet};

/// Adam hyperparameters. Only the learning rate is experiment-specific;
/// the moment decays and epsilon stay at the conventional defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Optimizer state: first/second moments per parameter plus the step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .ids()
            .map(|id| Array2::zeros(params.value(id).raw_dim()))
            .collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all parameters.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.t as i32);
        let bias2 = 1.0 - beta2.powi(self.t as i32);

        for (idx, id) in params.ids().enumerate() {
            let grad = grads.get(id);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(m.view_mut())
                .and(grad)
                .for_each(|m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
            ndarray::Zip::from(v.view_mut())
                .and(grad)
                .for_each(|v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
            let value = params.value_mut(id);
            ndarray::Zip::from(value.view_mut())
                .and(m.view())
                .and(v.view())
                .for_each(|p, &m, &v| {
                    let m_hat = m / bias1;
                    let v_hat = v / bias2;
                    *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                });
        }
    }

    /// Flat views of the optimizer state for checkpointing.
    pub fn state(&self) -> (&[Array2<f64>], &[Array2<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(&mut self, m: Vec<Array2<f64>>, v: Vec<Array2<f64>>, t: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.t = t;
    }
}
