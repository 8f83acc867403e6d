//! Gradient-descent parameter updates: plain SGD and Adam with bias
//! correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Parameter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter {name} has no gradient")]
    MissingGradient { name: String },
    #[error("parameter {name} has a non-finite gradient")]
    NonFiniteGradient { name: String },
    #[error("invalid optimizer settings: {0}")]
    Config(String),
    #[error("optimizer state tracks {expected} parameters, got {got}")]
    ParameterMismatch { expected: usize, got: usize },
}

/// Hyperparameters of an optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_lr() -> f64 {
    2e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    /// Adam with `lr = 2e-4`, `beta1 = 0.5`, `beta2 = 0.999`, `eps = 1e-8`.
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let lr = match *self {
            OptimizerConfig::Sgd { lr } => lr,
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return Err(OptimError::Config(format!("{name} = {b} not in [0, 1)")));
                    }
                }
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(OptimError::Config(format!("eps = {eps} must be positive")));
                }
                lr
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(OptimError::Config(format!(
                "learning rate {lr} must be positive"
            )));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters plus per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    config: OptimizerConfig,
    /// Completed steps.
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &[Parameter]) -> Result<Self, OptimError> {
        config.validate()?;
        let (m, v) = match config {
            OptimizerConfig::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerConfig::Adam { .. } => {
                let zeros: Vec<Vec<f64>> =
                    params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
                (zeros.clone(), zeros)
            }
        };
        Ok(Self { config, t: 0, m, v })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from each parameter's accumulated gradient.
    ///
    /// Every gradient is checked before any parameter changes, so an error
    /// leaves both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<(), OptimError> {
        if let OptimizerConfig::Adam { .. } = self.config {
            if self.m.len() != params.len() {
                return Err(OptimError::ParameterMismatch {
                    expected: self.m.len(),
                    got: params.len(),
                });
            }
        }
        for (i, p) in params.iter().enumerate() {
            let g = p.value.grad().ok_or_else(|| OptimError::MissingGradient {
                name: p.name.clone(),
            })?;
            if !g.iter().all(|x| x.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    name: p.name.clone(),
                });
            }
            if !self.m.is_empty() && self.m[i].len() != g.len() {
                return Err(OptimError::Config(format!(
                    "moment shape for {} does not match the parameter",
                    p.name
                )));
            }
        }
        self.t += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for p in params.iter_mut() {
                    let g = p.value.grad().expect("checked").to_vec();
                    for (w, gi) in p.value.data_mut().iter_mut().zip(g) {
                        *w -= lr * gi;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    let g = p.value.grad().expect("checked").to_vec();
                    for (((w, gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
