//! Dense `f64` tensors and reverse-mode automatic differentiation.
//!
//! Forward operations run eagerly on a [`Tape`], which records enough to
//! replay them backwards. All values are checked for NaN/Inf at every
//! operation boundary.

pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("expected a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward already ran on this tape; record a new forward pass")]
    BackwardReplayed,
    #[error("variable received no gradient")]
    NoGradient,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Elementwise non-linearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn validate(&self) -> Result<(), TensorError> {
        match *self {
            Activation::LeakyRelu { alpha } if !(alpha > 0.0 && alpha < 1.0) => Err(
                TensorError::InvalidArgument(format!("leaky_relu alpha {alpha} not in (0, 1)")),
            ),
            _ => Ok(()),
        }
    }
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide by count) batch variance.
    pub var: Vec<f64>,
}

impl Tape {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var, TensorError> {
        kind.validate()?;
        match kind {
            Activation::Relu => self.relu(x),
            Activation::LeakyRelu { alpha } => self.leaky_relu(x, alpha),
            Activation::Tanh => self.tanh(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Linear => Ok(x),
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a)?.numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.mul(a, a)
    }

    /// Training-mode batch normalisation over axis 1 of `x`
    /// (`[batch, features]` or `[batch, channels, length]`).
    ///
    /// Statistics are taken over every axis except 1. `gamma` and `beta` have
    /// shape `[features]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats), TensorError> {
        let shape = self.shape(x)?.to_vec();
        if shape.len() < 2 {
            return Err(TensorError::Shape(format!(
                "batch_norm needs [batch, features, ...], got {shape:?}"
            )));
        }
        if shape[0] < 2 {
            return Err(TensorError::InvalidArgument(
                "batch_norm in training mode needs a batch of at least 2".into(),
            ));
        }
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument(
                "batch_norm eps must be positive".into(),
            ));
        }
        let count = (shape.iter().product::<usize>() / shape[1]) as f64;
        let total = self.channel_sum(x)?;
        let mean = self.scale(total, 1.0 / count)?;
        let mean_b = self.channel_broadcast(mean, &shape)?;
        let centered = self.sub(x, mean_b)?;
        let sq = self.square(centered)?;
        let sq_total = self.channel_sum(sq)?;
        let var = self.scale(sq_total, 1.0 / count)?;
        let stats = BatchStats {
            mean: self.value(mean)?.data().to_vec(),
            var: self.value(var)?.data().to_vec(),
        };
        let var_eps = self.add_scalar(var, eps)?;
        let std = self.sqrt(var_eps)?;
        let inv = self.recip(std)?;
        let scale = self.mul(inv, gamma)?;
        let scale_b = self.channel_broadcast(scale, &shape)?;
        let normed = self.mul(centered, scale_b)?;
        Ok((self.bias_add(normed, beta)?, stats))
    }

    /// Inference-mode batch normalisation with fixed statistics.
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(x)?.to_vec();
        if shape.len() < 2 || mean.len() != shape[1] || var.len() != shape[1] {
            return Err(TensorError::Shape(format!(
                "batch_norm statistics of length {} for input {shape:?}",
                mean.len()
            )));
        }
        let neg_mean = Tensor::new(vec![mean.len()], mean.iter().map(|m| -m).collect())?;
        let inv_std = Tensor::new(
            vec![var.len()],
            var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect(),
        )?;
        let neg_mean = self.constant(neg_mean)?;
        let inv_std = self.constant(inv_std)?;
        let centered = self.bias_add(x, neg_mean)?;
        let scale = self.mul(inv_std, gamma)?;
        let scale_b = self.channel_broadcast(scale, &shape)?;
        let normed = self.mul(centered, scale_b)?;
        self.bias_add(normed, beta)
    }
}
