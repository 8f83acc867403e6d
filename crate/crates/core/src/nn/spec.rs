use serde::{Deserialize, Serialize};

use super::NetError;
use crate::autodiff::Activation;

/// One layer of a [`NetworkSpec`]. Shapes below are per sample; every
/// runtime tensor carries an extra leading batch axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `[inputs] -> [outputs]`
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// `[in_channels, L] -> [out_channels, floor((L + 2p - k) / s) + 1]`
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// `[in_channels, L] -> [out_channels, (L - 1) s - 2p + k]`
    Conv1dTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Normalises axis 0 of the per-sample shape.
    BatchNorm {
        features: usize,
    },
    Activation {
        activation: Activation,
    },
    /// Query/key/value attention over positions of a `[channels, L]` input.
    SelfAttention {
        channels: usize,
        key_channels: usize,
    },
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv1dTranspose { .. } => "conv1d_transpose",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::SelfAttention { .. } => "self_attention",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(format!("expects input [{inputs}], got {input:?}"));
                }
                nonzero(&[inputs, outputs])?;
                Ok(vec![outputs])
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                nonzero(&[in_channels, out_channels, kernel, stride])?;
                let len = channels_len(input, in_channels)?;
                if len + 2 * padding < kernel {
                    return Err(format!(
                        "kernel {kernel} longer than padded length {}",
                        len + 2 * padding
                    ));
                }
                Ok(vec![
                    out_channels,
                    (len + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                nonzero(&[in_channels, out_channels, kernel, stride])?;
                let len = channels_len(input, in_channels)?;
                let out = ((len - 1) * stride + kernel)
                    .checked_sub(2 * padding)
                    .filter(|&l| l > 0)
                    .ok_or_else(|| format!("padding {padding} leaves no output"))?;
                Ok(vec![out_channels, out])
            }
            LayerSpec::BatchNorm { features } => {
                if input.is_empty() || input[0] != features || input.len() > 2 {
                    return Err(format!(
                        "expects [{features}] or [{features}, L], got {input:?}"
                    ));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Activation { activation } => {
                activation.validate().map_err(|e| e.to_string())?;
                Ok(input.to_vec())
            }
            LayerSpec::SelfAttention {
                channels,
                key_channels,
            } => {
                nonzero(&[channels, key_channels])?;
                channels_len(input, channels)?;
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { ref shape } => {
                nonzero(shape)?;
                let (a, b) = (
                    input.iter().product::<usize>(),
                    shape.iter().product::<usize>(),
                );
                if a != b {
                    return Err(format!("cannot reshape {input:?} into {shape:?}"));
                }
                Ok(shape.clone())
            }
        }
    }
}

fn nonzero(values: &[usize]) -> Result<(), String> {
    if values.is_empty() || values.contains(&0) {
        return Err(format!("sizes must be positive, got {values:?}"));
    }
    Ok(())
}

fn channels_len(input: &[usize], channels: usize) -> Result<usize, String> {
    match input {
        [c, len] if *c == channels => Ok(*len),
        _ => Err(format!("expects [{channels}, L], got {input:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
    Critic,
}

/// Declarative layer stack for a generator, discriminator or critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Per-sample shapes after each layer; `shapes[0]` is the input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NetError> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|reason| NetError::Build {
                    layer: i,
                    kind: layer.kind(),
                    reason,
                })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, NetError> {
        Ok(self.shapes()?.pop().expect("non-empty"))
    }

    /// Checks shape consistency and the head required by the role.
    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NetError::Spec(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let out = self.output_shape()?;
        match self.role {
            Role::Generator => {
                if out.len() != 1 {
                    return Err(NetError::Spec(format!(
                        "generator must emit a flat sequence, got {out:?}"
                    )));
                }
            }
            Role::Discriminator | Role::Critic => {
                if out != [1] {
                    return Err(NetError::Spec(format!(
                        "{:?} must emit one score per sample, got {out:?}",
                        self.role
                    )));
                }
                if self.input_shape.len() != 1 {
                    return Err(NetError::Spec(format!(
                        "{:?} input must be a flat sequence, got {:?}",
                        self.role, self.input_shape
                    )));
                }
                let want = if self.role == Role::Discriminator {
                    Activation::Sigmoid
                } else {
                    Activation::Linear
                };
                if self.head_activation() != Some(want) {
                    return Err(NetError::Spec(format!(
                        "{:?} must end in a {want:?} activation",
                        self.role
                    )));
                }
            }
        }
        Ok(())
    }

    /// The final activation, ignoring trailing reshapes.
    pub fn head_activation(&self) -> Option<Activation> {
        self.layers
            .iter()
            .rev()
            .find(|l| !matches!(l, LayerSpec::Reshape { .. }))
            .and_then(|l| match l {
                LayerSpec::Activation { activation } => Some(*activation),
                _ => None,
            })
    }
}
