//! Layer specifications, networks built from them, and the named presets.

mod network;
mod noise;
mod presets;
mod spec;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use network::{
    self_attention, Bound, Mode, Network, Parameter, RunningStats, BN_EPS, BN_MOMENTUM, INIT_STD,
};
pub use noise::{NoiseDistribution, NoiseSource};
pub use presets::{build_preset, upsampling_plan, Preset, PresetOptions};
pub use spec::{LayerSpec, NetworkSpec, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("layer {layer} ({kind}): {reason}")]
    Build {
        layer: usize,
        kind: &'static str,
        reason: String,
    },
    #[error("layer {layer} ({kind}): {source}")]
    Layer {
        layer: usize,
        kind: &'static str,
        source: TensorError,
    },
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
