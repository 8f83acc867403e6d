use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::spec::{LayerSpec, NetworkSpec, Role};
use super::NetError;
use crate::autodiff::Activation;

/// Named generator/discriminator pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Fully connected networks with tanh hidden units.
    MlpGan,
    /// Transposed-convolution generator against a strided-convolution
    /// discriminator.
    Dcgan1d,
    /// The convolutional pair with a batch-norm-free critic and linear head.
    WganGp,
    /// The convolutional pair with one self-attention layer in each network.
    Sagan1d,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::MlpGan,
        Preset::Dcgan1d,
        Preset::WganGp,
        Preset::Sagan1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::MlpGan => "mlp_gan",
            Preset::Dcgan1d => "dcgan1d",
            Preset::WganGp => "wgan_gp",
            Preset::Sagan1d => "sagan1d",
        }
    }

    pub fn is_wasserstein(self) -> bool {
        self == Preset::WganGp
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| NetError::Spec(format!("unknown preset {s:?}")))
    }
}

/// Size knobs shared by all presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetOptions {
    pub seq_len: usize,
    pub latent_dim: usize,
    /// Generator hidden widths for [`Preset::MlpGan`]; the discriminator uses
    /// them in reverse.
    pub mlp_hidden: Vec<usize>,
    /// Channel count of the finest convolutional stage; coarser stages double it.
    pub base_channels: usize,
    pub leaky_alpha: f64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            seq_len: 127,
            latent_dim: 100,
            mlp_hidden: vec![128, 256, 256],
            base_channels: 16,
            leaky_alpha: 0.2,
        }
    }
}

/// Most upsampling/downsampling stages in the convolutional presets.
const MAX_STAGES: usize = 3;
/// Stages stop once the sequence is at most this long.
const MIN_STAGE_LEN: usize = 16;

/// Starting length and per-stage `(kernel, stride, padding)` of transposed
/// convolutions that grow a sequence exactly to `seq_len`.
///
/// Each stage doubles the length: `k4 s2 p1` maps `l` to `2l` and `k5 s2 p2`
/// maps `l` to `2l - 1`.
pub fn upsampling_plan(seq_len: usize) -> (usize, Vec<(usize, usize, usize)>) {
    let mut len = seq_len;
    let mut stages = Vec::new();
    while len > MIN_STAGE_LEN && stages.len() < MAX_STAGES {
        if len % 2 == 1 {
            stages.push((5, 2, 2));
            len = len.div_ceil(2);
        } else {
            stages.push((4, 2, 1));
            len /= 2;
        }
    }
    stages.reverse();
    (len, stages)
}

/// Generator and discriminator (or critic) specs for a preset.
pub fn build_preset(
    preset: Preset,
    opts: &PresetOptions,
) -> Result<(NetworkSpec, NetworkSpec), NetError> {
    if opts.seq_len == 0 || opts.latent_dim == 0 || opts.base_channels == 0 {
        return Err(NetError::Spec(
            "seq_len, latent_dim and base_channels must be positive".into(),
        ));
    }
    Activation::LeakyRelu {
        alpha: opts.leaky_alpha,
    }
    .validate()?;
    let (g, d) = match preset {
        Preset::MlpGan => (mlp_generator(opts)?, mlp_discriminator(opts)?),
        Preset::Dcgan1d => (
            conv_generator(opts, false),
            conv_discriminator(opts, Role::Discriminator, false),
        ),
        Preset::WganGp => (
            conv_generator(opts, false),
            conv_discriminator(opts, Role::Critic, false),
        ),
        Preset::Sagan1d => (
            conv_generator(opts, true),
            conv_discriminator(opts, Role::Discriminator, true),
        ),
    };
    g.validate()?;
    d.validate()?;
    Ok((g, d))
}

fn act(activation: Activation) -> LayerSpec {
    LayerSpec::Activation { activation }
}

fn mlp_generator(opts: &PresetOptions) -> Result<NetworkSpec, NetError> {
    if opts.mlp_hidden.is_empty() {
        return Err(NetError::Spec(
            "mlp_hidden must list at least one width".into(),
        ));
    }
    let mut widths = vec![opts.latent_dim];
    widths.extend(&opts.mlp_hidden);
    widths.push(opts.seq_len);
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        layers.push(LayerSpec::Dense {
            inputs: w[0],
            outputs: w[1],
        });
        layers.push(act(Activation::Tanh));
    }
    Ok(NetworkSpec {
        role: Role::Generator,
        input_shape: vec![opts.latent_dim],
        layers,
    })
}

fn mlp_discriminator(opts: &PresetOptions) -> Result<NetworkSpec, NetError> {
    let mut widths = vec![opts.seq_len];
    widths.extend(opts.mlp_hidden.iter().rev());
    widths.push(1);
    let mut layers = Vec::new();
    let last = widths.len() - 2;
    for (i, w) in widths.windows(2).enumerate() {
        layers.push(LayerSpec::Dense {
            inputs: w[0],
            outputs: w[1],
        });
        layers.push(act(if i == last {
            Activation::Sigmoid
        } else {
            Activation::Tanh
        }));
    }
    Ok(NetworkSpec {
        role: Role::Discriminator,
        input_shape: vec![opts.seq_len],
        layers,
    })
}

fn conv_generator(opts: &PresetOptions, attention: bool) -> NetworkSpec {
    let (len0, stages) = upsampling_plan(opts.seq_len);
    let base = opts.base_channels;
    let n = stages.len();
    let channels = |i: usize| base << (n.saturating_sub(1 + i));
    let c0 = channels(0);
    let mut layers = vec![
        LayerSpec::Dense {
            inputs: opts.latent_dim,
            outputs: c0 * len0,
        },
        LayerSpec::Reshape {
            shape: vec![c0, len0],
        },
        LayerSpec::BatchNorm { features: c0 },
        act(Activation::Relu),
    ];
    for (i, &(kernel, stride, padding)) in stages.iter().enumerate().take(n.saturating_sub(1)) {
        let out = channels(i + 1);
        layers.push(LayerSpec::Conv1dTranspose {
            in_channels: channels(i),
            out_channels: out,
            kernel,
            stride,
            padding,
        });
        layers.push(LayerSpec::BatchNorm { features: out });
        layers.push(act(Activation::Relu));
    }
    let last_in = channels(n.saturating_sub(1));
    if attention {
        layers.push(LayerSpec::SelfAttention {
            channels: last_in,
            key_channels: (last_in / 8).max(1),
        });
    }
    let (kernel, stride, padding) = stages.last().copied().unwrap_or((5, 1, 2));
    layers.push(LayerSpec::Conv1dTranspose {
        in_channels: last_in,
        out_channels: 1,
        kernel,
        stride,
        padding,
    });
    layers.push(act(Activation::Tanh));
    layers.push(LayerSpec::Reshape {
        shape: vec![opts.seq_len],
    });
    NetworkSpec {
        role: Role::Generator,
        input_shape: vec![opts.latent_dim],
        layers,
    }
}

fn conv_discriminator(opts: &PresetOptions, role: Role, attention: bool) -> NetworkSpec {
    let (_, up) = upsampling_plan(opts.seq_len);
    let n = up.len().max(1);
    let base = opts.base_channels;
    let leaky = act(Activation::LeakyRelu {
        alpha: opts.leaky_alpha,
    });
    let mut layers = vec![LayerSpec::Reshape {
        shape: vec![1, opts.seq_len],
    }];
    let mut len = opts.seq_len;
    let mut c_in = 1;
    for i in 0..n {
        let c_out = base << i;
        layers.push(LayerSpec::Conv1d {
            in_channels: c_in,
            out_channels: c_out,
            kernel: 5,
            stride: 2,
            padding: 2,
        });
        if i > 0 && role == Role::Discriminator {
            layers.push(LayerSpec::BatchNorm { features: c_out });
        }
        layers.push(leaky.clone());
        if i == 0 && attention {
            layers.push(LayerSpec::SelfAttention {
                channels: c_out,
                key_channels: (c_out / 8).max(1),
            });
        }
        len = len.div_ceil(2);
        c_in = c_out;
    }
    layers.push(LayerSpec::Reshape {
        shape: vec![c_in * len],
    });
    layers.push(LayerSpec::Dense {
        inputs: c_in * len,
        outputs: 1,
    });
    layers.push(act(if role == Role::Discriminator {
        Activation::Sigmoid
    } else {
        Activation::Linear
    }));
    NetworkSpec {
        role,
        input_shape: vec![opts.seq_len],
        layers,
    }
}
