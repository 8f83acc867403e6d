use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::losses::{GLossVariant, DEFAULT_GP_LAMBDA};
use crate::nn::{NoiseDistribution, Preset, PresetOptions};
use crate::optim::OptimizerConfig;

/// Every hyperparameter of a training run. Missing keys take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    /// Critic/discriminator steps per generator step; 5 for `wgan_gp` and 1
    /// otherwise when unset.
    pub n_critic: Option<usize>,
    pub g_optimizer: OptimizerConfig,
    pub d_optimizer: OptimizerConfig,
    pub latent_dim: usize,
    pub seq_len: usize,
    pub window_stride: usize,
    pub seed: u64,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_interval: usize,
    pub gp_lambda: f64,
    pub g_loss: GLossVariant,
    pub noise: NoiseDistribution,
    pub mlp_hidden: Vec<usize>,
    pub base_channels: usize,
    pub leaky_alpha: f64,
    /// Generated windows used for the per-epoch diversity diagnostic.
    pub diversity_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let nets = PresetOptions::default();
        Self {
            variant: Preset::Dcgan1d,
            epochs: 1000,
            batch_size: 32,
            n_critic: None,
            g_optimizer: OptimizerConfig::default(),
            d_optimizer: OptimizerConfig::default(),
            latent_dim: nets.latent_dim,
            seq_len: nets.seq_len,
            window_stride: 1,
            seed: 0,
            checkpoint_interval: 0,
            gp_lambda: DEFAULT_GP_LAMBDA,
            g_loss: GLossVariant::default(),
            noise: NoiseDistribution::default(),
            mlp_hidden: nets.mlp_hidden,
            base_channels: nets.base_channels,
            leaky_alpha: nets.leaky_alpha,
            diversity_batch: 32,
        }
    }
}

impl TrainConfig {
    pub fn n_critic(&self) -> usize {
        self.n_critic
            .unwrap_or(if self.variant.is_wasserstein() { 5 } else { 1 })
    }

    pub fn preset_options(&self) -> PresetOptions {
        PresetOptions {
            seq_len: self.seq_len,
            latent_dim: self.latent_dim,
            mlp_hidden: self.mlp_hidden.clone(),
            base_channels: self.base_channels,
            leaky_alpha: self.leaky_alpha,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size {} must be at least 2", self.batch_size));
        }
        let n_critic = self.n_critic();
        if n_critic == 0 {
            return fail("n_critic must be at least 1".into());
        }
        if n_critic != 1 && !self.variant.is_wasserstein() {
            return fail(format!("n_critic must be 1 for {}", self.variant));
        }
        if self.latent_dim == 0 || self.seq_len == 0 || self.window_stride == 0 {
            return fail("latent_dim, seq_len and window_stride must be positive".into());
        }
        if !(self.gp_lambda >= 0.0 && self.gp_lambda.is_finite()) {
            return fail(format!("gp_lambda {} must be non-negative", self.gp_lambda));
        }
        if self.diversity_batch < 2 {
            return fail("diversity_batch must be at least 2".into());
        }
        for opt in [&self.g_optimizer, &self.d_optimizer] {
            opt.validate()
                .map_err(|e| TrainError::Config(e.to_string()))?;
        }
        crate::nn::build_preset(self.variant, &self.preset_options())
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}
