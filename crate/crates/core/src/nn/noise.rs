use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// Independent `U(-1, 1)` coordinates.
    #[default]
    Uniform,
    StandardNormal,
}

/// Seeded latent-vector sampler. Its RNG state is serialisable so a resumed
/// run draws the same sequence as an uninterrupted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    distribution: NoiseDistribution,
    latent_dim: usize,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(distribution: NoiseDistribution, latent_dim: usize, seed: u64) -> Self {
        assert!(latent_dim > 0, "latent_dim must be positive");
        Self {
            distribution,
            latent_dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn distribution(&self) -> NoiseDistribution {
        self.distribution
    }

    /// A `[batch, latent_dim]` tensor of fresh draws.
    pub fn sample(&mut self, batch: usize) -> Tensor {
        let n = batch * self.latent_dim;
        let data: Vec<f64> = match self.distribution {
            NoiseDistribution::Uniform => {
                (0..n).map(|_| self.rng.random_range(-1.0..1.0)).collect()
            }
            NoiseDistribution::StandardNormal => {
                (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
            }
        };
        Tensor::new(vec![batch, self.latent_dim], data).expect("positive batch")
    }
}
