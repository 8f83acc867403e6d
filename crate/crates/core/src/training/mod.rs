//! Alternating adversarial training with per-step loss history, a
//! diversity diagnostic, and bit-exact resumption.

mod config;

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::losses::{self, LossError};
use crate::market_data::WindowedDataset;
use crate::nn::{build_preset, NetError, Network, NoiseSource};
use crate::optim::{OptimError, OptimizerState};

pub use config::TrainConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("step {step} ({phase} phase): {detail}")]
    Diverged {
        step: u64,
        phase: Phase,
        detail: String,
    },
    #[error("{0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Discriminator/critic update only.
    #[serde(rename = "d")]
    D,
    /// Discriminator/critic update followed by a generator update.
    #[serde(rename = "d+g")]
    DG,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::D => "d",
            Phase::DG => "d+g",
        })
    }
}

/// Losses of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// 1-based count of discriminator updates.
    pub step: u64,
    /// 1-based epoch.
    pub epoch: usize,
    pub phase: Phase,
    /// Discriminator or critic loss, including any gradient penalty.
    pub d_loss: f64,
    pub g_loss: Option<f64>,
    pub gp_term: Option<f64>,
    /// Mean interpolate gradient norm behind `gp_term`.
    pub gp_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRecord {
    pub epoch: usize,
    pub value: f64,
}

/// Means over the steps of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub d_loss: f64,
    pub g_loss: Option<f64>,
    pub gp_term: Option<f64>,
    pub gp_grad_norm: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed discriminator updates.
    pub step: u64,
    /// Discriminator updates since the last generator update.
    pub critic_steps: usize,
    pub generator: Network,
    pub discriminator: Network,
    pub g_opt: OptimizerState,
    pub d_opt: OptimizerState,
    pub noise: NoiseSource,
    pub shuffle_rng: ChaCha8Rng,
    pub gp_rng: ChaCha8Rng,
    /// Seed of the fixed latent batch behind the diversity diagnostic.
    pub diversity_seed: u64,
    /// Normalisation scale of the training data.
    pub data_scale: f64,
    pub history: Vec<LossRecord>,
    pub diversity: Vec<DiversityRecord>,
}

fn numeric(step: u64, phase: Phase) -> impl Fn(String) -> TrainError {
    move |detail| TrainError::Diverged {
        step,
        phase,
        detail,
    }
}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        TrainError::Numeric(e.to_string())
    }
}

impl TrainState {
    /// Builds both networks and optimizers from the config. All random
    /// streams derive from `config.seed`.
    pub fn new(config: TrainConfig, data: &WindowedDataset) -> Result<Self, TrainError> {
        config.validate()?;
        check_data(&config, data)?;
        let (g_spec, d_spec) = build_preset(config.variant, &config.preset_options())
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Network::new(g_spec, master.next_u64())?;
        let discriminator = Network::new(d_spec, master.next_u64())?;
        let noise = NoiseSource::new(config.noise, config.latent_dim, master.next_u64());
        let shuffle_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let gp_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let diversity_seed = master.next_u64();
        let opt_err = |e: OptimError| TrainError::Config(e.to_string());
        let g_opt = OptimizerState::new(config.g_optimizer, generator.params()).map_err(opt_err)?;
        let d_opt =
            OptimizerState::new(config.d_optimizer, discriminator.params()).map_err(opt_err)?;
        Ok(Self {
            config,
            epoch: 0,
            step: 0,
            critic_steps: 0,
            generator,
            discriminator,
            g_opt,
            d_opt,
            noise,
            shuffle_rng,
            gp_rng,
            diversity_seed,
            data_scale: data.scale(),
            history: Vec::new(),
            diversity: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        serde_json::to_string(self).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self, TrainError> {
        let state: TrainState =
            serde_json::from_str(json).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        state.config.validate()?;
        for net in [&state.generator, &state.discriminator] {
            Network::from_json(&net.to_json()?)
                .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        }
        Ok(state)
    }

    pub fn is_complete(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn epoch_summary(&self, epoch: usize) -> Option<EpochSummary> {
        let recs: Vec<&LossRecord> = self.history.iter().filter(|r| r.epoch == epoch).collect();
        if recs.is_empty() {
            return None;
        }
        let avg = |vals: Vec<f64>| {
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Some(EpochSummary {
            epoch,
            steps: recs.len(),
            d_loss: avg(recs.iter().map(|r| r.d_loss).collect()).expect("non-empty"),
            g_loss: avg(recs.iter().filter_map(|r| r.g_loss).collect()),
            gp_term: avg(recs.iter().filter_map(|r| r.gp_term).collect()),
            gp_grad_norm: avg(recs.iter().filter_map(|r| r.gp_grad_norm).collect()),
        })
    }
}

fn check_data(config: &TrainConfig, data: &WindowedDataset) -> Result<(), TrainError> {
    if data.window_len() != config.seq_len {
        return Err(TrainError::Data(format!(
            "window length {} differs from seq_len {}",
            data.window_len(),
            config.seq_len
        )));
    }
    if data.len() < config.batch_size {
        return Err(TrainError::Data(format!(
            "{} windows cannot fill one batch of {}",
            data.len(),
            config.batch_size
        )));
    }
    Ok(())
}

/// Runs epochs until `config.epochs` are complete, calling `on_epoch` after
/// each. Also continues a resumed state.
pub fn train_with<F>(
    state: &mut TrainState,
    data: &WindowedDataset,
    mut on_epoch: F,
) -> Result<(), TrainError>
where
    F: FnMut(&TrainState) -> Result<(), TrainError>,
{
    check_data(&state.config, data)?;
    while !state.is_complete() {
        run_epoch(state, data)?;
        on_epoch(state)?;
    }
    Ok(())
}

/// Builds a fresh state and trains it for `config.epochs`.
pub fn train(config: TrainConfig, data: &WindowedDataset) -> Result<TrainState, TrainError> {
    let mut state = TrainState::new(config, data)?;
    train_with(&mut state, data, |_| Ok(()))?;
    Ok(state)
}

/// One seeded-shuffled pass over the windows; a trailing partial batch is
/// dropped.
pub fn run_epoch(state: &mut TrainState, data: &WindowedDataset) -> Result<(), TrainError> {
    let epoch = state.epoch + 1;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut state.shuffle_rng);
    let bs = state.config.batch_size;
    for batch in order.chunks_exact(bs) {
        let real = data.batch(batch);
        let step = state.step + 1;
        let (d_loss, gp) = d_step(state, &real).map_err(numeric(step, Phase::D))?;
        state.critic_steps += 1;
        let mut record = LossRecord {
            step,
            epoch,
            phase: Phase::D,
            d_loss,
            g_loss: None,
            gp_term: gp.map(|g| g.0),
            gp_grad_norm: gp.map(|g| g.1),
        };
        if state.critic_steps == state.config.n_critic() {
            record.g_loss = Some(g_step(state, bs).map_err(numeric(step, Phase::DG))?);
            record.phase = Phase::DG;
            state.critic_steps = 0;
        }
        state.step = step;
        state.history.push(record);
    }
    state.epoch = epoch;
    let value = epoch_diversity(state, data)?;
    state.diversity.push(DiversityRecord { epoch, value });
    Ok(())
}

/// Updates the discriminator once; returns its loss and, for the critic,
/// `(gp_term, mean gradient norm)`.
fn d_step(state: &mut TrainState, real: &Tensor) -> Result<(f64, Option<(f64, f64)>), String> {
    let err = |e: &dyn fmt::Display| e.to_string();
    let batch = real.shape()[0];
    let z = state.noise.sample(batch);
    let fake = {
        let mut tape = Tape::inference();
        let gb = state
            .generator
            .bind(&mut tape, false)
            .map_err(|e| err(&e))?;
        let zv = tape.constant(z).map_err(|e| err(&e))?;
        let out = state
            .generator
            .forward_batch_stats(&mut tape, &gb, zv)
            .map_err(|e| err(&e))?;
        tape.value(out).map_err(|e| err(&e))?.clone()
    };
    let mut tape = Tape::new();
    let db = state
        .discriminator
        .bind(&mut tape, true)
        .map_err(|e| err(&e))?;
    let rv = tape.constant(real.clone()).map_err(|e| err(&e))?;
    let fv = tape.constant(fake.clone()).map_err(|e| err(&e))?;
    let d = &mut state.discriminator;
    let d_real = d
        .forward(&mut tape, &db, rv, crate::nn::Mode::Train)
        .map_err(|e| err(&e))?;
    let d_fake = d
        .forward(&mut tape, &db, fv, crate::nn::Mode::Train)
        .map_err(|e| err(&e))?;
    let (loss, gp) = if state.config.variant.is_wasserstein() {
        let base =
            losses::wasserstein_critic_loss(&mut tape, d_real, d_fake).map_err(|e| err(&e))?;
        let pen = losses::gradient_penalty(
            &mut tape,
            d,
            &db,
            real,
            &fake,
            state.config.gp_lambda,
            &mut state.gp_rng,
        )
        .map_err(|e| err(&e))?;
        let total = tape.add(base, pen.term).map_err(|e| err(&e))?;
        let gp_value = tape
            .value(pen.term)
            .and_then(|t| t.item())
            .map_err(|e| err(&e))?;
        (total, Some((gp_value, pen.mean_norm())))
    } else {
        (
            losses::minimax_d_loss(&mut tape, d_real, d_fake).map_err(|e| err(&e))?,
            None,
        )
    };
    let value = tape
        .value(loss)
        .and_then(|t| t.item())
        .map_err(|e| err(&e))?;
    let grads = tape.backward(loss).map_err(|e| err(&e))?;
    d.accumulate_grads(&db, &grads).map_err(|e| err(&e))?;
    let result = state.d_opt.step(d.params_mut()).map_err(|e| err(&e));
    d.zero_grad();
    result?;
    Ok((value, gp))
}

/// Updates the generator once through the frozen discriminator.
fn g_step(state: &mut TrainState, batch: usize) -> Result<f64, String> {
    let err = |e: &dyn fmt::Display| e.to_string();
    let z = state.noise.sample(batch);
    let mut tape = Tape::new();
    let gb = state.generator.bind(&mut tape, true).map_err(|e| err(&e))?;
    let db = state
        .discriminator
        .bind(&mut tape, false)
        .map_err(|e| err(&e))?;
    let zv = tape.constant(z).map_err(|e| err(&e))?;
    let g = &mut state.generator;
    let fake = g
        .forward(&mut tape, &gb, zv, crate::nn::Mode::Train)
        .map_err(|e| err(&e))?;
    let score = state
        .discriminator
        .forward_batch_stats(&mut tape, &db, fake)
        .map_err(|e| err(&e))?;
    let loss = if state.config.variant.is_wasserstein() {
        losses::wasserstein_g_loss(&mut tape, score)
    } else {
        losses::minimax_g_loss(&mut tape, score, state.config.g_loss)
    }
    .map_err(|e: LossError| err(&e))?;
    let value = tape
        .value(loss)
        .and_then(|t| t.item())
        .map_err(|e| err(&e))?;
    let grads = tape.backward(loss).map_err(|e| err(&e))?;
    g.accumulate_grads(&gb, &grads).map_err(|e| err(&e))?;
    let result = state.g_opt.step(g.params_mut()).map_err(|e| err(&e));
    g.zero_grad();
    result?;
    Ok(value)
}

fn epoch_diversity(state: &TrainState, data: &WindowedDataset) -> Result<f64, TrainError> {
    let k = state.config.diversity_batch.min(data.len());
    let idx: Vec<usize> = (0..k).map(|i| i * data.len() / k).collect();
    let real = data.batch(&idx);
    let fake = generate(state, k, state.diversity_seed)?;
    Ok(diversity_diagnostic(&fake, &real).unwrap_or(0.0))
}

/// `n_series` windows from the generator in eval mode, normalised to the
/// tanh range. Deterministic in `seed`.
pub fn generate(state: &TrainState, n_series: usize, seed: u64) -> Result<Tensor, TrainError> {
    if n_series == 0 {
        return Err(TrainError::Config("n_series must be positive".into()));
    }
    let mut noise = NoiseSource::new(state.noise.distribution(), state.noise.latent_dim(), seed);
    Ok(state.generator.predict(&noise.sample(n_series))?)
}

/// `n_points` de-normalised log returns from consecutive generated windows
/// joined end to end.
pub fn generate_returns(
    state: &TrainState,
    n_points: usize,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let len = state.config.seq_len;
    let windows = generate(state, n_points.div_ceil(len).max(1), seed)?;
    Ok(windows.data()[..n_points]
        .iter()
        .map(|v| v * state.data_scale)
        .collect())
}

fn mean_pairwise_distance(batch: &Tensor) -> f64 {
    let n = batch.shape()[0];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = batch
                .row(i)
                .iter()
                .zip(batch.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d.sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Mean pairwise Euclidean distance between generated windows divided by the
/// same statistic of a real batch. Near 0 signals mode collapse; 1 matches
/// the spread of the data.
pub fn diversity_diagnostic(generated: &Tensor, real: &Tensor) -> Result<f64, TrainError> {
    for (name, t) in [("generated", generated), ("real", real)] {
        if t.rank() != 2 || t.shape()[0] < 2 {
            return Err(TrainError::Data(format!(
                "{name} batch needs at least 2 windows, got shape {:?}",
                t.shape()
            )));
        }
    }
    let reference = mean_pairwise_distance(real);
    if reference == 0.0 {
        return Err(TrainError::Data("real batch has identical windows".into()));
    }
    Ok(mean_pairwise_distance(generated) / reference)
}

/// Writes `step,epoch,phase,d_loss,g_loss,gp_term`; absent values are empty.
pub fn write_loss_csv<W: Write>(writer: W, history: &[LossRecord]) -> Result<(), TrainError> {
    let io = |e: csv::Error| TrainError::Checkpoint(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "epoch", "phase", "d_loss", "g_loss", "gp_term"])
        .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.phase.to_string(),
            r.d_loss.to_string(),
            opt(r.g_loss),
            opt(r.gp_term),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| TrainError::Checkpoint(e.to_string()))
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Numeric(e.to_string())
    }
}
