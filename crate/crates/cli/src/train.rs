use std::path::PathBuf;

use clap::Args;
use fingan::market_data::normalize_and_window;
use fingan::nn::Preset;
use fingan::training::{train_with, write_loss_csv, TrainConfig, TrainState};
use log::info;

use crate::artifacts::{read_bytes, read_config, Outputs};
use crate::error::CliError;
use crate::series::returns_from_bytes;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file of training settings; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Price (`date,adjusted_close`) or returns (`index,log_return`) CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub variant: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub window_stride: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    /// Continue from a checkpoint; only `--epochs` and
    /// `--checkpoint-interval` may change.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if self.n_critic.is_some() {
            cfg.n_critic = self.n_critic;
        }
        if let Some(v) = self.seq_len {
            cfg.seq_len = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.latent_dim = v;
        }
        if let Some(v) = self.window_stride {
            cfg.window_stride = v;
        }
        if let Some(v) = self.checkpoint_interval {
            cfg.checkpoint_interval = v;
        }
    }

    fn fixes_model(&self) -> bool {
        self.config.is_some()
            || self.seed.is_some()
            || self.variant.is_some()
            || self.batch_size.is_some()
            || self.n_critic.is_some()
            || self.seq_len.is_some()
            || self.latent_dim.is_some()
            || self.window_stride.is_some()
    }
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let mut out = Outputs::new(&args.out, "train");
    let mut state = match &args.resume {
        Some(path) => {
            if args.fixes_model() {
                return Err(CliError::Config(
                    "a resumed run keeps its checkpoint's settings; only --epochs and --checkpoint-interval may change"
                        .into(),
                ));
            }
            let bytes = read_bytes(path)?;
            out.record_input(path, &bytes);
            let text = String::from_utf8(bytes).map_err(|e| CliError::io(path, e))?;
            let mut state = TrainState::from_json(&text).map_err(|e| CliError::io(path, e))?;
            args.apply(&mut state.config);
            state.config.validate()?;
            Some(state)
        }
        None => None,
    };
    let config = match &state {
        Some(s) => s.config.clone(),
        None => {
            let mut cfg = match &args.config {
                Some(p) => read_config(p)?,
                None => TrainConfig::default(),
            };
            args.apply(&mut cfg);
            cfg.validate()?;
            cfg
        }
    };

    let bytes = read_bytes(&args.data)?;
    out.record_input(&args.data, &bytes);
    let returns = returns_from_bytes(&args.data, &bytes)?;
    let data = normalize_and_window(&returns, config.seq_len, config.window_stride)?;
    info!(
        "{}: {} returns, {} windows of {}, {} steps per epoch",
        args.data.display(),
        returns.len(),
        data.len(),
        config.seq_len,
        data.len() / config.batch_size
    );
    let mut state = match state.take() {
        Some(s) => {
            if s.data_scale != data.scale() {
                return Err(CliError::Data(format!(
                    "{} differs from the data the checkpoint was trained on",
                    args.data.display()
                )));
            }
            s
        }
        None => TrainState::new(config.clone(), &data)?,
    };

    let progress_every = (config.epochs / 20).max(1);
    let interval = config.checkpoint_interval;
    let mut io_error = None;
    let result = train_with(&mut state, &data, |s| {
        if s.epoch % progress_every == 0 || s.is_complete() {
            if let Some(sum) = s.epoch_summary(s.epoch) {
                info!(
                    "epoch {}/{}: d_loss {:.4} g_loss {} diversity {:.3}",
                    s.epoch,
                    s.config.epochs,
                    sum.d_loss,
                    sum.g_loss
                        .map(|g| format!("{g:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    s.diversity.last().map(|d| d.value).unwrap_or(f64::NAN)
                );
            }
        }
        if interval > 0 && s.epoch % interval == 0 {
            let json = s.to_json()?;
            let saved = out
                .write(
                    &format!("checkpoints/epoch_{:05}.json", s.epoch),
                    json.as_bytes(),
                )
                .and_then(|_| out.write("checkpoint.json", json.as_bytes()));
            if let Err(e) = saved {
                let msg = e.to_string();
                io_error = Some(e);
                return Err(fingan::training::TrainError::Checkpoint(msg));
            }
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    result?;

    out.write("checkpoint.json", state.to_json()?.as_bytes())?;
    let mut loss = Vec::new();
    write_loss_csv(&mut loss, &state.history)?;
    out.write("loss.csv", &loss)?;
    let mut diversity = String::from("epoch,diversity\n");
    for d in &state.diversity {
        diversity.push_str(&format!("{},{}\n", d.epoch, d.value));
    }
    out.write("diversity.csv", diversity.as_bytes())?;
    let config_json = serde_json::to_value(&state.config).expect("config serialises");
    let manifest = out.finish(Some(state.config.seed), config_json)?;
    info!("wrote {}", manifest.display());
    Ok(())
}
