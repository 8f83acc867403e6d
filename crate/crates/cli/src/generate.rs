use std::path::PathBuf;

use clap::Args;
use fingan::market_data::{returns_to_prices, write_prices_csv, write_returns_csv};
use fingan::training::{generate_returns, TrainState};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_bytes, read_config, Outputs};
use crate::error::CliError;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON file with any of `n`, `seed`, `prices`, `p0`; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of returns to generate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Also write the implied price path.
    #[arg(long)]
    pub prices: bool,
    /// Starting price of the price path.
    #[arg(long, allow_negative_numbers = true)]
    pub p0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n: Option<usize>,
    pub seed: u64,
    pub prices: bool,
    pub p0: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: None,
            seed: 0,
            prices: false,
            p0: 100.0,
        }
    }
}

pub fn run(args: &GenerateArgs) -> Result<(), CliError> {
    let mut cfg: GenerateConfig = match &args.config {
        Some(p) => read_config(p)?,
        None => GenerateConfig::default(),
    };
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.prices |= args.prices;
    if let Some(p0) = args.p0 {
        cfg.p0 = p0;
    }
    let n = match cfg.n {
        Some(n) if n > 0 => n,
        _ => {
            return Err(CliError::Config(
                "--n must be a positive number of returns".into(),
            ))
        }
    };
    if !(cfg.p0 > 0.0 && cfg.p0.is_finite()) {
        return Err(CliError::Config(format!(
            "--p0 {} must be a positive price",
            cfg.p0
        )));
    }

    let mut out = Outputs::new(&args.out, "generate");
    let ckpt = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.path("checkpoint.json"));
    let bytes = read_bytes(&ckpt)?;
    out.record_input(&ckpt, &bytes);
    let text = String::from_utf8(bytes).map_err(|e| CliError::io(&ckpt, e))?;
    let state = TrainState::from_json(&text).map_err(|e| CliError::io(&ckpt, e))?;

    let returns = generate_returns(&state, n, cfg.seed)?;
    let mut buf = Vec::new();
    write_returns_csv(&mut buf, &returns)?;
    out.write("generated.csv", &buf)?;
    if cfg.prices {
        let prices = returns_to_prices(&returns, cfg.p0)?;
        let mut buf = Vec::new();
        write_prices_csv(&mut buf, &prices)?;
        out.write("generated_prices.csv", &buf)?;
    }
    let config_json = serde_json::to_value(&cfg).expect("config serialises");
    out.finish(Some(cfg.seed), config_json)?;
    Ok(())
}
