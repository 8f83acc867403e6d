use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use fingan::market_data::returns_to_prices;
use fingan::stylized_facts::{acf, evaluate, shared_densities, Thresholds};

use crate::artifacts::{read_bytes, read_config, Outputs};
use crate::error::CliError;
use crate::series::returns_from_bytes;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON file of verdict thresholds; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Series under test, as prices or returns.
    #[arg(long)]
    pub candidate: PathBuf,
    /// Series compared against, as prices or returns.
    #[arg(long)]
    pub reference: PathBuf,
    /// Starting price of both paths in `prices.csv`.
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub p0: f64,
    /// Histogram bins of `pdf.csv`.
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

fn cell(v: Option<&f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `index,candidate,reference` with empty cells past the shorter series.
fn paired_csv(a: &[f64], b: &[f64]) -> String {
    let mut s = String::from("index,candidate,reference\n");
    for i in 0..a.len().max(b.len()) {
        writeln!(s, "{i},{},{}", cell(a.get(i)), cell(b.get(i))).expect("string write");
    }
    s
}

pub fn run(args: &EvaluateArgs) -> Result<(), CliError> {
    let thresholds: Thresholds = match &args.config {
        Some(p) => read_config(p)?,
        None => Thresholds::default(),
    };
    if !(args.p0 > 0.0 && args.p0.is_finite()) {
        return Err(CliError::Config(format!(
            "--p0 {} must be a positive price",
            args.p0
        )));
    }
    if args.bins == 0 {
        return Err(CliError::Config("--bins must be positive".into()));
    }
    let mut out = Outputs::new(&args.out, "evaluate");
    let mut load = |path: &PathBuf| -> Result<Vec<f64>, CliError> {
        let bytes = read_bytes(path)?;
        out.record_input(path, &bytes);
        returns_from_bytes(path, &bytes)
    };
    let candidate = load(&args.candidate)?;
    let reference = load(&args.reference)?;

    let report = evaluate(&candidate, &reference, &thresholds)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    out.write("report.json", json.as_bytes())?;

    let ref_acf = acf(&reference, thresholds.max_lag)?;
    let lu = &report.linear_unpredictability;
    let mut s = String::from("lag,candidate,reference,band\n");
    for (lag, (c, r)) in lu.acf.iter().zip(&ref_acf).enumerate() {
        writeln!(s, "{},{c},{r},{}", lag + 1, lu.band).expect("string write");
    }
    out.write("acf.csv", s.as_bytes())?;

    let (centers, dc, dr) = shared_densities(&candidate, &reference, args.bins)?;
    let mut s = String::from("bin_center,candidate_density,reference_density\n");
    for ((x, c), r) in centers.iter().zip(&dc).zip(&dr) {
        writeln!(s, "{x},{c},{r}").expect("string write");
    }
    out.write("pdf.csv", s.as_bytes())?;

    out.write("returns.csv", paired_csv(&candidate, &reference).as_bytes())?;
    let pc = returns_to_prices(&candidate, args.p0)?;
    let pr = returns_to_prices(&reference, args.p0)?;
    out.write("prices.csv", paired_csv(&pc, &pr).as_bytes())?;

    let config_json = serde_json::json!({
        "thresholds": thresholds,
        "p0": args.p0,
        "bins": args.bins,
    });
    out.finish(None, config_json)?;
    Ok(())
}
