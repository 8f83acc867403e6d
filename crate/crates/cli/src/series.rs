use std::path::Path;

use fingan::market_data::{ingest_reader, log_returns, read_returns_csv};

use crate::error::CliError;

/// Log returns from either a `date,adjusted_close` price file or an
/// `index,log_return` returns file, chosen by the header.
pub fn returns_from_bytes(path: &Path, bytes: &[u8]) -> Result<Vec<f64>, CliError> {
    let header = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let header = String::from_utf8_lossy(header);
    let header = header.trim_end_matches('\r').trim_start_matches('\u{feff}');
    let wrap =
        |e: fingan::market_data::DataError| CliError::Data(format!("{}: {e}", path.display()));
    match header {
        "date,adjusted_close" => {
            let symbol = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let prices = ingest_reader(bytes, &symbol).map_err(wrap)?;
            Ok(log_returns(prices.prices()))
        }
        "index,log_return" => read_returns_csv(bytes).map_err(wrap),
        other => Err(CliError::Data(format!(
            "{}: unrecognised header {other:?}; expected date,adjusted_close or index,log_return",
            path.display()
        ))),
    }
}
