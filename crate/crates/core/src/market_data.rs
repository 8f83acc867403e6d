//! Price ingestion, log returns, max-abs normalisation and windowing, and
//! the way back from returns to prices.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: date {date} does not follow {prev_date} on line {prev_line}")]
    NonIncreasingDates {
        line: u64,
        date: NaiveDate,
        prev_line: u64,
        prev_date: NaiveDate,
    },
    #[error("line {line}: price {price} is not positive")]
    NonPositivePrice { line: u64, price: f64 },
    #[error("series has {n} values, fewer than the window length {window}")]
    TooShort { n: usize, window: usize },
    #[error("all returns are zero; the normalisation scale is undefined")]
    ZeroScale,
    #[error("{0}")]
    Invalid(String),
}

/// Dated adjusted closes, strictly increasing in date and positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub symbol: String,
    dates: Vec<NaiveDate>,
    prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(
        symbol: impl Into<String>,
        dates: Vec<NaiveDate>,
        prices: Vec<f64>,
    ) -> Result<Self, DataError> {
        if dates.len() != prices.len() {
            return Err(DataError::Invalid(format!(
                "{} dates for {} prices",
                dates.len(),
                prices.len()
            )));
        }
        // rows are numbered as lines of a file with a header
        for (i, &p) in prices.iter().enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(DataError::NonPositivePrice {
                    line: i as u64 + 2,
                    price: p,
                });
            }
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(DataError::NonIncreasingDates {
                    line: i as u64 + 3,
                    date: w[1],
                    prev_line: i as u64 + 2,
                    prev_date: w[0],
                });
            }
        }
        Ok(Self {
            symbol: symbol.into(),
            dates,
            prices,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Log returns with their provenance. Generated series carry no dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub symbol: String,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(symbol: impl Into<String>, values: Vec<f64>) -> Result<Self, DataError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("return {i} is not finite")));
        }
        Ok(Self {
            symbol: symbol.into(),
            start: None,
            end: None,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reads `date,adjusted_close` rows with ISO dates in ascending order.
pub fn ingest_csv(path: &Path) -> Result<PriceSeries, DataError> {
    let file = File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_reader(file, &symbol)
}

pub fn ingest_reader<R: Read>(reader: R, symbol: &str) -> Result<PriceSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["date", "adjusted_close"] {
        return Err(DataError::Malformed {
            line: 1,
            reason: format!(
                "expected header date,adjusted_close, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| DataError::Malformed { line, reason };
        if record.len() != 2 {
            return Err(bad(format!("expected 2 fields, got {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| bad(format!("bad date {:?}: {e}", &record[0])))?;
        if record[1].is_empty() {
            return Err(bad("missing price".into()));
        }
        let price: f64 = record[1]
            .parse()
            .map_err(|_| bad(format!("bad price {:?}", &record[1])))?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(DataError::NonPositivePrice { line, price });
        }
        if let (Some(&prev_date), Some(&prev_line)) = (dates.last(), lines.last()) {
            if date <= prev_date {
                return Err(DataError::NonIncreasingDates {
                    line,
                    date,
                    prev_line,
                    prev_date,
                });
            }
        }
        dates.push(date);
        prices.push(price);
        lines.push(line);
    }
    if prices.is_empty() {
        return Err(DataError::Malformed {
            line: 1,
            reason: "no data rows".into(),
        });
    }
    PriceSeries::new(symbol, dates, prices)
}

/// `r_t = ln(p_t / p_{t-1})`.
pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
}

pub fn to_log_returns(prices: &PriceSeries) -> ReturnSeries {
    ReturnSeries {
        symbol: prices.symbol.clone(),
        start: prices.dates.first().copied(),
        end: prices.dates.last().copied(),
        values: log_returns(&prices.prices),
    }
}

/// Prices `p_0, p_0 e^{r_1}, ...`; one longer than `returns`.
pub fn returns_to_prices(returns: &[f64], p0: f64) -> Result<Vec<f64>, DataError> {
    if !(p0 > 0.0 && p0.is_finite()) {
        return Err(DataError::Invalid(format!(
            "initial price {p0} must be positive"
        )));
    }
    let mut out = Vec::with_capacity(returns.len() + 1);
    out.push(p0);
    let mut cum = 0.0;
    for r in returns {
        cum += r;
        out.push(p0 * cum.exp());
    }
    Ok(out)
}

/// Overlapping windows of `r / s` with `s = max |r_t|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    window_len: usize,
    stride: usize,
    scale: f64,
    /// Row-major `[count, window_len]`.
    data: Vec<f64>,
}

impl WindowedDataset {
    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.window_len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f64] {
        &self.data[i * self.window_len..(i + 1) * self.window_len]
    }

    /// The windows at `indices` as a `[indices.len(), window_len]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.window_len);
        for &i in indices {
            data.extend_from_slice(self.window(i));
        }
        Tensor::new(vec![indices.len(), self.window_len], data).expect("non-empty batch")
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        denormalize(values, self.scale)
    }
}

/// `floor((n - window) / stride) + 1` for `n >= window`.
pub fn window_count(n: usize, window: usize, stride: usize) -> usize {
    (n - window) / stride + 1
}

pub fn normalize_and_window(
    returns: &[f64],
    window: usize,
    stride: usize,
) -> Result<WindowedDataset, DataError> {
    if window == 0 || stride == 0 {
        return Err(DataError::Invalid(
            "window length and stride must be positive".into(),
        ));
    }
    if returns.len() < window {
        return Err(DataError::TooShort {
            n: returns.len(),
            window,
        });
    }
    let scale = returns.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if scale == 0.0 {
        return Err(DataError::ZeroScale);
    }
    if !scale.is_finite() {
        return Err(DataError::Invalid("returns must be finite".into()));
    }
    let normed: Vec<f64> = returns.iter().map(|r| r / scale).collect();
    let count = window_count(returns.len(), window, stride);
    let mut data = Vec::with_capacity(count * window);
    for w in 0..count {
        data.extend_from_slice(&normed[w * stride..w * stride + window]);
    }
    Ok(WindowedDataset {
        window_len: window,
        stride,
        scale,
        data,
    })
}

pub fn denormalize(values: &[f64], scale: f64) -> Vec<f64> {
    values.iter().map(|v| v * scale).collect()
}

/// Writes `index,log_return` rows, indices from 0.
pub fn write_returns_csv<W: Write>(writer: W, returns: &[f64]) -> Result<(), DataError> {
    write_indexed(writer, "log_return", returns)
}

/// Writes `index,price` rows, indices from 0.
pub fn write_prices_csv<W: Write>(writer: W, prices: &[f64]) -> Result<(), DataError> {
    write_indexed(writer, "price", prices)
}

fn write_indexed<W: Write>(writer: W, column: &str, values: &[f64]) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io {
        path: "<output>".into(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", column]).map_err(io)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: "<output>".into(),
        reason: e.to_string(),
    })
}

/// Reads an `index,<column>` file back into its value column.
pub fn read_indexed<R: Read>(reader: R, column: &str) -> Result<Vec<f64>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["index", column] {
        return Err(DataError::Malformed {
            line: 1,
            reason: format!("expected header index,{column}"),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let v: f64 = record
            .get(1)
            .and_then(|s| s.parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| DataError::Malformed {
                line,
                reason: format!("bad {column} value"),
            })?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_returns_csv<R: Read>(reader: R) -> Result<Vec<f64>, DataError> {
    read_indexed(reader, "log_return")
}
