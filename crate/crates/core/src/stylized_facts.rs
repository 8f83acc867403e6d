//! Scores and verdicts for the stylized facts of asset returns, plus
//! distributional distances between two return samples.
//!
//! Moments use biased plug-in estimators (divide by `N`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("need at least {need} observations, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("aggregation scale {scale} leaves {blocks} blocks, fewer than {need}")]
    InsufficientBlocks {
        scale: usize,
        blocks: usize,
        need: usize,
    },
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("{0}")]
    Invalid(String),
}

/// Every verdict threshold in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Lags `1..=max_lag` for the return ACF.
    pub max_lag: usize,
    /// Confidence band is `band_z / sqrt(N)`.
    pub band_z: f64,
    /// Fraction of lags inside the band needed for linear unpredictability.
    pub min_unpredictable_fraction: f64,
    /// Lags averaged in the volatility-clustering summary.
    pub vol_summary_lags: usize,
    pub min_vol_summary: f64,
    pub min_excess_kurtosis: f64,
    /// Gain/loss asymmetry needs skewness below this.
    pub max_skewness: f64,
    pub aggregation_scales: Vec<usize>,
    pub min_blocks: usize,
    /// Required relative drop of excess kurtosis from scale 1 to the largest scale.
    pub min_kurtosis_drop: f64,
    pub leverage_max_lag: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            max_lag: 20,
            band_z: 2.0,
            min_unpredictable_fraction: 0.9,
            vol_summary_lags: 10,
            min_vol_summary: 0.05,
            min_excess_kurtosis: 1.0,
            max_skewness: 0.0,
            aggregation_scales: vec![1, 5, 21, 63],
            min_blocks: 30,
            min_kurtosis_drop: 0.25,
            leverage_max_lag: 10,
        }
    }
}

fn check_finite(r: &[f64]) -> Result<(), StatsError> {
    if r.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// A constant series has zero variance, though its computed mean may carry
/// rounding error that would otherwise leak into the centred values.
fn check_not_constant(r: &[f64]) -> Result<(), StatsError> {
    match r.first() {
        Some(first) if r.iter().all(|v| v == first) => Err(StatsError::ZeroVariance),
        _ => Ok(()),
    }
}

fn mean(r: &[f64]) -> f64 {
    r.iter().sum::<f64>() / r.len() as f64
}

/// `rho(1..=max_lag)` with the full-sample mean and variance.
pub fn acf(r: &[f64], max_lag: usize) -> Result<Vec<f64>, StatsError> {
    check_finite(r)?;
    if r.len() < max_lag + 2 {
        return Err(StatsError::TooShort {
            need: max_lag + 2,
            got: r.len(),
        });
    }
    check_not_constant(r)?;
    let m = mean(r);
    let c: Vec<f64> = r.iter().map(|v| v - m).collect();
    let denom: f64 = c.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((1..=max_lag)
        .map(|lag| c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

pub fn confidence_band(n: usize, z: f64) -> f64 {
    z / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearUnpredictability {
    pub acf: Vec<f64>,
    pub band: f64,
    /// Fraction of lags with `|rho| < band`.
    pub score: f64,
    pub verdict: bool,
}

pub fn linear_unpredictability(
    r: &[f64],
    t: &Thresholds,
) -> Result<LinearUnpredictability, StatsError> {
    let acf = acf(r, t.max_lag)?;
    let band = confidence_band(r.len(), t.band_z);
    let inside = acf.iter().filter(|p| p.abs() < band).count();
    let score = inside as f64 / acf.len().max(1) as f64;
    Ok(LinearUnpredictability {
        acf,
        band,
        score,
        verdict: score >= t.min_unpredictable_fraction,
    })
}

pub fn linear_unpredictability_score(r: &[f64], max_lag: usize) -> Result<f64, StatsError> {
    let t = Thresholds {
        max_lag,
        ..Thresholds::default()
    };
    Ok(linear_unpredictability(r, &t)?.score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityClustering {
    /// ACF of `|r|`.
    pub acf_abs: Vec<f64>,
    /// Mean of the first `vol_summary_lags` entries of `acf_abs`.
    pub summary: f64,
    pub verdict: bool,
}

pub fn volatility_clustering(
    r: &[f64],
    t: &Thresholds,
) -> Result<VolatilityClustering, StatsError> {
    let abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    let acf_abs = acf(&abs, t.max_lag.max(t.vol_summary_lags))?;
    let k = t.vol_summary_lags.min(acf_abs.len()).max(1);
    let summary = acf_abs[..k].iter().sum::<f64>() / k as f64;
    let verdict = summary > t.min_vol_summary && acf_abs.first().is_some_and(|&p| p > 0.0);
    Ok(VolatilityClustering {
        acf_abs,
        summary,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// `sqrt(m2)`
    pub std: f64,
    /// `m3 / m2^1.5`
    pub skewness: f64,
    /// `m4 / m2^2 - 3`
    pub excess_kurtosis: f64,
}

pub fn moments(r: &[f64]) -> Result<Moments, StatsError> {
    check_finite(r)?;
    if r.len() < 4 {
        return Err(StatsError::TooShort {
            need: 4,
            got: r.len(),
        });
    }
    check_not_constant(r)?;
    let n = r.len() as f64;
    let m = mean(r);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in r {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(Moments {
        mean: m,
        std: m2.sqrt(),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTails {
    pub excess_kurtosis: f64,
    pub verdict: bool,
}

pub fn heavy_tails(m: &Moments, t: &Thresholds) -> HeavyTails {
    HeavyTails {
        excess_kurtosis: m.excess_kurtosis,
        verdict: m.excess_kurtosis > t.min_excess_kurtosis,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainLossAsymmetry {
    pub skewness: f64,
    pub verdict: bool,
}

pub fn gain_loss_asymmetry(m: &Moments, t: &Thresholds) -> GainLossAsymmetry {
    GainLossAsymmetry {
        skewness: m.skewness,
        verdict: m.skewness < t.max_skewness,
    }
}

/// Sums over consecutive non-overlapping blocks of `scale`; a trailing
/// partial block is dropped.
pub fn aggregate(r: &[f64], scale: usize) -> Vec<f64> {
    r.chunks_exact(scale).map(|c| c.iter().sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationalGaussianity {
    pub scales: Vec<usize>,
    pub excess_kurtosis: Vec<f64>,
    pub verdict: bool,
}

/// Excess kurtosis of block sums at each scale.
///
/// Passes when scale-1 excess kurtosis is at most the heavy-tail threshold,
/// or when the kurtosis at the largest scale is at least
/// `min_kurtosis_drop` (relative) below scale 1.
pub fn aggregational_gaussianity(
    r: &[f64],
    scales: &[usize],
    t: &Thresholds,
) -> Result<AggregationalGaussianity, StatsError> {
    if scales.is_empty() || scales.contains(&0) {
        return Err(StatsError::Invalid(
            "aggregation scales must be positive".into(),
        ));
    }
    let mut kurt = Vec::with_capacity(scales.len());
    for &scale in scales {
        let blocks = r.len() / scale;
        if blocks < t.min_blocks {
            return Err(StatsError::InsufficientBlocks {
                scale,
                blocks,
                need: t.min_blocks,
            });
        }
        kurt.push(moments(&aggregate(r, scale))?.excess_kurtosis);
    }
    let first = scales
        .iter()
        .position(|&s| s == 1)
        .map(|i| kurt[i])
        .unwrap_or(kurt[0]);
    let largest = scales
        .iter()
        .enumerate()
        .max_by_key(|(_, s)| **s)
        .map(|(i, _)| kurt[i])
        .expect("non-empty");
    let verdict = first <= t.min_excess_kurtosis || largest <= (1.0 - t.min_kurtosis_drop) * first;
    Ok(AggregationalGaussianity {
        scales: scales.to_vec(),
        excess_kurtosis: kurt,
        verdict,
    })
}

fn sorted(a: &[f64]) -> Result<Vec<f64>, StatsError> {
    check_finite(a)?;
    if a.is_empty() {
        return Err(StatsError::TooShort { need: 1, got: 0 });
    }
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Wasserstein-1 distance `integral |F_a - F_b| dx` between empirical
/// distributions.
///
/// For equal sizes this is the mean absolute difference of the sorted
/// samples; unequal sizes are handled exactly rather than by trimming.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (x - prev) * (i as f64 / na - j as f64 / nb).abs();
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        prev = x;
    }
    Ok(total)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// `corr(r_t, r_{t+lag}^2)` for `lag = 1..=max_lag`.
pub fn leverage_effect(r: &[f64], max_lag: usize) -> Result<Vec<f64>, StatsError> {
    check_finite(r)?;
    if r.len() < max_lag + 3 {
        return Err(StatsError::TooShort {
            need: max_lag + 3,
            got: r.len(),
        });
    }
    let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
    (1..=max_lag)
        .map(|lag| pearson(&r[..r.len() - lag], &sq[lag..]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub linear_unpredictability: bool,
    pub heavy_tails: bool,
    pub volatility_clustering: bool,
    pub gain_loss_asymmetry: bool,
    pub aggregational_gaussianity: bool,
}

/// Facts of a candidate series and its distance to a reference series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedFactsReport {
    pub n: usize,
    pub reference_n: usize,
    pub moments: Moments,
    pub linear_unpredictability: LinearUnpredictability,
    pub heavy_tails: HeavyTails,
    pub volatility_clustering: VolatilityClustering,
    pub gain_loss_asymmetry: GainLossAsymmetry,
    pub aggregational_gaussianity: AggregationalGaussianity,
    pub ks_statistic: f64,
    pub wasserstein1: f64,
    pub leverage_effect: Vec<f64>,
    pub verdicts: Verdicts,
    pub thresholds: Thresholds,
    pub threshold_note: String,
}

const THRESHOLD_NOTE: &str =
    "the facts are qualitative; these thresholds are this tool's quantification of them";

/// Scores `candidate` against every fact and measures its distributional
/// distance to `reference`.
///
/// Aggregation scales leaving fewer than `min_blocks` blocks are skipped.
pub fn evaluate(
    candidate: &[f64],
    reference: &[f64],
    t: &Thresholds,
) -> Result<StylizedFactsReport, StatsError> {
    let moments = moments(candidate)?;
    let linear_unpredictability = linear_unpredictability(candidate, t)?;
    let volatility_clustering = volatility_clustering(candidate, t)?;
    let scales: Vec<usize> = t
        .aggregation_scales
        .iter()
        .copied()
        .filter(|&s| s > 0 && candidate.len() / s >= t.min_blocks)
        .collect();
    if scales.is_empty() {
        return Err(StatsError::TooShort {
            need: t.min_blocks,
            got: candidate.len(),
        });
    }
    let aggregational_gaussianity = aggregational_gaussianity(candidate, &scales, t)?;
    let heavy_tails = heavy_tails(&moments, t);
    let gain_loss_asymmetry = gain_loss_asymmetry(&moments, t);
    let verdicts = Verdicts {
        linear_unpredictability: linear_unpredictability.verdict,
        heavy_tails: heavy_tails.verdict,
        volatility_clustering: volatility_clustering.verdict,
        gain_loss_asymmetry: gain_loss_asymmetry.verdict,
        aggregational_gaussianity: aggregational_gaussianity.verdict,
    };
    Ok(StylizedFactsReport {
        n: candidate.len(),
        reference_n: reference.len(),
        moments,
        linear_unpredictability,
        heavy_tails,
        volatility_clustering,
        gain_loss_asymmetry,
        aggregational_gaussianity,
        ks_statistic: ks_statistic(candidate, reference)?,
        wasserstein1: wasserstein1(candidate, reference)?,
        leverage_effect: leverage_effect(candidate, t.leverage_max_lag)?,
        verdicts,
        thresholds: t.clone(),
        threshold_note: THRESHOLD_NOTE.into(),
    })
}

/// Histogram densities of two samples on shared equal-width bins spanning
/// both; returns `(bin_centers, density_a, density_b)`.
pub fn shared_densities(
    a: &[f64],
    b: &[f64],
    bins: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), StatsError> {
    if bins == 0 {
        return Err(StatsError::Invalid("bins must be positive".into()));
    }
    let (sa, sb) = (sorted(a)?, sorted(b)?);
    let lo = sa[0].min(sb[0]);
    let hi = sa[sa.len() - 1].max(sb[sb.len() - 1]);
    if hi <= lo {
        return Err(StatsError::ZeroVariance);
    }
    let width = (hi - lo) / bins as f64;
    let centers = (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let density = |s: &[f64]| -> Vec<f64> {
        let mut counts = vec![0usize; bins];
        for &v in s {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / (s.len() as f64 * width))
            .collect()
    };
    Ok((centers, density(&sa), density(&sb)))
}
