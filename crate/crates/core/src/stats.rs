//! Normal-approximation confidence intervals for throughput samples.

use std::fmt;
use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("unsupported confidence level {0} (use 0.90, 0.95 or 0.99)")]
    UnsupportedLevel(f64),
    #[error("line {line}: {message}")]
    BadSample { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceLevel {
    P90,
    P95,
    P99,
}

impl ConfidenceLevel {
    pub fn from_f64(level: f64) -> Result<Self, StatsError> {
        const EPS: f64 = 1e-9;
        [Self::P90, Self::P95, Self::P99]
            .into_iter()
            .find(|l| (l.value() - level).abs() < EPS)
            .ok_or(StatsError::UnsupportedLevel(level))
    }

    pub fn value(self) -> f64 {
        match self {
            Self::P90 => 0.90,
            Self::P95 => 0.95,
            Self::P99 => 0.99,
        }
    }

    /// Two-sided standard normal quantile `z_{alpha/2}`.
    pub fn z(self) -> f64 {
        match self {
            Self::P90 => 1.644854,
            Self::P95 => 1.959964,
            Self::P99 => 2.575829,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
    pub std_dev: f64,
    pub n: usize,
    pub level: ConfidenceLevel,
}

/// `mean ± half_width`; precision defaults to 6 decimals, so `{:.2}` gives
/// the two-decimal table style.
impl fmt::Display for ConfidenceInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(6);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.half_width)
    }
}

/// Sample standard deviation (n - 1), computed on deviations from the first
/// sample so that shifting every sample by a constant leaves it unchanged.
fn sample_std_dev(samples: &[f64]) -> f64 {
    let pivot = samples[0];
    let n = samples.len() as f64;
    let shifted_mean = samples.iter().map(|x| x - pivot).sum::<f64>() / n;
    let ss: f64 = samples
        .iter()
        .map(|x| {
            let d = (x - pivot) - shifted_mean;
            d * d
        })
        .sum();
    (ss / (n - 1.0)).sqrt()
}

/// `mean ± z * s / sqrt(n)`.
pub fn confidence_interval(
    samples: &[f64],
    level: ConfidenceLevel,
) -> Result<ConfidenceInterval, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let std_dev = sample_std_dev(samples);
    Ok(ConfidenceInterval {
        mean,
        half_width: level.z() * std_dev / (n as f64).sqrt(),
        std_dev,
        n,
        level,
    })
}

/// One value per line. An optional non-numeric first line is a header.
pub fn read_samples(reader: impl io::Read) -> Result<Vec<f64>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| StatsError::BadSample {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 1 {
            return Err(StatsError::BadSample {
                line,
                message: format!("expected 1 column, found {}", rec.len()),
            });
        }
        let field = &rec[0];
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => {
                return Err(StatsError::BadSample {
                    line,
                    message: format!("non-finite sample {v}"),
                })
            }
            Err(_) if line == 1 => {}
            Err(_) => {
                return Err(StatsError::BadSample {
                    line,
                    message: format!("not a number: {field:?}"),
                })
            }
        }
    }
    Ok(out)
}
