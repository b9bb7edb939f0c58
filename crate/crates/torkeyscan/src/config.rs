//! Scan configuration, embedded verbatim into reports for provenance.

use std::path::PathBuf;

use chrono::NaiveDate;
use serde::Serialize;

use crate::batchgcd::DEFAULT_CHUNK_SIZE;
use crate::hashring::{DEFAULT_COLLISION_THRESHOLD, DEFAULT_PERIOD_LEAD};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("date range is not well-ordered: {from} > {to}")]
    BadDateRange { from: NaiveDate, to: NaiveDate },
    #[error("threshold must be at least 1")]
    BadThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Everything a scan needs to be reproduced.
#[derive(Debug, Clone, Serialize)]
pub struct ScanConfig {
    pub archive: Option<PathBuf>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    /// Minimum shared hex digits for a collision finding.
    pub threshold: usize,
    /// Exponents that are not anomalies.
    pub exponent_whitelist: Vec<u64>,
    pub format: OutputFormat,
    /// Worker threads; 0 picks the machine default. Must not and does not
    /// affect report bytes.
    pub workers: usize,
    /// Seed for every randomized step (recovery retries, generators).
    pub seed: u64,
    /// Use plain days-since-epoch as the time-period rule.
    pub naive_days: bool,
    /// Rotation periods of lead when mapping a date to a descriptor.
    pub lead_periods: u32,
    /// Moduli per product-tree chunk.
    pub chunk_size: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            archive: None,
            from: None,
            to: None,
            threshold: DEFAULT_COLLISION_THRESHOLD,
            exponent_whitelist: vec![crate::batchgcd::STANDARD_EXPONENT as u64],
            format: OutputFormat::Json,
            workers: 0,
            seed: 0,
            naive_days: false,
            lead_periods: DEFAULT_PERIOD_LEAD,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let (Some(from), Some(to)) = (self.from, self.to) {
            if from > to {
                return Err(ConfigError::BadDateRange { from, to });
            }
        }
        if self.threshold == 0 {
            return Err(ConfigError::BadThreshold);
        }
        Ok(())
    }

    /// The inclusive list of scan dates.
    pub fn dates(&self) -> Vec<NaiveDate> {
        match (self.from, self.to) {
            (Some(from), Some(to)) => {
                let mut out = Vec::new();
                let mut day = from;
                while day <= to {
                    out.push(day);
                    match day.succ_opt() {
                        Some(next) => day = next,
                        None => break,
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }
}
