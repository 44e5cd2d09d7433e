//! Uniformly sampled real time series.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Physical unit of trace samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m")]
    Meters,
    #[serde(rename = "m/s")]
    MetersPerSecond,
    #[serde(rename = "dB")]
    Decibels,
    #[serde(rename = "V")]
    Volts,
    #[serde(rename = "Hz")]
    Hertz,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Meters => "m",
            Unit::MetersPerSecond => "m/s",
            Unit::Decibels => "dB",
            Unit::Volts => "V",
            Unit::Hertz => "Hz",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "m" => Ok(Unit::Meters),
            "m/s" => Ok(Unit::MetersPerSecond),
            "dB" => Ok(Unit::Decibels),
            "V" => Ok(Unit::Volts),
            "Hz" => Ok(Unit::Hertz),
            other => Err(Error::InvalidParameter(format!("unknown unit '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub sample_rate_hz: f64,
    pub values: Vec<f64>,
    pub unit: Unit,
    /// Non-fatal diagnostics attached during generation.
    pub warnings: Vec<String>,
}

impl TimeTrace {
    pub fn new(sample_rate_hz: f64, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be > 0, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            sample_rate_hz,
            values,
            unit,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate_hz
    }

    pub fn time_at(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate_hz
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance about the mean.
    pub fn variance(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    /// Root mean square about zero.
    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

/// Number of samples for a given rate and duration.
pub fn sample_count(sample_rate_hz: f64, duration_s: f64) -> usize {
    (sample_rate_hz * duration_s).round().max(0.0) as usize
}
