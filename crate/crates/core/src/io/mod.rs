//! File formats, run configuration and report serialization.

mod binary;
mod image;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use binary::*;
pub use image::*;

use crate::calibration::{Homography, SpectralResponse};
use crate::domain::{SpectralGrid, SystemConfig};
use crate::error::{Error, Result};
use crate::reconstruction::{GuidedOptions, StepDiagnostics};

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub seed: u64,
    pub noiseless: bool,
}

/// A system plus the options of every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default = "GuidedOptions::default")]
    pub reconstruction: GuidedOptions,
}

impl RunConfig {
    pub fn new(system: SystemConfig) -> Self {
        Self {
            system,
            render: RenderSettings::default(),
            reconstruction: GuidedOptions::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.system.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelHomography {
    pub channel: usize,
    /// Maps reference-channel pixels `(x, y)` onto this channel.
    pub matrix: Homography,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomographySet {
    pub reference_channel: usize,
    pub homographies: Vec<ChannelHomography>,
}

impl HomographySet {
    pub fn get(&self, channel: usize) -> Option<&Homography> {
        self.homographies
            .iter()
            .find(|h| h.channel == channel)
            .map(|h| &h.matrix)
    }
}

/// `wavelength_nm,alpha_<channel>,...` with one row per band.
pub fn response_csv(response: &SpectralResponse) -> String {
    let mut out = String::from("wavelength_nm");
    for i in &response.channel_indices {
        out.push_str(&format!(",alpha_{i}"));
    }
    out.push('\n');
    for (b, w) in response.wavelengths_nm.iter().enumerate() {
        out.push_str(&w.to_string());
        for a in &response.alpha {
            out.push_str(&format!(",{}", a[b]));
        }
        out.push('\n');
    }
    out
}

/// One row per sampling step of a guided reconstruction.
pub fn diagnostics_csv(steps: &[StepDiagnostics]) -> String {
    let mut out = String::from("t,gamma,loss,mean_a,mean_b,non_increasing,iterations\n");
    for s in steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.t, s.gamma, s.loss, s.mean_a, s.mean_b, s.non_increasing, s.iterations
        ));
    }
    out
}

/// Sensor response table `wavelength_nm,plane_0,...` resampled linearly onto `grid`.
///
/// Values outside the tabulated range are zero.
pub fn parse_sensor_csv(text: &str, grid: &SpectralGrid) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty sensor table".into()))?;
    let planes = header.split(',').count().saturating_sub(1);
    if planes == 0 {
        return Err(Error::Parse(
            "sensor table needs at least one response column".into(),
        ));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != planes + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields",
                n + 2,
                planes + 1
            )));
        }
        rows.push(row);
    }
    if rows.windows(2).any(|w| !(w[1][0] > w[0][0])) {
        return Err(Error::Parse(
            "sensor table wavelengths must increase".into(),
        ));
    }
    let sample = |lambda: f64, p: usize| -> f64 {
        let i = rows.partition_point(|r| r[0] < lambda);
        if i < rows.len() && rows[i][0] == lambda {
            return rows[i][p + 1];
        }
        if i == 0 || i == rows.len() {
            return 0.0;
        }
        let (lo, hi) = (&rows[i - 1], &rows[i]);
        let t = (lambda - lo[0]) / (hi[0] - lo[0]);
        lo[p + 1] + t * (hi[p + 1] - lo[p + 1])
    };
    Ok((0..planes)
        .map(|p| grid.wavelengths().iter().map(|&w| sample(w, p)).collect())
        .collect())
}
