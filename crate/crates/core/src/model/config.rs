use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether history is encoded once (global) or once per context type (local).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Factorized `P(k) * p_k(tau)` with log-normal mixtures.
    Density,
    /// Per-type conditional intensities through softplus MLPs.
    Intensity,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Mode::Local),
            "global" => Ok(Mode::Global),
            other => Err(Error::InvalidConfig(format!(
                "mode must be local or global, got {other}"
            ))),
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(DecoderKind::Density),
            "intensity" => Ok(DecoderKind::Intensity),
            other => Err(Error::InvalidConfig(format!(
                "decoder must be density or intensity, got {other}"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Local => "local",
            Mode::Global => "global",
        })
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Density => "density",
            DecoderKind::Intensity => "intensity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_types: usize,
    /// Dimension of each local (or global) type embedding.
    pub d_type: usize,
    pub d_time: usize,
    pub d_hidden: usize,
    /// Log-normal mixture components per type.
    pub num_components: usize,
    /// Hidden width of each per-type intensity MLP.
    pub d_mlp: usize,
    /// Trapezoid points per inter-event interval for the intensity compensator.
    pub compensator_points: usize,
    pub mode: Mode,
    pub decoder: DecoderKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_types: 1,
            d_type: 16,
            d_time: 8,
            d_hidden: 32,
            num_components: 8,
            d_mlp: 16,
            compensator_points: 32,
            mode: Mode::Local,
            decoder: DecoderKind::Density,
        }
    }
}

impl ModelConfig {
    pub fn new(num_types: usize) -> Self {
        Self {
            num_types,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_types", self.num_types),
            ("d_type", self.d_type),
            ("d_time", self.d_time),
            ("d_hidden", self.d_hidden),
            ("num_components", self.num_components),
            ("d_mlp", self.d_mlp),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
        }
        if self.compensator_points < 2 {
            return Err(Error::InvalidConfig(
                "compensator_points must be >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn d_input(&self) -> usize {
        self.d_type + self.d_time
    }

    /// Number of recurrent channels: one per type in local mode, one in global mode.
    pub fn channels(&self) -> usize {
        match self.mode {
            Mode::Local => self.num_types,
            Mode::Global => 1,
        }
    }

    /// Applies a `key=value` override, as accepted on the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: expected an integer, got {value}")))
        };
        match key {
            "num_types" | "K" => self.num_types = num()?,
            "d_type" => self.d_type = num()?,
            "d_time" => self.d_time = num()?,
            "d_hidden" => self.d_hidden = num()?,
            "num_components" | "M" => self.num_components = num()?,
            "d_mlp" => self.d_mlp = num()?,
            "compensator_points" => self.compensator_points = num()?,
            "mode" => self.mode = value.parse()?,
            "decoder" => self.decoder = value.parse()?,
            other => return Err(Error::InvalidConfig(format!("unknown model key {other}"))),
        }
        Ok(())
    }
}
