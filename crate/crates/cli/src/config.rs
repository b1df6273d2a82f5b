use std::path::Path;

use anyhow::{bail, Context, Result};
use attnspec::detector::FiedlerVariant;
use attnspec::{AnalysisConfig, Cutoff, ReportFormat, SignalAlignment};
use serde::{Deserialize, Deserializer, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl From<OutputFormat> for ReportFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Json => ReportFormat::Json,
            OutputFormat::Csv => ReportFormat::Csv,
        }
    }
}

/// Effective settings after merging defaults, the config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliConfig {
    pub head_weights: Option<Vec<f64>>,
    pub hfer_cutoff: Cutoff,
    pub fiedler_variant: FiedlerVariant,
    pub signal_alignment: SignalAlignment,
    pub edge_threshold: f64,
    pub seed: u64,
    pub band_multiplier: f64,
    pub format: OutputFormat,
    pub precision: Precision,
}

impl Default for CliConfig {
    fn default() -> Self {
        let a = AnalysisConfig::default();
        Self {
            head_weights: a.head_weights,
            hfer_cutoff: a.hfer_cutoff,
            fiedler_variant: FiedlerVariant::default(),
            signal_alignment: a.signal_alignment,
            edge_threshold: a.edge_threshold,
            seed: a.seed,
            band_multiplier: 1.0,
            format: OutputFormat::Json,
            precision: Precision::F64,
        }
    }
}

/// Every field optional; absent fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialConfig {
    pub head_weights: Option<Vec<f64>>,
    #[serde(deserialize_with = "cutoff_value")]
    pub hfer_cutoff: Option<Cutoff>,
    pub fiedler_variant: Option<FiedlerVariant>,
    pub signal_alignment: Option<SignalAlignment>,
    pub edge_threshold: Option<f64>,
    pub seed: Option<u64>,
    pub band_multiplier: Option<f64>,
    pub format: Option<OutputFormat>,
    pub precision: Option<Precision>,
}

/// Integers are absolute indices, floats are fractions, strings are parsed.
fn cutoff_value<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Cutoff>, D::Error> {
    use serde::de::Error;
    Ok(match Option::<toml::Value>::deserialize(d)? {
        None => None,
        Some(toml::Value::Integer(k)) => {
            Some(Cutoff::Absolute(usize::try_from(k).map_err(|_| D::Error::custom("negative hfer_cutoff"))?))
        }
        Some(toml::Value::Float(f)) => Some(Cutoff::Fraction(f)),
        Some(toml::Value::String(s)) => Some(s.parse().map_err(D::Error::custom)?),
        Some(other) => return Err(D::Error::custom(format!("invalid hfer_cutoff {other}"))),
    })
}

impl PartialConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `over` win.
    pub fn merge(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            head_weights: over.head_weights.or(self.head_weights),
            hfer_cutoff: over.hfer_cutoff.or(self.hfer_cutoff),
            fiedler_variant: over.fiedler_variant.or(self.fiedler_variant),
            signal_alignment: over.signal_alignment.or(self.signal_alignment),
            edge_threshold: over.edge_threshold.or(self.edge_threshold),
            seed: over.seed.or(self.seed),
            band_multiplier: over.band_multiplier.or(self.band_multiplier),
            format: over.format.or(self.format),
            precision: over.precision.or(self.precision),
        }
    }

    pub fn resolve(self) -> Result<CliConfig> {
        let d = CliConfig::default();
        let cfg = CliConfig {
            head_weights: self.head_weights.or(d.head_weights),
            hfer_cutoff: self.hfer_cutoff.unwrap_or(d.hfer_cutoff),
            fiedler_variant: self.fiedler_variant.unwrap_or(d.fiedler_variant),
            signal_alignment: self.signal_alignment.unwrap_or(d.signal_alignment),
            edge_threshold: self.edge_threshold.unwrap_or(d.edge_threshold),
            seed: self.seed.unwrap_or(d.seed),
            band_multiplier: self.band_multiplier.unwrap_or(d.band_multiplier),
            format: self.format.unwrap_or(d.format),
            precision: self.precision.unwrap_or(d.precision),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl CliConfig {
    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            head_weights: self.head_weights.clone(),
            hfer_cutoff: self.hfer_cutoff,
            signal_alignment: self.signal_alignment,
            edge_threshold: self.edge_threshold,
            seed: self.seed,
            ..AnalysisConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.analysis().validate(None)?;
        if !(self.band_multiplier > 0.0 && self.band_multiplier.is_finite()) {
            bail!("band multiplier must be finite and > 0, got {}", self.band_multiplier);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: PartialConfig = toml::from_str("seed = 5\nhfer_cutoff = 4\nband_multiplier = 2.0").unwrap();
        let flags = PartialConfig {
            seed: Some(9),
            ..PartialConfig::default()
        };
        let cfg = file.merge(flags).resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.hfer_cutoff, Cutoff::Absolute(4));
        assert_eq!(cfg.band_multiplier, 2.0);
        assert_eq!(cfg.edge_threshold, 0.0);
    }

    #[test]
    fn cutoff_forms() {
        let c: PartialConfig = toml::from_str("hfer_cutoff = 0.25").unwrap();
        assert_eq!(c.hfer_cutoff, Some(Cutoff::Fraction(0.25)));
        let c: PartialConfig = toml::from_str("hfer_cutoff = \"3\"").unwrap();
        assert_eq!(c.hfer_cutoff, Some(Cutoff::Absolute(3)));
        assert!(toml::from_str::<PartialConfig>("hfer_cutoff = -1").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<PartialConfig>("sed = 1").is_err());
        let bad = PartialConfig {
            edge_threshold: Some(-1.0),
            ..PartialConfig::default()
        };
        assert!(bad.resolve().is_err());
        let bad = PartialConfig {
            head_weights: Some(vec![0.7, 0.7]),
            ..PartialConfig::default()
        };
        assert!(bad.resolve().is_err());
    }
}
