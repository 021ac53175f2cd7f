//! Sectioned plain-text configuration.
//!
//! ```text
//! [estimate]
//! hypotheses = 64
//! range = 0.3:80
//! levels = 3
//! golden_iterations = 24
//! low_confidence_spread = 1e-3
//! fill_low_confidence = true
//! jobs = 1
//!
//! [eval]
//! clamp = 0.3:80
//! median_scale = false
//! ```
//!
//! CLI flags override file values; the file overrides built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::estimator::EstimateConfig;
use crate::metrics::{ClampRange, MetricsConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{section}.{key}`")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: bad value for `{section}.{key}`: {text}")]
    BadValue {
        line: usize,
        section: String,
        key: String,
        text: String,
    },
    #[error("cannot read config file: {0}")]
    Io(String),
}

/// Parsed config file: `(section, key) -> (line, value)`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<(String, String), (usize, String)>,
}

const KNOWN_KEYS: &[(&str, &str)] = &[
    ("estimate", "hypotheses"),
    ("estimate", "range"),
    ("estimate", "levels"),
    ("estimate", "golden_iterations"),
    ("estimate", "low_confidence_spread"),
    ("estimate", "fill_low_confidence"),
    ("estimate", "fill_window"),
    ("estimate", "fill_intensity_sigma"),
    ("estimate", "jobs"),
    ("estimate", "adjacent"),
    ("eval", "clamp"),
    ("eval", "median_scale"),
];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS
                .iter()
                .any(|(s, k)| *s == section && *k == key)
            {
                return Err(ConfigError::UnknownKey {
                    line,
                    section: section.clone(),
                    key,
                });
            }
            values.insert((section.clone(), key), (line, value.trim().to_string()));
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError> {
        match self.values.get(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some((line, text)) => text.parse().map(Some).map_err(|_| ConfigError::BadValue {
                line: *line,
                section: section.to_string(),
                key: key.to_string(),
                text: text.clone(),
            }),
        }
    }

    fn get_range(&self, section: &str, key: &str) -> Result<Option<(f64, f64)>, ConfigError> {
        match self.values.get(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some((line, text)) => parse_range(text).map(Some).ok_or(ConfigError::BadValue {
                line: *line,
                section: section.to_string(),
                key: key.to_string(),
                text: text.clone(),
            }),
        }
    }

    /// Applies `[estimate]` keys over the given defaults.
    pub fn estimate_config(&self, base: &EstimateConfig) -> Result<EstimateConfig, ConfigError> {
        let mut config = base.clone();
        if let Some(n) = self.get("estimate", "hypotheses")? {
            config.hypothesis_count = n;
        }
        if let Some((lo, hi)) = self.get_range("estimate", "range")? {
            config.l_min = lo;
            config.l_max = hi;
        }
        if let Some(n) = self.get("estimate", "levels")? {
            config.pyramid_levels = n;
        }
        if let Some(n) = self.get("estimate", "golden_iterations")? {
            config.golden_iterations = n;
        }
        if let Some(v) = self.get("estimate", "low_confidence_spread")? {
            config.low_confidence_spread = v;
        }
        if let Some(v) = self.get("estimate", "fill_low_confidence")? {
            config.fill_low_confidence = v;
        }
        if let Some(v) = self.get("estimate", "fill_window")? {
            config.fill_window = v;
        }
        if let Some(v) = self.get("estimate", "fill_intensity_sigma")? {
            config.fill_intensity_sigma = v;
        }
        if let Some(v) = self.get("estimate", "jobs")? {
            config.jobs = v;
        }
        Ok(config)
    }

    /// Frame offsets used when `estimate` is not given explicit sources.
    pub fn adjacent_offsets(&self) -> Result<Vec<i64>, ConfigError> {
        match self
            .values
            .get(&("estimate".to_string(), "adjacent".to_string()))
        {
            None => Ok(vec![-1, 1]),
            Some((line, text)) => {
                let parsed: Result<Vec<i64>, _> =
                    text.split(',').map(|t| t.trim().parse()).collect();
                parsed.map_err(|_| ConfigError::BadValue {
                    line: *line,
                    section: "estimate".into(),
                    key: "adjacent".into(),
                    text: text.clone(),
                })
            }
        }
    }

    /// Applies `[eval]` keys over the given defaults.
    pub fn metrics_config(&self, base: &MetricsConfig) -> Result<MetricsConfig, ConfigError> {
        let mut config = *base;
        if let Some((lo, hi)) = self.get_range("eval", "clamp")? {
            config.clamp = ClampRange { lo, hi };
        }
        if let Some(v) = self.get("eval", "median_scale")? {
            config.median_scale = v;
        }
        Ok(config)
    }
}

/// Parses `lo:hi` ranges used by config and CLI flags.
pub fn parse_range(text: &str) -> Option<(f64, f64)> {
    let (lo, hi) = text.split_once(':')?;
    let lo: f64 = lo.trim().parse().ok()?;
    let hi: f64 = hi.trim().parse().ok()?;
    (lo < hi).then_some((lo, hi))
}
