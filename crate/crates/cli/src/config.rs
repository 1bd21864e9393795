//! Run configuration: TOML file, environment and flags.
//!
//! Precedence is flags > environment > file > defaults. Clap already folds the
//! `HF_*` variables into the matching flags, so this module only has to layer
//! the result over the file.

use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use hazardforge_core::backends::http::{EndpointConfig, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT};
use hazardforge_core::backends::stub::Injection;
use hazardforge_core::geometry::GeometryOverrides;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub max_trials: Option<u32>,
    pub stub: Option<bool>,
    pub injection: Option<String>,
    pub composite: Option<bool>,
    #[serde(default)]
    pub endpoints: EndpointSection,
    #[serde(default)]
    pub geometry: GeometryOverrides,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    pub editor: Option<String>,
    pub judge: Option<String>,
    pub answerer: Option<String>,
    pub token: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub model: Option<String>,
    pub concurrency: Option<usize>,
    pub retries: Option<u32>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Endpoint values as given on the command line (already merged with env).
#[derive(Debug, Clone, Default)]
pub struct EndpointFlags {
    pub editor: Option<String>,
    pub judge: Option<String>,
    pub answerer: Option<String>,
    pub token: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Endpoints {
    pub editor: Option<String>,
    pub judge: Option<String>,
    pub answerer: Option<String>,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

pub fn resolve_endpoints(flags: &EndpointFlags, file: &EndpointSection) -> Endpoints {
    let pick = |a: &Option<String>, b: &Option<String>| a.clone().or_else(|| b.clone()).filter(|s| !s.trim().is_empty());
    Endpoints {
        editor: pick(&flags.editor, &file.editor),
        judge: pick(&flags.judge, &file.judge),
        answerer: pick(&flags.answerer, &file.answerer),
        token: pick(&flags.token, &file.token),
        timeout: flags
            .timeout_ms
            .or(file.timeout_ms)
            .map_or(DEFAULT_TIMEOUT, Duration::from_millis),
        max_in_flight: flags.max_in_flight.or(file.max_in_flight).unwrap_or(DEFAULT_MAX_IN_FLIGHT),
    }
}

impl Endpoints {
    /// Parses one endpoint URL; `role` names it in the error.
    pub fn endpoint(&self, role: &str, url: Option<&String>) -> Result<EndpointConfig> {
        let Some(url) = url else {
            bail!("live mode needs a {role} endpoint (flag --{role}-url, env HF_{}_URL or [endpoints] {role} in the config file)", role.to_uppercase());
        };
        let cfg = EndpointConfig::parse(url).map_err(|e| anyhow::anyhow!("{role} endpoint: {e}"))?;
        Ok(cfg
            .with_token(self.token.clone())
            .with_timeout(self.timeout)
            .with_max_in_flight(self.max_in_flight))
    }
}

pub fn parse_injection(s: &str) -> Result<Injection> {
    Injection::parse(s).with_context(|| format!("bad injection schedule {s:?} (use off, always, first:N or rate:P)"))
}

/// Layers geometry flags over the file section.
pub fn resolve_geometry(flags: &GeometryOverrides, file: &GeometryOverrides) -> GeometryOverrides {
    GeometryOverrides {
        intrusion_half_width: flags.intrusion_half_width.or(file.intrusion_half_width),
        pad_width: flags.pad_width.or(file.pad_width),
        distance_band: flags.distance_band.or(file.distance_band),
    }
}
