//! `farmctl.json`: bus endpoint, API bind address, file locations, embedded
//! simulator settings and control timing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::api::DEFAULT_BIND;
use crate::bus::SimBackendConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BusSection {
    /// `host:port` or `unix:/path`. With the embedded simulator this is
    /// optional and, when set, exposes the simulator on the bus.
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiSection {
    pub bind: String,
}

impl Default for ApiSection {
    fn default() -> Self {
        ApiSection {
            bind: DEFAULT_BIND.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    /// Wall-clock length of one control period.
    pub period_ms: u64,
    /// Simulated seconds per period for the embedded simulator.
    pub sim_dt_s: f64,
    /// Sim-time between forecast recomputations.
    pub forecast_every_s: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            period_ms: 1000,
            sim_dt_s: 1.0,
            forecast_every_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bus: BusSection,
    pub api: ApiSection,
    /// Recipe JSON; the default tomato recipe when absent.
    pub recipe_path: Option<PathBuf>,
    /// Compensation model JSON; readings stay uncorrected when absent.
    pub model_path: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub sim: SimBackendConfig,
    pub control: ControlSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bus: BusSection::default(),
            api: ApiSection::default(),
            recipe_path: None,
            model_path: None,
            data_dir: PathBuf::from("farm-data"),
            sim: SimBackendConfig::default(),
            control: ControlSection::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("config: {0}")]
    Invalid(String),
}

impl Config {
    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Config = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative_to(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.recipe_path {
            fix(p);
        }
        if let Some(p) = &mut self.model_path {
            fix(p);
        }
        fix(&mut self.data_dir);
        if let Some(e) = &mut self.bus.endpoint {
            if let Some(p) = e.strip_prefix("unix:") {
                let p = Path::new(p);
                if p.is_relative() {
                    *e = format!("unix:{}", base.join(p).display());
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.control.period_ms == 0 {
            return Err(ConfigError::Invalid("control.period_ms must be > 0".into()));
        }
        if !(self.control.sim_dt_s > 0.0 && self.control.sim_dt_s <= crate::chamber::MAX_DT) {
            return Err(ConfigError::Invalid(format!(
                "control.sim_dt_s must be in (0, {}]",
                crate::chamber::MAX_DT
            )));
        }
        if !(self.control.forecast_every_s > 0.0) {
            return Err(ConfigError::Invalid("control.forecast_every_s must be > 0".into()));
        }
        if let Some(e) = &self.bus.endpoint {
            e.parse::<crate::bus::Endpoint>().map_err(ConfigError::Invalid)?;
        }
        self.sim
            .initial_state
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("sim.initial_state: {e}")))
    }
}
