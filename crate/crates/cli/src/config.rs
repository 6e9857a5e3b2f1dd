use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use finegrain_core::attribution::{EngineConfig, Tau};
use finegrain_core::baselines::AttnVariant;
use finegrain_core::methods::MethodParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

/// Contents of a TOML configuration file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub addr: Option<String>,
    pub k: Option<usize>,
    pub tau: Option<Tau>,
    pub theta: Option<f64>,
    pub window: Option<usize>,
    pub variant: Option<AttnVariant>,
    pub layer: Option<usize>,
}

impl FileConfig {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            k: self.k,
            tau: self.tau,
            theta: self.theta,
            window: self.window,
            variant: self.variant,
            layer: self.layer,
        }
    }
}

pub fn load_config(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Hyperparameters a request, a flag or a config file may set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Tau>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<AttnVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
}

/// Fully resolved hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub k: usize,
    pub tau: Tau,
    pub theta: f64,
    pub window: usize,
    pub variant: AttnVariant,
    pub layer: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            k: 2,
            tau: Tau::Finite(2),
            theta: 0.0,
            window: 8,
            variant: AttnVariant::Full,
            layer: None,
        }
    }
}

impl Settings {
    /// `self` with every value present in `o` replaced.
    pub fn apply(&self, o: &Overrides) -> Settings {
        Settings {
            k: o.k.unwrap_or(self.k),
            tau: o.tau.unwrap_or(self.tau),
            theta: o.theta.unwrap_or(self.theta),
            window: o.window.unwrap_or(self.window),
            variant: o.variant.unwrap_or(self.variant),
            layer: o.layer.or(self.layer),
        }
    }

    /// Built-in defaults, then the file, then the flags.
    pub fn resolve(file: Option<&FileConfig>, flags: &Overrides) -> Settings {
        let base = match file {
            Some(f) => Settings::default().apply(&f.overrides()),
            None => Settings::default(),
        };
        base.apply(flags)
    }

    /// The first invalid field and why, if any.
    pub fn check(&self) -> Option<(&'static str, String)> {
        if self.k == 0 {
            return Some(("k", "must be at least 1".into()));
        }
        if self.tau == Tau::Finite(0) {
            return Some(("tau", "must be at least 1 or \"inf\"".into()));
        }
        if !self.theta.is_finite() {
            return Some(("theta", "must be finite".into()));
        }
        if self.window == 0 {
            return Some(("window", "must be at least 1".into()));
        }
        None
    }

    pub fn params(&self) -> MethodParams {
        MethodParams {
            engine: EngineConfig {
                k: self.k,
                tau: self.tau,
                citation_threshold: self.theta,
            },
            window: self.window,
            variant: self.variant,
            layer: self.layer,
        }
    }
}
