//! TOML run configuration. Every field has a default, so an empty file is valid.
//!
//! ```toml
//! [rounding]
//! policy = "rotation"
//! every = 1
//!
//! [four]
//! k = 2
//! mode = "proportional"
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sim::SimSpec;
use super::HarnessError;
use crate::four::FourConfig;
use crate::rounding::{PolicyKind, ResidualPolicy};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub rounding: PolicyKind,
    pub four: FourConfig,
}

impl Config {
    pub fn from_toml(text: &str, file: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config {
            file: file.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&read(path)?, &path.display().to_string())
    }

    /// A fresh residual policy; every method run gets its own.
    pub fn policy(&self) -> ResidualPolicy {
        ResidualPolicy::new(self.rounding.clone())
    }
}

impl SimSpec {
    pub fn from_toml(text: &str, file: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config {
            file: file.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&read(path)?, &path.display().to_string())
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}
