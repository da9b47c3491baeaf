use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "erm-checkpoint";
const VERSION: u32 = 1;

/// Versioned JSON envelope around any serializable parameter set. Floats are
/// written with shortest round-trip formatting so reloading is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub payload: serde_json::Value,
}

impl Checkpoint {
    pub fn new<T: Serialize>(kind: &str, value: &T) -> Result<Self> {
        Ok(Self { format: FORMAT.into(), version: VERSION, kind: kind.into(), payload: serde_json::to_value(value)? })
    }

    pub fn decode<T: DeserializeOwned>(&self, kind: &str) -> Result<T> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Input(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if self.kind != kind {
            return Err(Error::Input(format!("checkpoint holds `{}`, expected `{}`", self.kind, kind)));
        }
        Ok(serde_json::from_value(self.payload.clone())?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
