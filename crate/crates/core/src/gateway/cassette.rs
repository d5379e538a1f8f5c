use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GatewayError;

const CASSETTE_VERSION: u32 = 1;

/// Recorded responses keyed by request hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub version: u32,
    pub entries: BTreeMap<String, serde_json::Value>,
}

impl Cassette {
    pub fn new() -> Self {
        Self {
            version: CASSETTE_VERSION,
            entries: BTreeMap::new(),
        }
    }

    fn err(path: &Path, message: impl ToString) -> GatewayError {
        GatewayError::Cassette {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let bytes = std::fs::read(path).map_err(|e| Self::err(path, e))?;
        let c: Cassette = serde_json::from_slice(&bytes).map_err(|e| Self::err(path, e))?;
        if c.version != CASSETTE_VERSION {
            return Err(Self::err(
                path,
                format!("unsupported version {}", c.version),
            ));
        }
        Ok(c)
    }

    /// Loads `path`, or starts empty when it does not exist yet.
    pub fn load_or_new(path: &Path) -> Result<Self, GatewayError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let bytes = serde_json::to_vec_pretty(self).expect("cassette serializes");
        crate::binfmt::write_atomic(path, &bytes).map_err(|e| Self::err(path, e))
    }
}

pub(crate) struct CassetteFile {
    pub path: PathBuf,
    pub cassette: Cassette,
}
