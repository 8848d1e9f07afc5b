use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ServerError, ServerResult};

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_min_subset_size() -> usize {
    1
}

/// Server configuration, read from a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Registrations and ledgers live here. `None` keeps everything in memory.
    pub storage_dir: Option<PathBuf>,
    /// Static bearer token required on every route except /healthz.
    #[serde(default)]
    pub api_token: Option<String>,
    /// Used when a registration does not set its own.
    #[serde(default = "default_min_subset_size")]
    pub default_min_subset_size: usize,
    /// Fixed seed for query randomness. Only for tests and demos.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            storage_dir: None,
            api_token: None,
            default_min_subset_size: default_min_subset_size(),
            seed: None,
        }
    }
}

impl ServerConfig {
    pub fn from_json_file(path: &Path) -> ServerResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServerError::Malformed(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| ServerError::Malformed(format!("{}: {e}", path.display())))?;
        if cfg.default_min_subset_size == 0 {
            return Err(ServerError::Malformed("default_min_subset_size must be positive".into()));
        }
        Ok(cfg)
    }
}
