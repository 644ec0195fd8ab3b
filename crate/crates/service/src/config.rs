use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Service settings, read from a TOML file. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// `mock:<script>`, `replay:<log>` or an http(s) base URL.
    pub backend: Option<String>,
    pub model: Option<String>,
    /// API key for the model backend.
    pub backend_token: Option<String>,
    /// Bearer token clients must present; no auth when unset.
    pub auth_token: Option<String>,
    pub store_path: PathBuf,
    pub webhook_url: Option<String>,
    pub host: String,
    pub port: u16,
    /// Weekly bundles loaded at startup (JSONL from `ingest` or `synth`).
    pub bundles_path: Option<PathBuf>,
    pub format_path: Option<PathBuf>,
    /// Events between snapshots.
    pub snapshot_every: u64,
    /// Hour of day used to pick openers when a request omits it.
    pub default_local_hour: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            backend: None,
            model: None,
            backend_token: None,
            auth_token: None,
            store_path: PathBuf::from("mhfa-store"),
            webhook_url: None,
            host: "127.0.0.1".into(),
            port: 8080,
            bundles_path: None,
            format_path: None,
            snapshot_every: 100,
            default_local_hour: 12,
        }
    }
}

impl ServiceConfig {
    pub fn from_path(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let c: ServiceConfig = toml::from_str("port = 9000\nauth_token = \"t\"").unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.snapshot_every, 100);
        assert!(toml::from_str::<ServiceConfig>("prot = 1").is_err());
    }
}
