//! Optional `repo-review.json`: the same keys as the command-line flags,
//! with flags taking precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;

pub const CONFIG_NAME: &str = "repo-review.json";

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub mode: Option<String>,
    pub model: Option<String>,
    pub out: Option<PathBuf>,
    pub max_files: Option<usize>,
    pub max_file_kb: Option<u64>,
    pub keep_workspace: Option<bool>,
    pub replay: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub offline: Option<bool>,
    pub remote_base: Option<String>,
    pub parallelism: Option<usize>,
    pub prices: Option<PathBuf>,
    pub exclude: Option<Vec<String>>,
    pub port: Option<u16>,
    pub host: Option<String>,
    pub artifact_root: Option<PathBuf>,
    pub modes: Option<String>,
    pub replay_dir: Option<PathBuf>,
}

/// Reads `explicit` if given, else `repo-review.json` in the working
/// directory when present.
pub fn load(explicit: Option<&Path>) -> Result<FileConfig, String> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = PathBuf::from(CONFIG_NAME);
            if !p.is_file() {
                return Ok(FileConfig::default());
            }
            p
        }
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}
