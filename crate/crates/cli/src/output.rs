//! Deterministic artifact writing: sorted-key JSON, CSV with a hash line,
//! and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty JSON with keys sorted at every level (serde_json maps are
/// ordered) and a trailing newline.
pub fn to_sorted_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub artifact_version: String,
    pub wall_clock_seconds: f64,
    pub stages: Vec<Stage>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Output directory owned by one run; records every file it writes.
pub struct OutDir {
    pub root: PathBuf,
    pub hash: String,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(root: PathBuf, hash: String) -> std::io::Result<Self> {
        fs::create_dir_all(&root)?;
        Ok(Self { root, hash, written: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.root.join(name), bytes)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    /// JSON object with the config hash merged in as `config_hash`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut v = serde_json::to_value(value).map_err(std::io::Error::other)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("config_hash".into(), self.hash.clone().into());
        }
        let text = to_sorted_json(&v).map_err(std::io::Error::other)?;
        self.put(name, text.as_bytes())
    }

    /// CSV body preceded by a `# config_hash=…` line.
    pub fn csv(&mut self, name: &str, body: &[u8]) -> std::io::Result<()> {
        let mut bytes = format!("# config_hash={}\n", self.hash).into_bytes();
        bytes.extend_from_slice(body);
        self.put(name, &bytes)
    }

    pub fn binary(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        self.put(name, bytes)
    }

    /// Written last; lists only files that exist.
    pub fn manifest(&mut self, command: &str, seconds: f64, stages: Vec<Stage>) -> std::io::Result<RunManifest> {
        let outputs = self.written.iter().filter(|w| self.root.join(w).is_file()).cloned().collect();
        let m = RunManifest {
            command: command.into(),
            config_hash: self.hash.clone(),
            artifact_version: ARTIFACT_VERSION.into(),
            wall_clock_seconds: seconds,
            stages,
            outputs,
        };
        let text = to_sorted_json(&m).map_err(std::io::Error::other)?;
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(m)
    }
}
