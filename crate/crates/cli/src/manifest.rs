//! Run manifests: a JSON record of the configuration, numerical settings
//! and a checksum for every file a command wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io;

pub const MANIFEST_NAME: &str = "manifest.json";

pub const SURROGATE_NOTE: &str =
    "PSFs other than `delta` are synthetic surrogates of the physical encoders; \
     CRB values are illustrative of trends, not of a specific device";

pub const PADDING_NOTE: &str =
    "PSFs are zero-padded to psf_pad x psf_pad and centred (extra row/column at the \
     bottom/right); measurements are the full linear convolution of the object with the padded PSF";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    /// Poisson background β applied to every measurement pixel (0 under
    /// Gaussian noise, where it plays no role).
    pub background: f64,
    pub psf_surrogate: bool,
    pub notes: Vec<String>,
    /// Diagonal loading actually used per inversion, keyed by case.
    pub epsilon_used: BTreeMap<String, f64>,
    /// Intensity per grey level of each 16-bit PGM preview, keyed by path.
    pub pgm_scale: BTreeMap<String, f64>,
    pub results: serde_json::Value,
    /// Per-stage wall times; recorded only on request because they make
    /// otherwise reproducible manifests differ between runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
    pub files: BTreeMap<String, FileRecord>,
}

impl RunManifest {
    pub fn new(
        command: impl Into<String>,
        config: &ExperimentConfig,
        background: f64,
        psf_surrogate: bool,
    ) -> Self {
        let mut notes = vec![PADDING_NOTE.to_string()];
        if psf_surrogate {
            notes.push(SURROGATE_NOTE.to_string());
        }
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            config: config.clone(),
            background,
            psf_surrogate,
            notes,
            epsilon_used: BTreeMap::new(),
            pgm_scale: BTreeMap::new(),
            results: serde_json::Value::Null,
            timings: None,
            files: BTreeMap::new(),
        }
    }

    /// Checksum every file under `dir` (except the manifest itself) and
    /// write the manifest. Call once, after all outputs exist.
    pub fn finalize(mut self, dir: &Path) -> Result<()> {
        self.files = collect_files(dir)?;
        let mut json =
            serde_json::to_string_pretty(&self).map_err(|e| CliError::Config(e.to_string()))?;
        json.push('\n');
        io::write_file(&dir.join(MANIFEST_NAME), json.as_bytes())
    }
}

fn relative_name(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, FileRecord>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        let kind = entry.file_type().map_err(|e| CliError::io(&path, e))?;
        if kind.is_dir() {
            walk(root, &path, out)?;
        } else {
            let name = relative_name(root, &path);
            if name == MANIFEST_NAME {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            out.insert(
                name,
                FileRecord {
                    sha256: io::sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                },
            );
        }
    }
    Ok(())
}

/// Checksums of every file under `dir` except the top-level manifest, keyed
/// by `/`-separated relative path.
pub fn collect_files(dir: &Path) -> Result<BTreeMap<String, FileRecord>> {
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Check that the manifest in `dir` lists exactly the files present, each
/// with a matching checksum.
pub fn check_manifest(dir: &Path) -> Result<()> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let listed: BTreeMap<String, FileRecord> = serde_json::from_value(value["files"].clone())
        .map_err(|e| CliError::Config(format!("{}: files: {e}", path.display())))?;
    let actual = collect_files(dir)?;
    if listed != actual {
        let missing: Vec<_> = actual.keys().filter(|k| !listed.contains_key(*k)).collect();
        let stale: Vec<_> = listed
            .iter()
            .filter(|(k, v)| actual.get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        return Err(CliError::VerifyFailed(format!(
            "manifest mismatch: unlisted {missing:?}, missing or changed {stale:?}"
        )));
    }
    Ok(())
}
