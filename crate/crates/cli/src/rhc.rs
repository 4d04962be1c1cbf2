//! Right heart catheterization preset and data cache.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BootstrapSection, DataSection, EstimateSection, OutputSection};
use crate::error::{CliError, Result};

pub const BUILTIN_PRESET: &str = include_str!("../presets/rhc-v1.toml");
pub const DATA_ENV: &str = "MIE_RHC_CSV";
const FILE_NAME: &str = "rhc.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetMeta {
    pub version: String,
    pub url: String,
    #[serde(default)]
    pub sha256: String,
    pub expected_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhcPreset {
    pub preset: PresetMeta,
    pub data: DataSection,
    pub estimate: EstimateSection,
    pub bootstrap: BootstrapSection,
    pub output: OutputSection,
}

impl RhcPreset {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PRESET).expect("built-in preset parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("preset: {}", e.message().replace('\n', " "))))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::parse(&text)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn digest_path(cache_dir: &Path) -> PathBuf {
    cache_dir.join(format!("{FILE_NAME}.sha256"))
}

fn check_digest(actual: &str, preset: &PresetMeta, recorded: Option<&str>) -> Result<()> {
    let instructions = "delete the cached copy to refetch, or pin the new digest in a custom preset";
    if !preset.sha256.is_empty() && actual != preset.sha256 {
        return Err(CliError::Digest(format!(
            "RHC data digest {actual} does not match preset {} digest {}; upstream file changed? {instructions}",
            preset.version, preset.sha256
        )));
    }
    if let Some(r) = recorded {
        if actual != r {
            return Err(CliError::Digest(format!(
                "RHC data digest {actual} does not match recorded digest {r}; {instructions}"
            )));
        }
    }
    Ok(())
}

fn count_rows(bytes: &[u8]) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let mut n = 0;
    for r in rdr.records() {
        r.map_err(|e| CliError::Fetch(format!("downloaded file is not valid CSV: {e}")))?;
        n += 1;
    }
    Ok(n)
}

/// Returns the cached RHC CSV, downloading it first when absent. The first
/// download records its digest; later calls verify against it and never
/// touch the network.
pub fn fetch_rhc(cache_dir: &Path, preset: &PresetMeta) -> Result<PathBuf> {
    let target = cache_dir.join(FILE_NAME);
    let recorded = std::fs::read_to_string(digest_path(cache_dir)).ok().map(|s| s.trim().to_string());
    if target.exists() {
        let actual = sha256_file(&target)?;
        check_digest(&actual, preset, recorded.as_deref())?;
        return Ok(target);
    }
    let resp = ureq::get(&preset.url)
        .timeout(std::time::Duration::from_secs(60))
        .call()
        .map_err(|e| CliError::Fetch(format!("cannot download {}: {e}", preset.url)))?;
    let mut bytes = Vec::new();
    resp.into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::Fetch(format!("reading {}: {e}", preset.url)))?;
    store(cache_dir, &bytes, preset)
}

/// Verifies and caches downloaded bytes.
pub fn store(cache_dir: &Path, bytes: &[u8], preset: &PresetMeta) -> Result<PathBuf> {
    let actual = sha256_hex(bytes);
    check_digest(&actual, preset, None)?;
    let rows = count_rows(bytes)?;
    if rows != preset.expected_rows {
        return Err(CliError::Fetch(format!("downloaded file has {rows} rows, expected {}", preset.expected_rows)));
    }
    std::fs::create_dir_all(cache_dir).map_err(|e| CliError::io(cache_dir.display(), e))?;
    let target = cache_dir.join(FILE_NAME);
    let tmp = cache_dir.join(format!("{FILE_NAME}.partial"));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(tmp.display(), e))?;
    std::fs::rename(&tmp, &target).map_err(|e| CliError::io(target.display(), e))?;
    let dp = digest_path(cache_dir);
    std::fs::write(&dp, format!("{actual}\n")).map_err(|e| CliError::io(dp.display(), e))?;
    Ok(target)
}

/// `$XDG_CACHE_HOME/mie`, else `$HOME/.cache/mie`, else `./.mie-cache`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(d) = std::env::var_os("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(d).join("mie");
    }
    if let Some(h) = std::env::var_os("HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(h).join(".cache").join("mie");
    }
    PathBuf::from(".mie-cache")
}

/// Finds a local copy without touching the network: an explicit path, then
/// the environment variable, then the cache.
pub fn locate_local(explicit: Option<&Path>, cache_dir: &Path) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| Some(cache_dir.join(FILE_NAME)).filter(|p| p.exists()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(sha: &str, rows: usize) -> PresetMeta {
        PresetMeta { version: "t".into(), url: "http://127.0.0.1:9/none".into(), sha256: sha.into(), expected_rows: rows }
    }

    #[test]
    fn builtin_preset_has_65_design_columns() {
        let p = RhcPreset::builtin();
        assert_eq!(p.data.expected_design_columns, Some(65));
        assert_eq!(p.preset.expected_rows, 5735);
        assert_eq!(p.data.covariates.len(), 50);
    }

    #[test]
    fn warm_cache_skips_network_and_checks_digest() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = b"a,b\n1,2\n3,4\n";
        let m = meta("", 2);
        let p = store(dir.path(), bytes, &m).unwrap();
        // The url is unreachable, so success means no download was attempted.
        assert_eq!(fetch_rhc(dir.path(), &m).unwrap(), p);
        std::fs::write(&p, b"a,b\n9,9\n3,4\n").unwrap();
        assert_eq!(fetch_rhc(dir.path(), &m).unwrap_err().class(), "digest");
    }

    #[test]
    fn pinned_digest_and_row_count_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = b"a\n1\n";
        assert_eq!(store(dir.path(), bytes, &meta("00", 1)).unwrap_err().class(), "digest");
        assert_eq!(store(dir.path(), bytes, &meta("", 7)).unwrap_err().class(), "fetch");
        assert!(store(dir.path(), bytes, &meta(&sha256_hex(bytes), 1)).is_ok());
    }
}
