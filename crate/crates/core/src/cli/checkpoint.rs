//! Checkpoint files for long replica runs.
//!
//! A checkpoint is one JSON header line followed by the serialized
//! [`ReplicaSummary`]. The header carries the format version, the config hash
//! of the run and the SHA-256 of the payload bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::error::{Error, Result};
use crate::estimators::ReplicaSummary;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "polymerlab-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config_hash: String,
    sha256: String,
    replicas: usize,
}

/// Writes atomically (temporary file plus rename).
pub fn save(path: &Path, summary: &ReplicaSummary, config_hash: &str) -> Result<()> {
    let payload = serde_json::to_string(summary)?;
    let header = Header {
        format: FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_string(),
        sha256: hex(&Sha256::digest(payload.as_bytes())),
        replicas: summary.replicas(),
    };
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        writeln!(f, "{}", serde_json::to_string(&header)?)?;
        f.write_all(payload.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint written for the run with `config_hash`.
pub fn load(path: &Path, config_hash: &str) -> Result<ReplicaSummary> {
    let text = fs::read_to_string(path)?;
    let Some((head, payload)) = text.split_once('\n') else {
        return Err(Error::Checkpoint(format!("{}: missing header line", path.display())));
    };
    let header: Header = serde_json::from_str(head)
        .map_err(|e| Error::Checkpoint(format!("{}: unreadable header: {e}", path.display())))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint version {} cannot be read by this build (version {})",
            path.display(),
            header.version,
            CHECKPOINT_VERSION
        )));
    }
    let actual = hex(&Sha256::digest(payload.as_bytes()));
    if actual != header.sha256 {
        return Err(Error::Checkpoint(format!(
            "{}: checksum mismatch (header {}, payload {actual})",
            path.display(),
            header.sha256
        )));
    }
    if header.config_hash != config_hash {
        return Err(Error::Checkpoint(format!(
            "{}: written for config {}, current config is {config_hash}",
            path.display(),
            header.config_hash
        )));
    }
    let summary: ReplicaSummary = serde_json::from_str(payload)?;
    let contiguous = summary.records.iter().enumerate().all(|(i, r)| r.replica == i as u64);
    if summary.replicas() != header.replicas || !contiguous {
        return Err(Error::Checkpoint(format!(
            "{}: replica records are not 0..{}",
            path.display(),
            header.replicas
        )));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvModel;
    use crate::estimators::{simulate, EngineConfig};
    use crate::walk::WalkKernel;

    fn summary() -> ReplicaSummary {
        let cfg = EngineConfig::new(WalkKernel::srw(2).unwrap(), EnvModel::gaussian(), 0.7, 3, 8)
            .with_levels(vec![1.5, 3.0])
            .with_times(vec![4, 8]);
        simulate(&cfg, 0..12).unwrap()
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let s = summary();
        save(&path, &s, "abc").unwrap();
        assert_eq!(load(&path, "abc").unwrap(), s);
        assert!(matches!(load(&path, "other"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corruption_and_versions_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        save(&path, &summary(), "abc").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"replica\":3", "\"replica\":4", 1);
        fs::write(&path, tampered).unwrap();
        let e = load(&path, "abc").unwrap_err();
        assert!(e.to_string().contains("checksum"));
        assert_eq!(e.exit_code(), 3);

        let bumped = text.replacen("\"version\":1", "\"version\":7", 1);
        fs::write(&path, bumped).unwrap();
        let e = load(&path, "abc").unwrap_err().to_string();
        assert!(e.contains("version 7") && e.contains("version 1"), "{e}");
    }
}
