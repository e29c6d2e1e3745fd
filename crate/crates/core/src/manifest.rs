//! Run manifests: one `key = value` pair per line, in insertion order.

use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

/// SHA-256 of a file's contents, hex encoded.
pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

impl Manifest {
    /// Starts a manifest with the stage name, timestamp, crate version,
    /// seed, config hash and the full config.
    pub fn for_stage(stage: &str, config: &RunConfig) -> Self {
        let mut m = Manifest::default();
        m.push("stage", stage);
        m.push("timestamp", chrono::Utc::now().to_rfc3339());
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("parallel", cfg!(feature = "parallel"));
        m.push("seed", config.seed);
        m.push("config_hash", config.hash());
        for line in config.to_toml().lines().filter(|l| !l.trim().is_empty()) {
            m.push("config", line.trim());
        }
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        self.entries.push((key.to_string(), value));
    }

    /// Records the path and content hash of an input or output file.
    pub fn file(&mut self, role: &str, path: &Path) -> Result<()> {
        let hash = hash_file(path)?;
        self.push(&format!("{role}.{}", file_label(path)), format!("{} sha256:{hash}", path.display()));
        Ok(())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))?;
        Ok(path.to_path_buf())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Data(format!("manifest line {}: expected `key = value`", i + 1)))?;
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut m = Manifest::for_stage("train", &RunConfig::default());
        m.push("epoch.1", "train_loss=1.5 val_auc=0.7");
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("stage"), Some("train"));
        assert_eq!(back.get("seed"), Some("0"));
        assert!(Manifest::parse("no separator").is_err());
    }

    #[test]
    fn file_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            hash_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut m = Manifest::default();
        m.file("output", &p).unwrap();
        assert!(m.get("output.a.txt").unwrap().ends_with("sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"));
    }
}
