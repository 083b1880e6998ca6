use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const SNAPSHOT_NAME: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub crc32: u32,
}

/// Index of one invocation's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The resolved configuration, as also written to `config.toml`.
    pub config: String,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, snapshot: String) -> Self {
        Self {
            tool: "labelinst".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: snapshot,
            files: Vec::new(),
        }
    }

    /// Records `path`, which must lie under `out_dir`.
    pub fn add(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.files.push(FileEntry {
            path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
            bytes: bytes.len() as u64,
            crc32: crc32fast::hash(&bytes),
        });
        Ok(())
    }

    /// Writes the snapshot and the manifest; returns the manifest path.
    pub fn write(mut self, out_dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        let snapshot = out_dir.join(SNAPSHOT_NAME);
        write_file(&snapshot, self.config.as_bytes())?;
        self.add(out_dir, &snapshot)?;
        for p in outputs {
            self.add(out_dir, p)?;
        }
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let path = out_dir.join(MANIFEST_NAME);
        write_file(&path, serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("sub/a.txt");
        write_file(&f, b"hello").unwrap();
        let path = Manifest::new("test", "seed = 1\n".into()).write(dir.path(), &[f]).unwrap();
        let m = Manifest::load(&path).unwrap();
        let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["config.toml", "sub/a.txt"]);
        assert_eq!(m.files[1].bytes, 5);
        assert_eq!(m.files[1].crc32, crc32fast::hash(b"hello"));
    }
}
