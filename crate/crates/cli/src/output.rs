//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Writes artifacts under one root and remembers what was written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Absolute path of a relative artifact name; refuses names that would
    /// escape the root.
    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            bail!("artifact name `{name}` must be a plain relative path");
        }
        Ok(self.root.join(rel))
    }

    /// Path for an artifact the caller writes itself; parents are created
    /// and the name is recorded.
    pub fn file(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.path(name)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.register(name);
        Ok(path)
    }

    fn register(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.file(name)?;
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub recipe: String,
    pub seed: u64,
    /// `complete`, or `partial` when a stage failed.
    pub status: &'static str,
    pub error: Option<String>,
    pub files: Vec<String>,
    pub config: Value,
}

/// Master-seed derivation: every stochastic component gets its own stream.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a of the label mixed into the master seed, finished with splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_cannot_escape_root() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        assert!(out.write("../x", "a").is_err());
        assert!(out.write("/etc/x", "a").is_err());
        out.write("sub/a.txt", "a").unwrap();
        out.write("sub/a.txt", "b").unwrap();
        assert_eq!(out.files(), ["sub/a.txt"]);
    }

    #[test]
    fn derived_seeds_differ_by_label_and_master() {
        assert_eq!(derive_seed(1, "init"), derive_seed(1, "init"));
        assert_ne!(derive_seed(1, "init"), derive_seed(1, "split"));
        assert_ne!(derive_seed(1, "init"), derive_seed(2, "init"));
    }
}
