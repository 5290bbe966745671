//! Output directories and their `provenance.json` manifests.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rawlens_core::seed::digest_hex;
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, shown_as: String) -> Result<Self> {
        let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self { path: shown_as, sha256: digest_hex(&data), bytes: data.len() as u64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub overrides: Vec<String>,
    pub seed: u64,
    /// The effective configuration after overrides, as TOML.
    pub config: String,
    pub config_digest: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// An output directory being filled by one command.
#[derive(Debug)]
pub struct RunDir {
    dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
}

impl RunDir {
    /// Refuses a non-empty directory unless `force` is set.
    pub fn create(dir: &Path, force: bool) -> Result<Self> {
        if dir.exists() {
            let non_empty = std::fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .next()
                .is_some();
            if non_empty && !force {
                bail!("output directory {} is not empty; pass --force to overwrite", dir.display());
            }
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of an output file, creating parent folders and recording it.
    pub fn output(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.join(rel.as_ref());
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        if !self.outputs.contains(&p) {
            self.outputs.push(p.clone());
        }
        Ok(p)
    }

    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        let d = FileDigest::of(path, path.display().to_string())?;
        self.inputs.push(d);
        Ok(())
    }

    /// An input identified by the digest of its serialized description.
    pub fn input_digest(&mut self, label: &str, bytes: &[u8]) {
        self.inputs.push(FileDigest { path: label.into(), sha256: digest_hex(bytes), bytes: bytes.len() as u64 });
    }

    pub fn finish(self, command: &str, overrides: &[String], seed: u64, config_toml: String) -> Result<Provenance> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p).display().to_string();
            outputs.push(FileDigest::of(p, rel)?);
        }
        let prov = Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().collect(),
            overrides: overrides.to_vec(),
            seed,
            config_digest: digest_hex(config_toml.as_bytes()),
            config: config_toml,
            inputs: self.inputs,
            outputs,
        };
        let path = self.dir.join(MANIFEST_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(&prov)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(prov)
    }
}

pub fn read_provenance(dir: &Path) -> Result<Provenance> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_non_empty_directories_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let mut run = RunDir::create(&out, false).unwrap();
        std::fs::write(run.output("a/b.txt").unwrap(), "hi").unwrap();
        let p = run.finish("test", &[], 3, "seed = 3\n".into()).unwrap();
        assert_eq!(p.outputs[0].path, "a/b.txt");
        assert_eq!(p.outputs[0].bytes, 2);
        assert_eq!(read_provenance(&out).unwrap(), p);
        assert!(RunDir::create(&out, false).is_err());
        assert!(RunDir::create(&out, true).is_ok());
    }
}
