//! Run manifests and atomic output directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{io_at, CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Full config snapshot (empty for commands without one).
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Records the digest of an input; fails naming the path if unreadable.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn time(&mut self, stage: &str, start: Instant) {
        self.timings.insert(stage.into(), start.elapsed().as_secs_f64());
    }
}

/// A hidden sibling directory that becomes the output directory on commit.
/// Dropped without commit, it is removed and nothing is left behind.
pub struct Staging {
    dir: tempfile::TempDir,
    out: PathBuf,
}

impl Staging {
    pub fn begin(out: &Path, force: bool) -> Result<Self> {
        if out.exists() && !force {
            return Err(CliError::Msg(format!(
                "{} already exists; pass --force to replace it",
                out.display()
            )));
        }
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(io_at(&parent))?;
        let dir = tempfile::Builder::new()
            .prefix(".aq-staging-")
            .tempdir_in(&parent)
            .map_err(io_at(&parent))?;
        Ok(Staging {
            dir,
            out: out.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn commit(self, mut manifest: Manifest) -> Result<()> {
        let mut files = Vec::new();
        collect_files(self.dir.path(), &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(self.dir.path()).expect("inside staging dir");
            manifest.outputs.push(FileDigest {
                path: rel.display().to_string(),
                sha256: sha256_file(&f)?,
            });
        }
        let mpath = self.dir.path().join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Msg(e.to_string()))?;
        fs::write(&mpath, text + "\n").map_err(io_at(&mpath))?;

        if self.out.exists() {
            if self.out.is_dir() {
                fs::remove_dir_all(&self.out).map_err(io_at(&self.out))?;
            } else {
                fs::remove_file(&self.out).map_err(io_at(&self.out))?;
            }
        }
        let staged = self.dir.keep();
        fs::rename(&staged, &self.out).map_err(io_at(&self.out))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let path = entry.map_err(io_at(dir))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
