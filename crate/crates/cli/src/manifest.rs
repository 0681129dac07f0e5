use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    /// Hex SHA-256 of the file, or of the sorted `(relative path, file hash)`
    /// listing for a directory.
    pub sha256: String,
}

/// Everything needed to re-run a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self, Failure> {
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256: content_hash(path)?,
        });
        Ok(self)
    }

    pub fn output(mut self, path: PathBuf) -> Self {
        self.outputs.push(path);
        self
    }

    /// Creates `dir` and writes the manifest into it.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::Data(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Failure::io(&path, e))?;
        Ok(path)
    }
}

fn hash_file(path: &Path) -> Result<String, Failure> {
    let mut file = fs::File::open(path).map_err(|e| Failure::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Failure::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Failure> {
    for entry in fs::read_dir(dir).map_err(|e| Failure::io(dir, e))? {
        let path = entry.map_err(|e| Failure::io(dir, e))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 of a file, or of a directory tree.
pub fn content_hash(path: &Path) -> Result<String, Failure> {
    if !path.is_dir() {
        return hash_file(path);
    }
    let mut files = Vec::new();
    list_files(path, path, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(hash_file(&path.join(&rel))?.as_bytes());
        hasher.update(b"\n");
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            content_hash(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn directory_hash_tracks_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a"), "1").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/b"), "2").unwrap();
        let before = content_hash(dir.path()).unwrap();
        assert_eq!(before, content_hash(dir.path()).unwrap());
        fs::write(dir.path().join("sub/b"), "3").unwrap();
        assert_ne!(before, content_hash(dir.path()).unwrap());
    }
}
