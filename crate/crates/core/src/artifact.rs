//! Atomic artifact writes and the run manifest that accompanies each artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to a temp file in the destination directory, then renames it
/// into place, so readers never observe a partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        })
    }
}

/// Machine-readable record of one stage invocation. Contains no timestamps so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seeds: BTreeMap<String, u64>,
    pub params: BTreeMap<String, serde_json::Value>,
    pub counts: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(stage: &str) -> Self {
        RunManifest {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    /// Records `dir/name` under its bare name, so manifests do not depend on
    /// where the output directory lives.
    pub fn output_in(&mut self, dir: &Path, name: &str) -> Result<&mut Self> {
        let mut d = FileDigest::of(&dir.join(name))?;
        d.path = PathBuf::from(name);
        self.outputs.push(d);
        Ok(self)
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn param(&mut self, name: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.params.insert(name.to_string(), v);
        self
    }

    pub fn count(&mut self, name: &str, n: u64) -> &mut Self {
        self.counts.insert(name.to_string(), n);
        self
    }

    /// Writes `<dir>/<stage>.manifest.json` atomically.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.stage));
        let mut json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        json.push(b'\n');
        write_atomic(&path, &json)?;
        Ok(path)
    }
}

/// Serializes items as JSON lines.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

/// Parses JSON lines, skipping blank lines. Errors carry the 1-based line.
pub fn from_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::parse(Some(i + 1), e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
