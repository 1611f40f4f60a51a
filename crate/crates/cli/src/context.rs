use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;
use textrich_core::artifact::{write_atomic, RunManifest};
use textrich_core::{Error, LlmError, RunConfig};

/// Missing or contradictory command-line input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Bad input content detected by the CLI itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InvalidInput(pub String);

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 64;
        }
        if cause.is::<InvalidInput>() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return if err.is_validation() { 1 } else { 2 };
        }
        if let Some(err) = cause.downcast_ref::<LlmError>() {
            return if err.is_validation() { 1 } else { 2 };
        }
    }
    2
}

pub struct Context {
    pub config: RunConfig,
    pub out: Option<PathBuf>,
    pub config_path: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Context {
    pub fn load(config: Option<&Path>, out: Option<PathBuf>, jobs: Option<usize>) -> anyhow::Result<Self> {
        let cfg = match config {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                let is_toml = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
                let cfg = if is_toml {
                    let c: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
                        line: None,
                        message: format!("{}: {e}", p.display()),
                    })?;
                    c.validate()?;
                    c
                } else {
                    RunConfig::from_json(&text).with_context(|| p.display().to_string())?
                };
                tracing::info!(config = %p.display(), "loaded run configuration");
                cfg
            }
        };
        let out = out.or_else(|| cfg.paths.output_dir.clone());
        Ok(Context {
            config: cfg,
            out,
            config_path: config.map(Path::to_path_buf),
            jobs,
        })
    }

    /// The output directory, created if needed.
    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        let dir = self
            .out
            .as_deref()
            .ok_or_else(|| UsageError("no output directory: pass --out or set paths.output_dir".into()))?;
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(dir)
    }

    pub fn manifest(&self, stage: &str) -> anyhow::Result<RunManifest> {
        let mut m = RunManifest::new(stage);
        if let Some(p) = &self.config_path {
            m.input(p)?;
        }
        Ok(m)
    }
}

/// A path from a flag, else from the config, else a usage error.
pub fn require_path(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| UsageError(format!("{what} is required (flag or config)")).into())
}

/// Sampling stages refuse to run without an explicit seed.
pub fn require_seed(flag: Option<u64>, config: Option<u64>, section: &str) -> anyhow::Result<u64> {
    flag.or(config)
        .ok_or_else(|| UsageError(format!("--seed is required (or set {section}.seed)")).into())
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, bytes)?;
    manifest.output_in(dir, name)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
    manifest: &mut RunManifest,
) -> anyhow::Result<PathBuf> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(dir, name, &bytes, manifest)
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?)
}

/// Non-empty trimmed lines.
pub fn read_id_list(path: &Path) -> anyhow::Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
