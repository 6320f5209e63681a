//! Content-addressed stage cache.
//!
//! Each stage output lives in `<root>/<stage>/<key>/`, where the key hashes
//! every input of the stage. Work happens in `<root>/<stage>/.partial-<key>/`
//! and is published with a single rename, so readers never see a half-written
//! artifact and an interrupted stage resumes from its partial directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const CACHE_ENV: &str = "CDBENCH_CACHE";
const DEFAULT_ROOT: &str = ".cdbench-cache";

/// Bumped whenever a stage's output format or semantics change.
pub const STAGE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Datasets,
    Classifiers,
    Models,
    Reports,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Datasets => "datasets",
            Stage::Classifiers => "classifiers",
            Stage::Models => "models",
            Stage::Reports => "reports",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cache {
    pub root: PathBuf,
}

/// SHA-256 over the canonical JSON of `value`, tagged with the stage.
pub fn stage_key<T: Serialize>(stage: Stage, value: &T) -> Result<String> {
    let body = serde_json::to_string(&(stage.dir_name(), STAGE_VERSION, value))?;
    Ok(hex::encode(Sha256::digest(body.as_bytes())))
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Root from `CDBENCH_CACHE`, else `.cdbench-cache` in the working directory.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(p) if !p.is_empty() => Self::new(p),
            _ => Self::new(DEFAULT_ROOT),
        }
    }

    pub fn final_dir(&self, stage: Stage, key: &str) -> PathBuf {
        self.root.join(stage.dir_name()).join(key)
    }

    pub fn partial_dir(&self, stage: Stage, key: &str) -> PathBuf {
        self.root.join(stage.dir_name()).join(format!(".partial-{key}"))
    }

    pub fn lookup(&self, stage: Stage, key: &str) -> Option<PathBuf> {
        let d = self.final_dir(stage, key);
        d.is_dir().then_some(d)
    }

    /// Working directory for a stage, created if missing. Existing contents
    /// are kept so the stage can resume.
    pub fn begin(&self, stage: Stage, key: &str) -> Result<PathBuf> {
        let d = self.partial_dir(stage, key);
        fs::create_dir_all(&d).map_err(|e| HarnessError::io(&d, e))?;
        Ok(d)
    }

    /// Discards a partial directory whose contents cannot be resumed.
    pub fn reset(&self, stage: Stage, key: &str) -> Result<PathBuf> {
        let d = self.partial_dir(stage, key);
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| HarnessError::io(&d, e))?;
        }
        self.begin(stage, key)
    }

    /// Moves the partial directory into place. If another writer published
    /// the same key first, its copy wins and ours is dropped.
    pub fn publish(&self, stage: Stage, key: &str) -> Result<PathBuf> {
        let from = self.partial_dir(stage, key);
        let to = self.final_dir(stage, key);
        if to.is_dir() {
            let _ = fs::remove_dir_all(&from);
            return Ok(to);
        }
        match fs::rename(&from, &to) {
            Ok(()) => Ok(to),
            Err(_) if to.is_dir() => {
                let _ = fs::remove_dir_all(&from);
                Ok(to)
            }
            Err(e) => Err(HarnessError::io(&to, e)),
        }
    }

    /// Writes `bytes` to `path` through a temporary sibling and a rename.
    pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
        fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_stage_and_content() {
        let a = stage_key(Stage::Models, &("beta-vae", 1)).unwrap();
        assert_eq!(a, stage_key(Stage::Models, &("beta-vae", 1)).unwrap());
        assert_ne!(a, stage_key(Stage::Models, &("beta-vae", 2)).unwrap());
        assert_ne!(a, stage_key(Stage::Reports, &("beta-vae", 1)).unwrap());
    }

    #[test]
    fn publish_is_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        assert!(cache.lookup(Stage::Datasets, "k").is_none());
        let work = cache.begin(Stage::Datasets, "k").unwrap();
        fs::write(work.join("a"), b"1").unwrap();
        assert!(cache.lookup(Stage::Datasets, "k").is_none());
        let done = cache.publish(Stage::Datasets, "k").unwrap();
        assert_eq!(fs::read(done.join("a")).unwrap(), b"1");
        assert!(!cache.partial_dir(Stage::Datasets, "k").exists());

        // a second writer of the same key keeps the first copy
        let work = cache.begin(Stage::Datasets, "k").unwrap();
        fs::write(work.join("a"), b"2").unwrap();
        let done = cache.publish(Stage::Datasets, "k").unwrap();
        assert_eq!(fs::read(done.join("a")).unwrap(), b"1");
    }
}
