//! Content-addressed stage checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Storage for stage outputs keyed by stage name and a content hash of the
/// stage inputs.
pub trait Checkpoints: Sync {
    fn load(&self, stage: &str, key: &str) -> Result<Option<Vec<u8>>, CheckpointError>;
    fn save(&self, stage: &str, key: &str, bytes: &[u8]) -> Result<(), CheckpointError>;
    /// Checked after each stage finishes; `true` stops the build there.
    fn interrupt_after(&self, _stage: &str) -> bool {
        false
    }
}

/// Keeps nothing.
pub struct NoCheckpoints;

impl Checkpoints for NoCheckpoints {
    fn load(&self, _: &str, _: &str) -> Result<Option<Vec<u8>>, CheckpointError> {
        Ok(None)
    }

    fn save(&self, _: &str, _: &str, _: &[u8]) -> Result<(), CheckpointError> {
        Ok(())
    }
}

/// One file per (stage, key) under a directory. `stop_after` names a stage
/// (or its family, e.g. "contexts" for "contexts-w0") after which the build
/// is interrupted, which simulates a killed run.
pub struct DirCheckpoints {
    root: PathBuf,
    stop_after: Option<String>,
}

impl DirCheckpoints {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            stop_after: None,
        }
    }

    pub fn stop_after(mut self, stage: Option<String>) -> Self {
        self.stop_after = stage;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(format!("{key}.json"))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Checkpoints for DirCheckpoints {
    fn load(&self, stage: &str, key: &str) -> Result<Option<Vec<u8>>, CheckpointError> {
        let path = self.path(stage, key);
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    fn save(&self, stage: &str, key: &str, bytes: &[u8]) -> Result<(), CheckpointError> {
        let path = self.path(stage, key);
        let dir = path.parent().expect("stage directory");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        // write then rename so a crash never leaves a truncated checkpoint
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn interrupt_after(&self, stage: &str) -> bool {
        self.stop_after.as_deref().is_some_and(|s| {
            stage == s
                || stage
                    .strip_prefix(s)
                    .is_some_and(|rest| rest.starts_with('-'))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let cp = DirCheckpoints::new(dir.path());
        assert!(cp.load("topics", "abc").unwrap().is_none());
        cp.save("topics", "abc", b"[1]").unwrap();
        assert_eq!(cp.load("topics", "abc").unwrap().unwrap(), b"[1]");
    }

    #[test]
    fn stop_after_matches_stage_family() {
        let cp = DirCheckpoints::new("/nonexistent").stop_after(Some("contexts".into()));
        assert!(cp.interrupt_after("contexts"));
        assert!(cp.interrupt_after("contexts-w0"));
        assert!(!cp.interrupt_after("contextsx"));
        assert!(!cp.interrupt_after("topics"));
    }
}
