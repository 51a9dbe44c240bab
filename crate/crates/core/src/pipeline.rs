//! End-to-end run: topics, contexts, instructions and dedup as one
//! resumable job, ending in a manifest on disk.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ablation::{build_full, BuildError, DatasetManifest};
use crate::checkpoint::DirCheckpoints;
use crate::config::{ConfigError, PipelineConfig};
use crate::gateway::{Gateway, ProviderError};
use crate::store::{write_manifest, ManifestHeader, RunLock, StoreError};

/// Stage families in execution order. Extension passes add `-w{n}`
/// suffixed stages of the same families.
pub const STAGES: [&str; 5] = ["topics", "contexts", "instructions", "dedup", "manifest"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_SHORTFALL: i32 = 4;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Holds the lock file and stage checkpoints.
    pub work_dir: PathBuf,
    /// Record file; the header goes next to it.
    pub out: PathBuf,
    /// Stop after this stage family, leaving checkpoints behind.
    pub stop_after: Option<String>,
}

impl RunOptions {
    pub fn new(work_dir: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            work_dir: work_dir.into(),
            out: out.into(),
            stop_after: None,
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.work_dir.join("checkpoints")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{source}; completed stages are checkpointed in {checkpoints}, rerun the same command to resume")]
    Build {
        #[source]
        source: BuildError,
        checkpoints: String,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::Provider(ProviderError::Config(_)) => EXIT_CONFIG,
            PipelineError::Provider(_) => EXIT_PROVIDER,
            PipelineError::Build { source, .. } => build_exit_code(source),
            PipelineError::Store(_) => EXIT_FAILURE,
        }
    }
}

/// Exit status for a failed build.
pub fn build_exit_code(e: &BuildError) -> i32 {
    match e {
        BuildError::Shortfall { .. } => EXIT_SHORTFALL,
        BuildError::Input(_) | BuildError::Adapter(_) => EXIT_CONFIG,
        _ if e.provider().is_some() => EXIT_PROVIDER,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: DatasetManifest,
    pub header: ManifestHeader,
    pub path: PathBuf,
}

/// Runs the full-property build described by `config`. Stage outputs are
/// checkpointed under the work directory, so a rerun after an interruption
/// skips every stage whose inputs are unchanged.
pub fn run_pipeline(
    config: &PipelineConfig,
    gateway: &Gateway,
    opts: &RunOptions,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let _lock = RunLock::acquire(&opts.work_dir)?;
    let checkpoints =
        DirCheckpoints::new(opts.checkpoint_dir()).stop_after(opts.stop_after.clone());
    let settings = config.build_settings();
    let build = |e| PipelineError::Build {
        source: e,
        checkpoints: opts.checkpoint_dir().display().to_string(),
    };
    let mut manifest = build_full(
        gateway,
        config.seed,
        config.size,
        config.topics.general,
        config.topics.cultural,
        &settings,
        &checkpoints,
    )
    .map_err(build)?;
    manifest.config = Some(serde_json::to_value(config).expect("config serializes"));
    let header = write_manifest(&manifest, &opts.out, Some(gateway.stats()))?;
    tracing::info!(path = %opts.out.display(), hash = %header.manifest_hash, "manifest written");
    Ok(RunOutcome {
        manifest,
        header,
        path: opts.out.clone(),
    })
}

/// Convenience wrapper: builds the gateway from the config first.
pub fn run_from_config(
    config: &PipelineConfig,
    opts: &RunOptions,
) -> Result<RunOutcome, PipelineError> {
    let gateway = config.gateway()?;
    run_pipeline(config, &gateway, opts)
}

/// True when `dir` holds at least one checkpoint file.
pub fn has_checkpoints(dir: &Path) -> bool {
    std::fs::read_dir(dir.join("checkpoints"))
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::BuildError;

    fn small() -> PipelineConfig {
        PipelineConfig::from_toml("seed = 42\nsize = 50\ntopics.general = 6\ntopics.cultural = 8\n")
            .unwrap()
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let full =
            run_from_config(&cfg, &RunOptions::new(a.path(), a.path().join("out.jsonl"))).unwrap();
        assert_eq!(full.manifest.records.len(), 50);

        let b = tempfile::tempdir().unwrap();
        let mut opts = RunOptions::new(b.path(), b.path().join("out.jsonl"));
        opts.stop_after = Some("instructions".into());
        let err = run_from_config(&cfg, &opts).unwrap_err();
        assert!(
            matches!(
                &err,
                PipelineError::Build {
                    source: BuildError::Interrupted { .. },
                    ..
                }
            ),
            "{err}"
        );
        assert!(has_checkpoints(b.path()));
        assert!(!opts.out.exists());
        opts.stop_after = None;
        let resumed = run_from_config(&cfg, &opts).unwrap();
        assert_eq!(resumed.header.manifest_hash, full.header.manifest_hash);
        assert_eq!(
            std::fs::read(a.path().join("out.jsonl")).unwrap(),
            std::fs::read(b.path().join("out.jsonl")).unwrap()
        );
    }

    #[test]
    fn exit_codes() {
        let e = PipelineError::Build {
            source: BuildError::Shortfall {
                variant: crate::ablation::Variant::Full,
                achieved: 1,
                target: 2,
            },
            checkpoints: String::new(),
        };
        assert_eq!(e.exit_code(), EXIT_SHORTFALL);
        assert_eq!(
            PipelineError::Provider(ProviderError::Transport("x".into())).exit_code(),
            EXIT_PROVIDER
        );
        assert_eq!(
            PipelineError::Config(crate::config::ConfigError::Syntax("x".into())).exit_code(),
            EXIT_CONFIG
        );
    }
}
