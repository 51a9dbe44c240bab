//! Record files (JSON Lines), dataset manifests and the working-directory
//! lock.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ablation::{BuildLog, DatasetManifest, Recipe, Variant};
use crate::gateway::StatsSnapshot;
use crate::record::{InstructionRecord, PropertyFlags};
use crate::util::sha256_hex;

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id '{id}'")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}: manifest hash mismatch (header {expected}, content {found})")]
    HashMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: another run holds the lock")]
    Locked { path: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

/// One JSON object per line, fields in declaration order, trailing newline.
pub fn records_to_jsonl(records: &[InstructionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

pub fn write_records(records: &[InstructionRecord], path: &Path) -> Result<(), StoreError> {
    write_atomic(path, &records_to_jsonl(records))
}

/// Generic JSONL reader: UTF-8 and JSON errors carry the 1-based line
/// number; blank lines are skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, T)>, StoreError> {
    let bytes = fs::read(path).map_err(io(path))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let text = std::str::from_utf8(raw).map_err(|e| StoreError::Line {
            path: name.clone(),
            line,
            message: format!("invalid UTF-8: {e}"),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(text).map_err(|e| StoreError::Line {
            path: name.clone(),
            line,
            message: e.to_string(),
        })?;
        out.push((line, v));
    }
    Ok(out)
}

/// Reads a record file; ids must be unique and every record must satisfy
/// its task invariants.
pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>, StoreError> {
    let name = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, r) in read_jsonl::<InstructionRecord>(path)? {
        r.validate().map_err(|e| StoreError::Line {
            path: name.clone(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(r.id.clone()) {
            return Err(StoreError::DuplicateId {
                path: name,
                line,
                id: r.id,
            });
        }
        out.push(r);
    }
    Ok(out)
}

/// Everything in a manifest except the records, which live in the JSONL
/// file next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: u32,
    pub variant: Variant,
    pub flags: PropertyFlags,
    pub target_size: usize,
    pub seed: u64,
    pub recipe: Recipe,
    pub config: Option<Value>,
    pub log: BuildLog,
    pub record_count: usize,
    pub records_sha256: String,
    /// Hash over every field above plus the record bytes.
    pub manifest_hash: String,
    /// Provider counters; they differ between fresh and resumed runs and
    /// are left out of the hash.
    pub stats: Option<StatsSnapshot>,
}

#[derive(Serialize)]
struct HashedPart<'a> {
    format: u32,
    variant: Variant,
    flags: PropertyFlags,
    target_size: usize,
    seed: u64,
    recipe: &'a Recipe,
    config: &'a Option<Value>,
    log: &'a BuildLog,
    record_count: usize,
    records_sha256: &'a str,
}

fn header_hash(h: &ManifestHeader) -> String {
    let part = HashedPart {
        format: h.format,
        variant: h.variant,
        flags: h.flags,
        target_size: h.target_size,
        seed: h.seed,
        recipe: &h.recipe,
        config: &h.config,
        log: &h.log,
        record_count: h.record_count,
        records_sha256: &h.records_sha256,
    };
    sha256_hex(&serde_json::to_vec(&part).expect("header serializes"))
}

pub fn manifest_header(m: &DatasetManifest, stats: Option<StatsSnapshot>) -> ManifestHeader {
    let mut h = ManifestHeader {
        format: MANIFEST_FORMAT,
        variant: m.variant,
        flags: m.flags,
        target_size: m.target_size,
        seed: m.seed,
        recipe: m.recipe.clone(),
        config: m.config.clone(),
        log: m.log.clone(),
        record_count: m.records.len(),
        records_sha256: sha256_hex(&records_to_jsonl(&m.records)),
        manifest_hash: String::new(),
        stats,
    };
    h.manifest_hash = header_hash(&h);
    h
}

/// Content hash of a manifest; independent of paths and provider counters.
pub fn manifest_hash(m: &DatasetManifest) -> String {
    manifest_header(m, None).manifest_hash
}

pub fn header_path(records_path: &Path) -> PathBuf {
    let mut p = records_path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Writes records to `path` and the header to `<path>.manifest.json`.
pub fn write_manifest(
    m: &DatasetManifest,
    path: &Path,
    stats: Option<StatsSnapshot>,
) -> Result<ManifestHeader, StoreError> {
    let header = manifest_header(m, stats);
    write_records(&m.records, path)?;
    let mut text = serde_json::to_vec_pretty(&header).expect("header serializes");
    text.push(b'\n');
    write_atomic(&header_path(path), &text)?;
    Ok(header)
}

/// Reads a manifest back and checks its hash against the content.
pub fn read_manifest(path: &Path) -> Result<(DatasetManifest, ManifestHeader), StoreError> {
    let hp = header_path(path);
    let text = fs::read(&hp).map_err(io(&hp))?;
    let header: ManifestHeader = serde_json::from_slice(&text).map_err(|e| StoreError::Line {
        path: hp.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let records = read_records(path)?;
    let m = DatasetManifest {
        variant: header.variant,
        flags: header.flags,
        target_size: header.target_size,
        seed: header.seed,
        recipe: header.recipe.clone(),
        log: header.log.clone(),
        config: header.config.clone(),
        records,
    };
    let found = manifest_hash(&m);
    if found != header.manifest_hash {
        return Err(StoreError::HashMismatch {
            path: hp.display().to_string(),
            expected: header.manifest_hash,
            found,
        });
    }
    Ok((m, header))
}

/// Exclusive advisory lock on `<dir>/.seedforge.lock`, released on drop.
#[derive(Debug)]
pub struct RunLock {
    file: File,
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join(".seedforge.lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { file, path }),
            Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked {
                path: path.display().to_string(),
            }),
            Err(fs::TryLockError::Error(e)) => Err(io(&path)(e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{GenProvenance, LineageStep, Task, Topic, TopicCategory};
    use proptest::prelude::*;

    fn rec(i: usize, task: Task) -> InstructionRecord {
        InstructionRecord {
            id: format!("r{i}"),
            task,
            instruction: format!("คำถาม {i} \"quoted\"\tและ\\"),
            context: task.needs_context().then(|| format!("บริบท {i}\nบรรทัดสอง")),
            output: format!("คำตอบ {i}"),
            topic: Topic {
                text: "อาหารไทย".into(),
                category: TopicCategory::Cultural,
                batch_id: 3,
            },
            language: "th".into(),
            provenance: GenProvenance {
                temperature: Some(0.35),
                seed: Some(u64::MAX - i as u64),
                ..GenProvenance::external("mock-generator")
            },
            lineage: vec![
                LineageStep::Generated,
                LineageStep::Dedup { threshold: 0.95 },
            ],
            flags: Some(PropertyFlags {
                fluency: true,
                culture: true,
                diversity: true,
            }),
        }
    }

    #[test]
    fn round_trip_five_thousand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let recs: Vec<_> = (0..5000).map(|i| rec(i, Task::ALL[i % 4])).collect();
        write_records(&recs, &path).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
        let bytes = fs::read(&path).unwrap();
        write_records(&read_records(&path).unwrap(), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn duplicate_id_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_records(
            &[
                rec(1, Task::Conversation),
                rec(2, Task::Conversation),
                rec(1, Task::Conversation),
            ],
            &path,
        )
        .unwrap();
        assert!(matches!(
            read_records(&path),
            Err(StoreError::DuplicateId { line: 3, .. })
        ));
    }

    #[test]
    fn bad_bytes_are_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut bytes = records_to_jsonl(&[rec(1, Task::Conversation)]);
        bytes.extend_from_slice(b"{\"id\": \"\xff\xfe\"}\n");
        fs::write(&path, &bytes).unwrap();
        match read_records(&path) {
            Err(StoreError::Line {
                line: 2, message, ..
            }) => assert!(message.contains("UTF-8")),
            other => panic!("{other:?}"),
        }
        fs::write(&path, b"\n{not json}\n").unwrap();
        assert!(matches!(
            read_records(&path),
            Err(StoreError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            RunLock::acquire(dir.path()),
            Err(StoreError::Locked { .. })
        ));
        drop(a);
        RunLock::acquire(dir.path()).unwrap();
    }

    proptest! {
        #[test]
        fn arbitrary_text_round_trips(instruction in "\\PC{1,40}", output in "\\PC{1,40}", ctx in proptest::option::of("\\PC{1,40}")) {
            prop_assume!(!instruction.trim().is_empty() && !output.trim().is_empty());
            prop_assume!(ctx.as_ref().is_none_or(|c| !c.trim().is_empty()));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.jsonl");
            let mut r = rec(0, if ctx.is_some() { Task::ClosedQa } else { Task::Conversation });
            r.instruction = instruction;
            r.output = output;
            r.context = ctx;
            write_records(std::slice::from_ref(&r), &path).unwrap();
            prop_assert_eq!(read_records(&path).unwrap(), vec![r]);
        }
    }
}
