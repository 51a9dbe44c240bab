//! Property-controlled dataset variants. Each variant is described by a
//! recipe, and its fluency, culture and diversity flags are computed from
//! that recipe.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Checkpoints};
use crate::context::{acquire_contexts, ContextError, ContextPolicy};
use crate::diversity::{dedup_filter, DedupConfig, DedupError, Removal};
use crate::gateway::{Gateway, ProviderError};
use crate::instruct::{generate_all, Generated, GenerationFailure, TaskError, TaskSettings};
use crate::record::{
    ContextDoc, GenProvenance, InstructionRecord, LineageStep, PropertyFlags, RecordError, Task,
    Topic, TopicCategory,
};
use crate::topics::{generate_topic_set, generate_topics, TopicError, TopicSet, TopicSettings};
use crate::util::{derive_seed, normalize_text, seeded_rng, sha256_hex};

pub const DEFAULT_SIZE: usize = 5000;
pub const FULL_CULTURAL_TOPICS: usize = 400;
pub const FULL_GENERAL_TOPICS: usize = 300;
pub const FLUENCY_GENERAL_TOPICS: usize = 10;
pub const DIVERSITY_GENERAL_TOPICS: usize = 750;
pub const SAMPLED_ORIGINALS: usize = 1000;
pub const PARAPHRASES_PER_SAMPLE: usize = 4;
pub const PIVOT_LANGUAGE: &str = "en";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    Fluency,
    Diversity,
    Culture,
    None,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::Fluency,
        Variant::Diversity,
        Variant::Culture,
        Variant::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Fluency => "fluency",
            Variant::Diversity => "diversity",
            Variant::Culture => "culture",
            Variant::None => "none",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| {
                format!(
                    "unknown variant '{s}' (expected full, fluency, diversity, culture or none)"
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    RoundTrip { pivot: String },
    Translate { from: String, to: String },
    Paraphrase { count: usize },
}

/// Extra work done when the first pass yielded too few records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Extension {
    Topics { general: usize, cultural: usize },
    Rounds { rounds: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub variant: Variant,
    /// Topics behind the records, including those of a source dataset.
    pub general_topics: usize,
    pub cultural_topics: usize,
    pub dedup_threshold: Option<f64>,
    pub transforms: Vec<Transform>,
    /// Originals drawn from the source before paraphrasing.
    pub sampled: Option<usize>,
    pub source: Option<String>,
    pub extensions: Vec<Extension>,
}

impl Recipe {
    fn generated(variant: Variant, general: usize, cultural: usize, dedup: Option<f64>) -> Self {
        Self {
            variant,
            general_topics: general,
            cultural_topics: cultural,
            dedup_threshold: dedup,
            transforms: Vec::new(),
            sampled: None,
            source: None,
            extensions: Vec::new(),
        }
    }

    pub fn full(general: usize, cultural: usize, threshold: f64) -> Self {
        Self::generated(Variant::Full, general, cultural, Some(threshold))
    }

    pub fn fluency_only(general: usize) -> Self {
        Self::generated(Variant::Fluency, general, 0, None)
    }

    pub fn diversity_only(general: usize, threshold: f64, pivot: &str) -> Self {
        let mut r = Self::generated(Variant::Diversity, general, 0, Some(threshold));
        r.transforms.push(Transform::RoundTrip {
            pivot: pivot.into(),
        });
        r
    }

    /// Derived from a full build: its topics and dedup carry over.
    pub fn culture_only(
        source: &Recipe,
        sampled: usize,
        paraphrases: usize,
        language: &str,
        pivot: &str,
    ) -> Self {
        Self {
            variant: Variant::Culture,
            general_topics: source.general_topics,
            cultural_topics: source.cultural_topics,
            dedup_threshold: source.dedup_threshold,
            transforms: vec![
                Transform::Translate {
                    from: language.into(),
                    to: pivot.into(),
                },
                Transform::Paraphrase { count: paraphrases },
                Transform::Translate {
                    from: pivot.into(),
                    to: language.into(),
                },
            ],
            sampled: Some(sampled),
            source: Some(format!("{}:{}", source.variant, source.flags())),
            extensions: Vec::new(),
        }
    }

    pub fn no_properties(
        source: &str,
        sampled: usize,
        paraphrases: usize,
        from: &str,
        language: &str,
    ) -> Self {
        Self {
            variant: Variant::None,
            general_topics: 0,
            cultural_topics: 0,
            dedup_threshold: None,
            transforms: vec![
                Transform::Paraphrase { count: paraphrases },
                Transform::Translate {
                    from: from.into(),
                    to: language.into(),
                },
            ],
            sampled: Some(sampled),
            source: Some(source.into()),
            extensions: Vec::new(),
        }
    }

    /// Machine translation and paraphrasing degrade fluency, cultural topics
    /// add culture, and dedup adds diversity unless paraphrasing multiplies
    /// each sample afterwards.
    pub fn flags(&self) -> PropertyFlags {
        let paraphrased = self
            .transforms
            .iter()
            .any(|t| matches!(t, Transform::Paraphrase { .. }));
        PropertyFlags {
            fluency: self.transforms.is_empty(),
            culture: self.cultural_topics > 0,
            diversity: self.dedup_threshold.is_some() && !paraphrased,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub topics: usize,
    pub contexts: usize,
    pub raw_records: usize,
    pub failures: Vec<GenerationFailure>,
    pub removals: Vec<Removal>,
    /// Records dropped because a transform failed for them.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub variant: Variant,
    pub flags: PropertyFlags,
    pub target_size: usize,
    pub seed: u64,
    pub recipe: Recipe,
    pub log: BuildLog,
    /// Effective configuration of the run that produced the manifest.
    pub config: Option<Value>,
    pub records: Vec<InstructionRecord>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest has {found} records, target size is {expected}")]
    Size { expected: usize, found: usize },
    #[error("manifest flags {stored} differ from recipe flags {derived}")]
    Flags {
        stored: PropertyFlags,
        derived: PropertyFlags,
    },
    #[error("record {0} carries different flags than the manifest")]
    RecordFlags(String),
    #[error("record {0} has no lineage")]
    NoLineage(String),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.records.len() != self.target_size {
            return Err(ManifestError::Size {
                expected: self.target_size,
                found: self.records.len(),
            });
        }
        let derived = self.recipe.flags();
        if derived != self.flags {
            return Err(ManifestError::Flags {
                stored: self.flags,
                derived,
            });
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if r.flags != Some(self.flags) {
                return Err(ManifestError::RecordFlags(r.id.clone()));
            }
            if r.lineage.is_empty() {
                return Err(ManifestError::NoLineage(r.id.clone()));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(ManifestError::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Topics(#[from] TopicError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl StageError {
    pub fn provider(&self) -> Option<&ProviderError> {
        match self {
            StageError::Topics(TopicError::Provider(e))
            | StageError::Context(ContextError::Provider(e))
            | StageError::Task(TaskError::Provider(e))
            | StageError::Dedup(DedupError::Provider(e))
            | StageError::Provider(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: no prompt or instruction field")]
    MissingPrompt { line: usize },
    #[error("line {line}: no output or response field")]
    MissingOutput { line: usize },
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<StageError>,
    },
    #[error("{variant} build reached {achieved} of {target} records")]
    Shortfall {
        variant: Variant,
        achieved: usize,
        target: usize,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("interrupted after stage {stage}")]
    Interrupted { stage: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl BuildError {
    fn stage(stage: &str, source: impl Into<StageError>) -> Self {
        BuildError::Stage {
            stage: stage.into(),
            source: Box::new(source.into()),
        }
    }

    pub fn provider(&self) -> Option<&ProviderError> {
        match self {
            BuildError::Stage { source, .. } => source.provider(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSettings {
    pub topics: TopicSettings,
    pub context: ContextPolicy,
    pub tasks: TaskSettings,
    pub dedup: DedupConfig,
    pub pivot: String,
    pub paraphrases: usize,
    /// Extension passes allowed when yield falls short of the target.
    pub max_extensions: u32,
}

impl Default for BuildSettings {
    fn default() -> Self {
        Self {
            topics: TopicSettings::default(),
            context: ContextPolicy::default(),
            tasks: TaskSettings::default(),
            dedup: DedupConfig::default(),
            pivot: PIVOT_LANGUAGE.into(),
            paraphrases: PARAPHRASES_PER_SAMPLE,
            max_extensions: 8,
        }
    }
}

fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

/// Runs `compute` unless a checkpoint for the same inputs exists.
fn stage<T, F>(
    cp: &dyn Checkpoints,
    name: &str,
    inputs: &impl Serialize,
    compute: F,
) -> Result<T, BuildError>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<T, StageError>,
{
    let key = digest(&(name, inputs));
    let loaded = match cp.load(name, &key)? {
        Some(bytes) => match serde_json::from_slice::<T>(&bytes) {
            Ok(v) => {
                tracing::info!(stage = name, "reusing checkpoint");
                Some(v)
            }
            Err(e) => {
                tracing::warn!(stage = name, error = %e, "unreadable checkpoint, recomputing");
                None
            }
        },
        None => None,
    };
    let value = match loaded {
        Some(v) => v,
        None => {
            let v = compute().map_err(|e| BuildError::stage(name, e))?;
            cp.save(name, &key, &serde_json::to_vec(&v).expect("serializable"))?;
            v
        }
    };
    if cp.interrupt_after(name) {
        return Err(BuildError::Interrupted { stage: name.into() });
    }
    Ok(value)
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    order
}

/// Walks `order` and applies `f` until `need` items succeed. `f` returning
/// `Ok(None)` skips the item. Results come back in walk order.
#[allow(clippy::type_complexity)]
fn take_successes<T, F>(
    order: &[usize],
    need: usize,
    f: F,
) -> Result<(Vec<(usize, T)>, Vec<usize>), BuildError>
where
    T: Send,
    F: Fn(usize) -> Result<Option<T>, BuildError> + Sync,
{
    let mut got = Vec::with_capacity(need);
    let mut skipped = Vec::new();
    let mut pos = 0;
    while got.len() < need && pos < order.len() {
        let end = (pos + need - got.len()).min(order.len());
        let results: Vec<Result<Option<T>, BuildError>> =
            order[pos..end].par_iter().map(|&i| f(i)).collect();
        for (&i, r) in order[pos..end].iter().zip(results) {
            match r? {
                Some(v) => got.push((i, v)),
                None => skipped.push(i),
            }
        }
        pos = end;
    }
    Ok((got, skipped))
}

/// Provider failures that concern the whole run rather than one record.
fn is_fatal(e: &ProviderError) -> bool {
    matches!(e, ProviderError::Config(_) | ProviderError::Capability(_))
}

fn translate_fields(
    r: &InstructionRecord,
    gw: &Gateway,
    from: &str,
    to: &str,
) -> Result<(String, Option<String>, String), ProviderError> {
    Ok((
        gw.translate(&r.instruction, from, to)?,
        r.context
            .as_deref()
            .map(|c| gw.translate(c, from, to))
            .transpose()?,
        gw.translate(&r.output, from, to)?,
    ))
}

fn translated(
    r: &InstructionRecord,
    gw: &Gateway,
    from: &str,
    to: &str,
) -> Result<InstructionRecord, ProviderError> {
    let (instruction, context, output) = translate_fields(r, gw, from, to)?;
    let mut out = r.clone();
    out.instruction = instruction;
    out.context = context;
    out.output = output;
    out.language = to.into();
    out.lineage.push(LineageStep::Translate {
        from: from.into(),
        to: to.into(),
    });
    Ok(out)
}

/// Translates every text field to `pivot` and back to `language`.
pub fn round_trip_translate(
    record: &InstructionRecord,
    gateway: &Gateway,
    language: &str,
    pivot: &str,
) -> Result<InstructionRecord, ProviderError> {
    if record.language != language {
        return Err(ProviderError::InvalidRequest(format!(
            "record {} is in '{}', expected '{language}'",
            record.id, record.language
        )));
    }
    let there = translated(record, gateway, language, pivot)?;
    let mut back = translated(&there, gateway, pivot, language)?;
    back.lineage.truncate(record.lineage.len());
    back.lineage.push(LineageStep::RoundTrip {
        pivot: pivot.into(),
    });
    Ok(back)
}

/// The original plus `count` paraphrases of one record, all still in the
/// record's language. Every present field is paraphrased.
fn paraphrase_family(
    r: &InstructionRecord,
    gw: &Gateway,
    count: usize,
    seed: u64,
) -> Result<Vec<InstructionRecord>, ProviderError> {
    let para = |field: &str, text: &str| {
        gw.paraphrase(
            text,
            count,
            derive_seed(seed, &["paraphrase", &r.id, field]),
        )
    };
    let instructions = para("instruction", &r.instruction)?;
    let contexts = r
        .context
        .as_deref()
        .map(|c| para("context", c))
        .transpose()?;
    let outputs = para("output", &r.output)?;
    let mut family = Vec::with_capacity(count + 1);
    let mut original = r.clone();
    original.id = format!("{}-o", r.id);
    original.lineage.push(LineageStep::Original);
    family.push(original);
    for i in 0..count {
        let mut p = r.clone();
        p.id = format!("{}-p{}", r.id, i + 1);
        p.instruction = instructions[i].clone();
        p.context = contexts.as_ref().map(|c| c[i].clone());
        p.output = outputs[i].clone();
        p.lineage.push(LineageStep::Paraphrase {
            index: i as u32 + 1,
        });
        family.push(p);
    }
    Ok(family)
}

fn finish(
    recipe: Recipe,
    seed: u64,
    target_size: usize,
    log: BuildLog,
    mut records: Vec<InstructionRecord>,
) -> Result<DatasetManifest, BuildError> {
    let flags = recipe.flags();
    for r in &mut records {
        r.flags = Some(flags);
    }
    let manifest = DatasetManifest {
        variant: recipe.variant,
        flags,
        target_size,
        seed,
        recipe,
        log,
        config: None,
        records,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Sample-and-paraphrase variants: pick `sampled` records uniformly,
/// optionally translate to the pivot first, paraphrase, translate to
/// `language`.
#[allow(clippy::too_many_arguments)]
fn paraphrase_variant(
    recipe: Recipe,
    source: &[InstructionRecord],
    gw: &Gateway,
    seed: u64,
    sampled: usize,
    paraphrases: usize,
    pre: Option<(&str, &str)>,
    post: (&str, &str),
) -> Result<DatasetManifest, BuildError> {
    if sampled == 0 {
        return Err(BuildError::Input("sample size must be at least 1".into()));
    }
    if paraphrases == 0 {
        return Err(BuildError::Input(
            "paraphrase count must be at least 1".into(),
        ));
    }
    if source.len() < sampled {
        return Err(BuildError::Input(format!(
            "source has {} records, {sampled} requested",
            source.len()
        )));
    }
    let variant = recipe.variant;
    let order = permutation(source.len(), derive_seed(seed, &["sample"]));
    let family_seed = derive_seed(seed, &["paraphrase"]);
    let (mut picked, skipped) = take_successes(&order, sampled, |i| {
        let r = &source[i];
        let base = match pre {
            Some((from, to)) => match translated(r, gw, from, to) {
                Ok(t) => t,
                Err(e) if is_fatal(&e) => return Err(BuildError::stage("translate", e)),
                Err(e) => {
                    tracing::warn!(id = %r.id, error = %e, "translation failed, skipping record");
                    return Ok(None);
                }
            },
            None => r.clone(),
        };
        let family = paraphrase_family(&base, gw, paraphrases, family_seed)
            .map_err(|e| BuildError::stage("paraphrase", e))?;
        let mut out = Vec::with_capacity(family.len());
        for f in &family {
            match translated(f, gw, post.0, post.1) {
                Ok(t) => out.push(t),
                Err(e) if is_fatal(&e) => return Err(BuildError::stage("translate", e)),
                Err(e) => {
                    tracing::warn!(id = %r.id, error = %e, "translation failed, skipping record");
                    return Ok(None);
                }
            }
        }
        Ok(Some(out))
    })?;
    if picked.len() < sampled {
        return Err(BuildError::Shortfall {
            variant,
            achieved: picked.len() * (paraphrases + 1),
            target: sampled * (paraphrases + 1),
        });
    }
    picked.sort_by_key(|(i, _)| *i);
    let log = BuildLog {
        skipped: skipped.iter().map(|&i| source[i].id.clone()).collect(),
        ..BuildLog::default()
    };
    let records: Vec<InstructionRecord> = picked.into_iter().flat_map(|(_, fam)| fam).collect();
    finish(recipe, seed, sampled * (paraphrases + 1), log, records)
}

/// Fluency and culture are removed from a full build: sample, translate to
/// the pivot, paraphrase, translate back.
pub fn build_culture_only(
    full: &DatasetManifest,
    gateway: &Gateway,
    seed: u64,
    sampled: usize,
    settings: &BuildSettings,
) -> Result<DatasetManifest, BuildError> {
    let language = settings.tasks.language.as_str();
    let pivot = settings.pivot.as_str();
    if let Some(r) = full.records.iter().find(|r| r.language != language) {
        return Err(BuildError::Input(format!(
            "record {} is in '{}', expected '{language}'",
            r.id, r.language
        )));
    }
    let recipe = Recipe::culture_only(&full.recipe, sampled, settings.paraphrases, language, pivot);
    paraphrase_variant(
        recipe,
        &full.records,
        gateway,
        seed,
        sampled,
        settings.paraphrases,
        Some((language, pivot)),
        (pivot, language),
    )
}

/// External rows are sampled, paraphrased in their own language and
/// translated to the target language.
pub fn build_no_properties(
    external: &[InstructionRecord],
    source_name: &str,
    gateway: &Gateway,
    seed: u64,
    sampled: usize,
    settings: &BuildSettings,
) -> Result<DatasetManifest, BuildError> {
    let language = settings.tasks.language.as_str();
    let from = match external.first() {
        Some(r) => r.language.clone(),
        None => return Err(BuildError::Input("external corpus is empty".into())),
    };
    if let Some(r) = external.iter().find(|r| r.language != from) {
        return Err(BuildError::Input(format!(
            "external record {} is in '{}', expected '{from}'",
            r.id, r.language
        )));
    }
    let recipe = Recipe::no_properties(source_name, sampled, settings.paraphrases, &from, language);
    paraphrase_variant(
        recipe,
        external,
        gateway,
        seed,
        sampled,
        settings.paraphrases,
        None,
        (&from, language),
    )
}

/// State of a generated build across extension passes.
struct Pool {
    topics: Vec<Topic>,
    raw: Vec<InstructionRecord>,
    failures: Vec<GenerationFailure>,
    contexts: usize,
    rounds: u32,
}

fn run_wave(
    pool: &mut Pool,
    units: &[(usize, u32)],
    wave: usize,
    gw: &Gateway,
    seed: u64,
    settings: &BuildSettings,
    cp: &dyn Checkpoints,
) -> Result<(), BuildError> {
    let mut by_round: Vec<(u32, Vec<(usize, Topic)>)> = Vec::new();
    for &(idx, round) in units {
        match by_round.iter_mut().find(|(r, _)| *r == round) {
            Some((_, v)) => v.push((idx, pool.topics[idx].clone())),
            None => by_round.push((round, vec![(idx, pool.topics[idx].clone())])),
        }
    }
    let name = format!("contexts-w{wave}");
    let contexts: Vec<(String, ContextDoc)> = stage(
        cp,
        &name,
        &(&by_round, &settings.context, seed, gw.generator_id()),
        || {
            let mut out = Vec::new();
            for (round, topics) in &by_round {
                for (idx, doc) in acquire_contexts(topics, *round, gw, &settings.context, seed)? {
                    out.push((format!("t{idx:05}-r{round}"), doc));
                }
            }
            Ok(out)
        },
    )?;
    let name = format!("instructions-w{wave}");
    let generated: Generated = stage(
        cp,
        &name,
        &(digest(&contexts), &settings.tasks, seed, gw.generator_id()),
        || Ok(generate_all(&contexts, gw, &settings.tasks, seed)?),
    )?;
    pool.contexts += contexts.len();
    pool.raw.extend(generated.records);
    pool.failures.extend(generated.failures);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn extra_topics(
    pool: &mut Pool,
    general: usize,
    cultural: usize,
    gw: &Gateway,
    seed: u64,
    settings: &BuildSettings,
    wave: usize,
    cp: &dyn Checkpoints,
) -> Result<Vec<usize>, BuildError> {
    let existing: Vec<Topic> = pool.topics.clone();
    let name = format!("topics-w{wave}");
    let added: Vec<Topic> = stage(
        cp,
        &name,
        &(
            &existing,
            general,
            cultural,
            &settings.topics,
            seed,
            gw.generator_id(),
        ),
        || {
            let mut seen: HashSet<String> =
                existing.iter().map(|t| normalize_text(&t.text)).collect();
            let mut out = Vec::new();
            for (category, n) in [
                (TopicCategory::General, general),
                (TopicCategory::Cultural, cultural),
            ] {
                if n == 0 {
                    continue;
                }
                let first = existing
                    .iter()
                    .filter(|t| t.category == category)
                    .map(|t| t.batch_id + 1)
                    .max()
                    .unwrap_or(0);
                let (topics, _, _) =
                    generate_topics(category, n, gw, seed, &settings.topics, &mut seen, first)?;
                out.extend(topics);
            }
            Ok(out)
        },
    )?;
    let start = pool.topics.len();
    pool.topics.extend(added);
    Ok((start..pool.topics.len()).collect())
}

/// Shared driver for the variants generated from scratch.
fn build_generated(
    mut recipe: Recipe,
    gw: &Gateway,
    seed: u64,
    size: usize,
    settings: &BuildSettings,
    cp: &dyn Checkpoints,
) -> Result<DatasetManifest, BuildError> {
    if size == 0 {
        return Err(BuildError::Input("target size must be at least 1".into()));
    }
    let variant = recipe.variant;
    let dedup = recipe.dedup_threshold.map(|threshold| DedupConfig {
        threshold,
        ..settings.dedup.clone()
    });
    let (general, cultural) = (recipe.general_topics, recipe.cultural_topics);
    let set: TopicSet = stage(
        cp,
        "topics",
        &(general, cultural, &settings.topics, seed, gw.generator_id()),
        || {
            Ok(generate_topic_set(
                general,
                cultural,
                gw,
                seed,
                &settings.topics,
            )?)
        },
    )?;
    let mut pool = Pool {
        topics: set.topics,
        raw: Vec::new(),
        failures: Vec::new(),
        contexts: 0,
        rounds: 1,
    };
    let units: Vec<(usize, u32)> = (0..pool.topics.len()).map(|i| (i, 0)).collect();
    run_wave(&mut pool, &units, 0, gw, seed, settings, cp)?;

    let mut wave = 0;
    loop {
        let (kept, removals) = match &dedup {
            Some(cfg) => {
                let name = format!("dedup-w{wave}");
                let raw = &pool.raw;
                stage(cp, &name, &(digest(raw), cfg), || {
                    Ok(dedup_filter(raw.clone(), cfg, gw)?)
                })
                .map(
                    |(k, log): (Vec<InstructionRecord>, crate::diversity::RemovalLog)| {
                        (k, log.removed)
                    },
                )?
            }
            None => (pool.raw.clone(), Vec::new()),
        };
        if kept.len() >= size {
            let log = BuildLog {
                topics: pool.topics.len(),
                contexts: pool.contexts,
                raw_records: pool.raw.len(),
                failures: pool.failures,
                removals,
                skipped: Vec::new(),
            };
            return select_and_transform(recipe, kept, gw, seed, size, settings, log, cp);
        }
        if wave as u32 >= settings.max_extensions {
            return Err(BuildError::Shortfall {
                variant,
                achieved: kept.len(),
                target: size,
            });
        }
        wave += 1;
        // size the next pass from the yield so far, with some headroom
        let per_unit = (kept.len() as f64 / pool.contexts.max(1) as f64).max(0.5);
        let units_needed = (((size - kept.len()) as f64 / per_unit) * 1.2).ceil() as usize + 1;
        if recipe.variant == Variant::Fluency {
            let n = pool.topics.len();
            let rounds = units_needed.div_ceil(n) as u32;
            let units: Vec<(usize, u32)> = (pool.rounds..pool.rounds + rounds)
                .flat_map(|r| (0..n).map(move |i| (i, r)))
                .collect();
            pool.rounds += rounds;
            recipe.extensions.push(Extension::Rounds { rounds });
            run_wave(&mut pool, &units, wave, gw, seed, settings, cp)?;
        } else {
            let total = (recipe.general_topics + recipe.cultural_topics).max(1);
            let cultural = (units_needed * recipe.cultural_topics).div_ceil(total);
            let general = if recipe.general_topics > 0 {
                units_needed.saturating_sub(cultural).max(1)
            } else {
                0
            };
            recipe
                .extensions
                .push(Extension::Topics { general, cultural });
            let new = extra_topics(&mut pool, general, cultural, gw, seed, settings, wave, cp)?;
            let units: Vec<(usize, u32)> = new.into_iter().map(|i| (i, 0)).collect();
            run_wave(&mut pool, &units, wave, gw, seed, settings, cp)?;
        }
    }
}

/// Uniform selection of `size` records in original order. Records whose
/// transform fails are replaced by the next candidate of the same draw.
#[allow(clippy::too_many_arguments)]
fn select_and_transform(
    recipe: Recipe,
    kept: Vec<InstructionRecord>,
    gw: &Gateway,
    seed: u64,
    size: usize,
    settings: &BuildSettings,
    mut log: BuildLog,
    cp: &dyn Checkpoints,
) -> Result<DatasetManifest, BuildError> {
    let variant = recipe.variant;
    let order = permutation(kept.len(), derive_seed(seed, &["truncate"]));
    let language = settings.tasks.language.clone();
    let pivots: Vec<String> = recipe
        .transforms
        .iter()
        .filter_map(|t| match t {
            Transform::RoundTrip { pivot } => Some(pivot.clone()),
            _ => None,
        })
        .collect();
    let (picked, skipped): (Vec<(usize, InstructionRecord)>, Vec<usize>) = if pivots.is_empty() {
        let mut take: Vec<usize> = order[..size].to_vec();
        take.sort_unstable();
        (
            take.into_iter().map(|i| (i, kept[i].clone())).collect(),
            Vec::new(),
        )
    } else {
        stage(
            cp,
            "round_trip",
            &(digest(&kept), &pivots, &language, size, seed),
            || {
                let r = take_successes(&order, size, |i| {
                    let mut rec = kept[i].clone();
                    for p in &pivots {
                        match round_trip_translate(&rec, gw, &language, p) {
                            Ok(t) => rec = t,
                            Err(e) if is_fatal(&e) => {
                                return Err(BuildError::stage("round_trip", e))
                            }
                            Err(e) => {
                                tracing::warn!(id = %rec.id, error = %e, "round trip failed, skipping record");
                                return Ok(None);
                            }
                        }
                    }
                    Ok(Some(rec))
                });
                match r {
                    Ok((mut got, skipped)) => {
                        got.sort_by_key(|(i, _)| *i);
                        Ok((got, skipped))
                    }
                    Err(BuildError::Stage { source, .. }) => Err(*source),
                    Err(e) => Err(StageError::Provider(ProviderError::Protocol(e.to_string()))),
                }
            },
        )?
    };
    if picked.len() < size {
        return Err(BuildError::Shortfall {
            variant,
            achieved: picked.len(),
            target: size,
        });
    }
    log.skipped = skipped.iter().map(|&i| kept[i].id.clone()).collect();
    let records = picked.into_iter().map(|(_, r)| r).collect();
    finish(recipe, seed, size, log, records)
}

/// All three properties: cultural and general topics, dedup, no degradation.
pub fn build_full(
    gateway: &Gateway,
    seed: u64,
    size: usize,
    general: usize,
    cultural: usize,
    settings: &BuildSettings,
    cp: &dyn Checkpoints,
) -> Result<DatasetManifest, BuildError> {
    let recipe = Recipe::full(general, cultural, settings.dedup.threshold);
    build_generated(recipe, gateway, seed, size, settings, cp)
}

/// A handful of general topics and no dedup.
pub fn build_fluency_only(
    gateway: &Gateway,
    seed: u64,
    size: usize,
    general: usize,
    settings: &BuildSettings,
    cp: &dyn Checkpoints,
) -> Result<DatasetManifest, BuildError> {
    build_generated(
        Recipe::fluency_only(general),
        gateway,
        seed,
        size,
        settings,
        cp,
    )
}

/// Many general topics with dedup, then a round trip through the pivot
/// language on every record.
pub fn build_diversity_only(
    gateway: &Gateway,
    seed: u64,
    size: usize,
    general: usize,
    settings: &BuildSettings,
    cp: &dyn Checkpoints,
) -> Result<DatasetManifest, BuildError> {
    let recipe = Recipe::diversity_only(general, settings.dedup.threshold, &settings.pivot);
    build_generated(recipe, gateway, seed, size, settings, cp)
}

fn str_field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter()
        .find_map(|k| v.get(*k).and_then(Value::as_str))
        .filter(|s| !s.trim().is_empty())
}

/// First user turn and the assistant turn after it from a chat transcript.
fn first_exchange(messages: &[Value]) -> (Option<&str>, Option<&str>) {
    fn role(m: &Value) -> &str {
        m.get("role").and_then(Value::as_str).unwrap_or("")
    }
    fn content(m: &Value) -> Option<&str> {
        m.get("content")
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
    }
    let Some(u) = messages.iter().position(|m| role(m) == "user") else {
        return (None, None);
    };
    let reply = messages[u + 1..]
        .iter()
        .find(|m| role(m) == "assistant")
        .and_then(content);
    (content(&messages[u]), reply)
}

/// Maps one external row to a conversation record. Accepts chat rows with
/// `messages` (and optional `prompt`) and flat rows with instruction/prompt,
/// optional context/input, and output/response/completion.
pub fn adapt_external_row(
    row: &Value,
    line: usize,
    source: &str,
    language: &str,
) -> Result<InstructionRecord, AdapterError> {
    let (prompt, output) = match row.get("messages").and_then(Value::as_array) {
        Some(msgs) => {
            let (u, a) = first_exchange(msgs);
            (str_field(row, &["prompt"]).or(u), a)
        }
        None => {
            let instruction = str_field(row, &["instruction", "prompt", "question"]);
            let context = str_field(row, &["context"]).or_else(|| {
                instruction
                    .filter(|_| row.get("instruction").is_some())
                    .and_then(|_| str_field(row, &["input"]))
            });
            let prompt = instruction.map(|i| match context {
                Some(c) => format!("{i}\n\n{c}"),
                None => i.to_string(),
            });
            let output = str_field(row, &["output", "response", "completion", "answer"]);
            return build_external(prompt.as_deref(), output, line, source, language);
        }
    };
    build_external(prompt, output, line, source, language)
}

fn build_external(
    prompt: Option<&str>,
    output: Option<&str>,
    line: usize,
    source: &str,
    language: &str,
) -> Result<InstructionRecord, AdapterError> {
    let instruction = prompt.ok_or(AdapterError::MissingPrompt { line })?;
    let output = output.ok_or(AdapterError::MissingOutput { line })?;
    Ok(InstructionRecord {
        id: format!("ext{line:06}"),
        task: Task::Conversation,
        instruction: instruction.trim().to_string(),
        context: None,
        output: output.trim().to_string(),
        topic: Topic {
            text: source.to_string(),
            category: TopicCategory::General,
            batch_id: 0,
        },
        language: language.to_string(),
        provenance: GenProvenance::external(source),
        lineage: vec![LineageStep::External {
            source: source.into(),
        }],
        flags: None,
    })
}

/// Reads an external JSONL corpus. Blank lines are ignored; line numbers
/// are 1-based.
pub fn read_external(
    path: &Path,
    source: &str,
    language: &str,
) -> Result<Vec<InstructionRecord>, AdapterError> {
    let bytes = std::fs::read(path).map_err(|e| AdapterError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let text = std::str::from_utf8(raw).map_err(|e| AdapterError::Json {
            line,
            message: format!("invalid UTF-8: {e}"),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(text).map_err(|e| AdapterError::Json {
            line,
            message: e.to_string(),
        })?;
        out.push(adapt_external_row(&v, line, source, language)?);
    }
    Ok(out)
}
