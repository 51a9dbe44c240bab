//! Semantic near-duplicate removal over record embeddings.

pub mod hnsw;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, Gateway, ProviderError};
use crate::record::{InstructionRecord, LineageStep};

pub use hnsw::{Hnsw, HnswParams};

pub const DEFAULT_THRESHOLD: f64 = 0.95;
pub const DEFAULT_EXACT_FALLBACK_LIMIT: usize = 50_000;

/// Text that gets embedded for a record: instruction, context and output
/// joined by newlines, with an empty line when there is no context.
pub fn sample_text(r: &InstructionRecord) -> String {
    format!(
        "{}\n{}\n{}",
        r.instruction,
        r.context.as_deref().unwrap_or(""),
        r.output
    )
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_values(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::Dimension(u.len(), v.len()));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    cosine_values(u.values(), v.values())
}

fn unit(v: &[f64]) -> Result<Vec<f64>, SimilarityError> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("vector dimension {found} does not match index dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("cannot build an index from zero vectors")]
    Empty,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Nearest-neighbor search by cosine similarity over unit vectors.
pub trait NeighborIndex: Send + Sync {
    fn dimension(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Adds a unit-length vector under `id`.
    fn insert(&mut self, id: usize, unit: &[f64]) -> Result<(), IndexError>;
    /// Most similar stored vector other than `exclude`; ties go to the lower id.
    fn nearest(&self, unit_query: &[f64], exclude: Option<usize>) -> Option<Neighbor>;
}

/// Linear scan; always returns the true nearest neighbor.
pub struct ExactIndex {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<usize>,
}

impl ExactIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            ids: Vec::new(),
        }
    }
}

impl NeighborIndex for ExactIndex {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn insert(&mut self, id: usize, unit: &[f64]) -> Result<(), IndexError> {
        if unit.len() != self.dim {
            return Err(IndexError::Dimension {
                expected: self.dim,
                found: unit.len(),
            });
        }
        self.data.extend_from_slice(unit);
        self.ids.push(id);
        Ok(())
    }

    fn nearest(&self, q: &[f64], exclude: Option<usize>) -> Option<Neighbor> {
        let mut best: Option<Neighbor> = None;
        for (row, &id) in self.data.chunks_exact(self.dim).zip(&self.ids) {
            if Some(id) == exclude {
                continue;
            }
            let s = dot(q, row);
            let better = match best {
                None => true,
                Some(b) => s > b.similarity || (s == b.similarity && id < b.id),
            };
            if better {
                best = Some(Neighbor { id, similarity: s });
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Exact,
    Approximate,
    /// Exact up to the fallback limit, approximate beyond it.
    Auto,
}

impl IndexKind {
    pub fn resolve(self, n: usize, exact_limit: usize) -> IndexKind {
        match self {
            IndexKind::Auto if n <= exact_limit => IndexKind::Exact,
            IndexKind::Auto => IndexKind::Approximate,
            k => k,
        }
    }
}

fn empty_index(kind: IndexKind, dim: usize, params: &HnswParams) -> Box<dyn NeighborIndex> {
    match kind {
        IndexKind::Approximate => Box::new(Hnsw::new(dim, params.clone())),
        _ => Box::new(ExactIndex::new(dim)),
    }
}

/// Builds an index over `vectors`, identified by their position.
pub fn build_index(
    vectors: &[EmbeddingVector],
    kind: IndexKind,
    params: &HnswParams,
) -> Result<Box<dyn NeighborIndex>, IndexError> {
    let first = vectors.first().ok_or(IndexError::Empty)?;
    let kind = kind.resolve(vectors.len(), DEFAULT_EXACT_FALLBACK_LIMIT);
    let mut index = empty_index(kind, first.dimension(), params);
    for (i, v) in vectors.iter().enumerate() {
        index.insert(i, &unit(v.values())?)?;
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupSemantics {
    /// A record is compared only against earlier records that were kept.
    KeepFirst,
    /// A record is removed when its nearest neighbor in the whole input
    /// exceeds the threshold, so both members of a pair can go.
    FullSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub threshold: f64,
    pub index_kind: IndexKind,
    pub exact_fallback_limit: usize,
    pub semantics: DedupSemantics,
    pub hnsw: HnswParams,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            index_kind: IndexKind::Auto,
            exact_fallback_limit: DEFAULT_EXACT_FALLBACK_LIMIT,
            semantics: DedupSemantics::KeepFirst,
            hnsw: HnswParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub record_id: String,
    pub nearest_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalLog {
    pub removed: Vec<Removal>,
}

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error("no records to deduplicate")]
    Empty,
    #[error("embedding dimension drifted from {expected} to {found}")]
    DimensionDrift { expected: usize, found: usize },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(DedupError::Threshold(self.threshold));
        }
        Ok(())
    }
}

/// Index-level decision for one removed vector: (removed, nearest, similarity).
pub type VectorRemoval = (usize, usize, f64);

/// Runs the filter over raw vectors. Returns kept positions in input order
/// and the removals.
pub fn dedup_vectors(
    vectors: &[EmbeddingVector],
    config: &DedupConfig,
) -> Result<(Vec<usize>, Vec<VectorRemoval>), DedupError> {
    config.validate()?;
    let first = vectors.first().ok_or(DedupError::Empty)?;
    let dim = first.dimension();
    let units: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            if v.dimension() != dim {
                return Err(DedupError::DimensionDrift {
                    expected: dim,
                    found: v.dimension(),
                });
            }
            unit(v.values()).map_err(|e| DedupError::Index(e.into()))
        })
        .collect::<Result<_, _>>()?;
    let kind = config
        .index_kind
        .resolve(vectors.len(), config.exact_fallback_limit);
    let mut index = empty_index(kind, dim, &config.hnsw);
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    match config.semantics {
        DedupSemantics::KeepFirst => {
            for (i, u) in units.iter().enumerate() {
                match index.nearest(u, None) {
                    Some(n) if n.similarity > config.threshold => {
                        removed.push((i, n.id, n.similarity))
                    }
                    _ => {
                        index.insert(i, u)?;
                        kept.push(i);
                    }
                }
            }
        }
        DedupSemantics::FullSet => {
            for (i, u) in units.iter().enumerate() {
                index.insert(i, u)?;
            }
            for (i, u) in units.iter().enumerate() {
                match index.nearest(u, Some(i)) {
                    Some(n) if n.similarity > config.threshold => {
                        removed.push((i, n.id, n.similarity))
                    }
                    _ => kept.push(i),
                }
            }
        }
    }
    Ok((kept, removed))
}

/// Embeds every record and drops near duplicates. Kept records gain a
/// dedup lineage step.
pub fn dedup_filter(
    records: Vec<InstructionRecord>,
    config: &DedupConfig,
    gateway: &Gateway,
) -> Result<(Vec<InstructionRecord>, RemovalLog), DedupError> {
    config.validate()?;
    if records.is_empty() {
        return Err(DedupError::Empty);
    }
    let texts: Vec<String> = records.iter().map(sample_text).collect();
    let vectors = gateway.embed(&texts)?;
    let (kept, removed) = dedup_vectors(&vectors, config)?;
    let log = RemovalLog {
        removed: removed
            .into_iter()
            .map(|(i, n, s)| Removal {
                record_id: records[i].id.clone(),
                nearest_id: records[n].id.clone(),
                similarity: s,
            })
            .collect(),
    };
    let mut keep = vec![false; records.len()];
    for i in kept {
        keep[i] = true;
    }
    let out = records
        .into_iter()
        .zip(keep)
        .filter_map(|(mut r, k)| {
            k.then(|| {
                r.lineage.push(LineageStep::Dedup {
                    threshold: config.threshold,
                });
                r
            })
        })
        .collect();
    Ok((out, log))
}
