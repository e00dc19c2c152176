//! Progress memory: blueprints indexed at task and anchor level.
//!
//! Every stored vector is unit length, so cosine similarity is a dot
//! product. Retrieval is an exhaustive scan; ties keep insertion order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;

#[derive(Debug, Error)]
pub enum ProgressError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedder produces {got}-dim vectors, memory holds {expected}-dim vectors")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("blueprint has no anchors")]
    NoAnchors,
    #[error("malformed memory file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Text to vector. Implementations must be deterministic.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Unnormalized vector of length `dimension()`.
    fn embed_raw(&self, text: &str) -> Vec<f64>;
}

/// L2-normalized embedding of `text`.
pub fn embed(embedder: &dyn Embedder, text: &str) -> Result<Vec<f64>, ProgressError> {
    if text.trim().is_empty() {
        return Err(ProgressError::EmptyText);
    }
    let mut v = embedder.embed_raw(text);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ProgressError::EmptyText);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed bag of lowercase alphanumeric tokens with a signed bucket per
/// token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl HashingEmbedder {
    pub const NAME: &'static str = "hashing-fnv1a";
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        HashingEmbedder { dimension: dimension.max(1) }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(Self::DEFAULT_DIMENSION)
    }
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

impl Embedder for HashingEmbedder {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let mut toks = tokens(text);
        if toks.is_empty() && !text.trim().is_empty() {
            toks.push(text.trim().to_string());
        }
        for t in toks {
            let bucket = (fnv1a(t.as_bytes()) % self.dimension as u64) as usize;
            let sign = if fnv1a(format!("sign:{t}").as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

/// One `(o_i, a_i)` pair: the observation the action was taken on, and the
/// action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkStep {
    pub observation: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlueprintAnchor {
    pub text: String,
    /// 1-based inclusive action range in the source trajectory.
    pub span: Option<(usize, usize)>,
    pub chunk: Vec<ChunkStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blueprint {
    pub task_id: String,
    pub task_instruction: String,
    pub anchors: Vec<BlueprintAnchor>,
    /// Set when the source trajectory gave nothing to segment.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub embedding: Vec<f64>,
    pub anchor_text: String,
    pub chunk: Vec<ChunkStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub task_id: String,
    pub task_instruction: String,
    pub task_embedding: Vec<f64>,
    pub anchor_entries: Vec<AnchorEntry>,
}

impl MemoryEntry {
    pub fn anchor_texts(&self) -> Vec<&str> {
        self.anchor_entries.iter().map(|a| a.anchor_text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressMemory {
    pub embedder_name: String,
    pub dimension: usize,
    pub entries: Vec<MemoryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievedAnchor<'m> {
    pub score: f64,
    pub entry: usize,
    pub anchor: usize,
    pub anchor_text: &'m str,
    pub chunk: &'m [ChunkStep],
}

fn rank<T: Copy>(scored: Vec<(f64, T)>, k: usize) -> Vec<(f64, T)> {
    let mut scored = scored;
    // Stable sort: equal scores keep scan order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(k);
    scored
}

impl ProgressMemory {
    pub fn new(embedder: &dyn Embedder) -> Self {
        ProgressMemory {
            embedder_name: embedder.name().to_string(),
            dimension: embedder.dimension(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn anchor_count(&self) -> usize {
        self.entries.iter().map(|e| e.anchor_entries.len()).sum()
    }

    fn check_dim(&self, embedder: &dyn Embedder) -> Result<(), ProgressError> {
        if embedder.dimension() != self.dimension {
            return Err(ProgressError::DimensionMismatch { expected: self.dimension, got: embedder.dimension() });
        }
        Ok(())
    }

    pub fn add_blueprint(&mut self, blueprint: &Blueprint, embedder: &dyn Embedder) -> Result<(), ProgressError> {
        self.check_dim(embedder)?;
        if blueprint.anchors.is_empty() {
            return Err(ProgressError::NoAnchors);
        }
        let anchor_entries = blueprint
            .anchors
            .iter()
            .map(|a| {
                Ok(AnchorEntry {
                    embedding: embed(embedder, &a.text)?,
                    anchor_text: a.text.clone(),
                    chunk: a.chunk.clone(),
                })
            })
            .collect::<Result<Vec<_>, ProgressError>>()?;
        self.entries.push(MemoryEntry {
            task_id: blueprint.task_id.clone(),
            task_instruction: blueprint.task_instruction.clone(),
            task_embedding: embed(embedder, &blueprint.task_instruction)?,
            anchor_entries,
        });
        Ok(())
    }

    pub fn topk_tasks(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
    ) -> Result<Vec<(f64, &MemoryEntry)>, ProgressError> {
        self.topk_tasks_with(Exec::Sequential, embedder, query, k)
    }

    pub fn topk_tasks_with(
        &self,
        exec: Exec,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
    ) -> Result<Vec<(f64, &MemoryEntry)>, ProgressError> {
        if k == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        self.check_dim(embedder)?;
        let q = embed(embedder, query)?;
        let scores = exec.map(&self.entries, |e| dot(&q, &e.task_embedding));
        let ranked = rank(scores.into_iter().enumerate().map(|(i, s)| (s, i)).collect(), k);
        Ok(ranked.into_iter().map(|(s, i)| (s, &self.entries[i])).collect())
    }

    pub fn topk_anchors(
        &self,
        embedder: &dyn Embedder,
        anchor_text: &str,
        k: usize,
    ) -> Result<Vec<RetrievedAnchor<'_>>, ProgressError> {
        self.topk_anchors_with(Exec::Sequential, embedder, anchor_text, k)
    }

    pub fn topk_anchors_with(
        &self,
        exec: Exec,
        embedder: &dyn Embedder,
        anchor_text: &str,
        k: usize,
    ) -> Result<Vec<RetrievedAnchor<'_>>, ProgressError> {
        if k == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        self.check_dim(embedder)?;
        let q = embed(embedder, anchor_text)?;
        let flat: Vec<(usize, usize)> = self
            .entries
            .iter()
            .enumerate()
            .flat_map(|(i, e)| (0..e.anchor_entries.len()).map(move |j| (i, j)))
            .collect();
        let scores = exec.map(&flat, |&(i, j)| dot(&q, &self.entries[i].anchor_entries[j].embedding));
        let ranked = rank(scores.into_iter().zip(flat).collect(), k);
        Ok(ranked
            .into_iter()
            .map(|(score, (i, j))| {
                let a = &self.entries[i].anchor_entries[j];
                RetrievedAnchor { score, entry: i, anchor: j, anchor_text: &a.anchor_text, chunk: &a.chunk }
            })
            .collect())
    }

    /// Recomputes every vector with `embedder`.
    pub fn reembed(&mut self, embedder: &dyn Embedder) -> Result<(), ProgressError> {
        for e in &mut self.entries {
            e.task_embedding = embed(embedder, &e.task_instruction)?;
            for a in &mut e.anchor_entries {
                a.embedding = embed(embedder, &a.anchor_text)?;
            }
        }
        self.embedder_name = embedder.name().to_string();
        self.dimension = embedder.dimension();
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("memory serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ProgressError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Loads a memory file, re-embedding when it was built with a different
    /// embedder.
    pub fn load(path: &Path, embedder: &dyn Embedder) -> Result<Self, ProgressError> {
        let mut m: ProgressMemory = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.embedder_name != embedder.name() || m.dimension != embedder.dimension() {
            tracing::info!(from = %m.embedder_name, to = embedder.name(), "re-embedding progress memory");
            m.reembed(embedder)?;
        }
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
