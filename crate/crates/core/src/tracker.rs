//! Online ID assignment over a FIFO memory of tracking embeddings.
//!
//! Each frame, detections passing the objectness threshold are compared with
//! every instance held in memory; an instance's similarity is the maximum
//! cosine similarity over all of its remembered embeddings. Every detection
//! also gets a private "new instance" column valued at the new-instance
//! threshold. The assignment maximizing total similarity decides which
//! detections inherit an id and which start a new one. Afterwards the
//! frame's embeddings are pushed as one memory bucket and the oldest bucket
//! is evicted once more than `memory_length` are held.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix, Objective};
use crate::error::{Error, Result};
use crate::geometry::{dot_table, BBox, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub objectness_threshold: f64,
    pub new_instance_threshold: f64,
    /// Number of past frames kept in memory.
    pub memory_length: usize,
    /// Expected embedding dimension; inferred from the first detection when
    /// unset.
    pub embedding_dim: Option<usize>,
}

impl TrackerConfig {
    pub fn mot17() -> Self {
        Self {
            objectness_threshold: 0.5,
            new_instance_threshold: 0.5,
            memory_length: 20,
            embedding_dim: None,
        }
    }

    pub fn bdd100k() -> Self {
        Self {
            objectness_threshold: 0.4,
            new_instance_threshold: 0.5,
            memory_length: 9,
            embedding_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.memory_length == 0 {
            return Err(Error::InvalidParameter("memory length must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.objectness_threshold) {
            return Err(Error::InvalidParameter(format!(
                "objectness threshold {} outside [0, 1]",
                self.objectness_threshold
            )));
        }
        if !self.new_instance_threshold.is_finite() {
            return Err(Error::NonFinite("new instance threshold"));
        }
        if self.embedding_dim == Some(0) {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::mot17()
    }
}

/// One detector output for the current frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category_id: u32,
    pub score: f64,
    pub bbox: BBox,
    pub embedding: Embedding,
}

impl Detection {
    /// Builds a detection from per-category probabilities: the category is
    /// the arg-max and the score (objectness) is its probability.
    pub fn from_class_scores(scores: &[f64], bbox: BBox, embedding: Embedding) -> Result<Self> {
        let (category, score) = scores
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (c, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((c, p)),
            })
            .ok_or_else(|| Error::InvalidParameter("no category scores".into()))?;
        Ok(Self {
            category_id: category as u32,
            score,
            bbox,
            embedding,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub instance_id: u64,
    /// Unit-normalized tracking embedding.
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameBucket {
    pub frame: u64,
    pub entries: Vec<MemoryEntry>,
}

/// FIFO store of identity-labeled embeddings for the most recent frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQueue {
    buckets: VecDeque<FrameBucket>,
    capacity: usize,
    next_id: u64,
}

impl MemoryQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            buckets: VecDeque::with_capacity(capacity + 1),
            capacity,
            next_id: 1,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Buckets from oldest to newest.
    pub fn buckets(&self) -> impl Iterator<Item = &FrameBucket> {
        self.buckets.iter()
    }

    /// Id the next new instance will receive.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Distinct instance ids held in memory, ascending.
    pub fn instance_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .buckets
            .iter()
            .flat_map(|b| b.entries.iter().map(|e| e.instance_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn allocate_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Appends a bucket, evicting the oldest ones beyond capacity.
    pub fn push(&mut self, bucket: FrameBucket) {
        self.buckets.push_back(bucket);
        while self.buckets.len() > self.capacity {
            self.buckets.pop_front();
        }
    }
}

/// Similarity of K detections against J remembered instances plus K
/// new-instance columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub matrix: CostMatrix,
    /// Instance id of each of the first J columns.
    pub instance_ids: Vec<u64>,
}

fn unit_embeddings(dets: &[Detection]) -> Result<Vec<Embedding>> {
    dets.iter().map(|d| d.embedding.normalized()).collect()
}

/// Builds the K × (J + K) maximization matrix for `dets` against `memory`.
pub fn build_similarity_matrix(
    dets: &[Detection],
    memory: &MemoryQueue,
    new_instance_threshold: f64,
) -> Result<SimilarityMatrix> {
    let units = unit_embeddings(dets)?;
    similarity_from_units(&units, memory, new_instance_threshold)
}

fn similarity_from_units(
    units: &[Embedding],
    memory: &MemoryQueue,
    new_instance_threshold: f64,
) -> Result<SimilarityMatrix> {
    let k = units.len();
    let instance_ids = memory.instance_ids();
    let j = instance_ids.len();
    let column: HashMap<u64, usize> = instance_ids.iter().enumerate().map(|(c, &id)| (id, c)).collect();

    let dim = units
        .first()
        .map(|u| u.dim())
        .or_else(|| memory.buckets.iter().flat_map(|b| b.entries.first()).next().map(|e| e.embedding.dim()));
    if let Some(dim) = dim {
        let all = units.iter().map(|u| u.dim());
        let remembered = memory.buckets.iter().flat_map(|b| b.entries.iter().map(|e| e.embedding.dim()));
        if let Some(actual) = all.chain(remembered).find(|&d| d != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual });
        }
    }

    // best[r * j + c]; every instance has at least one entry so -2 never survives
    const CHUNK: usize = 64;
    let rows: Vec<&[f64]> = units.iter().map(|u| u.as_slice()).collect();
    let entries: Vec<&MemoryEntry> = memory.buckets.iter().flat_map(|b| &b.entries).collect();
    let mut scores = vec![0.0f64; k * CHUNK];
    let mut best = vec![-2.0f64; k * j];
    for chunk in entries.chunks(CHUNK) {
        let keys: Vec<&[f64]> = chunk.iter().map(|e| e.embedding.as_slice()).collect();
        let scores = &mut scores[..k * chunk.len()];
        dot_table(&rows, &keys, scores);
        for (entry, col) in chunk.iter().zip(scores.chunks_exact(k.max(1))) {
            let c = column[&entry.instance_id];
            for (r, &s) in col.iter().enumerate() {
                let slot = &mut best[r * j + c];
                *slot = slot.max(s.clamp(-1.0, 1.0));
            }
        }
    }

    let mut matrix = CostMatrix::forbidden(k, j + k, Objective::Maximize);
    for r in 0..k {
        for c in 0..j {
            matrix.set(r, c, best[r * j + c])?;
        }
        matrix.set(r, j + r, new_instance_threshold)?;
    }
    Ok(SimilarityMatrix {
        matrix,
        instance_ids,
    })
}

/// Assigns an instance id to each detection, drawing fresh ids from
/// `memory` for detections that win their new-instance column.
pub fn associate(
    dets: &[Detection],
    memory: &mut MemoryQueue,
    cfg: &TrackerConfig,
) -> Result<Vec<u64>> {
    let units = unit_embeddings(dets)?;
    associate_units(&units, memory, cfg)
}

fn associate_units(
    units: &[Embedding],
    memory: &mut MemoryQueue,
    cfg: &TrackerConfig,
) -> Result<Vec<u64>> {
    let sim = similarity_from_units(units, memory, cfg.new_instance_threshold)?;
    let assignment = solve_assignment(&sim.matrix);
    let j = sim.instance_ids.len();
    let mut ids = Vec::with_capacity(units.len());
    for r in 0..units.len() {
        let id = match assignment.col_for_row(r) {
            Some(c) if c < j => sim.instance_ids[c],
            // own new-instance column; every row keeps at least that option
            _ => memory.allocate_id(),
        };
        ids.push(id);
    }
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub instance_id: u64,
    pub category_id: u32,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: u64,
    pub objects: Vec<TrackedObject>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub frames: Vec<TrackFrame>,
}

/// Stateful online tracker for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    memory: MemoryQueue,
    last_frame: Option<u64>,
    dim: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            memory: MemoryQueue::new(cfg.memory_length),
            last_frame: None,
            dim: cfg.embedding_dim,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn memory(&self) -> &MemoryQueue {
        &self.memory
    }

    /// Processes one frame. Frame numbers must increase strictly; skipped
    /// frame numbers count as frames without detections.
    pub fn step(&mut self, frame: u64, detections: &[Detection]) -> Result<TrackFrame> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::OutOfOrderFrame { frame, last });
            }
            let skipped = (frame - last - 1).min(self.cfg.memory_length as u64);
            for f in frame - skipped..frame {
                self.memory.push(FrameBucket {
                    frame: f,
                    entries: Vec::new(),
                });
            }
        }

        let kept: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.score >= self.cfg.objectness_threshold)
            .collect();
        for d in &kept {
            let dim = *self.dim.get_or_insert(d.embedding.dim());
            if d.embedding.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d.embedding.dim(),
                });
            }
        }
        let units = kept
            .iter()
            .map(|d| d.embedding.normalized())
            .collect::<Result<Vec<_>>>()?;
        let ids = associate_units(&units, &mut self.memory, &self.cfg)?;

        let objects = kept
            .iter()
            .zip(&ids)
            .map(|(d, &id)| TrackedObject {
                instance_id: id,
                category_id: d.category_id,
                score: d.score,
                bbox: d.bbox,
            })
            .collect();
        self.memory.push(FrameBucket {
            frame,
            entries: ids
                .into_iter()
                .zip(units)
                .map(|(instance_id, embedding)| MemoryEntry {
                    instance_id,
                    embedding,
                })
                .collect(),
        });
        debug_assert!(self.memory.len() <= self.cfg.memory_length);
        self.last_frame = Some(frame);
        Ok(TrackFrame { frame, objects })
    }
}

/// Tracks a whole sequence given as `(frame, detections)` in temporal order.
pub fn run_sequence<'a, I>(stream: I, cfg: &TrackerConfig) -> Result<TrackOutput>
where
    I: IntoIterator<Item = (u64, &'a [Detection])>,
{
    let mut tracker = Tracker::new(*cfg)?;
    let frames = stream
        .into_iter()
        .map(|(frame, dets)| tracker.step(frame, dets))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackOutput { frames })
}
