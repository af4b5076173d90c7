//! Training batch construction.
//!
//! Tracking batches draw `videos` distinct videos uniformly and then
//! `frames` distinct frames uniformly within each, so that the same identity
//! shows up several times per batch. Pre-training batches take single images
//! and pair each with a second view of itself.
//!
//! Draws are a pure function of `(seed, ordinal)`: a [`BatchSampler`] stream
//! with seed `s` produces its `n`-th batch from ChaCha8 stream `n` of key `s`.

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub video_id: u64,
    pub frame_ids: Vec<u64>,
}

impl VideoEntry {
    pub fn frame_count(&self) -> usize {
        self.frame_ids.len()
    }
}

/// The videos (or, for detection data, one-frame pseudo-videos) available
/// for sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub videos: Vec<VideoEntry>,
}

impl DatasetIndex {
    pub fn new(videos: Vec<VideoEntry>) -> Result<Self> {
        let index = Self { videos };
        index.validate()?;
        Ok(index)
    }

    /// `count` videos with ids `0..count`, each holding frames `1..=frames`.
    pub fn uniform(count: u64, frames: u64) -> Self {
        Self {
            videos: (0..count)
                .map(|v| VideoEntry {
                    video_id: v,
                    frame_ids: (1..=frames).collect(),
                })
                .collect(),
        }
    }

    /// An index of single images, each a one-frame pseudo-video.
    pub fn images(ids: impl IntoIterator<Item = u64>) -> Self {
        Self {
            videos: ids
                .into_iter()
                .map(|id| VideoEntry {
                    video_id: id,
                    frame_ids: vec![0],
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for v in &self.videos {
            if !ids.insert(v.video_id) {
                return Err(Error::InvalidParameter(format!(
                    "video {} listed twice",
                    v.video_id
                )));
            }
            let mut frames = HashSet::new();
            if let Some(f) = v.frame_ids.iter().find(|f| !frames.insert(**f)) {
                return Err(Error::InvalidParameter(format!(
                    "frame {f} repeated in video {}",
                    v.video_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchItem {
    pub video_id: u64,
    pub frame_id: u64,
    /// Augmentation view (0 or 1); only set in pre-training batches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub items: Vec<BatchItem>,
}

/// A deterministic stream of batches.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    seed: u64,
    ordinal: u64,
}

impl BatchSampler {
    pub fn new(seed: u64) -> Self {
        Self { seed, ordinal: 0 }
    }

    /// Number of batches drawn so far.
    pub fn ordinal(&self) -> u64 {
        self.ordinal
    }

    fn next_rng(&mut self) -> ChaCha8Rng {
        let rng = rng_for(self.seed, self.ordinal);
        self.ordinal += 1;
        rng
    }

    pub fn next_tracking_batch(
        &mut self,
        index: &DatasetIndex,
        videos: usize,
        frames: usize,
    ) -> Result<BatchSpec> {
        tracking_batch(index, videos, frames, &mut self.next_rng())
    }

    pub fn next_pretraining_batch(&mut self, index: &DatasetIndex, images: usize) -> Result<BatchSpec> {
        pretraining_batch(index, images, &mut self.next_rng())
    }
}

fn rng_for(seed: u64, ordinal: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ordinal);
    rng
}

/// Draws `videos` × `frames` items. Videos with fewer than `frames` frames
/// are not eligible.
pub fn sample_tracking_batch(
    index: &DatasetIndex,
    videos: usize,
    frames: usize,
    seed: u64,
) -> Result<BatchSpec> {
    tracking_batch(index, videos, frames, &mut rng_for(seed, 0))
}

/// Draws `images` distinct images and emits each twice, with views 0 and 1.
pub fn build_pretraining_batch(index: &DatasetIndex, images: usize, seed: u64) -> Result<BatchSpec> {
    pretraining_batch(index, images, &mut rng_for(seed, 0))
}

fn tracking_batch(
    index: &DatasetIndex,
    videos: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchSpec> {
    if videos == 0 || frames == 0 {
        return Err(Error::InvalidParameter(
            "videos and frames per video must be positive".into(),
        ));
    }
    let eligible: Vec<&VideoEntry> = index
        .videos
        .iter()
        .filter(|v| v.frame_count() >= frames)
        .collect();
    if eligible.len() < videos {
        return Err(Error::InsufficientVideos {
            needed: videos,
            available: eligible.len(),
        });
    }
    let mut items = Vec::with_capacity(videos * frames);
    for vi in index::sample(rng, eligible.len(), videos) {
        let video = eligible[vi];
        let mut picked: Vec<u64> = index::sample(rng, video.frame_count(), frames)
            .into_iter()
            .map(|fi| video.frame_ids[fi])
            .collect();
        picked.sort_unstable();
        items.extend(picked.into_iter().map(|frame_id| BatchItem {
            video_id: video.video_id,
            frame_id,
            view: None,
        }));
    }
    Ok(BatchSpec { items })
}

fn pretraining_batch(index: &DatasetIndex, images: usize, rng: &mut ChaCha8Rng) -> Result<BatchSpec> {
    if images == 0 {
        return Err(Error::InvalidParameter("image count must be positive".into()));
    }
    let pool: Vec<(u64, u64)> = index
        .videos
        .iter()
        .flat_map(|v| v.frame_ids.iter().map(move |&f| (v.video_id, f)))
        .collect();
    if images > pool.len() {
        return Err(Error::InsufficientImages {
            needed: images,
            available: pool.len(),
        });
    }
    let mut items = Vec::with_capacity(2 * images);
    for i in index::sample(rng, pool.len(), images) {
        let (video_id, frame_id) = pool[i];
        for view in 0..2u8 {
            items.push(BatchItem {
                video_id,
                frame_id,
                view: Some(view),
            });
        }
    }
    Ok(BatchSpec { items })
}
