//! Seeded synthetic sequences: random-walk ground-truth boxes plus noisy
//! embedded detections, used as an end-to-end test world for the tracker and
//! the metrics.
//!
//! Every identity owns a unit latent vector; each observation's embedding is
//! `normalize(latent + σ·ε)` with ε standard normal. Ground-truth boxes live
//! on a 1/8 pixel grid so they survive the MOTChallenge text round trip.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, FrameDetections, SequenceMeta};
use crate::geometry::{dot, BBox, Embedding};
use crate::metrics::{GtObject, LabeledScene, PredObject};
use crate::tracker::{Detection, TrackOutput};

/// Latent pairs at or above this cosine similarity are redrawn.
const MAX_LATENT_COSINE: f64 = 1.0 - 1e-6;
const MAX_DRAWS: usize = 10_000;

/// Scripted occlusion of one identity, for reproducible gap scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedOcclusion {
    pub identity: u64,
    pub start_frame: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub videos: usize,
    pub frames: u64,
    pub identities: usize,
    /// Identity k (0-based) gets category `1 + k % categories`.
    pub categories: u32,
    pub embedding_dim: usize,
    pub noise_sigma: f64,
    /// Per-frame chance that a visible identity starts an occlusion.
    pub occlusion_probability: f64,
    /// Inclusive range of occlusion lengths in frames.
    pub occlusion_duration: [u64; 2],
    pub forced_occlusions: Vec<ForcedOcclusion>,
    pub miss_probability: f64,
    /// Mean number of false positives per frame.
    pub false_positive_rate: f64,
    /// Random-walk step, as a fraction of the image size.
    pub motion_step: f64,
    /// Box side range, as a fraction of the image size.
    pub box_size: [f64; 2],
    /// Detection box jitter, as a fraction of the box size.
    pub box_noise: f64,
    pub score_range: [f64; 2],
    pub image_width: u32,
    pub image_height: u32,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            videos: 1,
            frames: 50,
            identities: 5,
            categories: 1,
            embedding_dim: 32,
            noise_sigma: 0.0,
            occlusion_probability: 0.0,
            occlusion_duration: [3, 8],
            forced_occlusions: Vec::new(),
            miss_probability: 0.0,
            false_positive_rate: 0.0,
            motion_step: 0.005,
            box_size: [0.05, 0.2],
            box_noise: 0.0,
            score_range: [0.6, 1.0],
            image_width: 1920,
            image_height: 1080,
            seed: 0,
        }
    }
}

fn probability(v: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} {v} outside [0, 1]")))
    }
}

fn non_negative(v: f64, name: &str) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and non-negative, got {v}")))
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 {
            return Err(Error::InvalidParameter("videos must be at least 1".into()));
        }
        if self.categories == 0 {
            return Err(Error::InvalidParameter("categories must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        non_negative(self.noise_sigma, "noise sigma")?;
        probability(self.occlusion_probability, "occlusion probability")?;
        probability(self.miss_probability, "miss probability")?;
        let [lo, hi] = self.occlusion_duration;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidParameter(format!("occlusion duration range [{lo}, {hi}] is empty")));
        }
        non_negative(self.false_positive_rate, "false positive rate")?;
        non_negative(self.motion_step, "motion step")?;
        non_negative(self.box_noise, "box noise")?;
        let [lo, hi] = self.box_size;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidParameter(format!("box size range [{lo}, {hi}] invalid")));
        }
        let [lo, hi] = self.score_range;
        probability(lo, "score bound")?;
        probability(hi, "score bound")?;
        if lo > hi {
            return Err(Error::InvalidParameter(format!("score range [{lo}, {hi}] is empty")));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame: u64,
    pub truths: Vec<GtObject>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub video_id: u64,
    pub image_width: u32,
    pub image_height: u32,
    pub frames: Vec<SimFrame>,
    /// Latent of identity `k + 1` at index k.
    pub latents: Vec<Embedding>,
}

impl SyntheticSequence {
    pub fn image_size(&self) -> (f64, f64) {
        (self.image_width as f64, self.image_height as f64)
    }

    /// Ground truth as `(frame, object)`, sorted by frame then id.
    pub fn truths(&self) -> Vec<(u64, GtObject)> {
        self.frames
            .iter()
            .flat_map(|f| f.truths.iter().map(move |t| (f.frame, *t)))
            .collect()
    }

    /// Detections of the frames that have any.
    pub fn detections(&self) -> FrameDetections {
        self.frames
            .iter()
            .filter(|f| !f.detections.is_empty())
            .map(|f| (f.frame, f.detections.clone()))
            .collect()
    }

    pub fn meta(&self, cfg: Option<&SimulatorConfig>) -> SequenceMeta {
        SequenceMeta {
            image_width: self.image_width,
            image_height: self.image_height,
            video_id: self.video_id,
            frames: self.frames.len() as u64,
            simulator: cfg.cloned(),
        }
    }

    /// Ground truth paired with tracker output, ready for evaluation.
    pub fn scene_with(&self, output: &TrackOutput) -> Result<LabeledScene> {
        LabeledScene::from_objects(self.truths(), track_predictions(output))
    }
}

/// Tracker output as evaluation predictions, keeping categories.
pub fn track_predictions(output: &TrackOutput) -> Vec<(u64, PredObject)> {
    output
        .frames
        .iter()
        .flat_map(|f| {
            f.objects.iter().map(move |o| {
                (
                    f.frame,
                    PredObject {
                        instance_id: o.instance_id,
                        category: Some(o.category_id),
                        bbox: o.bbox,
                        score: o.score,
                    },
                )
            })
        })
        .collect()
}

/// Independent random streams so that changing one knob (say σ) leaves the
/// other draws untouched.
#[derive(Clone, Copy)]
enum Stream {
    Latent = 0,
    Trajectory = 1,
    Visibility = 2,
    Noise = 3,
    Clutter = 4,
    Score = 5,
    BoxNoise = 6,
}

fn stream(seed: u64, video: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(video * 16 + s as u64);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn quantize(v: f64) -> f64 {
    (v * 8.0).round() / 8.0
}

fn draw_latents(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Result<Vec<Embedding>> {
    let mut out: Vec<Embedding> = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        draws += 1;
        if draws > MAX_DRAWS {
            return Err(Error::InvalidParameter(format!(
                "cannot draw {n} separated latents in dimension {d}"
            )));
        }
        let Ok(v) = Embedding::new(gaussian_vec(rng, d)).normalized() else {
            continue;
        };
        if out.iter().all(|u| dot(u.as_slice(), v.as_slice()) < MAX_LATENT_COSINE) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Orthonormal basis of the latent span; empty when the latents fill the
/// whole space.
fn latent_basis(latents: &[Embedding], d: usize) -> Vec<Vec<f64>> {
    if latents.len() >= d {
        return Vec::new();
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(latents.len());
    for l in latents {
        let mut v = l.as_slice().to_vec();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-9 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Random unit vector orthogonal to the latent span.
fn clutter_embedding(rng: &mut ChaCha8Rng, basis: &[Vec<f64>], d: usize) -> Embedding {
    loop {
        let mut v = gaussian_vec(rng, d);
        for _ in 0..2 {
            for b in basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        if dot(&v, &v) > 1e-6 {
            if let Ok(e) = Embedding::new(v).normalized() {
                return e;
            }
        }
    }
}

struct Walker {
    left: f64,
    top: f64,
    w: f64,
    h: f64,
    category: u32,
    occluded_until: u64,
}

/// Generates the first video of `cfg`.
pub fn generate(cfg: &SimulatorConfig) -> Result<SyntheticSequence> {
    generate_video(cfg, 0)
}

/// Generates every video of `cfg`, ids 0.. in order.
pub fn generate_all(cfg: &SimulatorConfig) -> Result<Vec<SyntheticSequence>> {
    (0..cfg.videos as u64).map(|v| generate_video(cfg, v)).collect()
}

pub fn generate_video(cfg: &SimulatorConfig, video_id: u64) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let (iw, ih) = (cfg.image_width as f64, cfg.image_height as f64);
    let d = cfg.embedding_dim;
    let mut latent_rng = stream(cfg.seed, video_id, Stream::Latent);
    let mut traj = stream(cfg.seed, video_id, Stream::Trajectory);
    let mut vis = stream(cfg.seed, video_id, Stream::Visibility);
    let mut noise = stream(cfg.seed, video_id, Stream::Noise);
    let mut clutter = stream(cfg.seed, video_id, Stream::Clutter);
    let mut scores = stream(cfg.seed, video_id, Stream::Score);
    let mut jitter = stream(cfg.seed, video_id, Stream::BoxNoise);

    let latents = draw_latents(&mut latent_rng, cfg.identities, d)?;
    let basis = latent_basis(&latents, d);
    let [smin, smax] = cfg.box_size;
    let size = |rng: &mut ChaCha8Rng, extent: f64| quantize(rng.random_range(smin..=smax) * extent).max(0.125);
    let mut walkers: Vec<Walker> = (0..cfg.identities)
        .map(|k| {
            let w = size(&mut traj, iw);
            let h = size(&mut traj, ih);
            Walker {
                left: quantize(traj.random_range(0.0..=(iw - w))),
                top: quantize(traj.random_range(0.0..=(ih - h))),
                w,
                h,
                category: 1 + (k as u32 % cfg.categories),
                occluded_until: 0,
            }
        })
        .collect();
    let poisson = if cfg.false_positive_rate > 0.0 {
        Some(Poisson::new(cfg.false_positive_rate).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    let [score_lo, score_hi] = cfg.score_range;

    let mut frames = Vec::with_capacity(cfg.frames as usize);
    for f in 1..=cfg.frames {
        let mut truths = Vec::with_capacity(walkers.len());
        let mut detections = Vec::with_capacity(walkers.len());
        for (k, wk) in walkers.iter_mut().enumerate() {
            if f > 1 {
                let dx: f64 = StandardNormal.sample(&mut traj);
                let dy: f64 = StandardNormal.sample(&mut traj);
                wk.left = quantize(wk.left + dx * cfg.motion_step * iw).clamp(0.0, iw - wk.w);
                wk.top = quantize(wk.top + dy * cfg.motion_step * ih).clamp(0.0, ih - wk.h);
            }
            let bbox = BBox::from_pixel_ltwh(wk.left, wk.top, wk.w, wk.h, iw, ih)?;
            let id = k as u64 + 1;
            truths.push(GtObject {
                track_id: id,
                category: wk.category,
                bbox,
            });

            let forced = cfg
                .forced_occlusions
                .iter()
                .any(|o| o.identity == id && f >= o.start_frame && f < o.start_frame + o.length);
            let mut visible = !forced;
            if f < wk.occluded_until {
                visible = false;
            } else if cfg.occlusion_probability > 0.0 && vis.random_bool(cfg.occlusion_probability) {
                let [lo, hi] = cfg.occlusion_duration;
                wk.occluded_until = f + vis.random_range(lo..=hi);
                visible = false;
            }
            if visible && cfg.miss_probability > 0.0 && vis.random_bool(cfg.miss_probability) {
                visible = false;
            }
            if !visible {
                continue;
            }

            let embedding = if cfg.noise_sigma == 0.0 {
                latents[k].clone()
            } else {
                let eps = gaussian_vec(&mut noise, d);
                let v: Vec<f64> = latents[k]
                    .as_slice()
                    .iter()
                    .zip(&eps)
                    .map(|(l, e)| l + cfg.noise_sigma * e)
                    .collect();
                Embedding::new(v).normalized().unwrap_or_else(|_| latents[k].clone())
            };
            let det_box = if cfg.box_noise > 0.0 {
                let mut g = || -> f64 { StandardNormal.sample(&mut jitter) };
                let s = cfg.box_noise;
                BBox::new(
                    bbox.cx + g() * s * bbox.w,
                    bbox.cy + g() * s * bbox.h,
                    (bbox.w * (1.0 + g() * s)).abs(),
                    (bbox.h * (1.0 + g() * s)).abs(),
                )?
            } else {
                bbox
            };
            detections.push(Detection {
                category_id: wk.category,
                score: scores.random_range(score_lo..=score_hi),
                bbox: det_box,
                embedding,
            });
        }

        if let Some(p) = &poisson {
            let n = p.sample(&mut clutter) as usize;
            for _ in 0..n {
                let w = size(&mut clutter, iw);
                let h = size(&mut clutter, ih);
                let left = quantize(clutter.random_range(0.0..=(iw - w)));
                let top = quantize(clutter.random_range(0.0..=(ih - h)));
                let category = 1 + clutter.random_range(0..cfg.categories);
                detections.push(Detection {
                    category_id: category,
                    score: scores.random_range(score_lo..=score_hi),
                    bbox: BBox::from_pixel_ltwh(left, top, w, h, iw, ih)?,
                    embedding: clutter_embedding(&mut clutter, &basis, d),
                });
            }
        }
        frames.push(SimFrame {
            frame: f,
            truths,
            detections,
        });
    }
    Ok(SyntheticSequence {
        video_id,
        image_width: cfg.image_width,
        image_height: cfg.image_height,
        frames,
        latents,
    })
}

pub const GT_FILE: &str = "gt.txt";
pub const DETECTIONS_FILE: &str = "dets.jsonl";
pub const META_FILE: &str = "meta.json";

/// Writes `gt.txt`, `dets.jsonl` and `meta.json` into `dir`.
pub fn export(seq: &SyntheticSequence, cfg: Option<&SimulatorConfig>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    formats::write_mot_gt(&seq.truths(), seq.image_size(), &dir.join(GT_FILE))?;
    formats::write_detections(&seq.detections(), &dir.join(DETECTIONS_FILE))?;
    formats::write_meta(&seq.meta(cfg), &dir.join(META_FILE))
}

/// Directory of video `video_id` when several are exported side by side.
pub fn video_dir(root: &Path, video_id: u64) -> std::path::PathBuf {
    root.join(format!("seq-{video_id:04}"))
}

/// Exports every sequence: a single one goes straight into `dir`, several
/// go into `seq-NNNN` subdirectories.
pub fn export_all(seqs: &[SyntheticSequence], cfg: Option<&SimulatorConfig>, dir: &Path) -> Result<()> {
    match seqs {
        [one] => export(one, cfg, dir),
        _ => seqs
            .iter()
            .try_for_each(|s| export(s, cfg, &video_dir(dir, s.video_id))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedSequence {
    pub meta: SequenceMeta,
    pub truths: Vec<(u64, GtObject)>,
    pub detections: FrameDetections,
}

/// Reads back a directory written by [`export`].
pub fn import(dir: &Path) -> Result<ImportedSequence> {
    let meta = formats::read_meta(&dir.join(META_FILE))?;
    let truths = formats::parse_mot_gt(&dir.join(GT_FILE), meta.image_size())?;
    let detections = formats::parse_detections(&dir.join(DETECTIONS_FILE))?;
    Ok(ImportedSequence {
        meta,
        truths,
        detections,
    })
}
