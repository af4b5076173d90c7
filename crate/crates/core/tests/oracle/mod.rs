//! Exhaustive reference implementations used to cross-check the library.
//! Everything here enumerates instead of optimizing, so inputs must stay
//! small.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use contrack::assignment::{CostMatrix, Objective};
use contrack::geometry::{iou, BBox};
use contrack::metrics::{GtObject, LabeledScene, PredObject, SceneFrame};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = f64::EPSILON;

/// Best total over all row-injective assignments that use the maximum
/// number of permitted pairs.
pub fn brute_force_assignment(m: &CostMatrix) -> Option<f64> {
    fn rec(m: &CostMatrix, r: usize, used: &mut Vec<bool>, count: usize, acc: f64, best: &mut Option<(usize, f64)>) {
        if r == m.rows() {
            let better = match *best {
                None => true,
                Some((bc, bt)) => {
                    count > bc
                        || (count == bc
                            && match m.objective() {
                                Objective::Minimize => acc < bt,
                                Objective::Maximize => acc > bt,
                            })
                }
            };
            if better {
                *best = Some((count, acc));
            }
            return;
        }
        rec(m, r + 1, used, count, acc, best);
        for c in 0..m.cols() {
            if let (false, Some(v)) = (used[c], m.get(r, c)) {
                used[c] = true;
                rec(m, r + 1, used, count + 1, acc + v, best);
                used[c] = false;
            }
        }
    }
    let mut best = None;
    rec(m, 0, &mut vec![false; m.cols()], 0, 0.0, &mut best);
    best.map(|b| b.1)
}

/// Pairs `(gt index, pred index)` maximizing the summed weight over pairs
/// with positive weight.
fn best_partial_matching(w: &[Vec<f64>]) -> Vec<(usize, usize)> {
    fn rec(
        w: &[Vec<f64>],
        r: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if r == w.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        rec(w, r + 1, used, cur, acc, best);
        for c in 0..used.len() {
            if !used[c] && w[r][c] > 0.0 {
                used[c] = true;
                cur.push((r, c));
                rec(w, r + 1, used, cur, acc + w[r][c], best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let cols = w.first().map_or(0, |r| r.len());
    let mut best = (0.0, Vec::new());
    rec(w, 0, &mut vec![false; cols], &mut Vec::new(), 0.0, &mut best);
    best.1
}

fn frame_iou(f: &SceneFrame) -> Vec<Vec<f64>> {
    f.truths
        .iter()
        .map(|t| f.predictions.iter().map(|p| iou(&t.bbox, &p.bbox)).collect())
        .collect()
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ClearCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub frag: usize,
    pub mt: usize,
    pub pt: usize,
    pub ml: usize,
    pub mota: f64,
    pub motp: f64,
}

pub fn clear(scene: &LabeledScene, thr: f64) -> ClearCounts {
    let mut out = ClearCounts::default();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut prev_frame: BTreeMap<u64, u64> = BTreeMap::new();
    let mut covered: BTreeMap<u64, Vec<Option<bool>>> = BTreeMap::new();
    let mut iou_sum = 0.0;
    for (k, f) in scene.frames().iter().enumerate() {
        let s = frame_iou(f);
        let w: Vec<Vec<f64>> = f
            .truths
            .iter()
            .enumerate()
            .map(|(r, t)| {
                f.predictions
                    .iter()
                    .enumerate()
                    .map(|(c, p)| {
                        if s[r][c] < thr - EPS {
                            0.0
                        } else if prev_frame.get(&t.track_id) == Some(&p.instance_id) {
                            1000.0 + s[r][c]
                        } else {
                            s[r][c]
                        }
                    })
                    .collect()
            })
            .collect();
        let pairs = best_partial_matching(&w);
        let mut now = BTreeMap::new();
        for &(r, c) in &pairs {
            let (g, p) = (f.truths[r].track_id, f.predictions[c].instance_id);
            if let Some(&old) = last.get(&g) {
                if old != p {
                    out.idsw += 1;
                }
            }
            last.insert(g, p);
            now.insert(g, p);
            iou_sum += s[r][c];
        }
        for t in &f.truths {
            let v = covered.entry(t.track_id).or_insert_with(|| vec![None; scene.frames().len()]);
            v[k] = Some(now.contains_key(&t.track_id));
        }
        out.tp += pairs.len();
        out.fn_ += f.truths.len() - pairs.len();
        out.fp += f.predictions.len() - pairs.len();
        prev_frame = now;
    }
    for cov in covered.values() {
        let mut spans = 0;
        let mut inside = false;
        for c in cov {
            let on = *c == Some(true);
            if on && !inside {
                spans += 1;
            }
            inside = on;
        }
        out.frag += spans.max(1) - 1;
    }
    for cov in covered.values() {
        let present = cov.iter().flatten().count() as f64;
        let ratio = cov.iter().filter(|c| **c == Some(true)).count() as f64 / present;
        if ratio > 0.8 {
            out.mt += 1;
        } else if ratio >= 0.2 {
            out.pt += 1;
        } else {
            out.ml += 1;
        }
    }
    let gt = scene.truth_count() as f64;
    out.mota = 1.0 - (out.fn_ + out.fp + out.idsw) as f64 / gt;
    out.motp = if out.tp > 0 { iou_sum / out.tp as f64 } else { 0.0 };
    out
}

/// (IDTP, IDF1) by trying every injective map from ground-truth ids to
/// prediction ids.
pub fn identity(scene: &LabeledScene, thr: f64) -> (usize, f64) {
    let gts: Vec<u64> = scene
        .frames()
        .iter()
        .flat_map(|f| f.truths.iter().map(|t| t.track_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let preds: Vec<u64> = scene
        .frames()
        .iter()
        .flat_map(|f| f.predictions.iter().map(|p| p.instance_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut overlap: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for f in scene.frames() {
        for t in &f.truths {
            for p in &f.predictions {
                if iou(&t.bbox, &p.bbox) >= thr - EPS {
                    *overlap.entry((t.track_id, p.instance_id)).or_default() += 1;
                }
            }
        }
    }
    fn rec(
        k: usize,
        gts: &[u64],
        preds: &[u64],
        used: &mut Vec<bool>,
        acc: usize,
        overlap: &BTreeMap<(u64, u64), usize>,
        best: &mut usize,
    ) {
        if k == gts.len() {
            *best = (*best).max(acc);
            return;
        }
        rec(k + 1, gts, preds, used, acc, overlap, best);
        for c in 0..preds.len() {
            if !used[c] {
                used[c] = true;
                let v = overlap.get(&(gts[k], preds[c])).copied().unwrap_or(0);
                rec(k + 1, gts, preds, used, acc + v, overlap, best);
                used[c] = false;
            }
        }
    }
    let mut idtp = 0;
    rec(0, &gts, &preds, &mut vec![false; preds.len()], 0, &overlap, &mut idtp);
    let total = scene.truth_count() + scene.prediction_count();
    let f1 = if total > 0 { 2.0 * idtp as f64 / total as f64 } else { 0.0 };
    (idtp, f1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotaAlpha {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
}

/// Per-α HOTA with exhaustive per-frame matching.
pub fn hota(scene: &LabeledScene) -> Vec<HotaAlpha> {
    let mut gt_len: BTreeMap<u64, f64> = BTreeMap::new();
    let mut pr_len: BTreeMap<u64, f64> = BTreeMap::new();
    let mut soft: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for f in scene.frames() {
        let s = frame_iou(f);
        for (r, t) in f.truths.iter().enumerate() {
            *gt_len.entry(t.track_id).or_default() += 1.0;
            for (c, p) in f.predictions.iter().enumerate() {
                let row: f64 = s[r].iter().sum();
                let col: f64 = s.iter().map(|x| x[c]).sum();
                let den = row + col - s[r][c];
                if den > EPS {
                    *soft.entry((t.track_id, p.instance_id)).or_default() += s[r][c] / den;
                }
            }
        }
        for p in &f.predictions {
            *pr_len.entry(p.instance_id).or_default() += 1.0;
        }
    }
    let align = |g: u64, p: u64| {
        let v = soft.get(&(g, p)).copied().unwrap_or(0.0);
        let den = gt_len[&g] + pr_len[&p] - v;
        if den > 0.0 {
            v / den
        } else {
            0.0
        }
    };
    (1..20)
        .map(|k| {
            let alpha = k as f64 * 0.05;
            let mut tp = 0;
            let mut fn_ = 0;
            let mut fp = 0;
            let mut matches: BTreeMap<(u64, u64), f64> = BTreeMap::new();
            for f in scene.frames() {
                let s = frame_iou(f);
                let w: Vec<Vec<f64>> = f
                    .truths
                    .iter()
                    .enumerate()
                    .map(|(r, t)| {
                        f.predictions
                            .iter()
                            .enumerate()
                            .map(|(c, p)| {
                                if s[r][c] >= alpha - EPS {
                                    align(t.track_id, p.instance_id) * s[r][c]
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                let pairs = best_partial_matching(&w);
                for &(r, c) in &pairs {
                    *matches.entry((f.truths[r].track_id, f.predictions[c].instance_id)).or_default() += 1.0;
                }
                tp += pairs.len();
                fn_ += f.truths.len() - pairs.len();
                fp += f.predictions.len() - pairs.len();
            }
            let mut ass = 0.0;
            for (&(g, p), &m) in &matches {
                ass += m * m / (gt_len[&g] + pr_len[&p] - m);
            }
            let assa = if tp > 0 { ass / tp as f64 } else { 0.0 };
            let den = tp + fn_ + fp;
            let deta = if den > 0 { tp as f64 / den as f64 } else { 0.0 };
            HotaAlpha {
                tp,
                fn_,
                fp,
                hota: (deta * assa).sqrt(),
                deta,
                assa,
            }
        })
        .collect()
}

/// Random small scene: up to `max_tracks` ground-truth tracks over up to
/// `max_frames` frames, with jittered predictions, id swaps, misses and
/// false positives.
pub fn random_scene(rng: &mut ChaCha8Rng, max_tracks: usize, max_frames: usize) -> LabeledScene {
    let n_tracks = rng.random_range(1..=max_tracks);
    let n_frames = rng.random_range(1..=max_frames);
    let mut frames = Vec::with_capacity(n_frames);
    let mut pos: Vec<(f64, f64, f64)> = (0..n_tracks)
        .map(|_| (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.08..0.2)))
        .collect();
    let mut id_of: Vec<u64> = (0..n_tracks as u64).map(|k| k + 1).collect();
    for f in 0..n_frames {
        let mut truths = Vec::new();
        let mut predictions = Vec::new();
        for (k, p) in pos.iter_mut().enumerate() {
            p.0 = (p.0 + rng.random_range(-0.02..0.02)).clamp(0.15, 0.85);
            p.1 = (p.1 + rng.random_range(-0.02..0.02)).clamp(0.15, 0.85);
            if rng.random_bool(0.1) {
                continue;
            }
            let bbox = BBox::new(p.0, p.1, p.2, p.2).unwrap();
            truths.push(GtObject {
                track_id: k as u64 + 1,
                category: 1,
                bbox,
            });
            if rng.random_bool(0.15) {
                continue;
            }
            if rng.random_bool(0.05) {
                id_of[k] = 100 + rng.random_range(0..6);
            }
            let j = p.2 * 0.4;
            let pb = BBox::new(
                p.0 + rng.random_range(-j..j),
                p.1 + rng.random_range(-j..j),
                p.2 * rng.random_range(0.8..1.2),
                p.2 * rng.random_range(0.8..1.2),
            )
            .unwrap();
            predictions.push(PredObject {
                instance_id: id_of[k],
                category: Some(1),
                bbox: pb,
                score: 0.9,
            });
        }
        if rng.random_bool(0.2) {
            let s = rng.random_range(0.08..0.2);
            predictions.push(PredObject {
                instance_id: 200 + rng.random_range(0..3),
                category: Some(1),
                bbox: BBox::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), s, s).unwrap(),
                score: 0.6,
            });
        }
        // prediction ids must be unique within a frame
        let mut seen = BTreeSet::new();
        predictions.retain(|p| seen.insert(p.instance_id));
        frames.push(SceneFrame {
            frame: f as u64 + 1,
            truths,
            predictions,
        });
    }
    if frames.iter().all(|f| f.truths.is_empty()) {
        frames[0].truths.push(GtObject {
            track_id: 1,
            category: 1,
            bbox: BBox::new(0.5, 0.5, 0.1, 0.1).unwrap(),
        });
    }
    LabeledScene::new(frames).unwrap()
}
