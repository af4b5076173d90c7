//! Tracking evaluation: CLEAR-MOT, identity (IDF1) and HOTA metrics with
//! per-category means.
//!
//! Matching conventions follow the usual evaluation toolkits: similarity is
//! box IoU, a pair is valid when IoU ≥ threshold, and per-frame matchings
//! maximize total score with invalid pairs scored 0 and dropped afterwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix, Objective};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Slack on threshold comparisons, as in the reference toolkits.
const EPS: f64 = f64::EPSILON;

/// Bonus added to a pair that continues the previous frame's match.
const CARRY_OVER_BONUS: f64 = 1000.0;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Localization thresholds 0.05, 0.10, …, 0.95.
pub fn hota_alphas() -> Vec<f64> {
    (1..20).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub track_id: u64,
    pub category: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredObject {
    pub instance_id: u64,
    /// `None` when the result format carries no class; such scenes are
    /// evaluated class-agnostically.
    pub category: Option<u32>,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub frame: u64,
    pub truths: Vec<GtObject>,
    pub predictions: Vec<PredObject>,
}

/// Ground truth and predictions over a contiguous run of frames.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledScene {
    frames: Vec<SceneFrame>,
}

impl LabeledScene {
    pub fn new(frames: Vec<SceneFrame>) -> Result<Self> {
        for (w, pair) in frames.windows(2).enumerate() {
            if pair[1].frame != pair[0].frame + 1 {
                return Err(Error::InvalidScene(format!(
                    "frames not contiguous at position {}: {} then {}",
                    w + 1,
                    pair[0].frame,
                    pair[1].frame
                )));
            }
        }
        for f in &frames {
            let mut seen = BTreeSet::new();
            if !f.truths.iter().all(|t| seen.insert(t.track_id)) {
                return Err(Error::InvalidScene(format!("duplicate ground-truth id in frame {}", f.frame)));
            }
            seen.clear();
            if !f.predictions.iter().all(|p| seen.insert(p.instance_id)) {
                return Err(Error::InvalidScene(format!("duplicate prediction id in frame {}", f.frame)));
            }
        }
        Ok(Self { frames })
    }

    /// Groups loose objects by frame, filling missing frame numbers between
    /// the first and last one with empty frames.
    pub fn from_objects<G, P>(truths: G, predictions: P) -> Result<Self>
    where
        G: IntoIterator<Item = (u64, GtObject)>,
        P: IntoIterator<Item = (u64, PredObject)>,
    {
        let mut by_frame: BTreeMap<u64, SceneFrame> = BTreeMap::new();
        for (f, t) in truths {
            by_frame.entry(f).or_default().truths.push(t);
        }
        for (f, p) in predictions {
            by_frame.entry(f).or_default().predictions.push(p);
        }
        let (Some(&first), Some(&last)) = (by_frame.keys().next(), by_frame.keys().next_back()) else {
            return Ok(Self::default());
        };
        let frames = (first..=last)
            .map(|f| {
                let mut fr = by_frame.remove(&f).unwrap_or_default();
                fr.frame = f;
                fr
            })
            .collect();
        Self::new(frames)
    }

    pub fn frames(&self) -> &[SceneFrame] {
        &self.frames
    }

    pub fn truth_count(&self) -> usize {
        self.frames.iter().map(|f| f.truths.len()).sum()
    }

    pub fn prediction_count(&self) -> usize {
        self.frames.iter().map(|f| f.predictions.len()).sum()
    }

    /// Same scene with every prediction removed.
    pub fn without_predictions(&self) -> Self {
        Self {
            frames: self
                .frames
                .iter()
                .map(|f| SceneFrame {
                    frame: f.frame,
                    truths: f.truths.clone(),
                    predictions: Vec::new(),
                })
                .collect(),
        }
    }

    /// Scene whose predictions are an exact copy of the ground truth.
    pub fn perfect_copy(&self) -> Self {
        Self {
            frames: self
                .frames
                .iter()
                .map(|f| SceneFrame {
                    frame: f.frame,
                    truths: f.truths.clone(),
                    predictions: f
                        .truths
                        .iter()
                        .map(|t| PredObject {
                            instance_id: t.track_id,
                            category: Some(t.category),
                            bbox: t.bbox,
                            score: 1.0,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Splits into one scene per ground-truth category. Predictions of
    /// categories absent from the ground truth are dropped. If any
    /// prediction lacks a category, a single class-agnostic scene is
    /// returned under `None`.
    pub fn split_by_category(&self) -> Vec<(Option<u32>, LabeledScene)> {
        let agnostic = self
            .frames
            .iter()
            .flat_map(|f| &f.predictions)
            .any(|p| p.category.is_none());
        if agnostic {
            return vec![(None, self.clone())];
        }
        let categories: BTreeSet<u32> = self
            .frames
            .iter()
            .flat_map(|f| f.truths.iter().map(|t| t.category))
            .collect();
        categories
            .into_iter()
            .map(|c| {
                let frames = self
                    .frames
                    .iter()
                    .map(|f| SceneFrame {
                        frame: f.frame,
                        truths: f.truths.iter().filter(|t| t.category == c).copied().collect(),
                        predictions: f
                            .predictions
                            .iter()
                            .filter(|p| p.category == Some(c))
                            .copied()
                            .collect(),
                    })
                    .collect();
                (Some(c), LabeledScene { frames })
            })
            .collect()
    }
}

/// Dense indices for the ids on each side of a scene.
struct IdIndex {
    gt: HashMap<u64, usize>,
    pred: HashMap<u64, usize>,
}

impl IdIndex {
    fn new(scene: &LabeledScene) -> Self {
        let gt: BTreeSet<u64> = scene.frames.iter().flat_map(|f| f.truths.iter().map(|t| t.track_id)).collect();
        let pred: BTreeSet<u64> = scene
            .frames
            .iter()
            .flat_map(|f| f.predictions.iter().map(|p| p.instance_id))
            .collect();
        Self {
            gt: gt.into_iter().enumerate().map(|(i, id)| (id, i)).collect(),
            pred: pred.into_iter().enumerate().map(|(i, id)| (id, i)).collect(),
        }
    }
}

fn iou_matrix(frame: &SceneFrame) -> Vec<Vec<f64>> {
    frame
        .truths
        .iter()
        .map(|t| frame.predictions.iter().map(|p| iou(&t.bbox, &p.bbox)).collect())
        .collect()
}

/// Maximizes the total of `score` over one-to-one pairs, then keeps pairs
/// accepted by `keep`.
fn match_frame<S, K>(rows: usize, cols: usize, score: S, keep: K) -> Vec<(usize, usize)>
where
    S: Fn(usize, usize) -> f64,
    K: Fn(usize, usize) -> bool,
{
    let Ok(m) = CostMatrix::from_fn(rows, cols, Objective::Maximize, |r, c| Some(score(r, c))) else {
        unreachable!("scores are finite")
    };
    solve_assignment(&m)
        .pairs
        .into_iter()
        .filter(|&(r, c)| keep(r, c))
        .collect()
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("IoU threshold {t} outside (0, 1]")))
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearMetrics {
    #[serde(rename = "MOTA")]
    pub mota: f64,
    #[serde(rename = "MOTP")]
    pub motp: f64,
    #[serde(rename = "TP")]
    pub true_positives: usize,
    #[serde(rename = "FP")]
    pub false_positives: usize,
    #[serde(rename = "FN")]
    pub false_negatives: usize,
    #[serde(rename = "IDSW")]
    pub id_switches: usize,
    #[serde(rename = "Frag")]
    pub fragmentations: usize,
    #[serde(rename = "MT")]
    pub mostly_tracked: usize,
    #[serde(rename = "PT")]
    pub partially_tracked: usize,
    #[serde(rename = "ML")]
    pub mostly_lost: usize,
    #[serde(rename = "Rcll")]
    pub recall: f64,
    #[serde(rename = "Prcn")]
    pub precision: f64,
    #[serde(rename = "GT")]
    pub gt_count: usize,
}

/// CLEAR-MOT counts for a scene, treating all objects as one class.
///
/// A ground-truth object keeps last frame's partner while IoU stays above
/// threshold; the rest is matched to maximize IoU. An id switch is counted
/// when a ground-truth track is matched to a different prediction id than at
/// its last match. Every frame without a match ends a covered span, and a
/// track's fragmentations are its spans minus one.
pub fn clear_mot(scene: &LabeledScene, iou_threshold: f64) -> Result<ClearMetrics> {
    check_threshold(iou_threshold)?;
    let gt_count = scene.truth_count();
    if gt_count == 0 {
        return Err(Error::InvalidScene("empty ground truth".into()));
    }
    let ids = IdIndex::new(scene);
    let n_gt = ids.gt.len();
    let mut last_match: Vec<Option<usize>> = vec![None; n_gt];
    let mut prev_step: Vec<Option<usize>> = vec![None; n_gt];
    let mut present = vec![0usize; n_gt];
    let mut matched = vec![0usize; n_gt];
    let mut spans = vec![0usize; n_gt];
    let mut out = ClearMetrics {
        gt_count,
        ..ClearMetrics::default()
    };
    let mut iou_sum = 0.0;

    for frame in &scene.frames {
        let g: Vec<usize> = frame.truths.iter().map(|t| ids.gt[&t.track_id]).collect();
        let p: Vec<usize> = frame.predictions.iter().map(|q| ids.pred[&q.instance_id]).collect();
        for &gi in &g {
            present[gi] += 1;
        }
        let mut step: Vec<Option<usize>> = vec![None; n_gt];
        let mut n_matched = 0;
        if !g.is_empty() && !p.is_empty() {
            let sim = iou_matrix(frame);
            let valid = |r: usize, c: usize| sim[r][c] >= iou_threshold - EPS;
            let pairs = match_frame(
                g.len(),
                p.len(),
                |r, c| {
                    if !valid(r, c) {
                        0.0
                    } else if prev_step[g[r]] == Some(p[c]) {
                        CARRY_OVER_BONUS + sim[r][c]
                    } else {
                        sim[r][c]
                    }
                },
                valid,
            );
            for (r, c) in pairs {
                let (gi, pi) = (g[r], p[c]);
                if last_match[gi].is_some_and(|prev| prev != pi) {
                    out.id_switches += 1;
                }
                last_match[gi] = Some(pi);
                step[gi] = Some(pi);
                matched[gi] += 1;
                iou_sum += sim[r][c];
                n_matched += 1;
            }
        }
        out.true_positives += n_matched;
        out.false_negatives += g.len() - n_matched;
        out.false_positives += p.len() - n_matched;
        for gi in 0..n_gt {
            if prev_step[gi].is_none() && step[gi].is_some() {
                spans[gi] += 1;
            }
        }
        prev_step = step;
    }

    out.fragmentations = spans.iter().map(|&s| s.saturating_sub(1)).sum();
    for gi in 0..n_gt {
        let r = matched[gi] as f64 / present[gi] as f64;
        if r > 0.8 {
            out.mostly_tracked += 1;
        } else if r >= 0.2 {
            out.partially_tracked += 1;
        } else {
            out.mostly_lost += 1;
        }
    }
    let errors = out.false_negatives + out.false_positives + out.id_switches;
    out.mota = 1.0 - errors as f64 / gt_count as f64;
    out.motp = ratio(iou_sum, out.true_positives as f64);
    out.recall = ratio(out.true_positives as f64, gt_count as f64);
    out.precision = ratio(
        out.true_positives as f64,
        (out.true_positives + out.false_positives) as f64,
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityMetrics {
    #[serde(rename = "IDF1")]
    pub idf1: f64,
    #[serde(rename = "IDP")]
    pub idp: f64,
    #[serde(rename = "IDR")]
    pub idr: f64,
    #[serde(rename = "IDTP")]
    pub idtp: usize,
    #[serde(rename = "IDFP")]
    pub idfp: usize,
    #[serde(rename = "IDFN")]
    pub idfn: usize,
}

/// Identity metrics from the trajectory pairing that maximizes the number
/// of frames where paired boxes overlap at IoU ≥ threshold.
pub fn idf1(scene: &LabeledScene, iou_threshold: f64) -> Result<IdentityMetrics> {
    check_threshold(iou_threshold)?;
    let ids = IdIndex::new(scene);
    let (n_gt, n_pred) = (ids.gt.len(), ids.pred.len());
    let mut overlap = vec![0usize; n_gt * n_pred];
    for frame in &scene.frames {
        let sim = iou_matrix(frame);
        for (r, t) in frame.truths.iter().enumerate() {
            for (c, p) in frame.predictions.iter().enumerate() {
                if sim[r][c] >= iou_threshold - EPS {
                    overlap[ids.gt[&t.track_id] * n_pred + ids.pred[&p.instance_id]] += 1;
                }
            }
        }
    }
    let m = CostMatrix::from_fn(n_gt, n_pred, Objective::Maximize, |r, c| {
        Some(overlap[r * n_pred + c] as f64)
    })?;
    let idtp: usize = solve_assignment(&m)
        .pairs
        .iter()
        .map(|&(r, c)| overlap[r * n_pred + c])
        .sum();
    let idfn = scene.truth_count() - idtp;
    let idfp = scene.prediction_count() - idtp;
    Ok(IdentityMetrics {
        idf1: ratio(2.0 * idtp as f64, (2 * idtp + idfp + idfn) as f64),
        idp: ratio(idtp as f64, (idtp + idfp) as f64),
        idr: ratio(idtp as f64, (idtp + idfn) as f64),
        idtp,
        idfp,
        idfn,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HotaAtAlpha {
    pub alpha: f64,
    #[serde(rename = "HOTA")]
    pub hota: f64,
    #[serde(rename = "DetA")]
    pub deta: f64,
    #[serde(rename = "AssA")]
    pub assa: f64,
    #[serde(rename = "LocA")]
    pub loca: f64,
    #[serde(rename = "TP")]
    pub tp: usize,
    #[serde(rename = "FN")]
    pub fn_count: usize,
    #[serde(rename = "FP")]
    pub fp: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HotaMetrics {
    #[serde(rename = "HOTA")]
    pub hota: f64,
    #[serde(rename = "DetA")]
    pub deta: f64,
    #[serde(rename = "AssA")]
    pub assa: f64,
    #[serde(rename = "LocA")]
    pub loca: f64,
    pub per_alpha: Vec<HotaAtAlpha>,
}

/// HOTA averaged over the 19 localization thresholds.
///
/// A global alignment score between every ground-truth and predicted track
/// is accumulated first from soft per-frame IoU overlaps. For each α, every
/// frame is then matched to maximize alignment × IoU among pairs with
/// IoU ≥ α.
pub fn hota(scene: &LabeledScene) -> Result<HotaMetrics> {
    let ids = IdIndex::new(scene);
    let (n_gt, n_pred) = (ids.gt.len(), ids.pred.len());
    let mut gt_len = vec![0.0f64; n_gt];
    let mut pred_len = vec![0.0f64; n_pred];
    let mut soft = vec![0.0f64; n_gt * n_pred];

    let sims: Vec<Vec<Vec<f64>>> = scene.frames.iter().map(iou_matrix).collect();
    for (frame, sim) in scene.frames.iter().zip(&sims) {
        let row_sum: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..frame.predictions.len())
            .map(|c| sim.iter().map(|r| r[c]).sum())
            .collect();
        for (r, t) in frame.truths.iter().enumerate() {
            let gi = ids.gt[&t.track_id];
            gt_len[gi] += 1.0;
            for (c, p) in frame.predictions.iter().enumerate() {
                let den = row_sum[r] + col_sum[c] - sim[r][c];
                if den > EPS {
                    soft[gi * n_pred + ids.pred[&p.instance_id]] += sim[r][c] / den;
                }
            }
        }
        for p in &frame.predictions {
            pred_len[ids.pred[&p.instance_id]] += 1.0;
        }
    }
    let align: Vec<f64> = (0..n_gt * n_pred)
        .map(|k| {
            let s = soft[k];
            ratio(s, gt_len[k / n_pred] + pred_len[k % n_pred] - s)
        })
        .collect();

    let per_alpha: Vec<HotaAtAlpha> = hota_alphas()
        .into_iter()
        .map(|alpha| {
            let mut res = HotaAtAlpha {
                alpha,
                ..HotaAtAlpha::default()
            };
            let mut matches = vec![0.0f64; n_gt * n_pred];
            let mut loc_sum = 0.0;
            for (frame, sim) in scene.frames.iter().zip(&sims) {
                let g: Vec<usize> = frame.truths.iter().map(|t| ids.gt[&t.track_id]).collect();
                let p: Vec<usize> = frame.predictions.iter().map(|q| ids.pred[&q.instance_id]).collect();
                let mut n = 0;
                if !g.is_empty() && !p.is_empty() {
                    let valid = |r: usize, c: usize| sim[r][c] >= alpha - EPS;
                    let pairs = match_frame(
                        g.len(),
                        p.len(),
                        |r, c| if valid(r, c) { align[g[r] * n_pred + p[c]] * sim[r][c] } else { 0.0 },
                        valid,
                    );
                    for (r, c) in pairs {
                        matches[g[r] * n_pred + p[c]] += 1.0;
                        loc_sum += sim[r][c];
                        n += 1;
                    }
                }
                res.tp += n;
                res.fn_count += g.len() - n;
                res.fp += p.len() - n;
            }
            let ass_sum: f64 = (0..n_gt * n_pred)
                .filter(|&k| matches[k] > 0.0)
                .map(|k| {
                    let m = matches[k];
                    m * m / (gt_len[k / n_pred] + pred_len[k % n_pred] - m)
                })
                .sum();
            res.assa = ratio(ass_sum, res.tp as f64);
            res.deta = ratio(res.tp as f64, (res.tp + res.fn_count + res.fp) as f64);
            res.loca = ratio(loc_sum, res.tp as f64);
            res.hota = (res.deta * res.assa).sqrt();
            res
        })
        .collect();

    let mean = |f: fn(&HotaAtAlpha) -> f64| per_alpha.iter().map(f).sum::<f64>() / per_alpha.len() as f64;
    Ok(HotaMetrics {
        hota: mean(|a| a.hota),
        deta: mean(|a| a.deta),
        assa: mean(|a| a.assa),
        loca: mean(|a| a.loca),
        per_alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Match threshold for CLEAR and identity metrics.
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    /// `None` for a class-agnostic evaluation.
    pub category: Option<u32>,
    pub clear: ClearMetrics,
    pub identity: IdentityMetrics,
    pub hota: HotaMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    #[serde(rename = "mMOTA")]
    pub mota: f64,
    #[serde(rename = "mIDF1")]
    pub idf1: f64,
    #[serde(rename = "mHOTA")]
    pub hota: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou_threshold: f64,
    pub categories: Vec<CategoryReport>,
    pub means: ClassMeans,
}

/// Unweighted means over the given categories.
pub fn per_class_mean(reports: &[CategoryReport]) -> Result<ClassMeans> {
    if reports.is_empty() {
        return Err(Error::InvalidScene("no categories to average".into()));
    }
    let n = reports.len() as f64;
    Ok(ClassMeans {
        mota: reports.iter().map(|r| r.clear.mota).sum::<f64>() / n,
        idf1: reports.iter().map(|r| r.identity.idf1).sum::<f64>() / n,
        hota: reports.iter().map(|r| r.hota.hota).sum::<f64>() / n,
    })
}

/// Evaluates every ground-truth category and averages them.
pub fn evaluate(scene: &LabeledScene, cfg: &EvalConfig) -> Result<MetricsReport> {
    check_threshold(cfg.iou_threshold)?;
    if scene.truth_count() == 0 {
        return Err(Error::InvalidScene("empty ground truth".into()));
    }
    let categories = scene
        .split_by_category()
        .into_iter()
        .map(|(category, s)| {
            Ok(CategoryReport {
                category,
                clear: clear_mot(&s, cfg.iou_threshold)?,
                identity: idf1(&s, cfg.iou_threshold)?,
                hota: hota(&s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let means = per_class_mean(&categories)?;
    Ok(MetricsReport {
        iou_threshold: cfg.iou_threshold,
        categories,
        means,
    })
}

impl MetricsReport {
    /// Aligned plain-text table, one row per category plus the means.
    pub fn to_table(&self) -> String {
        let header = [
            "category", "HOTA", "DetA", "AssA", "MOTA", "MOTP", "IDF1", "IDP", "IDR", "Rcll", "Prcn", "FP",
            "FN", "IDSW", "Frag", "MT", "PT", "ML",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        let pct = |v: f64| format!("{:.3}", v * 100.0);
        for c in &self.categories {
            rows.push(vec![
                c.category.map_or_else(|| "all".to_string(), |v| v.to_string()),
                pct(c.hota.hota),
                pct(c.hota.deta),
                pct(c.hota.assa),
                pct(c.clear.mota),
                pct(c.clear.motp),
                pct(c.identity.idf1),
                pct(c.identity.idp),
                pct(c.identity.idr),
                pct(c.clear.recall),
                pct(c.clear.precision),
                c.clear.false_positives.to_string(),
                c.clear.false_negatives.to_string(),
                c.clear.id_switches.to_string(),
                c.clear.fragmentations.to_string(),
                c.clear.mostly_tracked.to_string(),
                c.clear.partially_tracked.to_string(),
                c.clear.mostly_lost.to_string(),
            ]);
        }
        let mut mean_row = vec![String::new(); header.len()];
        mean_row[0] = "mean".into();
        mean_row[1] = pct(self.means.hota);
        mean_row[4] = pct(self.means.mota);
        mean_row[6] = pct(self.means.idf1);
        rows.push(mean_row);

        let widths: Vec<usize> = (0..header.len())
            .map(|k| rows.iter().map(|r| r[k].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(k, (cell, &w))| if k == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}
