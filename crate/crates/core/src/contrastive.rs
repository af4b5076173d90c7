//! Supervised instance-level contrastive loss and the detection losses it is
//! trained alongside.
//!
//! Positives of an anchor are the other embeddings of the same instance in
//! the same video; every other embedding of the batch is a negative. Each
//! positive pair is scored against the anchor's negatives only, so the pair
//! loss does not depend on how many other positives the anchor has.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, Prediction, Truth};
use crate::error::{Error, Result};
use crate::geometry::{cosine_slices, dot, giou, BBox, Embedding};

/// Smallest accepted temperature.
pub const MIN_TEMPERATURE: f64 = 1e-6;

/// Default temperature for both dataset presets.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedEmbedding {
    pub embedding: Embedding,
    pub video_id: u64,
    pub instance_id: u64,
    /// Frame (or augmented view) the embedding was produced on.
    pub frame_id: u64,
}

/// Tracking embeddings matched to annotated objects across a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedEmbeddingBatch {
    entries: Vec<MatchedEmbedding>,
    temperature: f64,
}

impl MatchedEmbeddingBatch {
    pub fn new(entries: Vec<MatchedEmbedding>, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        if let Some(first) = entries.first() {
            let dim = first.embedding.dim();
            if dim == 0 {
                return Err(Error::InvalidBatch("empty embedding".into()));
            }
            let mut seen = HashSet::with_capacity(entries.len());
            for (i, e) in entries.iter().enumerate() {
                if e.embedding.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: e.embedding.dim(),
                    });
                }
                if !e.embedding.is_finite() {
                    return Err(Error::NonFinite("embedding"));
                }
                if e.embedding.norm() == 0.0 {
                    return Err(Error::InvalidBatch(format!("entry {i} is a zero vector")));
                }
                if !seen.insert((e.video_id, e.instance_id, e.frame_id)) {
                    return Err(Error::InvalidBatch(format!(
                        "duplicate (video {}, instance {}, frame {})",
                        e.video_id, e.instance_id, e.frame_id
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            temperature,
        })
    }

    pub fn entries(&self) -> &[MatchedEmbedding] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.embedding.dim())
    }

    fn same_identity(&self, a: usize, b: usize) -> bool {
        let (x, y) = (&self.entries[a], &self.entries[b]);
        x.video_id == y.video_id && x.instance_id == y.instance_id
    }

    fn similarity_matrix(&self) -> Vec<f64> {
        let n = self.len();
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                // validated non-zero and equal dimension at construction
                let v = cosine_slices(
                    self.entries[i].embedding.as_slice(),
                    self.entries[j].embedding.as_slice(),
                )
                .expect("validated batch");
                s[i * n + j] = v;
                s[j * n + i] = v;
            }
        }
        s
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if !tau.is_finite() || tau < MIN_TEMPERATURE {
        return Err(Error::InvalidParameter(format!(
            "temperature must be finite and >= {MIN_TEMPERATURE}, got {tau}"
        )));
    }
    Ok(())
}

/// Positives and negatives of one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Splits the batch around anchor `i`. Panics if `i` is out of range.
pub fn partition(batch: &MatchedEmbeddingBatch, i: usize) -> Partition {
    assert!(i < batch.len(), "anchor {i} out of range");
    let (positives, negatives) = (0..batch.len())
        .filter(|&j| j != i)
        .partition(|&j| batch.same_identity(i, j));
    Partition {
        anchor: i,
        positives,
        negatives,
    }
}

/// `-log softmax` of the positive logit against the negatives, computed with
/// a max shift.
fn pair_loss_from_similarities(positive: f64, negatives: &[f64], tau: f64) -> f64 {
    let lp = positive / tau;
    let m = negatives.iter().fold(lp, |m, &s| m.max(s / tau));
    let sum: f64 = (lp - m).exp() + negatives.iter().map(|&s| (s / tau - m).exp()).sum::<f64>();
    (m - lp) + sum.ln()
}

/// Loss of the positive pair `(z_i, z_j)` against `negatives`.
pub fn pair_loss(
    z_i: &Embedding,
    z_j: &Embedding,
    negatives: &[&Embedding],
    tau: f64,
) -> Result<f64> {
    check_temperature(tau)?;
    let positive = cosine_slices(z_i.as_slice(), z_j.as_slice())?;
    let negs = negatives
        .iter()
        .map(|k| cosine_slices(z_i.as_slice(), k.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(pair_loss_from_similarities(positive, &negs, tau))
}

/// Pair loss of anchor `i` with its positive `j`, negatives taken from the
/// batch partition.
pub fn pair_loss_in_batch(batch: &MatchedEmbeddingBatch, i: usize, j: usize) -> Result<f64> {
    let p = partition(batch, i);
    if !p.positives.contains(&j) {
        return Err(Error::InvalidBatch(format!("{j} is not a positive of {i}")));
    }
    let e = batch.entries();
    let negatives: Vec<&Embedding> = p.negatives.iter().map(|&k| &e[k].embedding).collect();
    pair_loss(&e[i].embedding, &e[j].embedding, &negatives, batch.temperature())
}

/// Mean pair loss over the positives of anchor `i`.
pub fn anchor_loss(batch: &MatchedEmbeddingBatch, i: usize) -> Result<f64> {
    let p = partition(batch, i);
    if p.positives.is_empty() {
        return Err(Error::NoPositives(i));
    }
    let s = batch.similarity_matrix();
    Ok(anchor_loss_with(&s, batch.len(), &p, batch.temperature()))
}

fn anchor_loss_with(s: &[f64], n: usize, p: &Partition, tau: f64) -> f64 {
    let row = &s[p.anchor * n..(p.anchor + 1) * n];
    let negs: Vec<f64> = p.negatives.iter().map(|&k| row[k]).collect();
    let sum: f64 = p
        .positives
        .iter()
        .map(|&j| pair_loss_from_similarities(row[j], &negs, tau))
        .sum();
    sum / p.positives.len() as f64
}

/// Mean anchor loss over every anchor that has at least one positive; 0 when
/// no anchor does.
pub fn batch_contrastive_loss(batch: &MatchedEmbeddingBatch) -> f64 {
    let n = batch.len();
    let s = batch.similarity_matrix();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let p = partition(batch, i);
        if p.positives.is_empty() {
            continue;
        }
        sum += anchor_loss_with(&s, n, &p, batch.temperature());
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One gradient vector per batch entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientArray {
    pub values: Vec<Vec<f64>>,
}

impl GradientArray {
    pub fn zeros(entries: usize, dim: usize) -> Self {
        Self {
            values: vec![vec![0.0; dim]; entries],
        }
    }

    /// Largest per-entry `|a - b| / max(|a|, |b|)` in the Euclidean norm.
    /// Entries whose gradients are both zero contribute 0.
    pub fn max_relative_error(&self, reference: &GradientArray) -> f64 {
        fn norm(v: impl Iterator<Item = f64>) -> f64 {
            v.map(|x| x * x).sum::<f64>().sqrt()
        }
        self.values
            .iter()
            .zip(&reference.values)
            .map(|(a, b)| {
                let scale = norm(a.iter().copied()).max(norm(b.iter().copied()));
                if scale == 0.0 {
                    0.0
                } else {
                    norm(a.iter().zip(b).map(|(x, y)| x - y)) / scale
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs_difference(&self, other: &GradientArray) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Analytic gradient of [`batch_contrastive_loss`] with respect to every
/// embedding coordinate, differentiating through the cosine normalization.
pub fn contrastive_gradient(batch: &MatchedEmbeddingBatch) -> GradientArray {
    let n = batch.len();
    let dim = batch.dim();
    let tau = batch.temperature();
    let s = batch.similarity_matrix();

    // coeff[i * n + k] = dL / d s(i, k), s(i, k) seen from anchor i
    let mut coeff = vec![0.0; n * n];
    let parts: Vec<Partition> = (0..n)
        .map(|i| partition(batch, i))
        .filter(|p| !p.positives.is_empty())
        .collect();
    if parts.is_empty() {
        return GradientArray::zeros(n, dim);
    }
    let anchors = parts.len() as f64;
    for p in &parts {
        let i = p.anchor;
        let row = &s[i * n..(i + 1) * n];
        let weight = 1.0 / (anchors * p.positives.len() as f64);
        for &j in &p.positives {
            let lp = row[j] / tau;
            let m = p.negatives.iter().fold(lp, |m, &k| m.max(row[k] / tau));
            let ep = (lp - m).exp();
            let en: Vec<f64> = p.negatives.iter().map(|&k| (row[k] / tau - m).exp()).collect();
            let z = ep + en.iter().sum::<f64>();
            coeff[i * n + j] += weight * (ep / z - 1.0) / tau;
            for (&k, e) in p.negatives.iter().zip(&en) {
                coeff[i * n + k] += weight * (e / z) / tau;
            }
        }
    }

    let emb: Vec<&[f64]> = batch.entries().iter().map(|e| e.embedding.as_slice()).collect();
    let norms: Vec<f64> = emb.iter().map(|v| dot(v, v).sqrt()).collect();
    let mut grad = GradientArray::zeros(n, dim);
    for i in 0..n {
        for k in 0..n {
            let g = coeff[i * n + k];
            if g == 0.0 {
                continue;
            }
            let sik = s[i * n + k];
            let inv = 1.0 / (norms[i] * norms[k]);
            let (ni2, nk2) = (norms[i] * norms[i], norms[k] * norms[k]);
            // d cos(a, b) / d a = b / (|a||b|) - cos * a / |a|^2
            #[allow(clippy::needless_range_loop)]
            for d in 0..dim {
                grad.values[i][d] += g * (emb[k][d] * inv - sik * emb[i][d] / ni2);
                grad.values[k][d] += g * (emb[i][d] * inv - sik * emb[k][d] / nk2);
            }
        }
    }
    grad
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|d| {
            probe[d] = x[d] + h;
            let up = f(&probe);
            probe[d] = x[d] - h;
            let down = f(&probe);
            probe[d] = x[d];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Step used by the finite-difference oracle.
pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;

/// Central-difference gradient of [`batch_contrastive_loss`]; the reference
/// the analytic gradient is checked against.
pub fn finite_difference_gradient(batch: &MatchedEmbeddingBatch, h: f64) -> GradientArray {
    let mut values = Vec::with_capacity(batch.len());
    for e in 0..batch.len() {
        let x = batch.entries[e].embedding.as_slice().to_vec();
        let g = central_difference(
            |p| {
                let mut b = batch.clone();
                b.entries[e].embedding = Embedding::new(p.to_vec());
                batch_contrastive_loss(&b)
            },
            &x,
            h,
        );
        values.push(g);
    }
    GradientArray { values }
}

/// Collects the embeddings of matched predictions, labeled with the
/// instance ids of the truths they were matched to.
pub fn gather_matched(
    embeddings: &[Embedding],
    truth_instance_ids: &[u64],
    matching: &Assignment,
    video_id: u64,
    frame_id: u64,
) -> Result<Vec<MatchedEmbedding>> {
    matching
        .pairs
        .iter()
        .map(|&(pred, truth)| {
            let embedding = embeddings.get(pred).ok_or_else(|| {
                Error::InvalidMatching(format!("prediction {pred} has no embedding"))
            })?;
            let instance_id = *truth_instance_ids
                .get(truth)
                .ok_or_else(|| Error::InvalidMatching(format!("truth {truth} has no id")))?;
            Ok(MatchedEmbedding {
                embedding: embedding.clone(),
                video_id,
                instance_id,
                frame_id,
            })
        })
        .collect()
}

/// Seeded random batch for gradient checks: `entries` Gaussian embeddings
/// of dimension `dim` spread over two videos with a handful of instances
/// each, so that most anchors have positives.
pub fn synthetic_batch(seed: u64, entries: usize, dim: usize, temperature: f64) -> Result<MatchedEmbeddingBatch> {
    if dim == 0 {
        return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (entries / 4).max(1) as u64;
    let batch = (0..entries)
        .map(|k| MatchedEmbedding {
            embedding: Embedding::new((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()),
            video_id: rng.random_range(0..2),
            instance_id: rng.random_range(0..instances),
            frame_id: k as u64,
        })
        .collect();
    MatchedEmbeddingBatch::new(batch, temperature)
}

/// Sigmoid focal loss summed over categories. `scores` are per-category
/// probabilities; `target` is `None` for background (all-zero target).
pub fn focal_loss(scores: &[f64], target: Option<usize>, alpha: f64, gamma: f64) -> Result<f64> {
    if let Some(t) = target {
        if t >= scores.len() {
            return Err(Error::InvalidParameter(format!(
                "target category {t} outside {} classes",
                scores.len()
            )));
        }
    }
    let mut loss = 0.0;
    for (c, &p) in scores.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("score {p} outside [0, 1]")));
        }
        let positive = target == Some(c);
        let (p_t, alpha_t) = if positive {
            (p, alpha)
        } else {
            (1.0 - p, 1.0 - alpha)
        };
        let modulation = (1.0 - p_t).powf(gamma);
        if modulation == 0.0 {
            continue;
        }
        loss -= alpha_t * modulation * p_t.max(1e-12).ln();
    }
    Ok(loss)
}

pub fn l1_box_loss(predicted: &BBox, target: &BBox) -> f64 {
    predicted.l1_distance(target)
}

pub fn giou_loss(predicted: &BBox, target: &BBox) -> f64 {
    1.0 - giou(predicted, target)
}

/// Coefficients of the combined training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_class: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub lambda_contr: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub temperature: f64,
}

impl LossWeights {
    pub fn mot17() -> Self {
        Self {
            lambda_class: 2.0,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            lambda_contr: 2.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn bdd100k() -> Self {
        Self {
            lambda_contr: 1.0,
            ..Self::mot17()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_class,
            self.lambda_l1,
            self.lambda_giou,
            self.lambda_contr,
            self.focal_alpha,
            self.focal_gamma,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        check_temperature(self.temperature)
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::mot17()
    }
}

/// Unweighted loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub l1: f64,
    pub giou: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// Combined detection and contrastive loss for one image.
///
/// Classification is computed for every prediction (unmatched ones against
/// the background target); box terms only for matched pairs. Both are
/// normalized by the number of truths. The contrastive term is the batch
/// mean of [`batch_contrastive_loss`].
pub fn total_loss(
    predictions: &[Prediction],
    truths: &[Truth],
    matching: &Assignment,
    batch: &MatchedEmbeddingBatch,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    let mut target = vec![None; predictions.len()];
    let mut covered = vec![false; truths.len()];
    for &(p, t) in &matching.pairs {
        if p >= predictions.len() || t >= truths.len() {
            return Err(Error::InvalidMatching(format!(
                "pair ({p}, {t}) outside {} predictions x {} truths",
                predictions.len(),
                truths.len()
            )));
        }
        if target[p].is_some() || covered[t] {
            return Err(Error::InvalidMatching(format!("pair ({p}, {t}) reuses an index")));
        }
        target[p] = Some(t);
        covered[t] = true;
    }
    if let Some(t) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidMatching(format!("truth {t} is not matched")));
    }

    let norm = truths.len().max(1) as f64;
    let mut classification = 0.0;
    let mut l1 = 0.0;
    let mut giou_term = 0.0;
    for (p, pred) in predictions.iter().enumerate() {
        let category = target[p].map(|t| truths[t].category);
        classification += focal_loss(&pred.scores, category, w.focal_alpha, w.focal_gamma)?;
        if let Some(t) = target[p] {
            l1 += l1_box_loss(&pred.bbox, &truths[t].bbox);
            giou_term += giou_loss(&pred.bbox, &truths[t].bbox);
        }
    }
    classification /= norm;
    l1 /= norm;
    giou_term /= norm;
    let contrastive = batch_contrastive_loss(batch);
    let total = w.lambda_class * classification
        + w.lambda_l1 * l1
        + w.lambda_giou * giou_term
        + w.lambda_contr * contrastive;
    Ok(LossBreakdown {
        classification,
        l1,
        giou: giou_term,
        contrastive,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn entry(video: u64, instance: u64, frame: u64, v: Vec<f64>) -> MatchedEmbedding {
        MatchedEmbedding {
            embedding: Embedding::new(v),
            video_id: video,
            instance_id: instance,
            frame_id: frame,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, tau: f64) -> MatchedEmbeddingBatch {
        let entries = (0..n)
            .map(|f| {
                entry(
                    rng.random_range(0..2),
                    rng.random_range(0..3),
                    f as u64,
                    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        MatchedEmbeddingBatch::new(entries, tau).unwrap()
    }

    #[test]
    fn synthetic_batches_are_seeded_and_pass_the_gradient_check() {
        let a = synthetic_batch(5, 12, 8, 0.1).unwrap();
        assert_eq!(a, synthetic_batch(5, 12, 8, 0.1).unwrap());
        assert_ne!(a, synthetic_batch(6, 12, 8, 0.1).unwrap());
        assert_eq!((a.len(), a.dim()), (12, 8));
        let fd = finite_difference_gradient(&a, FINITE_DIFFERENCE_STEP);
        assert!(contrastive_gradient(&a).max_relative_error(&fd) < 1e-5);
        assert!(synthetic_batch(5, 12, 0, 0.1).is_err());
    }

    #[test]
    fn batch_validation() {
        let ok = entry(0, 0, 0, vec![1.0, 0.0]);
        assert!(MatchedEmbeddingBatch::new(vec![ok.clone()], 0.0).is_err());
        assert!(MatchedEmbeddingBatch::new(vec![ok.clone()], 1e-7).is_err());
        assert!(MatchedEmbeddingBatch::new(vec![ok.clone(), ok.clone()], 0.1).is_err());
        assert!(
            MatchedEmbeddingBatch::new(vec![ok.clone(), entry(0, 0, 1, vec![1.0])], 0.1).is_err()
        );
        assert!(MatchedEmbeddingBatch::new(vec![entry(0, 0, 0, vec![0.0, 0.0])], 0.1).is_err());
        assert!(MatchedEmbeddingBatch::new(vec![], 0.1).unwrap().is_empty());
    }

    #[test]
    fn partition_examples() {
        let single = MatchedEmbeddingBatch::new(vec![entry(0, 1, 0, vec![1.0])], 0.1).unwrap();
        let p = partition(&single, 0);
        assert!(p.positives.is_empty() && p.negatives.is_empty());

        let pair = MatchedEmbeddingBatch::new(
            vec![entry(0, 1, 0, vec![1.0, 0.0]), entry(0, 1, 1, vec![0.0, 1.0])],
            0.1,
        )
        .unwrap();
        assert_eq!(partition(&pair, 0).positives, vec![1]);
        assert_eq!(partition(&pair, 1).positives, vec![0]);
        assert!(partition(&pair, 0).negatives.is_empty());

        let cross = MatchedEmbeddingBatch::new(
            vec![entry(0, 1, 0, vec![1.0, 0.0]), entry(1, 1, 0, vec![0.0, 1.0])],
            0.1,
        )
        .unwrap();
        assert!(partition(&cross, 0).positives.is_empty());
        assert_eq!(partition(&cross, 0).negatives, vec![1]);
    }

    #[test]
    fn pair_loss_closed_forms() {
        let a = Embedding::new(vec![1.0, 0.0]);
        let b = Embedding::new(vec![0.6, 0.8]);
        assert_eq!(pair_loss(&a, &b, &[], 0.1).unwrap(), 0.0);
        // negative at the same angle as the positive
        let c = Embedding::new(vec![0.6, -0.8]);
        let v = pair_loss(&a, &b, &[&c], 0.1).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12, "{v}");
        assert!(pair_loss(&a, &b, &[&c], 0.0).is_err());
    }

    #[test]
    fn pair_loss_temperature_example() {
        // sim(i, j) = 0.9, sim(i, k) = 0.1
        let zi = Embedding::new(vec![1.0, 0.0]);
        let zj = Embedding::new(vec![0.9, (1.0f64 - 0.81).sqrt()]);
        let zk = Embedding::new(vec![0.1, (1.0f64 - 0.01).sqrt()]);
        let v = pair_loss(&zi, &zj, &[&zk], 0.1).unwrap();
        assert!((v - 3.3540637289577373e-4).abs() < 1e-9, "{v}");
    }

    #[test]
    fn pair_loss_is_finite_at_tiny_temperature() {
        let a = Embedding::new(vec![1.0, 0.0]);
        let anti = Embedding::new(vec![-1.0, 0.0]);
        let v = pair_loss(&a, &anti, &[&a], 1e-3).unwrap();
        assert!(v.is_finite());
        assert!((v - 2000.0).abs() < 1e-9, "{v}");
        let w = pair_loss(&a, &a, &[&anti], 1e-3).unwrap();
        assert!(w.is_finite() && w >= 0.0);
    }

    #[test]
    fn anchor_loss_examples() {
        let b = MatchedEmbeddingBatch::new(
            vec![
                entry(0, 1, 0, vec![1.0, 0.2]),
                entry(0, 1, 1, vec![0.8, 0.4]),
                entry(0, 2, 0, vec![-0.3, 1.0]),
            ],
            0.1,
        )
        .unwrap();
        let single = anchor_loss(&b, 0).unwrap();
        assert_eq!(single, pair_loss_in_batch(&b, 0, 1).unwrap());
        assert!(matches!(anchor_loss(&b, 2), Err(Error::NoPositives(2))));

        let twins = MatchedEmbeddingBatch::new(
            vec![
                entry(0, 1, 0, vec![1.0, 0.2]),
                entry(0, 1, 1, vec![0.8, 0.4]),
                entry(0, 1, 2, vec![0.8, 0.4]),
                entry(0, 2, 0, vec![-0.3, 1.0]),
            ],
            0.1,
        )
        .unwrap();
        let v = anchor_loss(&twins, 0).unwrap();
        assert!((v - pair_loss_in_batch(&twins, 0, 1).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn anchor_loss_is_mean_of_pair_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            Embedding::new(v).normalized().unwrap().into_vec()
        };
        let mut entries = vec![entry(0, 0, 0, unit(&mut rng))];
        for f in 1..4 {
            entries.push(entry(0, 0, f, unit(&mut rng)));
        }
        for k in 0..4 {
            entries.push(entry(0, 10 + k, 0, unit(&mut rng)));
        }
        let b = MatchedEmbeddingBatch::new(entries, 0.1).unwrap();
        let e = b.entries();
        let negs: Vec<&Embedding> = e[4..].iter().map(|x| &x.embedding).collect();
        let mean = (1..4)
            .map(|j| pair_loss(&e[0].embedding, &e[j].embedding, &negs, 0.1).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((anchor_loss(&b, 0).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_trivial_cases() {
        let singles = MatchedEmbeddingBatch::new(
            vec![entry(0, 1, 0, vec![1.0, 0.0]), entry(0, 2, 0, vec![0.0, 1.0])],
            0.1,
        )
        .unwrap();
        assert_eq!(batch_contrastive_loss(&singles), 0.0);
        let pair = MatchedEmbeddingBatch::new(
            vec![entry(0, 1, 0, vec![1.0, 0.0]), entry(0, 1, 1, vec![0.3, 1.0])],
            0.1,
        )
        .unwrap();
        assert_eq!(batch_contrastive_loss(&pair), 0.0);
    }

    #[test]
    fn batch_loss_matches_reference_value() {
        let b = MatchedEmbeddingBatch::new(
            vec![
                entry(0, 1, 0, vec![0.9, 0.1, 0.2]),
                entry(0, 1, 1, vec![0.8, 0.3, 0.1]),
                entry(0, 2, 0, vec![0.1, 0.9, -0.2]),
                entry(0, 2, 1, vec![0.2, 0.7, 0.1]),
                entry(1, 1, 0, vec![-0.5, 0.2, 0.8]),
                entry(1, 1, 1, vec![-0.4, 0.1, 0.9]),
                entry(1, 2, 0, vec![0.3, -0.6, 0.5]),
                entry(1, 2, 1, vec![0.4, -0.5, 0.3]),
            ],
            0.1,
        )
        .unwrap();
        let v = batch_contrastive_loss(&b);
        assert!((v - 0.017012784113031077).abs() < 1e-12, "{v}");
    }

    #[test]
    fn gradient_of_positive_free_batch_is_zero() {
        let b = MatchedEmbeddingBatch::new(
            vec![entry(0, 1, 0, vec![1.0, 0.5]), entry(0, 2, 0, vec![0.0, 1.0])],
            0.1,
        )
        .unwrap();
        let g = contrastive_gradient(&b);
        assert!(g.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let b = random_batch(&mut rng, 12, 6, 0.1);
            let a = contrastive_gradient(&b);
            let n = finite_difference_gradient(&b, FINITE_DIFFERENCE_STEP);
            let err = a.max_relative_error(&n);
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn duplicated_batch_has_equal_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_batch(&mut rng, 6, 4, 0.2);
        let mut entries = b.entries().to_vec();
        for e in b.entries() {
            let mut copy = e.clone();
            copy.frame_id += 1000;
            entries.push(copy);
        }
        let d = MatchedEmbeddingBatch::new(entries, 0.2).unwrap();
        let g = contrastive_gradient(&d);
        for i in 0..6 {
            for (x, y) in g.values[i].iter().zip(&g.values[i + 6]) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[1];
        let g = central_difference(f, &[0.7, -1.3], 1e-3);
        let exact = [6.0 * 0.7 + 2.0 * 1.3, -2.0 * 0.7 - 1.3 + 1.0];
        for (a, b) in g.iter().zip(exact) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn positive_pair_rotation_lowers_loss() {
        // anchor fixed, positive rotated toward it; one fixed negative
        let anchor = vec![1.0, 0.0, 0.0];
        let negative = vec![0.0, 0.0, 1.0];
        let mut last = f64::INFINITY;
        for step in 0..=20 {
            let theta = std::f64::consts::PI * (1.0 - step as f64 / 20.0);
            let b = MatchedEmbeddingBatch::new(
                vec![
                    entry(0, 1, 0, anchor.clone()),
                    entry(0, 1, 1, vec![theta.cos(), theta.sin(), 0.0]),
                    entry(0, 2, 0, negative.clone()),
                ],
                0.1,
            )
            .unwrap();
            let v = batch_contrastive_loss(&b);
            assert!(v < last, "step {step}: {v} !< {last}");
            last = v;
        }
    }

    #[test]
    fn focal_and_box_losses() {
        assert_eq!(focal_loss(&[1.0], Some(0), 0.25, 2.0).unwrap(), 0.0);
        let v = focal_loss(&[0.5], Some(0), 0.25, 2.0).unwrap();
        assert!((v - 0.04332169878499658).abs() < 1e-12, "{v}");
        assert_eq!(focal_loss(&[0.0, 0.0], None, 0.25, 2.0).unwrap(), 0.0);
        assert!(focal_loss(&[1.5], Some(0), 0.25, 2.0).is_err());
        assert!(focal_loss(&[0.5], Some(1), 0.25, 2.0).is_err());
        let b = BBox::new(0.4, 0.5, 0.2, 0.1).unwrap();
        assert_eq!(l1_box_loss(&b, &b), 0.0);
        assert_eq!(giou_loss(&b, &b), 0.0);
    }

    #[test]
    fn presets() {
        assert_eq!(LossWeights::mot17().lambda_contr, 2.0);
        assert_eq!(LossWeights::bdd100k().lambda_contr, 1.0);
        assert_eq!(LossWeights::default().focal_alpha, 0.25);
        assert_eq!(LossWeights::default().temperature, 0.1);
    }

    fn unit_box(rng: &mut ChaCha8Rng) -> BBox {
        BBox::new(
            rng.random_range(0.2..0.8),
            rng.random_range(0.2..0.8),
            rng.random_range(0.05..0.3),
            rng.random_range(0.05..0.3),
        )
        .unwrap()
    }

    #[test]
    fn total_loss_of_perfect_predictions_is_contrastive_only() {
        let t = Truth {
            category: 0,
            bbox: BBox::new(0.5, 0.5, 0.2, 0.2).unwrap(),
        };
        let preds = vec![
            Prediction {
                scores: vec![1.0, 0.0],
                bbox: t.bbox,
            },
            Prediction {
                scores: vec![0.0, 0.0],
                bbox: BBox::new(0.1, 0.1, 0.1, 0.1).unwrap(),
            },
        ];
        let matching = crate::assignment::detr_matching(&preds, &[t], &Default::default()).unwrap();
        let batch = MatchedEmbeddingBatch::new(
            vec![
                entry(0, 1, 0, vec![1.0, 0.1]),
                entry(0, 1, 1, vec![0.9, 0.3]),
                entry(1, 1, 0, vec![-0.2, 1.0]),
            ],
            0.1,
        )
        .unwrap();
        let w = LossWeights::mot17();
        let out = total_loss(&preds, &[t], &matching, &batch, &w).unwrap();
        assert_eq!(out.classification, 0.0);
        assert_eq!(out.l1, 0.0);
        assert_eq!(out.giou, 0.0);
        assert!(out.contrastive > 0.0);
        assert_eq!(out.total, w.lambda_contr * out.contrastive);
    }

    #[test]
    fn total_loss_matches_term_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let w = LossWeights::bdd100k();
        for _ in 0..20 {
            let preds: Vec<Prediction> = (0..6)
                .map(|_| Prediction {
                    scores: (0..3).map(|_| rng.random_range(0.0..1.0)).collect(),
                    bbox: unit_box(&mut rng),
                })
                .collect();
            let truths: Vec<Truth> = (0..3)
                .map(|_| Truth {
                    category: rng.random_range(0..3),
                    bbox: unit_box(&mut rng),
                })
                .collect();
            let matching =
                crate::assignment::detr_matching(&preds, &truths, &Default::default()).unwrap();
            let batch = random_batch(&mut rng, 8, 4, w.temperature);
            let out = total_loss(&preds, &truths, &matching, &batch, &w).unwrap();

            // independent per-term evaluation
            let mut cls = 0.0;
            let mut l1 = 0.0;
            let mut gi = 0.0;
            for (p, pred) in preds.iter().enumerate() {
                let t = matching.pairs.iter().find(|x| x.0 == p).map(|x| x.1);
                for (c, &s) in pred.scores.iter().enumerate() {
                    let y = t.map(|t| truths[t].category) == Some(c);
                    let (pt, at) = if y { (s, 0.25) } else { (1.0 - s, 0.75) };
                    cls += -at * (1.0 - pt) * (1.0 - pt) * pt.ln();
                }
                if let Some(t) = t {
                    let (a, b) = (pred.bbox.to_array(), truths[t].bbox.to_array());
                    l1 += (0..4).map(|k| (a[k] - b[k]).abs()).sum::<f64>();
                    gi += 1.0 - giou(&pred.bbox, &truths[t].bbox);
                }
            }
            let expected = 2.0 * cls / 3.0 + 5.0 * l1 / 3.0 + 2.0 * gi / 3.0
                + 1.0 * batch_contrastive_loss(&batch);
            assert!((out.total - expected).abs() < 1e-9, "{} vs {expected}", out.total);
        }
    }

    #[test]
    fn total_loss_rejects_bad_matching() {
        let t = Truth {
            category: 0,
            bbox: BBox::new(0.5, 0.5, 0.2, 0.2).unwrap(),
        };
        let p = Prediction {
            scores: vec![0.5],
            bbox: t.bbox,
        };
        let batch = MatchedEmbeddingBatch::new(vec![], 0.1).unwrap();
        let mut m = crate::assignment::detr_matching(std::slice::from_ref(&p), &[t], &Default::default())
            .unwrap();
        m.pairs = vec![(3, 0)];
        assert!(total_loss(std::slice::from_ref(&p), &[t], &m, &batch, &LossWeights::default()).is_err());
        m.pairs.clear();
        assert!(total_loss(&[p], &[t], &m, &batch, &LossWeights::default()).is_err());
    }

    #[test]
    fn gather_matched_labels_by_truth() {
        let preds = vec![
            Embedding::new(vec![1.0, 0.0]),
            Embedding::new(vec![0.0, 1.0]),
        ];
        let a = Assignment {
            pairs: vec![(1, 0)],
            total: 0.0,
            unassigned_rows: vec![0],
            unassigned_cols: vec![],
        };
        let m = gather_matched(&preds, &[42], &a, 3, 7).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].instance_id, 42);
        assert_eq!(m[0].embedding, preds[1]);
        assert_eq!((m[0].video_id, m[0].frame_id), (3, 7));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn permutation_permutes_gradient(seed in 0u64..10_000, shift in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, 9, 5, 0.1);
            let mut entries = b.entries().to_vec();
            entries.rotate_left(shift);
            let r = MatchedEmbeddingBatch::new(entries, 0.1).unwrap();
            prop_assert!((batch_contrastive_loss(&b) - batch_contrastive_loss(&r)).abs() <= 1e-12);
            let (g, h) = (contrastive_gradient(&b), contrastive_gradient(&r));
            for i in 0..9 {
                let j = (i + 9 - shift) % 9;
                for (x, y) in g.values[i].iter().zip(&h.values[j]) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn scaling_an_embedding_keeps_the_loss(seed in 0u64..10_000, idx in 0usize..9, s in 0.01..100.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, 9, 5, 0.1);
            let mut entries = b.entries().to_vec();
            entries[idx].embedding = entries[idx].embedding.scaled(s);
            let r = MatchedEmbeddingBatch::new(entries, 0.1).unwrap();
            prop_assert!((batch_contrastive_loss(&b) - batch_contrastive_loss(&r)).abs() <= 1e-9);
        }
    }
}
