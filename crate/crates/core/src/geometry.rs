//! Box and embedding primitives shared by the matcher, the tracker and the
//! metrics.
//!
//! Boxes are stored in normalized center form `(cx, cy, w, h)`; corner and
//! pixel forms are only produced on demand at the file-format boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::NonFinite("box"));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox(format!("negative extent w={w} h={h}")));
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from corner form `(left, top, right, bottom)`.
    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        Self::new(
            (left + right) / 2.0,
            (top + bottom) / 2.0,
            right - left,
            bottom - top,
        )
    }

    /// Builds a normalized box from pixel `(left, top, width, height)` for an
    /// image of the given size.
    pub fn from_pixel_ltwh(
        left: f64,
        top: f64,
        width: f64,
        height: f64,
        image_width: f64,
        image_height: f64,
    ) -> Result<Self> {
        if !(image_width > 0.0 && image_height > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "image size must be positive, got {image_width}x{image_height}"
            )));
        }
        let l = left / image_width;
        let t = top / image_height;
        let w = width / image_width;
        let h = height / image_height;
        Self::new(l + w / 2.0, t + h / 2.0, w, h)
    }

    /// Pixel `(left, top, width, height)` for an image of the given size.
    pub fn to_pixel_ltwh(&self, image_width: f64, image_height: f64) -> [f64; 4] {
        [
            self.left() * image_width,
            self.top() * image_height,
            self.w * image_width,
            self.h * image_height,
        ]
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// `[left, top, right, bottom]`
    pub fn corners(&self) -> [f64; 4] {
        [self.left(), self.top(), self.right(), self.bottom()]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// The four center-form coordinates as an array, in `cx, cy, w, h` order.
    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// L1 distance between the center-form coordinates of two boxes.
    pub fn l1_distance(&self, other: &BBox) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// An overlap score together with a flag telling whether the inputs were
/// degenerate (the score is then defined as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub value: f64,
    pub degenerate: bool,
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    iw * ih
}

/// Area from corner differences, consistent with `intersection_area` so that
/// identical boxes give IoU exactly 1.
fn corner_area(b: &BBox) -> f64 {
    (b.right() - b.left()) * (b.bottom() - b.top())
}

/// Intersection over union with the degenerate-input flag.
pub fn iou_checked(a: &BBox, b: &BBox) -> Overlap {
    let inter = intersection_area(a, b);
    let union = corner_area(a) + corner_area(b) - inter;
    if union <= 0.0 {
        return Overlap {
            value: 0.0,
            degenerate: true,
        };
    }
    Overlap {
        value: (inter / union).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Intersection over union; 0 when both boxes have zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_checked(a, b).value
}

/// Generalized IoU with the degenerate-input flag.
pub fn giou_checked(a: &BBox, b: &BBox) -> Overlap {
    let inter = intersection_area(a, b);
    let union = corner_area(a) + corner_area(b) - inter;
    let ew = a.right().max(b.right()) - a.left().min(b.left());
    let eh = a.bottom().max(b.bottom()) - a.top().min(b.top());
    let enclosing = ew * eh;
    if enclosing <= 0.0 || union <= 0.0 {
        return Overlap {
            value: 0.0,
            degenerate: true,
        };
    }
    // enclosing ≥ union; rounding can break that when one box contains the other
    let value = inter / union - (enclosing - union).max(0.0) / enclosing;
    Overlap {
        value: value.clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Generalized IoU in `[-1, 1]`; 0 when the enclosing box is degenerate.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    giou_checked(a, b).value
}

/// A tracking embedding. Stored as given; similarity normalizes internally.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
    unit: bool,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            unit: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    /// Whether this value came out of [`Embedding::normalized`].
    pub fn is_normalized(&self) -> bool {
        self.unit
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Embedding {
            values: self.values.iter().map(|v| v / n).collect(),
            unit: true,
        })
    }

    pub fn scaled(&self, factor: f64) -> Embedding {
        Embedding::new(self.values.iter().map(|v| v * factor).collect())
    }
}

impl PartialEq for Embedding {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Dot product of equal-length slices.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { dot_fma(a, b) };
        }
    }
    dot_portable(a, b)
}

#[inline]
fn dot_portable(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_fma(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = x[k].mul_add(y[k], acc[k]);
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Dot products of every key with every row: `out[k * rows.len() + r]`
/// is `keys[k] · rows[r]`. All slices must share one length.
pub(crate) fn dot_table(rows: &[&[f64]], keys: &[&[f64]], out: &mut [f64]) {
    let dim = rows.first().or(keys.first()).map_or(0, |r| r.len());
    assert!(out.len() == rows.len() * keys.len());
    assert!(rows.iter().chain(keys).all(|r| r.len() == dim));
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { dot_table_avx512(rows, keys, out) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { dot_table_fma(rows, keys, out) };
            return;
        }
    }
    dot_table_tiled(rows, keys, out, block_dots_portable);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_table_fma(rows: &[&[f64]], keys: &[&[f64]], out: &mut [f64]) {
    dot_table_tiled(rows, keys, out, block_dots_avx2);
}

#[cfg(target_arch = "x86_64")]
#[inline(always)]
fn block_dots_avx2(rows: [&[f64]; 4], keys: [&[f64]; 2]) -> [[f64; 4]; 2] {
    use std::arch::x86_64::*;

    #[inline(always)]
    fn load(lanes: &[f64]) -> __m256d {
        let a: [f64; 4] = lanes.try_into().expect("four lanes");
        // SAFETY: [f64; 4] and __m256d have the same size and no invalid bit patterns.
        unsafe { std::mem::transmute::<[f64; 4], __m256d>(a) }
    }

    #[inline(always)]
    fn hsum(v: __m256d) -> f64 {
        // SAFETY: as in `load`.
        let a = unsafe { std::mem::transmute::<__m256d, [f64; 4]>(v) };
        (a[0] + a[1]) + (a[2] + a[3])
    }

    let len = keys[0].len();
    let body = len - len % 4;
    // SAFETY: callers only reach this through `dot_table_fma`, compiled with
    // avx2 and fma after runtime detection.
    unsafe {
        let zero = _mm256_setzero_pd();
        let (mut a0, mut a1, mut a2, mut a3) = (zero, zero, zero, zero);
        let (mut b0, mut b1, mut b2, mut b3) = (zero, zero, zero, zero);
        let lanes = keys[0][..body]
            .chunks_exact(4)
            .zip(keys[1][..body].chunks_exact(4))
            .zip(rows[0][..body].chunks_exact(4))
            .zip(rows[1][..body].chunks_exact(4))
            .zip(rows[2][..body].chunks_exact(4))
            .zip(rows[3][..body].chunks_exact(4));
        for (((((k0, k1), r0), r1), r2), r3) in lanes {
            let (k0, k1) = (load(k0), load(k1));
            let (r0, r1, r2, r3) = (load(r0), load(r1), load(r2), load(r3));
            a0 = _mm256_fmadd_pd(r0, k0, a0);
            a1 = _mm256_fmadd_pd(r1, k0, a1);
            a2 = _mm256_fmadd_pd(r2, k0, a2);
            a3 = _mm256_fmadd_pd(r3, k0, a3);
            b0 = _mm256_fmadd_pd(r0, k1, b0);
            b1 = _mm256_fmadd_pd(r1, k1, b1);
            b2 = _mm256_fmadd_pd(r2, k1, b2);
            b3 = _mm256_fmadd_pd(r3, k1, b3);
        }
        let acc = [[a0, a1, a2, a3], [b0, b1, b2, b3]];
        let mut sums = [[0.0f64; 4]; 2];
        for j in 0..2 {
            for i in 0..4 {
                let tail: f64 = rows[i][body..].iter().zip(&keys[j][body..]).map(|(x, y)| x * y).sum();
                sums[j][i] = hsum(acc[j][i]) + tail;
            }
        }
        sums
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn dot_table_avx512(rows: &[&[f64]], keys: &[&[f64]], out: &mut [f64]) {
    dot_table_tiled(rows, keys, out, block_dots_avx512);
}

#[cfg(target_arch = "x86_64")]
#[inline(always)]
fn block_dots_avx512(rows: [&[f64]; 4], keys: [&[f64]; 2]) -> [[f64; 4]; 2] {
    use std::arch::x86_64::*;

    #[inline(always)]
    fn load(lanes: &[f64]) -> __m512d {
        let a: [f64; 8] = lanes.try_into().expect("eight lanes");
        // SAFETY: [f64; 8] and __m512d have the same size and no invalid bit patterns.
        unsafe { std::mem::transmute::<[f64; 8], __m512d>(a) }
    }

    let len = keys[0].len();
    let body = len - len % 8;
    // SAFETY: callers only reach this through `dot_table_avx512`, compiled
    // with avx512f after runtime detection.
    unsafe {
        let zero = _mm512_setzero_pd();
        let (mut a0, mut a1, mut a2, mut a3) = (zero, zero, zero, zero);
        let (mut b0, mut b1, mut b2, mut b3) = (zero, zero, zero, zero);
        let lanes = keys[0][..body]
            .chunks_exact(8)
            .zip(keys[1][..body].chunks_exact(8))
            .zip(rows[0][..body].chunks_exact(8))
            .zip(rows[1][..body].chunks_exact(8))
            .zip(rows[2][..body].chunks_exact(8))
            .zip(rows[3][..body].chunks_exact(8));
        for (((((k0, k1), r0), r1), r2), r3) in lanes {
            let (k0, k1) = (load(k0), load(k1));
            let (r0, r1, r2, r3) = (load(r0), load(r1), load(r2), load(r3));
            a0 = _mm512_fmadd_pd(r0, k0, a0);
            a1 = _mm512_fmadd_pd(r1, k0, a1);
            a2 = _mm512_fmadd_pd(r2, k0, a2);
            a3 = _mm512_fmadd_pd(r3, k0, a3);
            b0 = _mm512_fmadd_pd(r0, k1, b0);
            b1 = _mm512_fmadd_pd(r1, k1, b1);
            b2 = _mm512_fmadd_pd(r2, k1, b2);
            b3 = _mm512_fmadd_pd(r3, k1, b3);
        }
        let acc = [[a0, a1, a2, a3], [b0, b1, b2, b3]];
        let mut sums = [[0.0f64; 4]; 2];
        for j in 0..2 {
            for i in 0..4 {
                let tail: f64 = rows[i][body..].iter().zip(&keys[j][body..]).map(|(x, y)| x * y).sum();
                sums[j][i] = _mm512_reduce_add_pd(acc[j][i]) + tail;
            }
        }
        sums
    }
}

/// Keys are taken in tiles small enough to stay in L1 while every block of
/// four rows passes over them; each block meets two keys at a time so every
/// loaded lane feeds several accumulators.
#[inline(always)]
fn dot_table_tiled<F>(rows: &[&[f64]], keys: &[&[f64]], out: &mut [f64], block_dots: F)
where
    F: Fn([&[f64]; 4], [&[f64]; 2]) -> [[f64; 4]; 2],
{
    const KEY_TILE: usize = 8;
    let n = rows.len();
    for (t, tile) in keys.chunks(KEY_TILE).enumerate() {
        let base = t * KEY_TILE;
        let mut r = 0;
        while r < n {
            let take = (n - r).min(4);
            let block: [&[f64]; 4] = std::array::from_fn(|i| rows[r + i.min(take - 1)]);
            let mut k = 0;
            while k < tile.len() {
                let pair = [tile[k], tile[(k + 1).min(tile.len() - 1)]];
                let acc = block_dots(block, pair);
                for (j, col) in acc.iter().enumerate().take(tile.len() - k) {
                    for (i, v) in col.iter().enumerate().take(take) {
                        out[(base + k + j) * n + r + i] = *v;
                    }
                }
                k += 2;
            }
            r += take;
        }
    }
}

fn block_dots_portable(rows: [&[f64]; 4], keys: [&[f64]; 2]) -> [[f64; 4]; 2] {
    let mut sums = [[0.0f64; 4]; 2];
    for (j, key) in keys.iter().enumerate() {
        for (i, row) in rows.iter().enumerate() {
            sums[j][i] = dot_portable(row, key);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corners(l: f64, t: f64, r: f64, b: f64) -> BBox {
        BBox::from_corners(l, t, r, b).unwrap()
    }

    #[test]
    fn dot_table_variants_agree_with_single_dots() {
        type Table = fn(&[&[f64]], &[&[f64]], &mut [f64]);
        let mut variants: Vec<Table> = vec![dot_table, |r, k, o| dot_table_tiled(r, k, o, block_dots_portable)];
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                variants.push(|r, k, o| unsafe { dot_table_fma(r, k, o) });
            }
            if std::arch::is_x86_feature_detected!("avx512f") {
                variants.push(|r, k, o| unsafe { dot_table_avx512(r, k, o) });
            }
        }
        for (count, keys, len) in [(0, 3, 3), (1, 1, 8), (5, 3, 13), (9, 17, 256), (4, 2, 1), (3, 0, 4), (6, 5, 21)] {
            let rows: Vec<Vec<f64>> = (0..count)
                .map(|r| (0..len).map(|c| ((r * 31 + c * 7) % 11) as f64 - 5.0).collect())
                .collect();
            let ks: Vec<Vec<f64>> = (0..keys)
                .map(|k| (0..len).map(|c| ((k * 5 + c) % 5) as f64 * 0.25 - 0.5).collect())
                .collect();
            let rr: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let kr: Vec<&[f64]> = ks.iter().map(|r| r.as_slice()).collect();
            for table in &variants {
                let mut out = vec![f64::NAN; count * keys];
                table(&rr, &kr, &mut out);
                for (k, key) in ks.iter().enumerate() {
                    for (r, row) in rows.iter().enumerate() {
                        assert_eq!(out[k * count + r], dot_portable(row, key));
                    }
                }
            }
        }
    }

    #[test]
    fn iou_examples() {
        let a = corners(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &corners(5.0, 5.0, 6.0, 6.0)), 0.0);
        let v = iou(&a, &corners(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn degenerate_boxes_are_flagged() {
        let p = BBox::new(0.5, 0.5, 0.0, 0.0).unwrap();
        let o = iou_checked(&p, &p);
        assert_eq!(o.value, 0.0);
        assert!(o.degenerate);
        let g = giou_checked(&p, &p);
        assert_eq!(g.value, 0.0);
        assert!(g.degenerate);
    }

    #[test]
    fn giou_examples() {
        let a = corners(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a), 1.0);
        let v = giou(&a, &corners(1.0, 1.0, 2.0, 2.0));
        assert!((v + 0.5).abs() < 1e-12, "{v}");
        let v = giou(&corners(0.0, 0.0, 2.0, 2.0), &corners(1.0, 1.0, 3.0, 3.0));
        assert!((v - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rejects_negative_extent() {
        assert!(BBox::new(0.5, 0.5, -0.1, 0.2).is_err());
        assert!(BBox::new(f64::NAN, 0.5, 0.1, 0.2).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = Embedding::new(vec![1.0, 1.0]);
        let b = Embedding::new(vec![1.0, 0.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let o = Embedding::new(vec![0.0, 1.0]);
        assert_eq!(cosine_similarity(&b, &o).unwrap(), 0.0);
        let v = cosine_similarity(&a, &b).unwrap();
        assert!((v - 0.7071067811865475).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let a = Embedding::new(vec![1.0, 1.0]);
        let z = Embedding::new(vec![0.0, 0.0]);
        let c = Embedding::new(vec![1.0, 1.0, 1.0]);
        assert!(matches!(cosine_similarity(&a, &z), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine_similarity(&a, &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dot_kernels_agree() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 1.3).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        assert!((dot_portable(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn normalization_gives_unit_norm() {
        let e = Embedding::new(vec![3.0, -4.0, 12.0]).normalized().unwrap();
        assert!(e.is_normalized());
        assert!((e.norm() - 1.0).abs() < 1e-9);
        assert!(Embedding::new(vec![0.0; 3]).normalized().is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..0.6f64, 0.0..0.6f64)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn giou_never_exceeds_iou(a in arb_box(), b in arb_box()) {
            prop_assert!(giou(&a, &b) <= iou(&a, &b) + 1e-15);
        }

        #[test]
        fn iou_is_symmetric(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        }
    }

    proptest! {
        #[test]
        fn corner_round_trip(b in arb_box()) {
            let [l, t, r, bt] = b.corners();
            let back = BBox::from_corners(l, t, r, bt).unwrap();
            for (x, y) in back.to_array().iter().zip(b.to_array()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            v in proptest::collection::vec(-1.0..1.0f64, 1..32),
            w in proptest::collection::vec(-1.0..1.0f64, 32),
            s in 1e-3..1e3f64,
        ) {
            let a = Embedding::new(v.clone());
            let b = Embedding::new(w[..v.len()].to_vec());
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let base = cosine_similarity(&a, &b).unwrap();
            prop_assert!((cosine_similarity(&a.scaled(s), &b).unwrap() - base).abs() < 1e-9);
            prop_assert!((cosine_similarity(&a, &b.scaled(s)).unwrap() - base).abs() < 1e-9);
        }
    }
}
