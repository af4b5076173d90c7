//! File codecs: MOTChallenge ground truth and results, detection JSON Lines,
//! and the `meta.json` sidecar carrying the image size.
//!
//! Boxes are normalized in memory and in pixels inside MOTChallenge files.
//! Pixel values are written rounded to 1/1000 px.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Embedding};
use crate::metrics::{GtObject, PredObject};
use crate::simulator::SimulatorConfig;
use crate::tracker::{Detection, TrackOutput};

/// Detections grouped per frame, frames ascending.
pub type FrameDetections = Vec<(u64, Vec<Detection>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub image_width: u32,
    pub image_height: u32,
    pub video_id: u64,
    /// Number of frames in the sequence.
    pub frames: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<SimulatorConfig>,
}

impl SequenceMeta {
    pub fn image_size(&self) -> (f64, f64) {
        (self.image_width as f64, self.image_height as f64)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_meta(path: &Path) -> Result<SequenceMeta> {
    let meta: SequenceMeta = serde_json::from_str(&read(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if meta.image_width == 0 || meta.image_height == 0 {
        return Err(Error::InvalidParameter("image size must be positive".into()));
    }
    Ok(meta)
}

pub fn write_meta(meta: &SequenceMeta, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    write(path, &text)
}

fn px(v: f64) -> String {
    // adding 0.0 turns -0 into 0
    format!("{}", (v * 1000.0).round() / 1000.0 + 0.0)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Comma-separated fields of non-blank lines with their 1-based numbers.
fn csv_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, cols: &[&str], k: usize, name: &str) -> Result<T> {
    cols[k]
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} {:?}", cols[k])))
}

fn finite(path: &Path, line: usize, v: f64, name: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("non-finite {name}")))
    }
}

/// Parses `frame,id,left,top,width,height,flag,category,visibility`.
/// Lines with flag 0 are skipped; the result is sorted by frame then id.
pub fn parse_mot_gt_str(text: &str, path: &Path, image: (f64, f64)) -> Result<Vec<(u64, GtObject)>> {
    let mut out = Vec::new();
    for (n, cols) in csv_lines(text) {
        if cols.len() < 7 {
            return Err(parse_err(path, n, format!("expected at least 7 fields, got {}", cols.len())));
        }
        let flag: f64 = field(path, n, &cols, 6, "flag")?;
        if flag == 0.0 {
            continue;
        }
        let frame: u64 = field(path, n, &cols, 0, "frame")?;
        let id: u64 = field(path, n, &cols, 1, "id")?;
        if frame == 0 || id == 0 {
            return Err(parse_err(path, n, "frame and id are 1-based"));
        }
        let mut ltwh = [0.0; 4];
        for (k, v) in ltwh.iter_mut().enumerate() {
            *v = finite(path, n, field(path, n, &cols, 2 + k, "coordinate")?, "coordinate")?;
        }
        let category = match cols.get(7) {
            Some(_) => {
                let v: i64 = field(path, n, &cols, 7, "category")?;
                u32::try_from(v).map_err(|_| parse_err(path, n, format!("bad category {v}")))?
            }
            None => 1,
        };
        let bbox = BBox::from_pixel_ltwh(ltwh[0], ltwh[1], ltwh[2], ltwh[3], image.0, image.1)
            .map_err(|e| parse_err(path, n, e.to_string()))?;
        out.push((
            frame,
            GtObject {
                track_id: id,
                category,
                bbox,
            },
        ));
    }
    out.sort_by_key(|(f, g)| (*f, g.track_id));
    Ok(out)
}

pub fn parse_mot_gt(path: &Path, image: (f64, f64)) -> Result<Vec<(u64, GtObject)>> {
    parse_mot_gt_str(&read(path)?, path, image)
}

pub fn format_mot_gt(truths: &[(u64, GtObject)], image: (f64, f64)) -> String {
    let mut rows: Vec<&(u64, GtObject)> = truths.iter().collect();
    rows.sort_by_key(|(f, g)| (*f, g.track_id));
    let mut out = String::new();
    for (f, g) in rows {
        let [l, t, w, h] = g.bbox.to_pixel_ltwh(image.0, image.1);
        out.push_str(&format!(
            "{f},{},{},{},{},{},1,{},1\n",
            g.track_id,
            px(l),
            px(t),
            px(w),
            px(h),
            g.category
        ));
    }
    out
}

pub fn write_mot_gt(truths: &[(u64, GtObject)], image: (f64, f64), path: &Path) -> Result<()> {
    write(path, &format_mot_gt(truths, image))
}

/// Parses MOTChallenge results `frame,id,left,top,width,height,score,...`.
/// Results carry no category.
pub fn parse_mot_results_str(text: &str, path: &Path, image: (f64, f64)) -> Result<Vec<(u64, PredObject)>> {
    let mut out = Vec::new();
    for (n, cols) in csv_lines(text) {
        if cols.len() < 7 {
            return Err(parse_err(path, n, format!("expected at least 7 fields, got {}", cols.len())));
        }
        let frame: u64 = field(path, n, &cols, 0, "frame")?;
        let id: u64 = field(path, n, &cols, 1, "id")?;
        if frame == 0 {
            return Err(parse_err(path, n, "frame numbers are 1-based"));
        }
        let mut v = [0.0; 5];
        for (k, x) in v.iter_mut().enumerate() {
            *x = finite(path, n, field(path, n, &cols, 2 + k, "number")?, "number")?;
        }
        let bbox = BBox::from_pixel_ltwh(v[0], v[1], v[2], v[3], image.0, image.1)
            .map_err(|e| parse_err(path, n, e.to_string()))?;
        out.push((
            frame,
            PredObject {
                instance_id: id,
                category: None,
                bbox,
                score: v[4],
            },
        ));
    }
    out.sort_by_key(|(f, p)| (*f, p.instance_id));
    Ok(out)
}

pub fn parse_mot_results(path: &Path, image: (f64, f64)) -> Result<Vec<(u64, PredObject)>> {
    parse_mot_results_str(&read(path)?, path, image)
}

/// Formats tracker output as `frame,id,left,top,width,height,score,-1,-1,-1`,
/// ordered by frame then id.
pub fn format_results(output: &TrackOutput, image: (f64, f64)) -> String {
    let mut rows: Vec<(u64, u64, [f64; 4], f64)> = output
        .frames
        .iter()
        .flat_map(|f| {
            f.objects
                .iter()
                .map(move |o| (f.frame, o.instance_id, o.bbox.to_pixel_ltwh(image.0, image.1), o.score))
        })
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::new();
    for (f, id, [l, t, w, h], s) in rows {
        out.push_str(&format!("{f},{id},{},{},{},{},{s},-1,-1,-1\n", px(l), px(t), px(w), px(h)));
    }
    out
}

pub fn write_results(output: &TrackOutput, image: (f64, f64), path: &Path) -> Result<()> {
    write(path, &format_results(output, image))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    frame: u64,
    category: u32,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    embedding: Vec<f64>,
}

/// Parses detection JSON Lines into per-frame lists. The embedding
/// dimension is fixed by the first line.
pub fn parse_detections_str(text: &str, path: &Path) -> Result<FrameDetections> {
    let mut dim = None;
    let mut rows: Vec<(u64, Detection)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: DetectionRecord = serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?;
        if r.frame == 0 {
            return Err(parse_err(path, n, "frame numbers are 1-based"));
        }
        if !(0.0..=1.0).contains(&r.score) {
            return Err(parse_err(path, n, format!("score {} outside [0, 1]", r.score)));
        }
        let d = *dim.get_or_insert(r.embedding.len());
        if r.embedding.len() != d || d == 0 {
            return Err(parse_err(
                path,
                n,
                format!("embedding has {} values, expected {d}", r.embedding.len()),
            ));
        }
        let bbox = BBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]).map_err(|e| parse_err(path, n, e.to_string()))?;
        rows.push((
            r.frame,
            Detection {
                category_id: r.category,
                score: r.score,
                bbox,
                embedding: Embedding::new(r.embedding),
            },
        ));
    }
    // stable: keeps file order within a frame
    rows.sort_by_key(|r| r.0);
    let mut out: FrameDetections = Vec::new();
    for (f, d) in rows {
        match out.last_mut() {
            Some((lf, list)) if *lf == f => list.push(d),
            _ => out.push((f, vec![d])),
        }
    }
    Ok(out)
}

pub fn parse_detections(path: &Path) -> Result<FrameDetections> {
    parse_detections_str(&read(path)?, path)
}

pub fn format_detections(frames: &[(u64, Vec<Detection>)]) -> Result<String> {
    let mut out = String::new();
    for (f, dets) in frames {
        for d in dets {
            let r = DetectionRecord {
                frame: *f,
                category: d.category_id,
                score: d.score,
                bbox: d.bbox.to_array(),
                embedding: d.embedding.as_slice().to_vec(),
            };
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_detections(frames: &[(u64, Vec<Detection>)], path: &Path) -> Result<()> {
    write(path, &format_detections(frames)?)
}
