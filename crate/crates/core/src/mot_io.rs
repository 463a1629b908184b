//! MOTChallenge-style text files, sequence folders, and dataset statistics.
//!
//! Ground truth: `frame,id,x,y,w,h,conf,class,visibility`.
//! Detections and results: `frame,id,x,y,w,h,score,class,-1,-1`, where the
//! class field is `-1` when unknown and ids are `-1` for raw detections.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::blob;
use crate::error::{Error, Result};
use crate::tracker::{check_unit, cosine_distance, iou, BBox, ClassId, Detection, Tracklet};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub frame: u64,
    /// `-1` for detections without identity.
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
    pub class_id: Option<ClassId>,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    /// Lines dropped for a non-positive width or height.
    pub rejected: usize,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            rejected: 0,
        }
    }
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

struct Fields<'a> {
    path: &'a str,
    line: usize,
    parts: Vec<&'a str>,
}

impl Fields<'_> {
    fn num(&self, i: usize, name: &str) -> Result<f64> {
        let s = self.parts[i];
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(parse_err(self.path, self.line, format!("{name}: {s:?} is not a finite number"))),
        }
    }

    fn int(&self, i: usize, name: &str) -> Result<i64> {
        let v = self.num(i, name)?;
        if v.fract() != 0.0 {
            return Err(parse_err(self.path, self.line, format!("{name}: {v} is not an integer")));
        }
        Ok(v as i64)
    }

    fn frame(&self) -> Result<u64> {
        let f = self.int(0, "frame")?;
        if f < 1 {
            return Err(parse_err(self.path, self.line, format!("frame {f} must be >= 1")));
        }
        Ok(f as u64)
    }

    fn class(&self, i: usize) -> Result<Option<ClassId>> {
        match self.int(i, "class")? {
            -1 => Ok(None),
            c => ClassId::new(c)
                .map(Some)
                .map_err(|_| parse_err(self.path, self.line, format!("class {c} outside 1..=6 and not -1"))),
        }
    }

    fn unit(&self, i: usize, name: &str) -> Result<f64> {
        let v = self.num(i, name)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(parse_err(self.path, self.line, format!("{name} {v} outside [0, 1]")));
        }
        Ok(v)
    }

    /// `None` when the box has a non-positive side.
    fn bbox(&self) -> Result<Option<BBox>> {
        let (x, y) = (self.num(2, "x")?, self.num(3, "y")?);
        let (w, h) = (self.num(4, "w")?, self.num(5, "h")?);
        Ok(BBox::new(x, y, w, h).ok())
    }
}

fn lines<'a>(text: &'a str, path: &'a str, arity: usize) -> impl Iterator<Item = Result<Fields<'a>>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let l = raw.trim();
        if l.is_empty() {
            return None;
        }
        let parts: Vec<&str> = l.split(',').map(str::trim).collect();
        if parts.len() != arity {
            return Some(Err(parse_err(
                path,
                i + 1,
                format!("expected {arity} fields, found {}", parts.len()),
            )));
        }
        Some(Ok(Fields {
            path,
            line: i + 1,
            parts,
        }))
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sort_records(v: &mut [AnnotationRecord]) {
    v.sort_by_key(|r| (r.frame, r.id));
}

pub fn parse_gt_str(text: &str, path: &str) -> Result<Parsed<AnnotationRecord>> {
    let mut out = Parsed::default();
    for f in lines(text, path, 9) {
        let f = f?;
        let frame = f.frame()?;
        let id = f.int(1, "id")?;
        let conf = f.num(6, "conf")?;
        let class_id = f.class(7)?;
        let visibility = f.unit(8, "visibility")?;
        match f.bbox()? {
            Some(bbox) => out.records.push(AnnotationRecord {
                frame,
                id,
                bbox,
                conf,
                class_id,
                visibility,
            }),
            None => out.rejected += 1,
        }
    }
    sort_records(&mut out.records);
    let mut seen = std::collections::HashSet::new();
    for r in &out.records {
        if !seen.insert((r.frame, r.id)) {
            return Err(Error::Format(format!("{path}: duplicate (frame {}, id {})", r.frame, r.id)));
        }
    }
    if out.rejected > 0 {
        log::warn!("{path}: rejected {} records with non-positive size", out.rejected);
    }
    Ok(out)
}

pub fn parse_gt(path: &Path) -> Result<Parsed<AnnotationRecord>> {
    parse_gt_str(&read_text(path)?, &path.display().to_string())
}

/// Detection or result lines as records.
pub fn parse_records_str(text: &str, path: &str) -> Result<Parsed<AnnotationRecord>> {
    let mut out = Parsed::default();
    for f in lines(text, path, 10) {
        let f = f?;
        let frame = f.frame()?;
        let id = f.int(1, "id")?;
        let conf = f.unit(6, "score")?;
        let class_id = f.class(7)?;
        match f.bbox()? {
            Some(bbox) => out.records.push(AnnotationRecord {
                frame,
                id,
                bbox,
                conf,
                class_id,
                visibility: 1.0,
            }),
            None => out.rejected += 1,
        }
    }
    sort_records(&mut out.records);
    if out.rejected > 0 {
        log::warn!("{path}: rejected {} records with non-positive size", out.rejected);
    }
    Ok(out)
}

pub fn parse_results(path: &Path) -> Result<Parsed<AnnotationRecord>> {
    parse_records_str(&read_text(path)?, &path.display().to_string())
}

pub fn parse_det_str(text: &str, path: &str) -> Result<Parsed<Detection>> {
    let p = parse_records_str(text, path)?;
    Ok(Parsed {
        records: p
            .records
            .into_iter()
            .map(|r| Detection::new(r.frame, r.class_id, r.bbox, r.conf))
            .collect::<Result<_>>()?,
        rejected: p.rejected,
    })
}

pub fn parse_det(path: &Path) -> Result<Parsed<Detection>> {
    parse_det_str(&read_text(path)?, &path.display().to_string())
}

/// Group detections by frame, preserving file order within a frame.
pub fn group_by_frame(dets: Vec<Detection>) -> Vec<(u64, Vec<Detection>)> {
    let mut m: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        m.entry(d.frame).or_default().push(d);
    }
    m.into_iter().collect()
}

pub fn records_from_tracklets(tracklets: &[Tracklet]) -> Vec<AnnotationRecord> {
    let mut v: Vec<AnnotationRecord> = tracklets
        .iter()
        .flat_map(|t| {
            t.boxes.iter().map(|&(frame, bbox, score)| AnnotationRecord {
                frame,
                id: t.id as i64,
                bbox,
                conf: score,
                class_id: t.class_id,
                visibility: 1.0,
            })
        })
        .collect();
    sort_records(&mut v);
    v
}

pub fn format_records(records: &[AnnotationRecord]) -> String {
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut s = String::new();
    for r in sorted {
        let class = r.class_id.map_or(-1, |c| c.get() as i64);
        let _ = writeln!(
            s,
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{},-1,-1",
            r.frame, r.id, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.conf, class
        );
    }
    s
}

/// Ground-truth lines at 2-decimal precision.
pub fn format_gt(records: &[AnnotationRecord]) -> String {
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut s = String::new();
    for r in sorted {
        let class = r.class_id.map_or(-1, |c| c.get() as i64);
        let _ = writeln!(
            s,
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{},{:.2}",
            r.frame, r.id, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.conf, class, r.visibility
        );
    }
    s
}

pub fn write_result(tracklets: &[Tracklet], path: &Path) -> Result<()> {
    fs::write(path, format_records(&records_from_tracklets(tracklets))).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub name: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub length: u64,
    pub split: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub dir: PathBuf,
    pub meta: SequenceMeta,
    pub gt: Option<Vec<AnnotationRecord>>,
    pub det: Option<Vec<Detection>>,
    /// `(frame index, path)` of `raw/*.raw16`, sorted.
    pub raw_frames: Vec<(u64, PathBuf)>,
    pub warnings: Vec<String>,
}

pub fn parse_seqinfo(text: &str, path: &str, default_name: &str) -> Result<SequenceMeta> {
    let mut kv = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with(';') || l.starts_with('[') {
            continue;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, "expected key=value"))?;
        kv.insert(k.trim().to_ascii_lowercase(), (i + 1, v.trim().to_string()));
    }
    let get = |keys: &[&str]| keys.iter().find_map(|k| kv.get(*k).cloned());
    fn num<T: std::str::FromStr>(path: &str, (line, v): (usize, String), key: &str) -> Result<T> {
        v.parse()
            .map_err(|_| parse_err(path, line, format!("{key}: {v:?} is not a valid number")))
    }
    let need = |keys: &[&str]| {
        get(keys).ok_or_else(|| Error::Format(format!("{path}: missing {}", keys.join(" / "))))
    };
    let length: u64 = num(path, need(&["length", "seqlength"])?, "length")?;
    if length == 0 {
        return Err(Error::Format(format!("{path}: length must be >= 1")));
    }
    let fps = match get(&["fps", "framerate"]) {
        Some(v) => num(path, v, "fps")?,
        None => 20.0,
    };
    Ok(SequenceMeta {
        name: get(&["name"]).map_or_else(|| default_name.to_string(), |v| v.1),
        fps,
        width: num(path, need(&["width", "imwidth"])?, "width")?,
        height: num(path, need(&["height", "imheight"])?, "height")?,
        length,
        split: get(&["split"]).map(|v| v.1),
    })
}

pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let info = ["seqinfo", "seqinfo.ini"]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Format(format!("{}: no seqinfo file", dir.display())))?;
    let default_name = dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let meta = parse_seqinfo(&read_text(&info)?, &info.display().to_string(), &default_name)?;
    let mut warnings = Vec::new();

    let gt_path = dir.join("gt").join("gt.txt");
    let gt = if gt_path.is_file() {
        Some(parse_gt(&gt_path)?.records)
    } else {
        None
    };
    let det_path = dir.join("det").join("det.txt");
    let det = if det_path.is_file() {
        Some(parse_det(&det_path)?.records)
    } else {
        None
    };

    let mut raw_frames = Vec::new();
    let raw_dir = dir.join("raw");
    if raw_dir.is_dir() {
        for entry in fs::read_dir(&raw_dir).map_err(|e| Error::io(&raw_dir, e))? {
            let p = entry.map_err(|e| Error::io(&raw_dir, e))?.path();
            if p.extension().is_some_and(|e| e == "raw16") {
                if let Some(idx) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
                    raw_frames.push((idx, p));
                }
            }
        }
        raw_frames.sort();
        let missing: Vec<u64> = raw_frames
            .windows(2)
            .flat_map(|w| w[0].0 + 1..w[1].0)
            .collect();
        if !missing.is_empty() {
            let msg = format!("raw frame numbering has gaps, missing {missing:?}");
            log::warn!("{}: {msg}", dir.display());
            warnings.push(msg);
        }
    }
    Ok(Sequence {
        dir: dir.to_path_buf(),
        meta,
        gt,
        det,
        raw_frames,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub total: u64,
    /// `None` when nothing was accumulated.
    pub mean: Option<f64>,
}

impl Histogram {
    pub fn from_values(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self {
            lo,
            hi,
            counts,
            total: values.len() as u64,
            mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}.count={}", self.total);
        match self.mean {
            Some(m) => {
                let _ = writeln!(s, "{prefix}.mean={m:.6}");
            }
            None => {
                let _ = writeln!(s, "{prefix}.empty=true");
            }
        }
        let bins: Vec<String> = self.counts.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "{prefix}.bins={}", bins.join(","));
        s
    }
}

fn by_id(gt: &[AnnotationRecord]) -> BTreeMap<i64, Vec<&AnnotationRecord>> {
    let mut m: BTreeMap<i64, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in gt {
        m.entry(r.id).or_default().push(r);
    }
    for v in m.values_mut() {
        v.sort_by_key(|r| r.frame);
    }
    m
}

/// IoU of each id's boxes on frames `t` and `t + 1`; 20 bins over [0, 1].
pub fn stats_adjacent_iou(gt: &[AnnotationRecord]) -> Histogram {
    let mut values = Vec::new();
    for track in by_id(gt).values() {
        for w in track.windows(2) {
            if w[1].frame == w[0].frame + 1 {
                values.push(iou(&w[0].bbox, &w[1].bbox));
            }
        }
    }
    Histogram::from_values(&values, 0.0, 1.0, 20)
}

/// Embeddings keyed by `(frame, id)` from a blob with tensors `keys`
/// `[n, 2]` and `embeddings` `[n, dim]`.
pub fn read_embeddings(path: &Path) -> Result<HashMap<(u64, i64), Vec<f64>>> {
    let (tensors, _) = blob::read(path)?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("{}: missing tensor {name:?}", path.display())))
    };
    let keys = find("keys")?;
    let emb = find("embeddings")?;
    if keys.shape.len() != 2 || keys.shape[1] != 2 || emb.shape.len() != 2 || emb.shape[0] != keys.shape[0] {
        return Err(Error::Format(format!(
            "{}: keys {:?} / embeddings {:?} do not line up",
            path.display(),
            keys.shape,
            emb.shape
        )));
    }
    let dim = emb.shape[1];
    let mut out = HashMap::with_capacity(keys.shape[0]);
    for i in 0..keys.shape[0] {
        let v = emb.data[i * dim..(i + 1) * dim].to_vec();
        check_unit(&v).map_err(|e| Error::Format(format!("{}: row {i}: {e}", path.display())))?;
        out.insert((keys.data[2 * i] as u64, keys.data[2 * i + 1] as i64), v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineStats {
    pub same_id: Histogram,
    pub cross_id: Histogram,
    /// `(frame, id)` records without an embedding.
    pub missing: Vec<(u64, i64)>,
}

/// Same-id distances between consecutive appearances of each id, and
/// cross-id distances between all distinct ids sharing a frame; 40 bins over
/// [0, 2].
pub fn stats_appearance_cosine(
    gt: &[AnnotationRecord],
    embeddings: &HashMap<(u64, i64), Vec<f64>>,
) -> Result<CosineStats> {
    let mut missing = Vec::new();
    let mut lookup = |r: &AnnotationRecord| {
        let e = embeddings.get(&(r.frame, r.id));
        if e.is_none() {
            missing.push((r.frame, r.id));
        }
        e
    };
    let mut same = Vec::new();
    for track in by_id(gt).values() {
        let present: Vec<&Vec<f64>> = track.iter().filter_map(|r| lookup(r)).collect();
        for w in present.windows(2) {
            same.push(cosine_distance(w[0], w[1])?);
        }
    }
    let mut frames: BTreeMap<u64, Vec<(i64, &Vec<f64>)>> = BTreeMap::new();
    for r in gt {
        if let Some(e) = embeddings.get(&(r.frame, r.id)) {
            frames.entry(r.frame).or_default().push((r.id, e));
        }
    }
    let mut cross = Vec::new();
    for v in frames.values() {
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                if v[i].0 != v[j].0 {
                    cross.push(cosine_distance(v[i].1, v[j].1)?);
                }
            }
        }
    }
    missing.sort_unstable();
    if !missing.is_empty() {
        log::warn!("{} gt records have no embedding; skipped", missing.len());
    }
    Ok(CosineStats {
        same_id: Histogram::from_values(&same, 0.0, 2.0, 40),
        cross_id: Histogram::from_values(&cross, 0.0, 2.0, 40),
        missing,
    })
}
