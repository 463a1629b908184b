//! HOTA family, CLEAR MOT, and identity metrics, with per-class counts that
//! can be re-aggregated by class average or by pooled detections.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mot_io::AnnotationRecord;
use crate::tracker::{hungarian, iou, BBox, ClassId};

pub const N_ALPHAS: usize = 19;

/// `0.05, 0.10, ..., 0.95`.
pub fn alphas() -> [f64; N_ALPHAS] {
    std::array::from_fn(|k| (k + 1) as f64 / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    ClassAvg,
    #[default]
    DetAvg,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_avg" => Ok(Self::ClassAvg),
            "det_avg" => Ok(Self::DetAvg),
            _ => Err(Error::contract(format!("unknown aggregation {s:?} (class_avg or det_avg)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    pub aggregation: Aggregation,
    /// Overlap threshold for CLEAR and identity matching.
    pub iou_threshold: f64,
    /// Ground-truth records below this visibility are dropped.
    pub min_visibility: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::DetAvg,
            iou_threshold: 0.5,
            min_visibility: 0.0,
        }
    }
}

/// Maximum-cardinality, then maximum summed IoU, matching among pairs with
/// IoU at least `alpha`. Returns `(gt index, pred index, iou)`.
pub fn match_frame(gts: &[BBox], preds: &[BBox], alpha: f64) -> Result<Vec<(usize, usize, f64)>> {
    if gts.is_empty() || preds.is_empty() {
        return Ok(Vec::new());
    }
    let sim = DMatrix::from_fn(gts.len(), preds.len(), |i, j| iou(&gts[i], &preds[j]));
    let cost = sim.map(|s| if s >= alpha { -s } else { f64::INFINITY });
    Ok(hungarian(&cost)?
        .pairs
        .into_iter()
        .map(|(i, j)| (i, j, sim[(i, j)]))
        .collect())
}

/// One frame of a single-class sequence with ids remapped to `0..n`.
#[derive(Debug, Clone, Default)]
struct Frame {
    gt_ids: Vec<usize>,
    gt_boxes: Vec<BBox>,
    pred_ids: Vec<usize>,
    pred_boxes: Vec<BBox>,
}

#[derive(Debug, Clone, Default)]
struct Sequence {
    frames: Vec<Frame>,
    n_gt_ids: usize,
    n_pred_ids: usize,
}

impl Sequence {
    fn build(gt: &[&AnnotationRecord], pred: &[&AnnotationRecord]) -> Result<Self> {
        let mut frames: BTreeMap<u64, Frame> = BTreeMap::new();
        let mut gt_map = HashMap::new();
        let mut pred_map = HashMap::new();
        let mut seen = BTreeSet::new();
        for r in gt {
            if !seen.insert((r.frame, r.id)) {
                return Err(Error::contract(format!("gt has duplicate (frame {}, id {})", r.frame, r.id)));
            }
            let n = gt_map.len();
            let id = *gt_map.entry(r.id).or_insert(n);
            let f = frames.entry(r.frame).or_default();
            f.gt_ids.push(id);
            f.gt_boxes.push(r.bbox);
        }
        seen.clear();
        for r in pred {
            if !seen.insert((r.frame, r.id)) {
                return Err(Error::contract(format!("prediction has duplicate (frame {}, id {})", r.frame, r.id)));
            }
            let n = pred_map.len();
            let id = *pred_map.entry(r.id).or_insert(n);
            let f = frames.entry(r.frame).or_default();
            f.pred_ids.push(id);
            f.pred_boxes.push(r.bbox);
        }
        Ok(Self {
            frames: frames.into_values().collect(),
            n_gt_ids: gt_map.len(),
            n_pred_ids: pred_map.len(),
        })
    }

    fn gt_dets(&self) -> usize {
        self.frames.iter().map(|f| f.gt_ids.len()).sum()
    }

    fn pred_dets(&self) -> usize {
        self.frames.iter().map(|f| f.pred_ids.len()).sum()
    }
}

/// Raw HOTA counts at one α.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlphaCounts {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    /// Sum over true positives of their pair's association score.
    pub ass_sum: f64,
    /// Sum of IoU over true positives.
    pub loc_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClearCounts {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub idsw: u64,
    pub gt_dets: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

/// Everything needed to recompute scores, for one class or a pool of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Counts {
    pub gt_dets: u64,
    pub pred_dets: u64,
    pub hota: [AlphaCounts; N_ALPHAS],
    pub clear: ClearCounts,
    pub id: IdCounts,
}

impl Default for Counts {
    fn default() -> Self {
        Self {
            gt_dets: 0,
            pred_dets: 0,
            hota: [AlphaCounts::default(); N_ALPHAS],
            clear: ClearCounts::default(),
            id: IdCounts::default(),
        }
    }
}

impl Counts {
    fn pool<'a>(items: impl IntoIterator<Item = &'a Counts>) -> Counts {
        let mut out = Counts::default();
        for c in items {
            out.gt_dets += c.gt_dets;
            out.pred_dets += c.pred_dets;
            for (o, a) in out.hota.iter_mut().zip(&c.hota) {
                o.tp += a.tp;
                o.fn_ += a.fn_;
                o.fp += a.fp;
                o.ass_sum += a.ass_sum;
                o.loc_sum += a.loc_sum;
            }
            out.clear.tp += c.clear.tp;
            out.clear.fn_ += c.clear.fn_;
            out.clear.fp += c.clear.fp;
            out.clear.idsw += c.clear.idsw;
            out.clear.gt_dets += c.clear.gt_dets;
            out.id.idtp += c.id.idtp;
            out.id.idfp += c.id.idfp;
            out.id.idfn += c.id.idfn;
        }
        out
    }
}

fn hota_counts(seq: &Sequence) -> Result<[AlphaCounts; N_ALPHAS]> {
    let mut gt_count = vec![0u64; seq.n_gt_ids];
    let mut pred_count = vec![0u64; seq.n_pred_ids];
    for f in &seq.frames {
        for &g in &f.gt_ids {
            gt_count[g] += 1;
        }
        for &p in &f.pred_ids {
            pred_count[p] += 1;
        }
    }
    let per_alpha: Vec<AlphaCounts> = alphas()
        .par_iter()
        .map(|&alpha| -> Result<AlphaCounts> {
            let mut c = AlphaCounts::default();
            let mut pair_matches: HashMap<(usize, usize), u64> = HashMap::new();
            let mut tps = Vec::new();
            for f in &seq.frames {
                let m = match_frame(&f.gt_boxes, &f.pred_boxes, alpha)?;
                c.tp += m.len() as u64;
                c.fn_ += (f.gt_ids.len() - m.len()) as u64;
                c.fp += (f.pred_ids.len() - m.len()) as u64;
                for (i, j, s) in m {
                    let key = (f.gt_ids[i], f.pred_ids[j]);
                    *pair_matches.entry(key).or_default() += 1;
                    tps.push((key, s));
                }
            }
            for (key, s) in tps {
                let m = pair_matches[&key] as f64;
                let denom = gt_count[key.0] as f64 + pred_count[key.1] as f64 - m;
                c.ass_sum += m / denom;
                c.loc_sum += s;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    Ok(per_alpha.try_into().expect("19 alphas"))
}

fn clear_counts(seq: &Sequence, thr: f64) -> Result<ClearCounts> {
    let mut c = ClearCounts::default();
    let mut prev_step: HashMap<usize, usize> = HashMap::new();
    let mut prev_ever: HashMap<usize, usize> = HashMap::new();
    for f in &seq.frames {
        c.gt_dets += f.gt_ids.len() as u64;
        let mut current = HashMap::new();
        if !f.gt_ids.is_empty() && !f.pred_ids.is_empty() {
            let cost = DMatrix::from_fn(f.gt_ids.len(), f.pred_ids.len(), |i, j| {
                let s = iou(&f.gt_boxes[i], &f.pred_boxes[j]);
                if s < thr {
                    return f64::INFINITY;
                }
                let sticky = prev_step.get(&f.gt_ids[i]) == Some(&f.pred_ids[j]);
                -(s + if sticky { 1000.0 } else { 0.0 })
            });
            for (i, j) in hungarian(&cost)?.pairs {
                let (g, p) = (f.gt_ids[i], f.pred_ids[j]);
                if prev_ever.get(&g).is_some_and(|&q| q != p) {
                    c.idsw += 1;
                }
                prev_ever.insert(g, p);
                current.insert(g, p);
            }
        }
        let tp = current.len() as u64;
        c.tp += tp;
        c.fn_ += f.gt_ids.len() as u64 - tp;
        c.fp += f.pred_ids.len() as u64 - tp;
        prev_step = current;
    }
    Ok(c)
}

fn id_counts(seq: &Sequence, thr: f64) -> Result<IdCounts> {
    let mut overlap = DMatrix::<f64>::zeros(seq.n_gt_ids, seq.n_pred_ids);
    for f in &seq.frames {
        for (i, &g) in f.gt_ids.iter().enumerate() {
            for (j, &p) in f.pred_ids.iter().enumerate() {
                if iou(&f.gt_boxes[i], &f.pred_boxes[j]) >= thr {
                    overlap[(g, p)] += 1.0;
                }
            }
        }
    }
    let cost = overlap.map(|m| -m);
    let idtp = -hungarian(&cost)?.cost;
    let idtp = idtp.round() as u64;
    Ok(IdCounts {
        idtp,
        idfp: seq.pred_dets() as u64 - idtp,
        idfn: seq.gt_dets() as u64 - idtp,
    })
}

fn sequence_counts(gt: &[&AnnotationRecord], pred: &[&AnnotationRecord], thr: f64) -> Result<Counts> {
    let seq = Sequence::build(gt, pred)?;
    Ok(Counts {
        gt_dets: seq.gt_dets() as u64,
        pred_dets: seq.pred_dets() as u64,
        hota: hota_counts(&seq)?,
        clear: clear_counts(&seq, thr)?,
        id: id_counts(&seq, thr)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub deta_alpha: [f64; N_ALPHAS],
    pub assa_alpha: [f64; N_ALPHAS],
    pub hota_alpha: [f64; N_ALPHAS],
    pub loca_alpha: [f64; N_ALPHAS],
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub loca: f64,
    /// NaN when there is no ground truth.
    pub mota: f64,
    pub idf1: f64,
    pub idsw: u64,
    pub fp: u64,
    pub fn_: u64,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl Scores {
    /// Scores from raw counts. Both sides empty counts as perfect.
    pub fn from_counts(c: &Counts) -> Self {
        let empty = c.gt_dets == 0 && c.pred_dets == 0;
        let mut deta_alpha = [0.0; N_ALPHAS];
        let mut assa_alpha = [0.0; N_ALPHAS];
        let mut hota_alpha = [0.0; N_ALPHAS];
        let mut loca_alpha = [0.0; N_ALPHAS];
        for (k, a) in c.hota.iter().enumerate() {
            if empty {
                deta_alpha[k] = 1.0;
                assa_alpha[k] = 1.0;
                loca_alpha[k] = 1.0;
            } else {
                let tp = a.tp as f64;
                deta_alpha[k] = ratio(tp, tp + a.fn_ as f64 + a.fp as f64);
                assa_alpha[k] = ratio(a.ass_sum, tp);
                loca_alpha[k] = ratio(a.loc_sum, tp);
            }
            hota_alpha[k] = (deta_alpha[k] * assa_alpha[k]).sqrt();
        }
        let cl = &c.clear;
        let mota = if cl.gt_dets == 0 {
            f64::NAN
        } else {
            1.0 - (cl.fn_ + cl.fp + cl.idsw) as f64 / cl.gt_dets as f64
        };
        let id = &c.id;
        let idf1 = if empty {
            1.0
        } else {
            let t = 2.0 * id.idtp as f64;
            ratio(t, t + id.idfp as f64 + id.idfn as f64)
        };
        Self {
            deta_alpha,
            assa_alpha,
            hota_alpha,
            loca_alpha,
            hota: mean(&hota_alpha),
            deta: mean(&deta_alpha),
            assa: mean(&assa_alpha),
            loca: mean(&loca_alpha),
            mota,
            idf1,
            idsw: cl.idsw,
            fp: cl.fp,
            fn_: cl.fn_,
            idtp: id.idtp,
            idfp: id.idfp,
            idfn: id.idfn,
        }
    }

    fn average(items: &[Scores]) -> Self {
        let avg_arr = |f: fn(&Scores) -> &[f64; N_ALPHAS]| -> [f64; N_ALPHAS] {
            std::array::from_fn(|k| mean(&items.iter().map(|s| f(s)[k]).collect::<Vec<_>>()))
        };
        let avg = |f: fn(&Scores) -> f64| mean(&items.iter().map(f).collect::<Vec<_>>());
        let sum = |f: fn(&Scores) -> u64| items.iter().map(f).sum::<u64>();
        Self {
            deta_alpha: avg_arr(|s| &s.deta_alpha),
            assa_alpha: avg_arr(|s| &s.assa_alpha),
            hota_alpha: avg_arr(|s| &s.hota_alpha),
            loca_alpha: avg_arr(|s| &s.loca_alpha),
            hota: avg(|s| s.hota),
            deta: avg(|s| s.deta),
            assa: avg(|s| s.assa),
            loca: avg(|s| s.loca),
            mota: avg(|s| s.mota),
            idf1: avg(|s| s.idf1),
            idsw: sum(|s| s.idsw),
            fp: sum(|s| s.fp),
            fn_: sum(|s| s.fn_),
            idtp: sum(|s| s.idtp),
            idfp: sum(|s| s.idfp),
            idfn: sum(|s| s.idfn),
        }
    }
}

/// HOTA family for one class: records are used as given, classes ignored.
pub fn hota(gt: &[AnnotationRecord], pred: &[AnnotationRecord]) -> Result<Scores> {
    single(gt, pred, 0.5)
}

/// CLEAR metrics for one class; the returned `Scores` carries MOTA, FP, FN
/// and IDSW along with everything else.
pub fn mota(gt: &[AnnotationRecord], pred: &[AnnotationRecord], iou_threshold: f64) -> Result<Scores> {
    single(gt, pred, iou_threshold)
}

pub fn idf1(gt: &[AnnotationRecord], pred: &[AnnotationRecord], iou_threshold: f64) -> Result<Scores> {
    single(gt, pred, iou_threshold)
}

fn single(gt: &[AnnotationRecord], pred: &[AnnotationRecord], thr: f64) -> Result<Scores> {
    let g: Vec<&AnnotationRecord> = gt.iter().collect();
    let p: Vec<&AnnotationRecord> = pred.iter().collect();
    Ok(Scores::from_counts(&sequence_counts(&g, &p, thr)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    /// `None` for a class-agnostic evaluation.
    pub class_id: Option<ClassId>,
    pub counts: Counts,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub aggregation: Aggregation,
    pub scores: Scores,
    pub per_class: Vec<ClassResult>,
    /// Notes about undefined or degenerate quantities and excluded classes.
    pub flags: Vec<String>,
}

/// Aggregate per-class results. Classes without ground truth are excluded.
pub fn combine_classes(per_class: &[ClassResult], mode: Aggregation) -> Result<(Scores, Vec<String>)> {
    let mut flags = Vec::new();
    let kept: Vec<&ClassResult> = per_class
        .iter()
        .filter(|c| {
            let keep = c.counts.gt_dets > 0;
            if !keep {
                let name = c.class_id.map_or("all".to_string(), |k| k.name().to_string());
                flags.push(format!("class {name} has no ground truth; excluded"));
            }
            keep
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::contract("combine_classes: no class has ground truth"));
    }
    let scores = match mode {
        Aggregation::DetAvg => Scores::from_counts(&Counts::pool(kept.iter().map(|c| &c.counts))),
        Aggregation::ClassAvg => Scores::average(&kept.iter().map(|c| c.scores.clone()).collect::<Vec<_>>()),
    };
    Ok((scores, flags))
}

/// Full evaluation. Classes are taken from the ground truth; if either side
/// carries no class labels at all the evaluation is class-agnostic.
pub fn evaluate(gt: &[AnnotationRecord], pred: &[AnnotationRecord], cfg: &MetricsConfig) -> Result<EvalResult> {
    let gt: Vec<&AnnotationRecord> = gt
        .iter()
        .filter(|r| r.conf > 0.0 && r.visibility >= cfg.min_visibility)
        .collect();
    let mut flags = Vec::new();
    let agnostic = gt.iter().all(|r| r.class_id.is_none()) || pred.iter().all(|r| r.class_id.is_none());
    let groups: Vec<Option<ClassId>> = if agnostic {
        vec![None]
    } else {
        let present: BTreeSet<ClassId> = gt.iter().filter_map(|r| r.class_id).collect();
        for c in pred.iter().filter_map(|r| r.class_id).collect::<BTreeSet<_>>() {
            if !present.contains(&c) {
                flags.push(format!("class {} has predictions but no ground truth; excluded", c.name()));
            }
        }
        present.into_iter().map(Some).collect()
    };
    if agnostic {
        flags.push("class-agnostic evaluation".into());
    }

    let per_class: Vec<ClassResult> = groups
        .par_iter()
        .map(|&class| {
            let g: Vec<&AnnotationRecord> = gt.iter().copied().filter(|r| class.is_none() || r.class_id == class).collect();
            let p: Vec<&AnnotationRecord> = pred.iter().filter(|r| class.is_none() || r.class_id == class).collect();
            let counts = sequence_counts(&g, &p, cfg.iou_threshold)?;
            Ok(ClassResult {
                class_id: class,
                scores: Scores::from_counts(&counts),
                counts,
            })
        })
        .collect::<Result<_>>()?;

    let scores = if per_class.iter().all(|c| c.counts.gt_dets == 0) {
        let pooled = Counts::pool(per_class.iter().map(|c| &c.counts));
        if pooled.pred_dets == 0 {
            flags.push("empty ground truth and predictions; scored as perfect".into());
        } else {
            flags.push("empty ground truth".into());
        }
        Scores::from_counts(&pooled)
    } else {
        let (s, f) = combine_classes(&per_class, cfg.aggregation)?;
        flags.extend(f);
        s
    };
    if scores.mota.is_nan() {
        flags.push("MOTA undefined without ground truth".into());
    }
    for f in &flags {
        log::warn!("{f}");
    }
    Ok(EvalResult {
        aggregation: cfg.aggregation,
        scores,
        per_class,
        flags,
    })
}

impl EvalResult {
    /// Undefined metrics make a run unusable for comparison.
    pub fn has_undefined(&self) -> bool {
        self.scores.mota.is_nan()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.aggregation {
            Aggregation::DetAvg => "det_avg",
            Aggregation::ClassAvg => "class_avg",
        };
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}",
            "class", "HOTA", "DetA", "AssA", "LocA", "MOTA", "IDF1", "IDSW", "FP", "FN"
        );
        let mut row = |name: &str, sc: &Scores| {
            let _ = writeln!(
                s,
                "{:<12} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>6} {:>6} {:>6}",
                name,
                100.0 * sc.hota,
                100.0 * sc.deta,
                100.0 * sc.assa,
                100.0 * sc.loca,
                100.0 * sc.mota,
                100.0 * sc.idf1,
                sc.idsw,
                sc.fp,
                sc.fn_
            );
        };
        for c in &self.per_class {
            row(c.class_id.map_or("all", |k| k.name()), &c.scores);
        }
        row(&format!("[{mode}]"), &self.scores);
        for f in &self.flags {
            let _ = writeln!(s, "note: {f}");
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let sc = &self.scores;
        let mode = match self.aggregation {
            Aggregation::DetAvg => "det_avg",
            Aggregation::ClassAvg => "class_avg",
        };
        let _ = writeln!(s, "aggregation={mode}");
        for (k, v) in [
            ("hota", sc.hota),
            ("deta", sc.deta),
            ("assa", sc.assa),
            ("loca", sc.loca),
            ("mota", sc.mota),
            ("idf1", sc.idf1),
        ] {
            let _ = writeln!(s, "{k}={v:.9}");
        }
        for (k, v) in [
            ("idsw", sc.idsw),
            ("fp", sc.fp),
            ("fn", sc.fn_),
            ("idtp", sc.idtp),
            ("idfp", sc.idfp),
            ("idfn", sc.idfn),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        let join = |a: &[f64; N_ALPHAS]| a.iter().map(|v| format!("{v:.9}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "hota_alpha={}", join(&sc.hota_alpha));
        let _ = writeln!(s, "deta_alpha={}", join(&sc.deta_alpha));
        let _ = writeln!(s, "assa_alpha={}", join(&sc.assa_alpha));
        for c in &self.per_class {
            let name = c.class_id.map_or("all", |k| k.name());
            let _ = writeln!(s, "class.{name}.hota={:.9}", c.scores.hota);
            let _ = writeln!(s, "class.{name}.mota={:.9}", c.scores.mota);
            let _ = writeln!(s, "class.{name}.idf1={:.9}", c.scores.idf1);
            let _ = writeln!(s, "class.{name}.gt_dets={}", c.counts.gt_dets);
            let _ = writeln!(s, "class.{name}.pred_dets={}", c.counts.pred_dets);
        }
        for (i, f) in self.flags.iter().enumerate() {
            let _ = writeln!(s, "flag.{i}={f}");
        }
        s
    }
}
