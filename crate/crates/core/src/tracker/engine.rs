use nalgebra::DMatrix;
use rayon::prelude::*;

use super::bbox::{cosine_distance, iou, normalized, BBox, ClassId, Detection};
use super::hungarian::hungarian;
use super::kalman::{kf_init, kf_predict, kf_update, KalmanParams, KalmanState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub tau_high: f64,
    pub tau_low: f64,
    /// Minimum IoU for high-score and tentative matches.
    pub iou_gate: f64,
    /// Minimum IoU for the low-score stage.
    pub iou_gate_low: f64,
    pub max_age: u64,
    pub min_hits: u32,
    pub appearance_weight: f64,
    pub use_oru: bool,
    /// Weight of the direction-consistency cost; 0 disables it.
    pub ocm_weight: f64,
    pub embedding_momentum: f64,
    pub max_gap: u64,
    pub fps: f64,
    pub kalman: KalmanParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_high: 0.6,
            tau_low: 0.1,
            iou_gate: 0.2,
            iou_gate_low: 0.5,
            max_age: 30,
            min_hits: 3,
            appearance_weight: 0.0,
            use_oru: true,
            ocm_weight: 0.0,
            embedding_momentum: 0.9,
            max_gap: 20,
            fps: 20.0,
            kalman: KalmanParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_low && self.tau_low < self.tau_high && self.tau_high <= 1.0) {
            return Err(Error::contract(format!(
                "need 0 <= tau_low < tau_high <= 1, got {} / {}",
                self.tau_low, self.tau_high
            )));
        }
        for (name, v) in [
            ("iou_gate", self.iou_gate),
            ("iou_gate_low", self.iou_gate_low),
            ("appearance_weight", self.appearance_weight),
            ("embedding_momentum", self.embedding_momentum),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.ocm_weight >= 0.0) || !(self.fps > 0.0) {
            return Err(Error::contract("ocm_weight must be >= 0 and fps > 0"));
        }
        if self.min_hits == 0 {
            return Err(Error::contract("min_hits must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class_id: Option<ClassId>,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub age: u64,
    pub time_since_update: u64,
    /// Consecutive matched frames.
    pub hits: u32,
    pub last_observation: Detection,
    /// Filter state right after the last real observation.
    pub observed_state: KalmanState,
    pub history: Vec<(u64, BBox, f64)>,
    pub embedding: Option<Vec<f64>>,
    /// Unit direction between the last two observation centers.
    pub momentum: Option<(f64, f64)>,
    ever_active: bool,
}

impl Track {
    pub fn predicted_box(&self) -> BBox {
        self.state.bbox()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    /// High-score detections left without a track.
    pub unmatched_dets_high: Vec<usize>,
}

fn class_compatible(a: Option<ClassId>, b: Option<ClassId>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

fn unit_direction(from: &BBox, to: &BBox) -> Option<(f64, f64)> {
    let (a, b) = (from.center(), to.center());
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let n = dx.hypot(dy);
    (n > 1e-12).then(|| (dx / n, dy / n))
}

struct StageCost<'a> {
    cfg: &'a TrackerConfig,
    gate: f64,
    appearance: bool,
    ocm: bool,
}

impl StageCost<'_> {
    fn pair(&self, t: &Track, d: &Detection) -> Result<f64> {
        if !class_compatible(t.class_id, d.class_id) {
            return Ok(f64::INFINITY);
        }
        let o = iou(&t.predicted_box(), &d.bbox);
        if o < self.gate {
            return Ok(f64::INFINITY);
        }
        let mut cost = 1.0 - o;
        if self.appearance {
            if let (Some(te), Some(de)) = (&t.embedding, &d.embedding) {
                let w = self.cfg.appearance_weight;
                cost = (1.0 - w) * cost + w * cosine_distance(te, de)?;
            }
        }
        if self.ocm {
            if let (Some(m), Some(dir)) = (t.momentum, unit_direction(&t.last_observation.bbox, &d.bbox)) {
                cost += self.cfg.ocm_weight * (1.0 - (m.0 * dir.0 + m.1 * dir.1));
            }
        }
        Ok(cost)
    }

    fn matrix(&self, tracks: &[&Track], dets: &[&Detection]) -> Result<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = tracks
            .par_iter()
            .map(|t| dets.iter().map(|d| self.pair(t, d)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(tracks.len(), dets.len(), |i, j| rows[i][j]))
    }
}

fn solve(
    cost: &StageCost<'_>,
    tracks: &[Track],
    track_idx: &[usize],
    dets: &[Detection],
    det_idx: &[usize],
) -> Result<(Vec<(usize, usize)>, Vec<usize>, Vec<usize>)> {
    let tr: Vec<&Track> = track_idx.iter().map(|&i| &tracks[i]).collect();
    let dt: Vec<&Detection> = det_idx.iter().map(|&i| &dets[i]).collect();
    let m = cost.matrix(&tr, &dt)?;
    let a = hungarian(&m)?;
    let mut t_used = vec![false; track_idx.len()];
    let mut d_used = vec![false; det_idx.len()];
    let mut matches = Vec::with_capacity(a.pairs.len());
    for (i, j) in a.pairs {
        t_used[i] = true;
        d_used[j] = true;
        matches.push((track_idx[i], det_idx[j]));
    }
    let rest_t = track_idx.iter().zip(&t_used).filter(|p| !*p.1).map(|p| *p.0).collect();
    let rest_d = det_idx.iter().zip(&d_used).filter(|p| !*p.1).map(|p| *p.0).collect();
    Ok((matches, rest_t, rest_d))
}

/// Three-stage matching: confirmed (active and lost) tracks against
/// high-score detections, still-unmatched active tracks against low-score
/// detections by IoU alone, then tentative tracks against the high-score
/// leftovers. Removed tracks never match.
pub fn associate_two_stage(tracks: &[Track], dets: &[Detection], cfg: &TrackerConfig) -> Result<Association> {
    if let Some(f) = dets.first().map(|d| d.frame) {
        if dets.iter().any(|d| d.frame != f) {
            return Err(Error::contract("associate: detections span more than one frame"));
        }
    }
    let high: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= cfg.tau_high).collect();
    let low: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= cfg.tau_low && dets[i].score < cfg.tau_high)
        .collect();
    let confirmed: Vec<usize> = (0..tracks.len())
        .filter(|&i| matches!(tracks[i].status, TrackStatus::Active | TrackStatus::Lost))
        .collect();
    let tentative: Vec<usize> = (0..tracks.len())
        .filter(|&i| tracks[i].status == TrackStatus::Tentative)
        .collect();

    let stage1 = StageCost {
        cfg,
        gate: cfg.iou_gate,
        appearance: cfg.appearance_weight > 0.0,
        ocm: cfg.ocm_weight > 0.0,
    };
    let (mut matches, rest_tracks, rest_high) = solve(&stage1, tracks, &confirmed, dets, &high)?;

    let stage2 = StageCost {
        cfg,
        gate: cfg.iou_gate_low,
        appearance: false,
        ocm: false,
    };
    let (rest_active, rest_lost): (Vec<usize>, Vec<usize>) = rest_tracks
        .into_iter()
        .partition(|&i| tracks[i].status == TrackStatus::Active);
    let (m2, rest_active, _) = solve(&stage2, tracks, &rest_active, dets, &low)?;
    matches.extend(m2);

    let stage3 = StageCost {
        cfg,
        gate: cfg.iou_gate,
        appearance: false,
        ocm: false,
    };
    let (m3, rest_tentative, unmatched_dets_high) = solve(&stage3, tracks, &tentative, dets, &rest_high)?;
    matches.extend(m3);

    let mut unmatched_tracks: Vec<usize> = rest_active.into_iter().chain(rest_lost).chain(rest_tentative).collect();
    unmatched_tracks.sort_unstable();
    matches.sort_unstable();
    Ok(Association {
        matches,
        unmatched_tracks,
        unmatched_dets_high,
    })
}

/// Boxes spaced linearly in `(cx, cy, a, h)` strictly between two
/// observations `gap` frames apart.
pub fn virtual_observations(from: &BBox, to: &BBox, gap: u64) -> Vec<BBox> {
    let a = from.to_xyah();
    let b = to.to_xyah();
    (1..gap)
        .map(|k| {
            let t = k as f64 / gap as f64;
            BBox::from_xyah([0, 1, 2, 3].map(|i| a[i] + (b[i] - a[i]) * t))
        })
        .collect()
}

/// Recover a lost track: rewind to the state at its last observation, replay
/// virtual observations across the gap, then apply the real one.
pub fn oru_reupdate(track: &Track, obs: &Detection, cfg: &TrackerConfig) -> Result<Track> {
    if track.status != TrackStatus::Lost {
        return Err(Error::contract("oru_reupdate: track is not lost"));
    }
    let last = track.last_observation.frame;
    if obs.frame < last + 2 {
        return Err(Error::contract(format!(
            "oru_reupdate: gap {} below 2",
            obs.frame.saturating_sub(last)
        )));
    }
    let mut out = track.clone();
    if !cfg.use_oru {
        out.state = kf_update(&track.state, &obs.bbox, &cfg.kalman)?;
    } else {
        let mut s = track.observed_state.clone();
        for v in virtual_observations(&track.last_observation.bbox, &obs.bbox, obs.frame - last) {
            s = kf_update(&kf_predict(&s, &cfg.kalman), &v, &cfg.kalman)?;
        }
        out.state = kf_update(&kf_predict(&s, &cfg.kalman), &obs.bbox, &cfg.kalman)?;
    }
    out.status = TrackStatus::Active;
    Ok(out)
}

/// Current output of a confirmed track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub id: u64,
    pub class_id: Option<ClassId>,
    pub bbox: BBox,
    pub score: f64,
}

/// Full timeline of one confirmed track.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u64,
    pub class_id: Option<ClassId>,
    /// `(frame, box, score)`, frames strictly increasing.
    pub boxes: Vec<(u64, BBox, f64)>,
}

pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    retired: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            retired: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (non-removed) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step(&mut self, frame: u64, dets: &[Detection]) -> Result<Vec<TrackSnapshot>> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::contract(format!("frame {frame} does not follow frame {last}")));
            }
        }
        if let Some(d) = dets.iter().find(|d| d.frame != frame) {
            return Err(Error::contract(format!(
                "detection for frame {} passed to step({frame})",
                d.frame
            )));
        }
        let elapsed = self.last_frame.map_or(1, |l| frame - l);
        self.last_frame = Some(frame);
        let dets: Vec<Detection> = dets.iter().filter(|d| d.score >= self.cfg.tau_low).cloned().collect();

        for t in &mut self.tracks {
            if t.status == TrackStatus::Lost {
                t.state.mean[7] = 0.0;
            }
            for _ in 0..elapsed {
                t.state = kf_predict(&t.state, &self.cfg.kalman);
            }
            t.age += elapsed;
            t.time_since_update += elapsed;
        }

        let assoc = associate_two_stage(&self.tracks, &dets, &self.cfg)?;
        for &(ti, di) in &assoc.matches {
            let d = &dets[di];
            let t = &mut self.tracks[ti];
            let recovering = t.status == TrackStatus::Lost && d.frame >= t.last_observation.frame + 2;
            if recovering {
                *t = oru_reupdate(t, d, &self.cfg)?;
            } else {
                t.state = kf_update(&t.state, &d.bbox, &self.cfg.kalman)?;
            }
            t.momentum = unit_direction(&t.last_observation.bbox, &d.bbox).or(t.momentum);
            t.hits += 1;
            t.status = match t.status {
                TrackStatus::Tentative if t.hits < self.cfg.min_hits => TrackStatus::Tentative,
                _ => TrackStatus::Active,
            };
            t.ever_active |= t.status == TrackStatus::Active;
            t.time_since_update = 0;
            t.observed_state = t.state.clone();
            t.last_observation = d.clone();
            t.history.push((frame, t.state.bbox(), d.score));
            if let Some(e) = &d.embedding {
                let m = self.cfg.embedding_momentum;
                t.embedding = match &t.embedding {
                    Some(old) => {
                        let mixed: Vec<f64> = old.iter().zip(e).map(|(a, b)| m * a + (1.0 - m) * b).collect();
                        normalized(&mixed).or_else(|| Some(e.clone()))
                    }
                    None => Some(e.clone()),
                };
            }
        }

        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.hits = 0;
            t.status = match t.status {
                TrackStatus::Tentative => TrackStatus::Removed,
                TrackStatus::Lost if t.time_since_update > self.cfg.max_age => TrackStatus::Removed,
                TrackStatus::Active | TrackStatus::Lost => TrackStatus::Lost,
                TrackStatus::Removed => TrackStatus::Removed,
            };
        }

        for &di in &assoc.unmatched_dets_high {
            let d = &dets[di];
            let state = kf_init(&d.bbox, &self.cfg.kalman)?;
            let active = self.cfg.min_hits <= 1;
            self.tracks.push(Track {
                id: self.next_id,
                class_id: d.class_id,
                observed_state: state.clone(),
                history: vec![(frame, d.bbox, d.score)],
                state,
                status: if active { TrackStatus::Active } else { TrackStatus::Tentative },
                age: 0,
                time_since_update: 0,
                hits: 1,
                last_observation: d.clone(),
                embedding: d.embedding.clone(),
                momentum: None,
                ever_active: active,
            });
            self.next_id += 1;
        }

        let (live, gone): (Vec<Track>, Vec<Track>) =
            std::mem::take(&mut self.tracks).into_iter().partition(|t| t.status != TrackStatus::Removed);
        self.tracks = live;
        self.retired.extend(gone.into_iter().filter(|t| t.ever_active));

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active && t.time_since_update == 0)
            .map(|t| TrackSnapshot {
                id: t.id,
                class_id: t.class_id,
                bbox: t.state.bbox(),
                score: t.last_observation.score,
            })
            .collect())
    }

    /// Timelines of every track that was ever confirmed, sorted by id. The
    /// frames a track spent tentative before confirmation are included.
    pub fn finish(self) -> Vec<Tracklet> {
        let mut all: Vec<Tracklet> = self
            .retired
            .into_iter()
            .chain(self.tracks.into_iter().filter(|t| t.ever_active))
            .map(|t| Tracklet {
                id: t.id,
                class_id: t.class_id,
                boxes: t.history,
            })
            .collect();
        all.sort_by_key(|t| t.id);
        all
    }
}

/// Run a whole sequence; `frames` must be sorted by frame index.
pub fn track_sequence(frames: &[(u64, Vec<Detection>)], cfg: &TrackerConfig) -> Result<Vec<Tracklet>> {
    let mut tracker = Tracker::new(cfg.clone())?;
    for (f, dets) in frames {
        tracker.step(*f, dets)?;
    }
    Ok(tracker.finish())
}
