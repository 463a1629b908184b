use super::*;
use crate::tracker::kalman::{kf_init, kf_predict, kf_update};

fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x, y, w, h).unwrap()
}

fn det(frame: u64, b: BBox, score: f64) -> Detection {
    Detection::new(frame, None, b, score).unwrap()
}

/// Tracker that has seen one object moving `v` px/frame for `frames` frames.
fn warmed(cfg: TrackerConfig, frames: u64, v: f64) -> Tracker {
    let mut t = Tracker::new(cfg).unwrap();
    for f in 1..=frames {
        t.step(f, &[det(f, bx(100.0 + v * f as f64, 50.0, 20.0, 40.0), 0.9)]).unwrap();
    }
    t
}

#[test]
fn stage_one_matches_exact_prediction() {
    let t = warmed(TrackerConfig::default(), 5, 0.0);
    let tracks = t.tracks();
    let b = tracks[0].predicted_box();
    let a = associate_two_stage(tracks, &[det(6, b, 0.95)], t.config()).unwrap();
    assert_eq!(a.matches, vec![(0, 0)]);
    assert!(a.unmatched_tracks.is_empty() && a.unmatched_dets_high.is_empty());
}

#[test]
fn low_score_detection_rescues_track_in_second_stage() {
    let t = warmed(TrackerConfig::default(), 5, 0.0);
    let tracks = t.tracks();
    let p = tracks[0].predicted_box();
    // IoU 0.8 from a horizontal shift s: (w - s) / (w + s) = 0.8
    let s = p.w / 9.0;
    let low = bx(p.x + s, p.y, p.w, p.h);
    assert!((iou(&p, &low) - 0.8).abs() < 1e-9);
    let far = bx(p.x + 500.0, p.y, p.w, p.h);
    let dets = [det(6, far, 0.9), det(6, low, 0.3)];
    let a = associate_two_stage(tracks, &dets, t.config()).unwrap();
    assert_eq!(a.matches, vec![(0, 1)]);
    assert_eq!(a.unmatched_dets_high, vec![0]);
}

#[test]
fn no_detections_leaves_all_tracks_unmatched() {
    let t = warmed(TrackerConfig::default(), 5, 1.0);
    let a = associate_two_stage(t.tracks(), &[], t.config()).unwrap();
    assert!(a.matches.is_empty());
    assert_eq!(a.unmatched_tracks, vec![0]);
}

#[test]
fn class_mismatch_is_forbidden() {
    let mut t = Tracker::new(TrackerConfig::default()).unwrap();
    let car = ClassId::new(3).ok();
    let bus = ClassId::new(5).ok();
    for f in 1..=4 {
        let d = Detection::new(f, car, bx(10.0, 10.0, 20.0, 20.0), 0.9).unwrap();
        t.step(f, &[d]).unwrap();
    }
    let d = Detection::new(5, bus, t.tracks()[0].predicted_box(), 0.9).unwrap();
    let a = associate_two_stage(t.tracks(), &[d], t.config()).unwrap();
    assert!(a.matches.is_empty());
}

#[test]
fn mixed_frames_rejected() {
    let t = warmed(TrackerConfig::default(), 2, 0.0);
    let dets = [det(3, bx(0.0, 0.0, 5.0, 5.0), 0.9), det(4, bx(0.0, 0.0, 5.0, 5.0), 0.9)];
    assert!(associate_two_stage(t.tracks(), &dets, t.config()).is_err());
}

#[test]
fn appearance_term_breaks_geometric_tie() {
    let cfg = TrackerConfig {
        appearance_weight: 0.5,
        min_hits: 1,
        ..Default::default()
    };
    let mut t = Tracker::new(cfg).unwrap();
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let b = bx(10.0, 10.0, 20.0, 20.0);
    t.step(1, &[det(1, b, 0.9).with_embedding(e1.clone()).unwrap()]).unwrap();
    // two identical boxes, only the embedding differs
    let dets = [
        det(2, b, 0.9).with_embedding(e2).unwrap(),
        det(2, b, 0.9).with_embedding(e1).unwrap(),
    ];
    let a = associate_two_stage(t.tracks(), &dets, t.config()).unwrap();
    assert_eq!(a.matches, vec![(0, 1)]);
}

#[test]
fn virtual_observations_are_linear() {
    let v = virtual_observations(&bx(0.0, 0.0, 10.0, 10.0), &bx(6.0, 0.0, 10.0, 10.0), 3);
    let cx: Vec<f64> = v.iter().map(|b| b.center().0).collect();
    assert_eq!(cx.len(), 2);
    assert!((cx[0] - 7.0).abs() < 1e-12 && (cx[1] - 9.0).abs() < 1e-12);
}

#[test]
fn recovery_replays_virtual_observations() {
    let cfg = TrackerConfig::default();
    let v = 3.0;
    let mut t = warmed(cfg.clone(), 20, v);
    t.step(21, &[]).unwrap();
    assert_eq!(t.tracks()[0].status, TrackStatus::Lost);
    let lost = t.tracks()[0].clone();
    let obs = det(22, bx(100.0 + v * 22.0, 50.0, 20.0, 40.0), 0.9);
    let rec = oru_reupdate(&lost, &obs, &cfg).unwrap();
    assert_eq!(rec.status, TrackStatus::Active);
    assert!((rec.state.mean[4] - v).abs() < 0.05 * v, "vx {}", rec.state.mean[4]);

    // replay by hand from the stored state
    let k = &cfg.kalman;
    let mid = bx(100.0 + v * 21.0, 50.0, 20.0, 40.0);
    let s = kf_update(&kf_predict(&lost.observed_state, k), &mid, k).unwrap();
    let s = kf_update(&kf_predict(&s, k), &obs.bbox, k).unwrap();
    assert!((s.mean - rec.state.mean).abs().max() < 1e-9);

    // the engine takes the same path
    t.step(22, &[obs.clone()]).unwrap();
    assert!((t.tracks()[0].state.mean - rec.state.mean).abs().max() < 1e-9);

    let off = TrackerConfig {
        use_oru: false,
        ..cfg.clone()
    };
    let plain = oru_reupdate(&lost, &obs, &off).unwrap();
    assert_eq!(plain.state, kf_update(&lost.state, &obs.bbox, k).unwrap());
    assert!(oru_reupdate(&t.tracks()[0], &obs, &cfg).is_err());
}

#[test]
fn oru_rejects_short_gap() {
    let cfg = TrackerConfig::default();
    let mut t = warmed(cfg.clone(), 5, 1.0);
    t.step(6, &[]).unwrap();
    let lost = t.tracks()[0].clone();
    let obs = det(6, bx(106.0, 50.0, 20.0, 40.0), 0.9);
    assert!(oru_reupdate(&lost, &obs, &cfg).is_err());
}

#[test]
fn empty_first_frame_has_no_tracks() {
    let mut t = Tracker::new(TrackerConfig::default()).unwrap();
    assert!(t.step(1, &[]).unwrap().is_empty());
    assert!(t.tracks().is_empty());
    assert!(t.finish().is_empty());
}

#[test]
fn single_object_keeps_one_id_and_converges() {
    let mut t = Tracker::new(TrackerConfig::default()).unwrap();
    for f in 1..=10u64 {
        let truth = bx(2.0 * f as f64, 30.0, 15.0, 30.0);
        let out = t.step(f, &[det(f, truth, 0.9)]).unwrap();
        if f >= 3 {
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].id, 1);
        }
        if f >= 6 {
            assert!((out[0].bbox.x - truth.x).abs() < 1.0 && (out[0].bbox.w - truth.w).abs() < 1.0);
        }
    }
    let tl = t.finish();
    assert_eq!(tl.len(), 1);
    assert_eq!(tl[0].boxes.len(), 10);
}

#[test]
fn dropped_frames_keep_identity() {
    let mut t = Tracker::new(TrackerConfig::default()).unwrap();
    for f in 1..=10u64 {
        let dets = if f == 4 || f == 5 {
            vec![]
        } else {
            vec![det(f, bx(2.0 * f as f64, 30.0, 15.0, 30.0), 0.9)]
        };
        t.step(f, &dets).unwrap();
    }
    let tl = t.finish();
    assert_eq!(tl.len(), 1);
    let frames: Vec<u64> = tl[0].boxes.iter().map(|b| b.0).collect();
    assert_eq!(frames, vec![1, 2, 3, 6, 7, 8, 9, 10]);
    let filled = linear_interpolation(&tl, 20);
    assert_eq!(filled[0].boxes.len(), 10);
}

#[test]
fn out_of_order_frames_rejected() {
    let mut t = Tracker::new(TrackerConfig::default()).unwrap();
    t.step(5, &[]).unwrap();
    assert!(t.step(5, &[]).is_err());
    assert!(t.step(3, &[]).is_err());
    assert!(t.step(6, &[det(7, bx(0.0, 0.0, 1.0, 1.0), 0.9)]).is_err());
}

#[test]
fn lost_tracks_are_removed_after_max_age() {
    let cfg = TrackerConfig {
        max_age: 5,
        ..Default::default()
    };
    let mut t = warmed(cfg, 5, 0.0);
    for f in 6..=10 {
        t.step(f, &[]).unwrap();
        assert_eq!(t.tracks().len(), 1);
    }
    t.step(11, &[]).unwrap();
    assert!(t.tracks().is_empty());
    assert_eq!(t.finish().len(), 1);
}

#[test]
fn unconfirmed_tracks_never_surface_and_ids_are_not_reused() {
    let mut t = Tracker::new(TrackerConfig::default()).unwrap();
    // a one-frame blip, then a real object elsewhere
    t.step(1, &[det(1, bx(500.0, 500.0, 10.0, 10.0), 0.9)]).unwrap();
    for f in 2..=6 {
        t.step(f, &[det(f, bx(10.0, 10.0, 20.0, 20.0), 0.9)]).unwrap();
    }
    let tl = t.finish();
    assert_eq!(tl.len(), 1);
    assert_eq!(tl[0].id, 2);
}

#[test]
fn engine_is_deterministic() {
    let frames: Vec<(u64, Vec<Detection>)> = (1..=30u64)
        .map(|f| {
            let dets = (0..4)
                .filter(|k| (f + k) % 7 != 0)
                .map(|k| {
                    let x = 30.0 * k as f64 + 1.5 * f as f64;
                    det(f, bx(x, 20.0 * k as f64, 12.0, 24.0), 0.5 + 0.1 * k as f64)
                })
                .collect();
            (f, dets)
        })
        .collect();
    let a = track_sequence(&frames, &TrackerConfig::default()).unwrap();
    let b = track_sequence(&frames, &TrackerConfig::default()).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
}

#[test]
fn direction_cost_prefers_consistent_motion() {
    let cfg = TrackerConfig {
        ocm_weight: 1.0,
        min_hits: 1,
        ..Default::default()
    };
    let t = {
        let mut t = Tracker::new(cfg).unwrap();
        for f in 1..=3u64 {
            t.step(f, &[det(f, bx(10.0 * f as f64, 0.0, 40.0, 40.0), 0.9)]).unwrap();
        }
        t
    };
    let p = t.tracks()[0].predicted_box();
    // equal overlap ahead of and behind the prediction
    let ahead = bx(p.x + 4.0, p.y, p.w, p.h);
    let behind = bx(p.x - 4.0, p.y, p.w, p.h);
    let a = associate_two_stage(t.tracks(), &[det(4, behind, 0.9), det(4, ahead, 0.9)], t.config()).unwrap();
    assert_eq!(a.matches, vec![(0, 1)]);
}

#[test]
fn kalman_init_matches_box() {
    let s = kf_init(&bx(0.0, 0.0, 10.0, 10.0), &KalmanParams::default()).unwrap();
    assert_eq!(s.bbox(), bx(0.0, 0.0, 10.0, 10.0));
}
