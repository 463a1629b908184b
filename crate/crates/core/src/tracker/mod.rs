//! Tracking-by-detection: Kalman motion model, IoU/appearance costs, optimal
//! assignment, two-stage association, and track lifecycle.

mod bbox;
mod engine;
mod hungarian;
mod interp;
mod kalman;

pub use bbox::{check_unit, cosine_distance, iou, normalized, BBox, ClassId, Detection, CLASS_NAMES};
pub use engine::{
    associate_two_stage, oru_reupdate, track_sequence, virtual_observations, Association, Track, TrackSnapshot,
    TrackStatus, Tracker, TrackerConfig, Tracklet,
};
pub use hungarian::{hungarian, Assignment};
pub use interp::linear_interpolation;
pub use kalman::{kf_init, kf_predict, kf_update, KalmanParams, KalmanState};

#[cfg(test)]
mod tests;
