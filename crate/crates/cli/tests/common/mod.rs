#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use duskmot::mot_io::{format_gt, format_records, AnnotationRecord};
use duskmot::tracker::{BBox, ClassId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FRAMES: u64 = 100;
pub const OBJECTS: usize = 5;
/// Dropped frames per object: 10% of the sequence.
pub const DROPPED: u64 = 10;
pub const MAX_RUN: u64 = 5;

pub struct Scene {
    pub gt: Vec<AnnotationRecord>,
    pub det: Vec<AnnotationRecord>,
}

impl Scene {
    pub fn gt_text(&self) -> String {
        format_gt(&self.gt)
    }

    pub fn det_text(&self) -> String {
        format_records(&self.det)
    }

    pub fn write(&self, dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let gt = dir.join("gt.txt");
        let det = dir.join("det.txt");
        std::fs::write(&gt, self.gt_text()).unwrap();
        std::fs::write(&det, self.det_text()).unwrap();
        (gt, det)
    }
}

/// Dropout runs of length 1..=MAX_RUN summing to DROPPED, placed apart and
/// away from the first and last two frames.
fn dropout_frames(rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut left = DROPPED;
    while left > 0 {
        let r = rng.random_range(1..=MAX_RUN.min(left));
        runs.push(r);
        left -= r;
    }
    loop {
        let mut taken: Vec<(u64, u64)> = Vec::new();
        let ok = runs.iter().all(|&len| {
            let start = rng.random_range(3..=FRAMES - 2 - len);
            let end = start + len - 1;
            let clear = taken.iter().all(|&(s, e)| end + 1 < s || start > e + 1);
            taken.push((start, end));
            clear
        });
        if ok {
            return taken.iter().flat_map(|&(s, e)| s..=e).collect();
        }
    }
}

/// Constant-velocity objects in separate horizontal lanes.
pub fn scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = Vec::new();
    let mut det = Vec::new();
    for k in 0..OBJECTS {
        let class = ClassId::new(1 + (k % 6) as i64).ok();
        let w = rng.random_range(30.0..50.0);
        let h = rng.random_range(60.0..100.0);
        let x0 = rng.random_range(400.0..1400.0);
        let y0 = 60.0 + 200.0 * k as f64;
        let vx = rng.random_range(-3.0..3.0);
        let vy = rng.random_range(-0.3..0.3);
        let dropped = dropout_frames(&mut rng);
        for f in 1..=FRAMES {
            let t = (f - 1) as f64;
            let bbox = BBox::new(x0 + vx * t, y0 + vy * t, w, h).unwrap();
            gt.push(AnnotationRecord {
                frame: f,
                id: k as i64 + 1,
                bbox,
                conf: 1.0,
                class_id: class,
                visibility: 1.0,
            });
            let noise: f64 = rng.sample(StandardNormal);
            if !dropped.contains(&f) {
                det.push(AnnotationRecord {
                    frame: f,
                    id: -1,
                    bbox,
                    conf: (0.8 + 0.1 * noise).clamp(0.15, 0.99),
                    class_id: class,
                    visibility: 1.0,
                });
            }
        }
    }
    Scene { gt, det }
}

pub fn duskmot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duskmot"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn duskmot")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
