use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Axis-aligned box in pixels, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::contract(format!("box ({x}, {y}, {w}, {h}) is not finite")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::contract(format!("box size {w}x{h} must be positive")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// `(cx, cy, aspect = w / h, h)`.
    pub fn to_xyah(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.w / self.h, self.h]
    }

    /// Inverse of [`BBox::to_xyah`]. Degenerate sizes are clamped to a tiny
    /// positive value so predicted boxes stay valid.
    pub fn from_xyah(v: [f64; 4]) -> Self {
        let h = v[3].max(1e-6);
        let w = (v[2] * h).max(1e-6);
        Self {
            x: v[0] - w / 2.0,
            y: v[1] - h / 2.0,
            w,
            h,
        }
    }

    pub fn lerp(&self, other: &BBox, t: f64) -> BBox {
        let l = |a: f64, b: f64| a + (b - a) * t;
        BBox {
            x: l(self.x, other.x),
            y: l(self.y, other.y),
            w: l(self.w, other.w),
            h: l(self.h, other.h),
        }
    }

    pub fn scaled(&self, k: f64) -> BBox {
        BBox {
            x: self.x * k,
            y: self.y * k,
            w: self.w * k,
            h: self.h * k,
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

const UNIT_TOL: f64 = 1e-6;

pub fn check_unit(v: &[f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::contract(format!("embedding norm {n} is not 1")));
    }
    Ok(())
}

/// `1 - <u, v>` for unit vectors.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim(
            "cosine_distance",
            format!("embedding lengths {} and {}", u.len(), v.len()),
        ));
    }
    check_unit(u)?;
    check_unit(v)?;
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// Annotated object categories; numeric ids are the ones used in result files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(u8);

pub const CLASS_NAMES: [&str; 6] = ["person", "bicycle", "car", "motorcycle", "bus", "truck"];

impl ClassId {
    pub fn new(id: i64) -> Result<Self> {
        if (1..=6).contains(&id) {
            Ok(Self(id as u8))
        } else {
            Err(Error::contract(format!("class id {id} outside 1..=6")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.0 as usize - 1]
    }

    pub fn all() -> impl Iterator<Item = ClassId> {
        (1..=6).map(ClassId)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(n) = s.parse::<i64>() {
            return Self::new(n);
        }
        CLASS_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(s))
            .map(|i| Self(i as u8 + 1))
            .ok_or_else(|| Error::contract(format!("unknown class {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    /// `None` when the detector does not report a class.
    pub class_id: Option<ClassId>,
    pub bbox: BBox,
    pub score: f64,
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(frame: u64, class_id: Option<ClassId>, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::contract(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Self {
            frame,
            class_id,
            bbox,
            score,
            embedding: None,
        })
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Result<Self> {
        check_unit(&embedding)?;
        self.embedding = Some(embedding);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_fixtures() {
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(0.0, 0.0, 10.0, 10.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(20.0, 0.0, 10.0, 10.0)), 0.0);
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(10.0, 0.0, 10.0, 10.0)), 0.0);
        let v = iou(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 0.0, 10.0, 10.0));
        assert!((v - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_fixtures() {
        let s = 0.5f64.sqrt();
        assert_eq!(cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[s, s], &[-s, -s]).unwrap(), 2.0);
        assert!(cosine_distance(&[2.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn xyah_round_trip() {
        let a = b(3.0, -2.0, 8.0, 4.0);
        assert_eq!(a.to_xyah(), [7.0, 0.0, 2.0, 4.0]);
        let r = BBox::from_xyah(a.to_xyah());
        assert!((r.x - a.x).abs() < 1e-12 && (r.w - a.w).abs() < 1e-12);
    }

    #[test]
    fn class_names() {
        assert_eq!("car".parse::<ClassId>().unwrap().get(), 3);
        assert_eq!("6".parse::<ClassId>().unwrap().name(), "truck");
        assert!(ClassId::new(0).is_err());
        assert!(ClassId::new(7).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64).prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded_scale_invariant(a in arb_box(), c in arb_box(), k in 0.1..10.0f64) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou(&c, &a)).abs() < 1e-12);
            prop_assert!((v - iou(&a.scaled(k), &c.scaled(k))).abs() < 1e-9);
        }
    }
}
