use super::engine::Tracklet;

/// Fill per-track gaps of `2..=max_gap` frames with boxes (and scores)
/// linear in the frame index. Longer gaps are left alone.
pub fn linear_interpolation(tracklets: &[Tracklet], max_gap: u64) -> Vec<Tracklet> {
    tracklets
        .iter()
        .map(|t| {
            let mut boxes = Vec::with_capacity(t.boxes.len());
            for pair in t.boxes.windows(2) {
                let (f1, b1, s1) = pair[0];
                let (f2, b2, s2) = pair[1];
                boxes.push(pair[0]);
                let gap = f2 - f1;
                if gap > 1 && gap <= max_gap {
                    for f in f1 + 1..f2 {
                        let w = (f - f1) as f64 / gap as f64;
                        boxes.push((f, b1.lerp(&b2, w), s1 + (s2 - s1) * w));
                    }
                }
            }
            boxes.extend(t.boxes.last().copied());
            Tracklet {
                id: t.id,
                class_id: t.class_id,
                boxes,
            }
        })
        .collect()
}
