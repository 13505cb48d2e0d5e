//! Agreement between two independent annotations of the same hands.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::annotations::{HandSide, KeypointAnnotation};
use crate::keypoints::{MIDDLE_MCP, WRIST};

/// Offset tolerance as a fraction of the palm length.
pub const OFFSET_TOLERANCE: f64 = 0.25;

/// The wrist or middle-finger MCP keypoint is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PalmUndefined;

/// Pixel distance from the wrist to the middle-finger MCP keypoint.
pub fn palm_length(annotation: &KeypointAnnotation) -> Result<f64, PalmUndefined> {
    let (w, m) = (annotation.keypoints.get(WRIST), annotation.keypoints.get(MIDDLE_MCP));
    match (w, m) {
        (Some(w), Some(m)) if w.exists && m.exists => Ok((w.u - m.u).hypot(w.v - m.v)),
        _ => Err(PalmUndefined),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Agreement {
    pub agree: usize,
    pub total: usize,
}

impl Agreement {
    fn add(&mut self, ok: bool) {
        self.agree += ok as usize;
        self.total += 1;
    }

    /// `None` when nothing was compared.
    pub fn percentage(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.agree as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub pairs: usize,
    /// Keys present in only one input, or repeated within one input.
    pub unpaired_a: Vec<(String, HandSide)>,
    pub unpaired_b: Vec<(String, HandSide)>,
    /// Over all keypoint slots of paired hands.
    pub existence: Agreement,
    /// Over keypoints that exist in both annotations.
    pub occlusion: Agreement,
    /// Over keypoints visible (existing, not occluded) in both annotations.
    pub offset: Agreement,
    /// Paired hands whose palm length is undefined in both annotations;
    /// their visible keypoints are left out of `offset`.
    pub offset_skipped_hands: usize,
}

fn index(records: &[KeypointAnnotation]) -> (HashMap<(&str, HandSide), &KeypointAnnotation>, Vec<(String, HandSide)>) {
    let mut map = HashMap::new();
    let mut dup = Vec::new();
    for r in records {
        if map.insert(r.key(), r).is_some() {
            dup.push((r.image_id.clone(), r.hand_side));
        }
    }
    for r in records {
        if dup.iter().any(|(id, side)| *id == r.image_id && *side == r.hand_side) {
            map.remove(&r.key());
        }
    }
    (map, dup)
}

/// Compares records paired by `(image_id, hand_side)`.
///
/// The offset normalizer is the mean of the two palm lengths, or the one
/// that is defined, which keeps every percentage symmetric in `a` and `b`.
pub fn consistency_check(a: &[KeypointAnnotation], b: &[KeypointAnnotation]) -> ConsistencyReport {
    let (ma, mut unpaired_a) = index(a);
    let (mb, mut unpaired_b) = index(b);
    let mut report = ConsistencyReport::default();
    let mut keys: Vec<_> = ma.keys().copied().collect();
    keys.sort();
    for key in keys {
        let ra = ma[&key];
        let Some(rb) = mb.get(&key) else {
            unpaired_a.push((key.0.to_string(), key.1));
            continue;
        };
        report.pairs += 1;
        let palm = match (palm_length(ra), palm_length(rb)) {
            (Ok(x), Ok(y)) => Some(0.5 * (x + y)),
            (Ok(x), Err(_)) | (Err(_), Ok(x)) => Some(x),
            _ => None,
        };
        if palm.is_none() {
            report.offset_skipped_hands += 1;
        }
        for (ka, kb) in ra.keypoints.iter().zip(&rb.keypoints) {
            report.existence.add(ka.exists == kb.exists);
            if !(ka.exists && kb.exists) {
                continue;
            }
            report.occlusion.add(ka.occluded == kb.occluded);
            if ka.occluded || kb.occluded {
                continue;
            }
            if let Some(palm) = palm {
                let d = (ka.u - kb.u).hypot(ka.v - kb.v);
                report.offset.add(d <= OFFSET_TOLERANCE * palm);
            }
        }
    }
    let mut only_b: Vec<_> = mb
        .keys()
        .filter(|k| !ma.contains_key(*k))
        .map(|k| (k.0.to_string(), k.1))
        .collect();
    only_b.sort();
    unpaired_b.extend(only_b);
    unpaired_a.sort();
    unpaired_b.sort();
    report.unpaired_a = unpaired_a;
    report.unpaired_b = unpaired_b;
    report
}
