use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 17;

/// COCO keypoint order.
pub mod coco {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;

    pub const FACE: [usize; 5] = [NOSE, LEFT_EYE, RIGHT_EYE, LEFT_EAR, RIGHT_EAR];
    pub const SHOULDERS: [usize; 2] = [LEFT_SHOULDER, RIGHT_SHOULDER];
    pub const HIPS: [usize; 2] = [LEFT_HIP, RIGHT_HIP];
    pub const KNEES: [usize; 2] = [LEFT_KNEE, RIGHT_KNEE];
    pub const ANKLES: [usize; 2] = [LEFT_ANKLE, RIGHT_ANKLE];
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub conf: f32,
}

/// 17 image-space keypoints for one person crop.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: [Keypoint; NUM_KEYPOINTS],
    image_w: u32,
    image_h: u32,
}

impl KeypointSet {
    pub fn new(points: &[Keypoint], image_w: u32, image_h: u32) -> Result<Self> {
        if points.len() != NUM_KEYPOINTS {
            return Err(Error::KeypointCount(points.len()));
        }
        if image_w == 0 || image_h == 0 {
            return Err(Error::InvalidShape(format!(
                "image size {image_w}x{image_h}"
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            if !(0.0..=1.0).contains(&p.conf) {
                return Err(Error::KeypointConfidence(p.conf));
            }
        }
        let mut arr = [Keypoint::default(); NUM_KEYPOINTS];
        arr.copy_from_slice(points);
        Ok(Self {
            points: arr,
            image_w,
            image_h,
        })
    }

    pub fn points(&self) -> &[Keypoint; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn image_w(&self) -> u32 {
        self.image_w
    }

    pub fn image_h(&self) -> u32 {
        self.image_h
    }
}

#[derive(Serialize, Deserialize)]
struct KeypointLine {
    image_id: String,
    w: u32,
    h: u32,
    kp: Vec<[f32; 3]>,
}

/// Parses a JSON-lines keypoint file. Blank lines are skipped.
pub fn load_keypoints(text: &str) -> Result<BTreeMap<String, KeypointSet>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: KeypointLine = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("keypoints line {}: {e}", lineno + 1)))?;
        let points: Vec<Keypoint> = rec
            .kp
            .iter()
            .map(|&[x, y, conf]| Keypoint { x, y, conf })
            .collect();
        let set = KeypointSet::new(&points, rec.w, rec.h)?;
        if out.contains_key(&rec.image_id) {
            return Err(Error::DuplicateImageId(rec.image_id));
        }
        out.insert(rec.image_id, set);
    }
    Ok(out)
}

/// Serializes one keypoint record as a single JSON line (no trailing newline).
pub fn keypoint_line(image_id: &str, set: &KeypointSet) -> String {
    let rec = KeypointLine {
        image_id: image_id.to_string(),
        w: set.image_w,
        h: set.image_h,
        kp: set.points.iter().map(|p| [p.x, p.y, p.conf]).collect(),
    };
    serde_json::to_string(&rec).expect("keypoint record serializes")
}
