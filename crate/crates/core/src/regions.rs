//! Horizontal region bands on the feature map: keypoint-delimited PAP regions
//! and PCB's evenly split stripes.
//!
//! Keypoints live in image space; bands live in feature-map rows. Start rows
//! use [`map_y_to_row`], exclusive end rows use [`map_y_to_boundary`] so that a
//! band reaching the bottom of the image ends at `H`.

use std::ops::Range;

use crate::data::{coco, Keypoint, KeypointSet, NUM_KEYPOINTS};
use crate::error::{Error, Result};

pub const NUM_PAP_REGIONS: usize = 9;

/// PAP region order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum PapRegion {
    Head = 0,
    UpperTorso,
    LowerTorso,
    UpperLeg,
    LowerLeg,
    Foot,
    UpperBody,
    LowerBody,
    FullBody,
}

impl PapRegion {
    pub const ALL: [PapRegion; NUM_PAP_REGIONS] = [
        PapRegion::Head,
        PapRegion::UpperTorso,
        PapRegion::LowerTorso,
        PapRegion::UpperLeg,
        PapRegion::LowerLeg,
        PapRegion::Foot,
        PapRegion::UpperBody,
        PapRegion::LowerBody,
        PapRegion::FullBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PapRegion::Head => "head",
            PapRegion::UpperTorso => "upper_torso",
            PapRegion::LowerTorso => "lower_torso",
            PapRegion::UpperLeg => "upper_leg",
            PapRegion::LowerLeg => "lower_leg",
            PapRegion::Foot => "foot",
            PapRegion::UpperBody => "upper_body",
            PapRegion::LowerBody => "lower_body",
            PapRegion::FullBody => "full_body",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionConfig {
    /// Minimum keypoint confidence for a keypoint to count as detected.
    pub tau: f32,
    /// Foot band extends `foot_ratio × (y_ankle − y_knee)` below the ankles.
    /// A non-finite value extends the foot band to the image bottom.
    pub foot_ratio: f32,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            foot_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionBand {
    pub part_id: usize,
    pub row_start: usize,
    pub row_end: usize,
    pub visible: bool,
}

impl RegionBand {
    pub fn invisible(part_id: usize) -> Self {
        Self {
            part_id,
            row_start: 0,
            row_end: 0,
            visible: false,
        }
    }

    pub fn rows(&self) -> Range<usize> {
        self.row_start..self.row_end
    }

    pub fn len(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn is_empty(&self) -> bool {
        self.row_end == self.row_start
    }
}

/// Maps an image y coordinate to the feature-map row containing it, in `[0, H)`.
pub fn map_y_to_row(y: f64, image_h: f64, rows: usize) -> usize {
    map_y_to_boundary(y, image_h, rows).min(rows.saturating_sub(1))
}

/// Maps an image y coordinate to a row boundary in `[0, H]`.
pub fn map_y_to_boundary(y: f64, image_h: f64, rows: usize) -> usize {
    let y = y.clamp(0.0, image_h);
    ((y / image_h * rows as f64).floor() as usize).min(rows)
}

/// Mean y of the listed keypoints whose confidence reaches `tau`.
fn anchor(points: &[Keypoint; NUM_KEYPOINTS], ids: &[usize], tau: f32) -> Option<f64> {
    let (sum, n) = ids
        .iter()
        .map(|&i| points[i])
        .filter(|p| p.conf >= tau)
        .fold((0.0f64, 0usize), |(s, n), p| (s + p.y as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

struct Mapper {
    image_h: f64,
    rows: usize,
}

impl Mapper {
    fn band(&self, part: PapRegion, span: Option<(f64, f64)>) -> RegionBand {
        let id = part as usize;
        let Some((y0, y1)) = span else {
            return RegionBand::invisible(id);
        };
        let start = map_y_to_row(y0, self.image_h, self.rows);
        let end = map_y_to_boundary(y1, self.image_h, self.rows);
        if end > start {
            RegionBand {
                part_id: id,
                row_start: start,
                row_end: end,
                visible: true,
            }
        } else {
            RegionBand::invisible(id)
        }
    }
}

/// The nine PAP bands for one image, in [`PapRegion`] order.
pub fn pap_regions(kps: &KeypointSet, rows: usize, cfg: &RegionConfig) -> Vec<RegionBand> {
    if rows < NUM_PAP_REGIONS {
        log::warn!("feature height {rows} is below {NUM_PAP_REGIONS}; PAP bands will be coarse");
    }
    let pts = kps.points();
    let image_h = kps.image_h() as f64;
    let face = coco::FACE.iter().any(|&i| pts[i].conf >= cfg.tau);
    let sho = anchor(pts, &coco::SHOULDERS, cfg.tau);
    let hip = anchor(pts, &coco::HIPS, cfg.tau);
    let knee = anchor(pts, &coco::KNEES, cfg.tau);
    let ank = anchor(pts, &coco::ANKLES, cfg.tau);
    let mid = sho.zip(hip).map(|(s, h)| (s + h) / 2.0);

    let foot_end = ank.map(|a| match knee {
        Some(k) if cfg.foot_ratio.is_finite() => {
            image_h.min(a + cfg.foot_ratio as f64 * (a - k))
        }
        _ => image_h,
    });

    let m = Mapper { image_h, rows };
    let torso = sho.zip(hip);
    vec![
        m.band(
            PapRegion::Head,
            sho.filter(|_| face).map(|s| (0.0, s)),
        ),
        m.band(PapRegion::UpperTorso, torso.and(sho.zip(mid))),
        m.band(PapRegion::LowerTorso, torso.and(mid.zip(hip))),
        m.band(PapRegion::UpperLeg, hip.zip(knee)),
        m.band(PapRegion::LowerLeg, knee.zip(ank)),
        m.band(PapRegion::Foot, ank.zip(foot_end)),
        m.band(PapRegion::UpperBody, hip.map(|h| (0.0, h))),
        m.band(PapRegion::LowerBody, hip.map(|h| (h, image_h))),
        RegionBand {
            part_id: PapRegion::FullBody as usize,
            row_start: 0,
            row_end: rows,
            visible: rows > 0,
        },
    ]
}

/// PCB stripes: stripe `p` spans `[⌊pH/P⌋, ⌊(p+1)H/P⌋)`.
pub fn pcb_stripes(parts: usize, rows: usize) -> Result<Vec<RegionBand>> {
    if parts == 0 {
        return Err(Error::InvalidArgument("stripe count must be positive".into()));
    }
    if parts > rows {
        return Err(Error::TooManyParts {
            parts,
            height: rows,
        });
    }
    Ok((0..parts)
        .map(|p| RegionBand {
            part_id: p,
            row_start: p * rows / parts,
            row_end: (p + 1) * rows / parts,
            visible: true,
        })
        .collect())
}

/// Keypoints whose PAP bands R1–R6 coincide with `pcb_stripes(6, rows)` when
/// pooled with `foot_ratio = inf`. Requires `rows >= 6`.
pub fn stripe_aligned_keypoints(rows: usize, image_w: u32, image_h: u32) -> Result<KeypointSet> {
    let b = pcb_stripes(6, rows)?;
    let bound = |k: usize| b[k].row_start as f64;
    // mid = (shoulder + hip) / 2 must land in stripe 2; pick offsets inside the
    // shoulder and hip rows that make it so.
    let slack = 2.0 * bound(2) - bound(1) - bound(3);
    let off = if slack > 0.0 { 0.75 } else { 0.25 };
    let to_y = |row: f64| (row / rows as f64 * image_h as f64) as f32;
    let x = image_w as f32 / 2.0;
    let mut pts = [Keypoint {
        x,
        y: 0.0,
        conf: 1.0,
    }; NUM_KEYPOINTS];
    for &i in &coco::FACE {
        pts[i].y = to_y(0.25);
    }
    for i in [coco::LEFT_ELBOW, coco::RIGHT_ELBOW, coco::LEFT_WRIST, coco::RIGHT_WRIST] {
        pts[i].y = to_y(bound(2) + 0.25);
    }
    for (ids, row) in [
        (coco::SHOULDERS, bound(1) + off),
        (coco::HIPS, bound(3) + off),
        (coco::KNEES, bound(4) + 0.25),
        (coco::ANKLES, bound(5) + 0.25),
    ] {
        for i in ids {
            pts[i].y = to_y(row);
        }
    }
    KeypointSet::new(&pts, image_w, image_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn skeleton(image_h: f32, ys: [(usize, f32); 5], conf: f32) -> [Keypoint; NUM_KEYPOINTS] {
        let mut pts = [Keypoint {
            x: 32.0,
            y: 0.0,
            conf,
        }; NUM_KEYPOINTS];
        let groups: [&[usize]; 5] = [
            &coco::FACE,
            &coco::SHOULDERS,
            &coco::HIPS,
            &coco::KNEES,
            &coco::ANKLES,
        ];
        for (g, (_, frac)) in groups.iter().zip(ys) {
            for &i in g.iter() {
                pts[i].y = frac * image_h;
            }
        }
        // elbows/wrists roughly at the waist
        for i in [7, 8, 9, 10] {
            pts[i].y = 0.45 * image_h;
        }
        pts
    }

    fn canonical(conf: f32) -> [Keypoint; NUM_KEYPOINTS] {
        skeleton(
            256.0,
            [(0, 0.05), (1, 0.15), (2, 0.5), (3, 0.75), (4, 0.95)],
            conf,
        )
    }

    #[test]
    fn all_zero_confidence_leaves_only_full_body() {
        let kps = KeypointSet::new(&canonical(0.0), 128, 256).unwrap();
        let bands = pap_regions(&kps, 24, &RegionConfig::default());
        assert_eq!(bands.len(), 9);
        for b in &bands[..8] {
            assert!(!b.visible);
            assert_eq!((b.row_start, b.row_end), (0, 0));
        }
        assert_eq!(bands[8].rows(), 0..24);
        assert!(bands[8].visible);
    }

    #[test]
    fn canonical_skeleton_bands() {
        let kps = KeypointSet::new(&canonical(1.0), 128, 256).unwrap();
        let bands = pap_regions(&kps, 24, &RegionConfig::default());
        // anchors in image px, then ⌊y / 256 · 24⌋
        let h = 256.0f64;
        let row = |y: f64| (y / h * 24.0).floor() as usize;
        let (sho, hip, knee, ank) = (0.15 * h, 0.5 * h, 0.75 * h, 0.95 * h);
        let mid = (sho + hip) / 2.0;
        let foot_end = (ank + 0.5 * (ank - knee)).min(h);
        let expected = [
            (0, row(sho)),
            (row(sho), row(mid)),
            (row(mid), row(hip)),
            (row(hip), row(knee)),
            (row(knee), row(ank)),
            (row(ank), row(foot_end)),
            (0, row(hip)),
            (row(hip), 24),
            (0, 24),
        ];
        assert_eq!(expected[1], (3, 7));
        for (b, (s, e)) in bands.iter().zip(expected) {
            assert!(b.visible, "{b:?}");
            assert_eq!((b.row_start, b.row_end), (s, e), "part {}", b.part_id);
        }
    }

    #[test]
    fn missing_ankles_hide_lower_leg_and_foot() {
        let mut pts = canonical(1.0);
        for i in coco::ANKLES {
            pts[i].conf = 0.0;
        }
        let kps = KeypointSet::new(&pts, 128, 256).unwrap();
        let bands = pap_regions(&kps, 24, &RegionConfig::default());
        let hidden: Vec<usize> = bands.iter().filter(|b| !b.visible).map(|b| b.part_id).collect();
        assert_eq!(
            hidden,
            vec![PapRegion::LowerLeg as usize, PapRegion::Foot as usize]
        );
    }

    #[test]
    fn one_side_occluded_uses_the_other() {
        let mut pts = canonical(1.0);
        pts[coco::LEFT_SHOULDER].conf = 0.1;
        pts[coco::LEFT_SHOULDER].y = 0.0;
        let kps = KeypointSet::new(&pts, 128, 256).unwrap();
        let bands = pap_regions(&kps, 24, &RegionConfig::default());
        assert_eq!(bands[0].rows(), 0..3);
    }

    #[test]
    fn empty_span_is_invisible() {
        // shoulders and hips in the same feature row
        let pts = skeleton(
            256.0,
            [(0, 0.0), (1, 0.51), (2, 0.52), (3, 0.75), (4, 0.95)],
            1.0,
        );
        let kps = KeypointSet::new(&pts, 128, 256).unwrap();
        let bands = pap_regions(&kps, 24, &RegionConfig::default());
        assert!(!bands[1].visible);
        assert!(!bands[2].visible);
        assert!(bands[0].visible);
    }

    #[test]
    fn stripes() {
        let s = pcb_stripes(6, 24).unwrap();
        assert!(s.iter().all(|b| b.len() == 4 && b.visible));
        assert_eq!(pcb_stripes(1, 7).unwrap()[0].rows(), 0..7);
        // ⌊20p/6⌋ = 0, 3, 6, 10, 13, 16, 20
        let counts: Vec<usize> = pcb_stripes(6, 20).unwrap().iter().map(|b| b.len()).collect();
        assert_eq!(counts, vec![3, 3, 4, 3, 3, 4]);
        assert!(matches!(
            pcb_stripes(7, 6),
            Err(Error::TooManyParts { parts: 7, height: 6 })
        ));
        assert!(pcb_stripes(0, 6).is_err());
    }

    #[test]
    fn y_to_row() {
        assert_eq!(map_y_to_row(0.0, 256.0, 24), 0);
        assert_eq!(map_y_to_row(256.0, 256.0, 24), 23);
        assert_eq!(map_y_to_row(128.0, 256.0, 24), 12);
        assert_eq!(map_y_to_row(-40.0, 256.0, 24), 0);
        assert_eq!(map_y_to_row(1e9, 256.0, 24), 23);
        assert_eq!(map_y_to_boundary(256.0, 256.0, 24), 24);
    }

    #[test]
    fn aligned_keypoints_reproduce_stripes() {
        let cfg = RegionConfig {
            tau: 0.2,
            foot_ratio: f32::INFINITY,
        };
        for rows in 6..80 {
            let kps = stripe_aligned_keypoints(rows, 64, 7 * rows as u32 + 13).unwrap();
            let bands = pap_regions(&kps, rows, &cfg);
            let stripes = pcb_stripes(6, rows).unwrap();
            assert_eq!(&bands[..6], &stripes[..], "rows = {rows}");
        }
    }

    fn ordered_skeleton() -> impl Strategy<Value = (Vec<Keypoint>, usize)> {
        (
            proptest::collection::vec(0f32..1.0, 5),
            proptest::collection::vec(0f32..=1.0, 17),
            6usize..40,
        )
            .prop_map(|(mut fr, confs, rows)| {
                fr.sort_by(f32::total_cmp);
                let groups: [&[usize]; 5] = [
                    &coco::FACE,
                    &coco::SHOULDERS,
                    &coco::HIPS,
                    &coco::KNEES,
                    &coco::ANKLES,
                ];
                let mut pts = vec![Keypoint { x: 10.0, y: 50.0, conf: 0.0 }; 17];
                for (g, f) in groups.iter().zip(&fr) {
                    for &i in g.iter() {
                        pts[i].y = f * 200.0;
                    }
                }
                for (p, c) in pts.iter_mut().zip(confs) {
                    p.conf = c;
                }
                (pts, rows)
            })
    }

    proptest! {
        #[test]
        fn local_bands_ordered_and_disjoint((pts, rows) in ordered_skeleton(), tau in 0f32..1.0) {
            let kps = KeypointSet::new(&pts, 64, 200).unwrap();
            let cfg = RegionConfig { tau, ..RegionConfig::default() };
            let bands = pap_regions(&kps, rows, &cfg);
            let vis: Vec<&RegionBand> = bands[..6].iter().filter(|b| b.visible).collect();
            for w in vis.windows(2) {
                prop_assert!(w[0].row_end <= w[1].row_start);
            }
            for b in &bands {
                prop_assert!(b.row_end <= rows);
                if b.visible { prop_assert!(!b.is_empty()); }
                else { prop_assert_eq!((b.row_start, b.row_end), (0, 0)); }
            }
            prop_assert_eq!(bands[8].rows(), 0..rows);
            // R7 covers R1..R3 and R8 covers R4..R6 whenever the hips are found
            for (coarse, fine) in [(6, 0..3), (7, 3..6)] {
                for b in &bands[fine] {
                    if b.visible && bands[coarse].visible {
                        prop_assert!(bands[coarse].row_start <= b.row_start);
                        prop_assert!(b.row_end <= bands[coarse].row_end);
                    }
                }
            }
        }

        #[test]
        fn raising_tau_never_reveals((pts, rows) in ordered_skeleton(), t1 in 0f32..1.0, t2 in 0f32..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let kps = KeypointSet::new(&pts, 64, 200).unwrap();
            let a = pap_regions(&kps, rows, &RegionConfig { tau: lo, ..RegionConfig::default() });
            let b = pap_regions(&kps, rows, &RegionConfig { tau: hi, ..RegionConfig::default() });
            // the foot band is exempt: losing the knees widens it to the image bottom
            for (x, y) in a.iter().zip(&b).filter(|(x, _)| x.part_id != PapRegion::Foot as usize) {
                prop_assert!(x.visible || !y.visible, "part {} revealed", x.part_id);
            }
        }
    }
}
