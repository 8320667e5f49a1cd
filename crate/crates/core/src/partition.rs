//! Adaptive frame partitioning.
//!
//! A frame is divided into an X×Y grid of zones. Each RoI joins the zone it
//! overlaps most; every non-empty zone is then shrunk to the minimum
//! rectangle enclosing its RoIs, and that rectangle is cut out as a patch.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{enclosing_rect, Rect};
use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchId(pub u64);

impl fmt::Display for PatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Hands out consecutive patch ids.
#[derive(Debug, Default, Clone)]
pub struct PatchIdSource {
    next: u64,
}

impl PatchIdSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(next: u64) -> Self {
        PatchIdSource { next }
    }

    pub fn next_id(&mut self) -> PatchId {
        let id = PatchId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub generation_time: Micros,
    pub slo: Micros,
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "frame {} has zero dimension {}x{}",
                self.frame_id, self.width, self.height
            )));
        }
        if self.slo <= Micros::ZERO {
            return Err(Error::InvalidConfig(format!("frame {} has non-positive slo", self.frame_id)));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub zones_x: u32,
    pub zones_y: u32,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { zones_x: 4, zones_y: 4 }
    }
}

/// A patch cut from a frame, with the metadata the scheduler needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub patch_id: PatchId,
    pub source_frame_id: u64,
    pub rect: Rect,
    pub generation_time: Micros,
    pub slo: Micros,
    pub deadline: Micros,
    pub size_bytes: u64,
}

impl PatchMeta {
    pub fn new(
        patch_id: PatchId,
        source_frame_id: u64,
        rect: Rect,
        generation_time: Micros,
        slo: Micros,
        bytes_per_pixel: f64,
    ) -> Self {
        PatchMeta {
            patch_id,
            source_frame_id,
            rect,
            generation_time,
            slo,
            deadline: generation_time + slo,
            size_bytes: patch_bytes(&rect, bytes_per_pixel),
        }
    }

    pub fn width(&self) -> u32 {
        self.rect.w
    }

    pub fn height(&self) -> u32 {
        self.rect.h
    }
}

/// Encoded size of a pixel region.
pub fn patch_bytes(rect: &Rect, bytes_per_pixel: f64) -> u64 {
    (rect.area() as f64 * bytes_per_pixel).ceil() as u64
}

/// Splits the frame into `zones_x`×`zones_y` zones in row-major order
/// (bottom row first). The last column and row absorb any remainder.
pub fn make_zones(frame: &FrameSpec, cfg: &PartitionConfig) -> Result<Vec<Rect>> {
    let (zx, zy) = (cfg.zones_x, cfg.zones_y);
    if zx == 0 || zy == 0 || zx > frame.width || zy > frame.height {
        return Err(Error::ZoneGridTooFine { zones_x: zx, zones_y: zy, width: frame.width, height: frame.height });
    }
    let zw = frame.width / zx;
    let zh = frame.height / zy;
    let mut zones = Vec::with_capacity((zx * zy) as usize);
    for row in 0..zy {
        let y = row * zh;
        let h = if row + 1 == zy { frame.height - y } else { zh };
        for col in 0..zx {
            let x = col * zw;
            let w = if col + 1 == zx { frame.width - x } else { zw };
            zones.push(Rect::new(x, y, w, h));
        }
    }
    Ok(zones)
}

/// Assigns each RoI to the zone with the largest overlap. Ties go to the
/// lowest zone index.
pub fn assign_rois(rois: &[Rect], zones: &[Rect]) -> Result<Vec<Vec<Rect>>> {
    let mut lists = vec![Vec::new(); zones.len()];
    for (index, roi) in rois.iter().enumerate() {
        let mut best: Option<(usize, u64)> = None;
        for (z, zone) in zones.iter().enumerate() {
            let ov = roi.overlap_area(zone);
            if ov > 0 && best.is_none_or(|(_, b)| ov > b) {
                best = Some((z, ov));
            }
        }
        let (z, _) = best.ok_or(Error::RoiOutsideFrame { index, rect: *roi })?;
        lists[z].push(*roi);
    }
    Ok(lists)
}

/// Cuts one patch per non-empty zone. Patch rects may extend past their zone
/// and may overlap patches of neighbouring zones.
pub fn partition(
    frame: &FrameSpec,
    cfg: &PartitionConfig,
    rois: &[Rect],
    bytes_per_pixel: f64,
    ids: &mut PatchIdSource,
) -> Result<Vec<PatchMeta>> {
    if let Some((index, rect)) = rois.iter().enumerate().find(|(_, r)| r.is_degenerate()) {
        return Err(Error::InvalidConfig(format!("roi #{index} {rect:?} has zero area")));
    }
    let zones = make_zones(frame, cfg)?;
    let lists = assign_rois(rois, &zones)?;
    let mut patches = Vec::new();
    for list in lists.iter().filter(|l| !l.is_empty()) {
        let rect = enclosing_rect(list)?;
        patches.push(PatchMeta::new(
            ids.next_id(),
            frame.frame_id,
            rect,
            frame.generation_time,
            frame.slo,
            bytes_per_pixel,
        ));
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(w: u32, h: u32) -> FrameSpec {
        FrameSpec {
            frame_id: 7,
            width: w,
            height: h,
            generation_time: Micros::from_millis(40),
            slo: Micros::from_millis(500),
        }
    }

    fn grid(x: u32, y: u32) -> PartitionConfig {
        PartitionConfig { zones_x: x, zones_y: y }
    }

    #[test]
    fn zones_even_split() {
        let z = make_zones(&frame(100, 100), &grid(2, 2)).unwrap();
        assert_eq!(
            z,
            vec![
                Rect::new(0, 0, 50, 50),
                Rect::new(50, 0, 50, 50),
                Rect::new(0, 50, 50, 50),
                Rect::new(50, 50, 50, 50)
            ]
        );
        assert_eq!(make_zones(&frame(100, 100), &grid(1, 1)).unwrap(), vec![Rect::new(0, 0, 100, 100)]);
    }

    #[test]
    fn zones_last_column_absorbs_remainder() {
        let z = make_zones(&frame(101, 100), &grid(2, 2)).unwrap();
        assert_eq!(z[0].w, 50);
        assert_eq!(z[1], Rect::new(50, 0, 51, 50));
        assert_eq!(z[3].w, 51);
        let total: u64 = z.iter().map(Rect::area).sum();
        assert_eq!(total, 101 * 100);
    }

    #[test]
    fn zones_finer_than_frame() {
        let err = make_zones(&frame(3, 100), &grid(4, 1)).unwrap_err();
        assert!(err.to_string().starts_with("zone grid finer than frame"));
    }

    #[test]
    fn assign_examples() {
        let zones = make_zones(&frame(100, 100), &grid(2, 2)).unwrap();
        let l = assign_rois(&[Rect::new(10, 10, 20, 20)], &zones).unwrap();
        assert_eq!(l[0].len(), 1);
        // overlaps 400 with zone 0 and 200 with zone 1
        let l = assign_rois(&[Rect::new(30, 10, 30, 20)], &zones).unwrap();
        assert_eq!(l[0], vec![Rect::new(30, 10, 30, 20)]);
        assert!(l[1].is_empty());
    }

    #[test]
    fn assign_tie_goes_to_lowest_zone() {
        let zones = make_zones(&frame(100, 100), &grid(2, 2)).unwrap();
        let roi = Rect::new(40, 40, 20, 20);
        let overlaps: Vec<u64> = zones.iter().map(|z| z.overlap_area(&roi)).collect();
        assert_eq!(overlaps, vec![100, 100, 100, 100]);
        let l = assign_rois(&[roi], &zones).unwrap();
        assert_eq!(l[0], vec![roi]);
    }

    #[test]
    fn assign_outside_frame() {
        let zones = make_zones(&frame(100, 100), &grid(2, 2)).unwrap();
        let err = assign_rois(&[Rect::new(200, 0, 10, 10)], &zones).unwrap_err();
        assert!(err.to_string().starts_with("roi outside frame"));
    }

    #[test]
    fn partition_examples() {
        let mut ids = PatchIdSource::new();
        assert!(partition(&frame(100, 100), &grid(2, 2), &[], 1.0, &mut ids).unwrap().is_empty());

        let p = partition(&frame(100, 100), &grid(1, 1), &[Rect::new(10, 10, 30, 30)], 1.0, &mut ids).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].rect, Rect::new(10, 10, 30, 30));

        let rois = [Rect::new(30, 10, 30, 20), Rect::new(5, 5, 10, 10)];
        let p = partition(&frame(100, 100), &grid(2, 2), &rois, 0.5, &mut ids).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].rect, Rect::new(5, 5, 55, 25));
        assert_eq!(p[0].generation_time, Micros::from_millis(40));
        assert_eq!(p[0].slo, Micros::from_millis(500));
        assert_eq!(p[0].deadline, Micros::from_millis(540));
        assert_eq!(p[0].size_bytes, (55u64 * 25).div_ceil(2));
        assert_eq!(p[0].source_frame_id, 7);
    }

    #[test]
    fn partition_rejects_zero_area_roi() {
        let mut ids = PatchIdSource::new();
        assert!(partition(&frame(100, 100), &grid(2, 2), &[Rect::new(1, 1, 0, 4)], 1.0, &mut ids).is_err());
    }

    fn scene() -> impl Strategy<Value = (u32, u32, u32, u32, Vec<Rect>)> {
        (20u32..200, 20u32..200, 1u32..6, 1u32..6).prop_flat_map(|(w, h, zx, zy)| {
            let roi = (0..w, 0..h).prop_flat_map(move |(x, y)| {
                (Just(x), Just(y), 1..=(w - x).min(40), 1..=(h - y).min(40))
                    .prop_map(|(x, y, rw, rh)| Rect::new(x, y, rw, rh))
            });
            (Just(w), Just(h), Just(zx), Just(zy), proptest::collection::vec(roi, 0..20))
        })
    }

    proptest! {
        #[test]
        fn every_roi_covered_by_exactly_one_assigned_patch((w, h, zx, zy, rois) in scene()) {
            let f = frame(w, h);
            let cfg = grid(zx, zy);
            let zones = make_zones(&f, &cfg).unwrap();
            let lists = assign_rois(&rois, &zones).unwrap();
            let mut ids = PatchIdSource::new();
            let patches = partition(&f, &cfg, &rois, 1.0, &mut ids).unwrap();
            prop_assert!(patches.len() <= (zx * zy) as usize);
            prop_assert_eq!(patches.len(), lists.iter().filter(|l| !l.is_empty()).count());
            // each RoI belongs to exactly one zone list, and that zone's patch contains it
            let mut assigned = 0;
            for (pi, list) in lists.iter().filter(|l| !l.is_empty()).enumerate() {
                for roi in list {
                    prop_assert!(patches[pi].rect.contains(roi));
                }
                assigned += list.len();
            }
            prop_assert_eq!(assigned, rois.len());
            let again = partition(&f, &cfg, &rois, 1.0, &mut PatchIdSource::new()).unwrap();
            prop_assert_eq!(
                again.iter().map(|p| p.rect).collect::<Vec<_>>(),
                patches.iter().map(|p| p.rect).collect::<Vec<_>>()
            );
        }

        #[test]
        fn zones_tile_frame(w in 1u32..300, h in 1u32..300, zx in 1u32..8, zy in 1u32..8) {
            prop_assume!(zx <= w && zy <= h);
            let zones = make_zones(&frame(w, h), &grid(zx, zy)).unwrap();
            let total: u64 = zones.iter().map(Rect::area).sum();
            prop_assert_eq!(total, w as u64 * h as u64);
            for (i, a) in zones.iter().enumerate() {
                for b in &zones[i + 1..] {
                    prop_assert_eq!(a.overlap_area(b), 0);
                }
            }
        }
    }
}
