//! Patch stitching onto fixed-size canvases.
//!
//! Guillotine bookkeeping with best-short-side-fit selection. Patches are
//! placed in queue order at the bottom-left corner of the chosen free
//! rectangle and are never rotated, resized or padded. When no open canvas
//! has room, a blank canvas is opened.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::partition::{PatchId, PatchMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanvasSpec {
    pub width: u32,
    pub height: u32,
    /// GPU memory a single canvas occupies in a batch, in GB.
    pub vram_per_canvas_gb: f64,
}

impl CanvasSpec {
    pub fn new(width: u32, height: u32, vram_per_canvas_gb: f64) -> Self {
        CanvasSpec { width, height, vram_per_canvas_gb }
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.vram_per_canvas_gb > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "canvas must have positive dimensions and vram, got {}x{} / {} GB",
                self.width, self.height, self.vram_per_canvas_gb
            )));
        }
        Ok(())
    }
}

impl Default for CanvasSpec {
    fn default() -> Self {
        CanvasSpec::new(1024, 1024, 0.5)
    }
}

/// The minimal view of a patch the packer needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchShape {
    pub id: PatchId,
    pub w: u32,
    pub h: u32,
}

impl From<&PatchMeta> for PatchShape {
    fn from(p: &PatchMeta) -> Self {
        PatchShape { id: p.patch_id, w: p.rect.w, h: p.rect.h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub patch_id: PatchId,
    pub canvas_index: usize,
    pub position: Rect,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Canvas {
    pub placements: Vec<Placement>,
    pub free: Vec<Rect>,
}

impl Canvas {
    fn blank(spec: &CanvasSpec) -> Self {
        Canvas { placements: Vec::new(), free: vec![Rect::new(0, 0, spec.width, spec.height)] }
    }

    pub fn used_area(&self) -> u64 {
        self.placements.iter().map(|p| p.position.area()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchResult {
    pub spec: CanvasSpec,
    pub canvases: Vec<Canvas>,
    pub placement_index: BTreeMap<PatchId, Placement>,
}

impl StitchResult {
    pub fn empty(spec: CanvasSpec) -> Self {
        StitchResult { spec, canvases: Vec::new(), placement_index: BTreeMap::new() }
    }

    pub fn canvas_count(&self) -> usize {
        self.canvases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canvases.is_empty()
    }

    pub fn placement(&self, id: PatchId) -> Option<&Placement> {
        self.placement_index.get(&id)
    }

    /// Patch ids in placement order.
    pub fn patch_ids(&self) -> Vec<PatchId> {
        self.canvases.iter().flat_map(|c| c.placements.iter().map(|p| p.patch_id)).collect()
    }

    /// Flat `(canvas_index, patch_id, x, y, w, h)` listing for external tools.
    pub fn layout(&self) -> Vec<LayoutRow> {
        self.canvases
            .iter()
            .flat_map(|c| c.placements.iter())
            .map(|p| LayoutRow {
                canvas_index: p.canvas_index,
                patch_id: p.patch_id,
                x: p.position.x,
                y: p.position.y,
                w: p.position.w,
                h: p.position.h,
            })
            .collect()
    }

    pub fn layout_text(&self) -> String {
        let mut out = format!(
            "# canvas={}x{} canvases={}\ncanvas_index,patch_id,x,y,w,h\n",
            self.spec.width,
            self.spec.height,
            self.canvases.len()
        );
        for r in self.layout() {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.canvas_index, r.patch_id.0, r.x, r.y, r.w, r.h));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutRow {
    pub canvas_index: usize,
    pub patch_id: PatchId,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Packs `queue` in order onto as many canvases as needed.
pub fn stitch_all<'a, I>(queue: I, spec: &CanvasSpec) -> Result<StitchResult>
where
    I: IntoIterator<Item = &'a PatchMeta>,
{
    stitch_shapes(queue.into_iter().map(PatchShape::from), spec)
}

pub fn stitch_shapes<I>(shapes: I, spec: &CanvasSpec) -> Result<StitchResult>
where
    I: IntoIterator<Item = PatchShape>,
{
    let mut result = StitchResult::empty(*spec);
    for shape in shapes {
        place(&mut result, shape)?;
    }
    Ok(result)
}

fn place(result: &mut StitchResult, shape: PatchShape) -> Result<()> {
    let spec = result.spec;
    if shape.w > spec.width || shape.h > spec.height || shape.w == 0 || shape.h == 0 {
        return Err(Error::PatchExceedsCanvas {
            id: shape.id,
            w: shape.w,
            h: shape.h,
            canvas_w: spec.width,
            canvas_h: spec.height,
        });
    }
    let (ci, fi) = match best_free_rect(&result.canvases, shape.w, shape.h) {
        Some(found) => found,
        None => {
            result.canvases.push(Canvas::blank(&spec));
            (result.canvases.len() - 1, 0)
        }
    };
    let canvas = &mut result.canvases[ci];
    let c = canvas.free.swap_remove(fi);
    let position = Rect::new(c.x, c.y, shape.w, shape.h);
    canvas.free.extend(guillotine_split(&c, shape.w, shape.h));
    let placement = Placement { patch_id: shape.id, canvas_index: ci, position };
    canvas.placements.push(placement);
    result.placement_index.insert(shape.id, placement);
    Ok(())
}

/// Free rectangle minimising `min(w_c - w, h_c - h)`; ties prefer the lower
/// canvas index, then lower y, then lower x.
fn best_free_rect(canvases: &[Canvas], w: u32, h: u32) -> Option<(usize, usize)> {
    type FitKey = (u32, usize, u32, u32);
    let mut best: Option<(FitKey, (usize, usize))> = None;
    for (ci, canvas) in canvases.iter().enumerate() {
        for (fi, c) in canvas.free.iter().enumerate() {
            if !c.fits(w, h) {
                continue;
            }
            let key = ((c.w - w).min(c.h - h), ci, c.y, c.x);
            if best.is_none_or(|(k, _)| key < k) {
                best = Some((key, (ci, fi)));
            }
        }
    }
    best.map(|(_, loc)| loc)
}

/// Residual space after placing `w`×`h` at the bottom-left of `c`. The cut
/// runs along the shorter leftover side; ties take the vertical cut.
/// Degenerate pieces are dropped.
pub fn guillotine_split(c: &Rect, w: u32, h: u32) -> impl Iterator<Item = Rect> {
    let left_w = c.w - w;
    let left_h = c.h - h;
    let (right, top) = if left_w <= left_h {
        (Rect::new(c.x + w, c.y, left_w, c.h), Rect::new(c.x, c.y + h, w, left_h))
    } else {
        (Rect::new(c.x + w, c.y, left_w, h), Rect::new(c.x, c.y + h, c.w, left_h))
    };
    [right, top].into_iter().filter(|r| !r.is_degenerate())
}

/// Per-canvas ratio of placed patch area to canvas area.
pub fn canvas_efficiency(result: &StitchResult) -> Vec<f64> {
    let s = result.spec.area() as f64;
    result.canvases.iter().map(|c| c.used_area() as f64 / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes(dims: &[(u32, u32)]) -> Vec<PatchShape> {
        dims.iter().enumerate().map(|(i, &(w, h))| PatchShape { id: PatchId(i as u64), w, h }).collect()
    }

    fn spec100() -> CanvasSpec {
        CanvasSpec::new(100, 100, 1.0)
    }

    #[test]
    fn exact_fit() {
        let r = stitch_shapes(shapes(&[(100, 100)]), &spec100()).unwrap();
        assert_eq!(r.canvas_count(), 1);
        assert_eq!(r.placement(PatchId(0)).unwrap().position, Rect::new(0, 0, 100, 100));
        assert_eq!(canvas_efficiency(&r), vec![1.0]);
        assert!(r.canvases[0].free.is_empty());
    }

    #[test]
    fn two_halves_share_a_canvas() {
        let r = stitch_shapes(shapes(&[(50, 100), (50, 100)]), &spec100()).unwrap();
        assert_eq!(r.canvas_count(), 1);
        assert_eq!(r.placement(PatchId(0)).unwrap().position, Rect::new(0, 0, 50, 100));
        assert_eq!(r.placement(PatchId(1)).unwrap().position, Rect::new(50, 0, 50, 100));
        assert_eq!(canvas_efficiency(&r), vec![1.0]);
    }

    #[test]
    fn second_patch_opens_new_canvas() {
        let r = stitch_shapes(shapes(&[(60, 60), (50, 50)]), &spec100()).unwrap();
        assert_eq!(r.canvas_count(), 2);
        assert_eq!(r.placement(PatchId(0)).unwrap().position, Rect::new(0, 0, 60, 60));
        let mut free = r.canvases[0].free.clone();
        free.sort();
        assert_eq!(free, vec![Rect::new(0, 60, 60, 40), Rect::new(60, 0, 40, 100)]);
        let p1 = r.placement(PatchId(1)).unwrap();
        assert_eq!(p1.canvas_index, 1);
        assert_eq!(p1.position, Rect::new(0, 0, 50, 50));
    }

    #[test]
    fn efficiency_examples() {
        let r = stitch_shapes(shapes(&[(60, 60), (30, 30)]), &spec100()).unwrap();
        assert_eq!(r.canvas_count(), 1);
        assert!((canvas_efficiency(&r)[0] - 0.45).abs() < 1e-12);
        let mut empty = StitchResult::empty(spec100());
        empty.canvases.push(Canvas::blank(&spec100()));
        assert_eq!(canvas_efficiency(&empty), vec![0.0]);
    }

    #[test]
    fn horizontal_cut_when_width_leftover_larger() {
        let c = Rect::new(0, 0, 100, 100);
        let parts: Vec<_> = guillotine_split(&c, 20, 90).collect();
        assert_eq!(parts, vec![Rect::new(20, 0, 80, 90), Rect::new(0, 90, 100, 10)]);
    }

    #[test]
    fn best_short_side_fit_prefers_tighter_rect() {
        // after 60x60: free (60,0,40,100) and (0,60,60,40). A 35x35 patch has
        // short-side leftovers 5 in both, so the lower y wins.
        let r = stitch_shapes(shapes(&[(60, 60), (35, 35)]), &spec100()).unwrap();
        assert_eq!(r.placement(PatchId(1)).unwrap().position, Rect::new(60, 0, 35, 35));
        // a 55x40 patch only fits the top strip exactly
        let r = stitch_shapes(shapes(&[(60, 60), (55, 40)]), &spec100()).unwrap();
        assert_eq!(r.placement(PatchId(1)).unwrap().position, Rect::new(0, 60, 55, 40));
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let err = stitch_shapes(shapes(&[(10, 10), (101, 5)]), &spec100()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("patch exceeds canvas"), "{msg}");
        assert!(msg.contains("p1"));
    }

    #[test]
    fn searches_earlier_canvases() {
        // canvas 0 keeps a 40-wide strip that the third patch can use
        let r = stitch_shapes(shapes(&[(60, 60), (50, 50), (40, 40)]), &spec100()).unwrap();
        assert_eq!(r.canvas_count(), 2);
        assert_eq!(r.placement(PatchId(2)).unwrap().canvas_index, 0);
    }

    #[test]
    fn layout_listing() {
        let r = stitch_shapes(shapes(&[(60, 60), (50, 50)]), &spec100()).unwrap();
        let text = r.layout_text();
        assert_eq!(text, "# canvas=100x100 canvases=2\ncanvas_index,patch_id,x,y,w,h\n0,0,0,0,60,60\n1,1,0,0,50,50\n");
    }
}
