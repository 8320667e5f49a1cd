//! RoI traces: synthetic generation and the JSON-lines file format.
//!
//! One line per frame:
//! `{"scene":"s0","frame":0,"t_ms":0.0,"W":3840,"H":2160,"rois":[[x,y,w,h],...]}`

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::sim::rng;
use crate::time::Micros;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub frame_id: u64,
    pub generation_time: Micros,
    pub rois: Vec<Rect>,
}

impl TraceFrame {
    pub fn roi_area(&self) -> u64 {
        self.rois.iter().map(Rect::area).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceScene {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frames: Vec<TraceFrame>,
}

impl TraceScene {
    pub fn validate(&self) -> Result<()> {
        let bounds = Rect::new(0, 0, self.width, self.height);
        for pair in self.frames.windows(2) {
            if pair[1].generation_time <= pair[0].generation_time {
                return Err(Error::InvalidConfig(format!(
                    "scene {}: frame {} is not later than frame {}",
                    self.scene_id, pair[1].frame_id, pair[0].frame_id
                )));
            }
        }
        for f in &self.frames {
            if let Some(r) = f.rois.iter().find(|r| r.is_degenerate() || !bounds.contains(r)) {
                return Err(Error::InvalidConfig(format!(
                    "scene {} frame {}: roi {:?} is empty or outside the {}x{} frame",
                    self.scene_id, f.frame_id, r, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Same content replayed at a different frame rate, keeping the first
    /// frame's timestamp.
    pub fn retimed(&self, fps: f64) -> TraceScene {
        let t0 = self.frames.first().map_or(Micros::ZERO, |f| f.generation_time);
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| TraceFrame { generation_time: t0 + Micros::from_secs_f64(i as f64 / fps), ..f.clone() })
            .collect();
        TraceScene { fps, frames, ..self.clone() }
    }

    pub fn frame_area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    scene: String,
    frame: u64,
    t_ms: f64,
    #[serde(rename = "W")]
    width: u32,
    #[serde(rename = "H")]
    height: u32,
    rois: Vec<[u32; 4]>,
}

pub fn write_trace<W: Write>(scenes: &[TraceScene], mut out: W) -> Result<()> {
    for s in scenes {
        for f in &s.frames {
            let line = TraceLine {
                scene: s.scene_id.clone(),
                frame: f.frame_id,
                t_ms: f.generation_time.as_millis_f64(),
                width: s.width,
                height: s.height,
                rois: f.rois.iter().map(|r| [r.x, r.y, r.w, r.h]).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace, grouping lines by scene in order of first appearance.
/// The frame rate of each scene is estimated from its timestamps.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceScene>> {
    let mut order: Vec<String> = Vec::new();
    let mut scenes: BTreeMap<String, TraceScene> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceLine =
            serde_json::from_str(&line).map_err(|e| Error::TraceParse { line: i + 1, message: e.to_string() })?;
        let scene = scenes.entry(rec.scene.clone()).or_insert_with(|| {
            order.push(rec.scene.clone());
            TraceScene {
                scene_id: rec.scene.clone(),
                width: rec.width,
                height: rec.height,
                fps: 0.0,
                frames: Vec::new(),
            }
        });
        if scene.width != rec.width || scene.height != rec.height {
            return Err(Error::TraceParse { line: i + 1, message: format!("scene {} changes resolution", rec.scene) });
        }
        scene.frames.push(TraceFrame {
            frame_id: rec.frame,
            generation_time: Micros::from_millis_f64(rec.t_ms),
            rois: rec.rois.iter().map(|r| Rect::new(r[0], r[1], r[2], r[3])).collect(),
        });
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut s = scenes.remove(&id).expect("scene recorded");
        if s.frames.len() > 1 {
            let span = (s.frames.last().unwrap().generation_time - s.frames[0].generation_time).as_secs_f64();
            if span > 0.0 {
                s.fps = (s.frames.len() - 1) as f64 / span;
            }
        }
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

/// Parameters of the synthetic workload.
///
/// Objects gather in a few drifting clusters plus a thin uniform scatter.
/// The per-frame RoI area fraction fluctuates around
/// `roi_proportion_mean` by up to ±`roi_proportion_jitter` (relative), and
/// with probability `burst_probability` a frame is a burst carrying
/// `burst_multiplier` times as many objects. The non-burst level is scaled
/// down so that the long-run mean stays at `roi_proportion_mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadGenConfig {
    pub seed: u64,
    pub scene_id: String,
    pub n_frames: u32,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub roi_proportion_mean: f64,
    pub roi_proportion_jitter: f64,
    pub burst_probability: f64,
    pub burst_multiplier: f64,
    pub roi_count_range: (u32, u32),
    /// Height over width.
    pub roi_aspect_range: (f64, f64),
    pub roi_max_size: (u32, u32),
    pub cluster_count: u32,
    /// Cluster standard deviation as a fraction of the frame dimensions.
    pub cluster_spread: f64,
    /// Per-frame random-walk step of cluster centres, in pixels.
    pub cluster_drift_px: f64,
    pub scatter_fraction: f64,
}

impl Default for WorkloadGenConfig {
    fn default() -> Self {
        WorkloadGenConfig {
            seed: 1,
            scene_id: "scene_00".into(),
            n_frames: 500,
            fps: 2.0,
            width: 3840,
            height: 2160,
            roi_proportion_mean: 0.10,
            roi_proportion_jitter: 0.5,
            burst_probability: 0.05,
            burst_multiplier: 2.0,
            roi_count_range: (120, 240),
            roi_aspect_range: (1.5, 3.0),
            roi_max_size: (64, 192),
            cluster_count: 4,
            cluster_spread: 0.06,
            cluster_drift_px: 20.0,
            scatter_fraction: 0.1,
        }
    }
}

impl WorkloadGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width == 0 || self.height == 0 || !(self.fps > 0.0) {
            return bad("frame size and fps must be positive".into());
        }
        if !(self.roi_proportion_mean > 0.0 && self.roi_proportion_mean < 1.0) {
            return bad(format!("roi_proportion_mean must be in (0,1), got {}", self.roi_proportion_mean));
        }
        if !(0.0..1.0).contains(&self.roi_proportion_jitter) {
            return bad(format!("roi_proportion_jitter must be in [0,1), got {}", self.roi_proportion_jitter));
        }
        if !(0.0..1.0).contains(&self.burst_probability) {
            return bad(format!("burst_probability must be in [0,1), got {}", self.burst_probability));
        }
        if !(self.burst_multiplier >= 1.0) {
            return bad(format!("burst_multiplier must be >= 1, got {}", self.burst_multiplier));
        }
        if self.roi_count_range.0 > self.roi_count_range.1 {
            return bad("roi_count_range min exceeds max".into());
        }
        let (a0, a1) = self.roi_aspect_range;
        if !(a0 > 0.0 && a0 <= a1) {
            return bad("roi_aspect_range must be positive and ordered".into());
        }
        if !(0.0..=1.0).contains(&self.scatter_fraction) || !(self.cluster_spread >= 0.0) {
            return bad("scatter_fraction must be in [0,1] and cluster_spread >= 0".into());
        }
        if self.cluster_count == 0 && self.scatter_fraction < 1.0 && self.roi_count_range.1 > 0 {
            return bad("cluster_count must be positive unless every roi is scattered".into());
        }
        Ok(())
    }

    fn check_geometry(&self) -> Result<()> {
        let (mw, mh) = self.roi_max_size;
        if mw == 0 || mh == 0 || mw > self.width || mh > self.height {
            return Err(Error::InfeasibleGeometry(format!(
                "roi max size {mw}x{mh} does not fit a {}x{} frame",
                self.width, self.height
            )));
        }
        let max_count = (self.roi_count_range.1 as f64 * self.burst_multiplier).ceil() as u64;
        if max_count > self.width as u64 * self.height as u64 {
            return Err(Error::InfeasibleGeometry(format!(
                "cannot place {max_count} rois in a {}x{} frame",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

pub fn generate_trace(cfg: &WorkloadGenConfig) -> Result<TraceScene> {
    cfg.validate()?;
    cfg.check_geometry()?;
    let mut r = rng::stream(cfg.seed, "trace");
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let frame_area = w * h;
    let base = cfg.roi_proportion_mean / (1.0 + cfg.burst_probability * (cfg.burst_multiplier - 1.0));

    let mut centres: Vec<(f64, f64)> =
        (0..cfg.cluster_count).map(|_| (r.random_range(0.1..0.9) * w, r.random_range(0.1..0.9) * h)).collect();
    let drift = Normal::new(0.0, cfg.cluster_drift_px.max(0.0)).expect("finite drift");
    let spread_x = Normal::new(0.0, cfg.cluster_spread * w).expect("finite spread");
    let spread_y = Normal::new(0.0, cfg.cluster_spread * h).expect("finite spread");

    let mut frames = Vec::with_capacity(cfg.n_frames as usize);
    for i in 0..cfg.n_frames {
        for c in centres.iter_mut() {
            c.0 = reflect(c.0 + drift.sample(&mut r), w);
            c.1 = reflect(c.1 + drift.sample(&mut r), h);
        }
        let burst = r.random_bool(cfg.burst_probability);
        let scale = if burst { cfg.burst_multiplier } else { 1.0 };
        let jitter = 1.0 + cfg.roi_proportion_jitter * r.random_range(-1.0..=1.0);
        let proportion = (base * jitter * scale).min(0.95);
        let (c0, c1) = cfg.roi_count_range;
        let count = ((r.random_range(c0..=c1) as f64) * scale).round() as u32;

        let mut rois = Vec::with_capacity(count as usize);
        if count > 0 {
            let mean_area = proportion * frame_area / count as f64;
            for _ in 0..count {
                let area = mean_area * r.random_range(0.5..1.5);
                let aspect = if cfg.roi_aspect_range.0 < cfg.roi_aspect_range.1 {
                    r.random_range(cfg.roi_aspect_range.0..cfg.roi_aspect_range.1)
                } else {
                    cfg.roi_aspect_range.0
                };
                let rw = ((area / aspect).sqrt().round() as u32).clamp(1, cfg.roi_max_size.0);
                let rh = ((rw as f64 * aspect).round() as u32).clamp(1, cfg.roi_max_size.1);
                let (cx, cy) = if centres.is_empty() || r.random_bool(cfg.scatter_fraction) {
                    (r.random_range(0.0..w), r.random_range(0.0..h))
                } else {
                    let c = centres[r.random_range(0..centres.len())];
                    (c.0 + spread_x.sample(&mut r), c.1 + spread_y.sample(&mut r))
                };
                let x = (cx - rw as f64 / 2.0).round().clamp(0.0, (cfg.width - rw) as f64) as u32;
                let y = (cy - rh as f64 / 2.0).round().clamp(0.0, (cfg.height - rh) as f64) as u32;
                rois.push(Rect::new(x, y, rw, rh));
            }
        }
        frames.push(TraceFrame {
            frame_id: i as u64,
            generation_time: Micros::from_secs_f64(i as f64 / cfg.fps),
            rois,
        });
    }
    Ok(TraceScene { scene_id: cfg.scene_id.clone(), width: cfg.width, height: cfg.height, fps: cfg.fps, frames })
}

fn reflect(v: f64, max: f64) -> f64 {
    if v < 0.0 {
        (-v).min(max)
    } else if v > max {
        (2.0 * max - v).max(0.0)
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> WorkloadGenConfig {
        WorkloadGenConfig { seed, n_frames: 40, ..Default::default() }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_trace(&small(42)).unwrap();
        let b = generate_trace(&small(42)).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_trace(&[a], &mut ba).unwrap();
        write_trace(&[b], &mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = generate_trace(&small(43)).unwrap();
        let mut bc = Vec::new();
        write_trace(&[c], &mut bc).unwrap();
        assert_ne!(ba, bc);
    }

    #[test]
    fn proportion_mean_near_target() {
        let cfg = WorkloadGenConfig { seed: 5, n_frames: 1000, ..Default::default() };
        let t = generate_trace(&cfg).unwrap();
        let fa = t.frame_area() as f64;
        let mean = t.frames.iter().map(|f| f.roi_area() as f64 / fa).sum::<f64>() / t.frames.len() as f64;
        assert!((0.08..=0.12).contains(&mean), "mean proportion {mean}");
    }

    #[test]
    fn bursts_show_up() {
        let cfg = WorkloadGenConfig { seed: 9, n_frames: 1000, burst_probability: 0.1, ..Default::default() };
        let t = generate_trace(&cfg).unwrap();
        let counts: Vec<usize> = t.frames.iter().map(|f| f.rois.len()).collect();
        // burst frames carry at least 2x the minimum count of a calm frame
        let big = counts.iter().filter(|&&c| c > 240).count();
        assert!((50..=150).contains(&big), "burst frames {big}");
    }

    #[test]
    fn zero_count_range_gives_empty_frames() {
        let cfg = WorkloadGenConfig { roi_count_range: (0, 0), n_frames: 10, ..Default::default() };
        let t = generate_trace(&cfg).unwrap();
        assert_eq!(t.frames.len(), 10);
        assert!(t.frames.iter().all(|f| f.rois.is_empty()));
    }

    #[test]
    fn rois_inside_frame_and_times_increasing() {
        let t = generate_trace(&small(3)).unwrap();
        t.validate().unwrap();
        assert_eq!(t.frames[1].generation_time, Micros::from_millis(500));
    }

    #[test]
    fn infeasible_geometry() {
        let cfg = WorkloadGenConfig { width: 50, height: 50, ..Default::default() };
        assert!(matches!(generate_trace(&cfg), Err(Error::InfeasibleGeometry(_))));
    }

    #[test]
    fn file_round_trip() {
        let a = generate_trace(&small(11)).unwrap();
        let b = generate_trace(&WorkloadGenConfig { scene_id: "other".into(), ..small(12) }).unwrap();
        let mut buf = Vec::new();
        write_trace(&[a.clone(), b.clone()], &mut buf).unwrap();
        let back = read_trace(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].frames, a.frames);
        assert_eq!(back[1].scene_id, "other");
        assert!((back[0].fps - 2.0).abs() < 1e-9);
    }

    #[test]
    fn read_rejects_bad_lines() {
        let err = read_trace("{\"scene\":1}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let outside = r#"{"scene":"s","frame":0,"t_ms":0,"W":10,"H":10,"rois":[[8,8,5,5]]}"#;
        assert!(read_trace(outside.as_bytes()).is_err());
        let backwards = "{\"scene\":\"s\",\"frame\":0,\"t_ms\":5,\"W\":10,\"H\":10,\"rois\":[]}\n\
                         {\"scene\":\"s\",\"frame\":1,\"t_ms\":5,\"W\":10,\"H\":10,\"rois\":[]}\n";
        assert!(read_trace(backwards.as_bytes()).is_err());
    }

    #[test]
    fn retime_keeps_content() {
        let t = generate_trace(&small(4)).unwrap();
        let fast = t.retimed(8.0);
        assert_eq!(fast.frames.len(), t.frames.len());
        assert_eq!(fast.frames[2].generation_time, Micros(250_000));
        assert_eq!(fast.frames[2].rois, t.frames[2].rois);
    }
}
