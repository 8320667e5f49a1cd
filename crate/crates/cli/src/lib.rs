//! Command implementations behind the `patchbatch` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use patchbatch::latency::{profile_from_samples, LatencyLaw};
use patchbatch::partition::PatchId;
use patchbatch::sim::{events, rng, run, PolicyKind, RunConfig, RunMetrics, RunOutput, Summary, TraceScene};
use patchbatch::stitch::{stitch_shapes, CanvasSpec, PatchShape};
use patchbatch::Micros;
use rayon::prelude::*;

pub use config::{ExperimentConfig, Outputs, Overrides, SweepSpec, TraceSource};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<patchbatch::Error> for CliError {
    fn from(e: patchbatch::Error) -> Self {
        use patchbatch::Error as E;
        match e {
            E::InvalidConfig(_) | E::CannotFitCanvas { .. } | E::InfeasibleGeometry(_) | E::InvalidProfile(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> patchbatch::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// One-line human summary printed by `simulate`.
pub fn summary_line(s: &Summary) -> String {
    format!(
        "policy={} cost={} violation_rate={:.6} mean_canvas_efficiency={:.6}",
        s.policy, s.total_cost, s.violation_rate, s.mean_canvas_efficiency
    )
}

/// Files written by `simulate`.
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PATCHES_FILE: &str = "patches.csv";
pub const INVOCATIONS_FILE: &str = "invocations.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";

pub fn write_outputs(out: &RunOutput, dir: &Path, outputs: Outputs) -> Result<(), CliError> {
    let m = &out.metrics;
    write_with(&dir.join(SUMMARY_FILE), |w| m.write_summary_csv(w))?;
    if outputs.patches {
        write_with(&dir.join(PATCHES_FILE), |w| m.write_patches_csv(w))?;
    }
    if outputs.invocations {
        write_with(&dir.join(INVOCATIONS_FILE), |w| m.write_invocations_csv(w))?;
    }
    if outputs.events {
        write_with(&dir.join(EVENTS_FILE), |w| events::write_jsonl(&out.events, w))?;
    }
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<RunMetrics, CliError> {
    let scenes = cfg.load_trace()?;
    let mut run_cfg = cfg.run.clone();
    run_cfg.record_events = cfg.outputs.events;
    let out = run(&scenes, &run_cfg, cfg.seed)?;
    write_outputs(&out, &cfg.out_dir, cfg.outputs)?;
    Ok(out.metrics)
}

/// One grid cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub slo_ms: f64,
    pub bandwidth_mbps: f64,
    pub policy: PolicyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub result: Result<Summary, String>,
}

pub fn sweep_cells(cfg: &ExperimentConfig, policy_override: Option<PolicyKind>) -> Vec<SweepCell> {
    let base = &cfg.run;
    let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let slos = or(&cfg.sweep.slo_ms, base.slo.as_millis_f64());
    let bws = or(&cfg.sweep.bandwidth_mbps, base.link.bandwidth_mbps);
    let policies = match policy_override {
        Some(p) => vec![p],
        None if cfg.sweep.policies.is_empty() => vec![base.policy.kind],
        None => cfg.sweep.policies.clone(),
    };
    let mut cells = Vec::new();
    for &slo_ms in &slos {
        for &bandwidth_mbps in &bws {
            for &policy in &policies {
                cells.push(SweepCell { slo_ms, bandwidth_mbps, policy });
            }
        }
    }
    cells
}

fn run_cell(scenes: &[TraceScene], base: &RunConfig, cell: &SweepCell, seed: u64) -> Result<Summary, String> {
    let mut cfg = base.clone();
    cfg.slo = Micros::from_millis_f64(cell.slo_ms);
    cfg.link.bandwidth_mbps = cell.bandwidth_mbps;
    cfg.policy.kind = cell.policy;
    cfg.record_events = false;
    run(scenes, &cfg, seed).map(|o| o.metrics.summary).map_err(|e| e.to_string())
}

/// Runs every cell in parallel; rows come back in grid order.
pub fn sweep(cfg: &ExperimentConfig, policy_override: Option<PolicyKind>) -> Result<Vec<SweepRow>, CliError> {
    let scenes = cfg.load_trace()?;
    let rows: Vec<SweepRow> = sweep_cells(cfg, policy_override)
        .into_par_iter()
        .map(|cell| SweepRow { result: run_cell(&scenes, &cfg.run, &cell, cfg.seed), cell })
        .collect();
    write_sweep_csv(&rows, &cfg.out_dir.join(SWEEP_FILE))?;
    Ok(rows)
}

pub fn sweep_header() -> Vec<&'static str> {
    let mut h = vec!["slo_ms", "bandwidth_mbps", "policy", "status", "error"];
    h.extend(Summary::HEADER.iter().skip(1));
    h
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| io_err(path, e);
    w.write_record(sweep_header()).map_err(csv_err)?;
    let width = Summary::HEADER.len() - 1;
    for r in rows {
        let mut rec =
            vec![r.cell.slo_ms.to_string(), r.cell.bandwidth_mbps.to_string(), r.cell.policy.name().to_string()];
        match &r.result {
            Ok(s) => {
                rec.extend(["ok".to_string(), String::new()]);
                rec.extend(s.row().into_iter().skip(1));
            }
            Err(msg) => {
                rec.extend(["error".to_string(), msg.clone()]);
                rec.extend(std::iter::repeat_n(String::new(), width));
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn gen_trace(scenes: &[TraceScene], out: &Path) -> Result<(), CliError> {
    write_with(out, |w| patchbatch::sim::trace::write_trace(scenes, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileGen {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub max_k: u32,
    pub samples: u32,
    pub law: LatencyLaw,
    pub seed: u64,
}

/// Profiles the synthetic latency law by sampling it, as an offline
/// measurement campaign would.
pub fn gen_profile(p: &ProfileGen, out: &Path) -> Result<patchbatch::latency::LatencyProfile, CliError> {
    if p.max_k == 0 || p.samples == 0 {
        return Err(CliError::Config("max_k and samples must be positive".into()));
    }
    if !(p.law.mu_base_ms + p.law.mu_per_canvas_ms > 0.0) {
        return Err(CliError::Config("latency law must give a positive mean".into()));
    }
    let mut r = rng::stream(p.seed, "profile");
    let samples: BTreeMap<u32, Vec<f64>> = (1..=p.max_k)
        .map(|k| {
            let (mu, sigma) = p.law.moments(k);
            (k, (0..p.samples).map(|_| rng::truncated_normal(&mut r, mu, sigma)).collect())
        })
        .collect();
    let profile = profile_from_samples(p.canvas_width, p.canvas_height, &samples)?;
    write_with(out, |w| profile.write_csv(w))?;
    Ok(profile)
}

/// Parses `WxH`.
pub fn parse_dims(s: &str) -> Result<(u32, u32), CliError> {
    let bad = || CliError::Config(format!("expected WxH, got {s:?}"));
    let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

/// Packs a comma-separated list of `WxH` patches and returns the layout
/// listing. Patch ids follow list order starting at 0.
pub fn dump_packing(canvas: (u32, u32), patches: &str) -> Result<String, CliError> {
    let spec = CanvasSpec::new(canvas.0, canvas.1, CanvasSpec::default().vram_per_canvas_gb);
    spec.validate()?;
    let shapes = patches
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .enumerate()
        .map(|(i, s)| parse_dims(s).map(|(w, h)| PatchShape { id: PatchId(i as u64), w, h }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(stitch_shapes(shapes, &spec)?.layout_text())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}
