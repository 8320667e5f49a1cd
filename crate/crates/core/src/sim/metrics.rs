//! Run metrics and their CSV tables.
//!
//! `patches.csv` columns:
//! `patch_id,scene,frame,w,h,size_bytes,generation_ms,arrival_ms,deadline_ms,invocation,fire_ms,dispatch_ms,completion_ms,latency_ms,violated,infeasible_at_arrival,rejected`
//!
//! `invocations.csv` columns:
//! `invocation,policy,trigger,fire_ms,dispatch_ms,completion_ms,wait_ms,instance,k,patches,t_f_ms,cost_usd,estimated_slack_ms,mean_efficiency,efficiencies`
//!
//! `summary.csv` columns: see [`Summary::HEADER`].
//!
//! Per-patch invocations (`sequential-patch`) run for the batch-of-one
//! execution time scaled by patch area / canvas area, floored at
//! `patch_min_scale`. Full-frame invocations scale by frame area / canvas
//! area. Both report `k = 1` and no canvas efficiency.

use std::io::Write;

use serde::Serialize;

use crate::cost::Money;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchRecord {
    pub patch_id: u64,
    pub scene: String,
    pub frame: u64,
    pub w: u32,
    pub h: u32,
    pub size_bytes: u64,
    pub generation_ms: f64,
    pub arrival_ms: Option<f64>,
    pub deadline_ms: f64,
    pub invocation: Option<u64>,
    pub fire_ms: Option<f64>,
    pub dispatch_ms: Option<f64>,
    pub completion_ms: Option<f64>,
    pub latency_ms: Option<f64>,
    pub violated: bool,
    pub infeasible_at_arrival: bool,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvocationRecord {
    pub invocation: u64,
    pub policy: String,
    pub trigger: String,
    pub fire_ms: f64,
    pub dispatch_ms: f64,
    pub completion_ms: f64,
    pub wait_ms: f64,
    pub instance: usize,
    pub k: u32,
    pub patches: usize,
    pub t_f_ms: f64,
    #[serde(serialize_with = "money_str")]
    pub cost_usd: Money,
    pub estimated_slack_ms: Option<f64>,
    pub mean_efficiency: Option<f64>,
    /// Space-separated per-canvas efficiencies.
    pub efficiencies: String,
}

fn money_str<S: serde::Serializer>(m: &Money, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&m.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub policy: String,
    pub frames: usize,
    pub patches: usize,
    pub admitted: usize,
    pub rejected: usize,
    pub invocations: usize,
    pub canvases: u64,
    pub total_cost: Money,
    pub bandwidth_bytes: u64,
    pub violations: usize,
    pub infeasible_at_arrival: usize,
    pub violation_rate: f64,
    pub mean_canvas_efficiency: f64,
    pub median_canvas_efficiency: f64,
    pub mean_batch_canvases: f64,
    pub mean_patch_latency_ms: f64,
    pub mean_amortized_latency_ms: f64,
    pub mean_execution_ms: f64,
}

impl Summary {
    pub const HEADER: [&'static str; 18] = [
        "policy",
        "frames",
        "patches",
        "admitted",
        "rejected",
        "invocations",
        "canvases",
        "total_cost_usd",
        "bandwidth_bytes",
        "violations",
        "infeasible_at_arrival",
        "violation_rate",
        "mean_canvas_efficiency",
        "median_canvas_efficiency",
        "mean_batch_canvases",
        "mean_patch_latency_ms",
        "mean_amortized_latency_ms",
        "mean_execution_ms",
    ];

    pub fn row(&self) -> Vec<String> {
        vec![
            self.policy.clone(),
            self.frames.to_string(),
            self.patches.to_string(),
            self.admitted.to_string(),
            self.rejected.to_string(),
            self.invocations.to_string(),
            self.canvases.to_string(),
            self.total_cost.to_string(),
            self.bandwidth_bytes.to_string(),
            self.violations.to_string(),
            self.infeasible_at_arrival.to_string(),
            fmt6(self.violation_rate),
            fmt6(self.mean_canvas_efficiency),
            fmt6(self.median_canvas_efficiency),
            fmt6(self.mean_batch_canvases),
            fmt6(self.mean_patch_latency_ms),
            fmt6(self.mean_amortized_latency_ms),
            fmt6(self.mean_execution_ms),
        ]
    }
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub patches: Vec<PatchRecord>,
    pub invocations: Vec<InvocationRecord>,
    /// Canvas efficiencies of every invoked canvas, in invocation order.
    pub canvas_efficiencies: Vec<f64>,
    pub summary: Summary,
}

impl RunMetrics {
    pub fn from_records(
        policy: &str,
        frames: usize,
        bandwidth_bytes: u64,
        patches: Vec<PatchRecord>,
        invocations: Vec<InvocationRecord>,
        canvas_efficiencies: Vec<f64>,
    ) -> RunMetrics {
        let admitted = patches.iter().filter(|p| !p.rejected).count();
        let violations = patches.iter().filter(|p| p.violated).count();
        let latencies: Vec<f64> = patches.iter().filter_map(|p| p.latency_ms).collect();
        let batch_latency: f64 = invocations.iter().map(|i| i.completion_ms - i.fire_ms).sum();
        let batched_patches: usize = invocations.iter().map(|i| i.patches).sum();
        let canvases: u64 = invocations.iter().map(|i| i.k as u64).sum();
        let summary = Summary {
            policy: policy.to_string(),
            frames,
            patches: patches.len(),
            admitted,
            rejected: patches.len() - admitted,
            invocations: invocations.len(),
            canvases,
            total_cost: invocations.iter().map(|i| i.cost_usd).sum(),
            bandwidth_bytes,
            violations,
            infeasible_at_arrival: patches.iter().filter(|p| p.infeasible_at_arrival).count(),
            violation_rate: ratio(violations as f64, admitted as f64),
            mean_canvas_efficiency: mean(&canvas_efficiencies),
            median_canvas_efficiency: median(&canvas_efficiencies),
            mean_batch_canvases: ratio(canvases as f64, invocations.len() as f64),
            mean_patch_latency_ms: mean(&latencies),
            mean_amortized_latency_ms: ratio(batch_latency, batched_patches as f64),
            mean_execution_ms: ratio(invocations.iter().map(|i| i.t_f_ms).sum(), invocations.len() as f64),
        };
        RunMetrics { patches, invocations, canvas_efficiencies, summary }
    }

    pub fn write_patches_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.patches {
            w.serialize(p)?;
        }
        if self.patches.is_empty() {
            w.write_record([
                "patch_id",
                "scene",
                "frame",
                "w",
                "h",
                "size_bytes",
                "generation_ms",
                "arrival_ms",
                "deadline_ms",
                "invocation",
                "fire_ms",
                "dispatch_ms",
                "completion_ms",
                "latency_ms",
                "violated",
                "infeasible_at_arrival",
                "rejected",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_invocations_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for i in &self.invocations {
            w.serialize(i)?;
        }
        if self.invocations.is_empty() {
            w.write_record([
                "invocation",
                "policy",
                "trigger",
                "fire_ms",
                "dispatch_ms",
                "completion_ms",
                "wait_ms",
                "instance",
                "k",
                "patches",
                "t_f_ms",
                "cost_usd",
                "estimated_slack_ms",
                "mean_efficiency",
                "efficiencies",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Summary::HEADER)?;
        w.write_record(self.summary.row())?;
        w.flush()?;
        Ok(())
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    ratio(xs.iter().sum(), xs.len() as f64)
}

/// Median with the midpoint convention for even counts; 0 when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
