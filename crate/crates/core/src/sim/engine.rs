//! The simulation event loop.
//!
//! Per frame: partition into patches, push each patch through the uplink,
//! hand arrivals to the scheduling policy, and run every invocation the
//! policy fires on a pool of single-concurrency instances. Invocations are
//! dispatched FIFO to the earliest-free instance. Execution time is drawn
//! from the latency profile's distribution for the batch size.
//!
//! Events are ordered by `(timestamp, sequence number)`, so the log and the
//! metrics are a pure function of the inputs and the seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{AimdBatcher, AimdConfig, BatchFire, TimeoutBatchConfig, TimeoutBatcher};
use crate::cost::{max_canvases_per_batch, Billing, FunctionConfig, Money, PricingTable};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::latency::LatencyProfile;
use crate::partition::{partition, FrameSpec, PartitionConfig, PatchId, PatchIdSource, PatchMeta};
use crate::scheduler::{InvokeEvent, SloScheduler, Timer, Trigger};
use crate::sim::events::LogRecord;
use crate::sim::link::{transmission_schedule, LinkModel};
use crate::sim::metrics::{InvocationRecord, PatchRecord, RunMetrics};
use crate::sim::rng;
use crate::sim::trace::TraceScene;
use crate::stitch::{canvas_efficiency, stitch_all, CanvasSpec};
use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Deadline-driven batching over a shared stitch.
    SloAware,
    /// Each frame's patches stitched together; every canvas invoked alone.
    SequentialCanvas,
    /// Every patch invoked alone (ELF style).
    SequentialPatch,
    /// Every full frame transmitted and invoked alone.
    SequentialFrame,
    /// Per-frame canvases batched with AIMD batch sizing (Clipper style).
    Aimd,
    /// Per-frame canvases batched by size or timeout (MArk style).
    Timeout,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::SloAware,
        PolicyKind::SequentialCanvas,
        PolicyKind::SequentialPatch,
        PolicyKind::SequentialFrame,
        PolicyKind::Aimd,
        PolicyKind::Timeout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::SloAware => "slo-aware",
            PolicyKind::SequentialCanvas => "sequential-canvas",
            PolicyKind::SequentialPatch => "sequential-patch",
            PolicyKind::SequentialFrame => "sequential-frame",
            PolicyKind::Aimd => "aimd",
            PolicyKind::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        PolicyKind::ALL.into_iter().find(|p| p.name() == s)
    }

    fn uses_canvases(self) -> bool {
        !matches!(self, PolicyKind::SequentialPatch | PolicyKind::SequentialFrame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AimdParams {
    pub initial_batch: u32,
    pub additive_step: u32,
    pub multiplicative_factor: f64,
    /// Defaults to half the SLO.
    pub latency_target_ms: Option<f64>,
    /// Defaults to the GPU-memory canvas cap.
    pub max_batch: Option<u32>,
}

impl Default for AimdParams {
    fn default() -> Self {
        AimdParams {
            initial_batch: 1,
            additive_step: 1,
            multiplicative_factor: 0.5,
            latency_target_ms: None,
            max_batch: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeoutParams {
    /// Defaults to the GPU-memory canvas cap.
    pub max_batch: Option<u32>,
    pub timeout_ms: f64,
}

impl Default for TimeoutParams {
    fn default() -> Self {
        TimeoutParams { max_batch: None, timeout_ms: 200.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub aimd: AimdParams,
    pub timeout: TimeoutParams,
    /// Floor on the work fraction of a single-patch invocation, relative to
    /// a full canvas.
    pub patch_min_scale: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig { kind, aimd: AimdParams::default(), timeout: TimeoutParams::default(), patch_min_scale: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionModel {
    /// Truncated-normal draw from the profile's (mu, sigma) for the batch size.
    Sampled,
    /// Always the profile mean.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkMode {
    /// One FIFO link shared by all scenes.
    Shared,
    /// One link per scene.
    PerScene,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub partition: PartitionConfig,
    pub canvas: CanvasSpec,
    pub function: FunctionConfig,
    pub prices: PricingTable,
    pub billing_granularity: Option<Micros>,
    pub profile: LatencyProfile,
    pub link: LinkModel,
    pub link_mode: LinkMode,
    pub policy: PolicyConfig,
    pub slo: Micros,
    pub instance_count: u32,
    pub cold_start: Micros,
    pub execution: ExecutionModel,
    pub record_events: bool,
}

impl RunConfig {
    pub fn new(profile: LatencyProfile, policy: PolicyKind) -> Self {
        RunConfig {
            partition: PartitionConfig::default(),
            canvas: CanvasSpec::default(),
            function: FunctionConfig::default(),
            prices: PricingTable::default(),
            billing_granularity: None,
            profile,
            link: LinkModel::default(),
            link_mode: LinkMode::Shared,
            policy: PolicyConfig::new(policy),
            slo: Micros::from_millis(1000),
            instance_count: 2,
            cold_start: Micros::ZERO,
            execution: ExecutionModel::Sampled,
            record_events: true,
        }
    }

    /// Cross-field checks done before any event is processed. Returns the
    /// canvas cap per batch.
    pub fn validate(&self) -> Result<u32> {
        self.canvas.validate()?;
        self.function.validate()?;
        self.prices.validate()?;
        if self.slo <= Micros::ZERO {
            return Err(Error::InvalidConfig("slo must be positive".into()));
        }
        if self.instance_count == 0 {
            return Err(Error::InvalidConfig("instance_count must be at least 1".into()));
        }
        if !(self.link.bandwidth_mbps > 0.0) || !(self.link.bytes_per_pixel >= 0.0) {
            return Err(Error::InvalidConfig("link bandwidth must be positive".into()));
        }
        if (self.profile.canvas_width, self.profile.canvas_height) != (self.canvas.width, self.canvas.height) {
            return Err(Error::InvalidConfig(format!(
                "latency profile is for {}x{} canvases but the canvas is {}x{}",
                self.profile.canvas_width, self.profile.canvas_height, self.canvas.width, self.canvas.height
            )));
        }
        if !(self.policy.patch_min_scale > 0.0) {
            return Err(Error::InvalidConfig("patch_min_scale must be positive".into()));
        }
        let cap = max_canvases_per_batch(&self.function, &self.canvas)?;
        self.aimd_config(cap)?.validate()?;
        self.timeout_config(cap)?.validate()?;
        Ok(cap)
    }

    fn aimd_config(&self, cap: u32) -> Result<AimdConfig> {
        let a = self.policy.aimd;
        let max_batch = a.max_batch.unwrap_or(cap);
        if max_batch > cap {
            return Err(Error::InvalidConfig(format!("aimd max_batch {max_batch} exceeds canvas cap {cap}")));
        }
        Ok(AimdConfig {
            initial_batch: a.initial_batch,
            additive_step: a.additive_step,
            multiplicative_factor: a.multiplicative_factor,
            latency_target: a.latency_target_ms.map(Micros::from_millis_f64).unwrap_or(Micros(self.slo.0 / 2)),
            max_batch,
        })
    }

    fn timeout_config(&self, cap: u32) -> Result<TimeoutBatchConfig> {
        let t = self.policy.timeout;
        let max_batch = t.max_batch.unwrap_or(cap);
        if max_batch > cap {
            return Err(Error::InvalidConfig(format!("timeout max_batch {max_batch} exceeds canvas cap {cap}")));
        }
        Ok(TimeoutBatchConfig { max_batch, timeout: Micros::from_millis_f64(t.timeout_ms) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub events: Vec<LogRecord>,
}

/// A batch the policy wants executed.
#[derive(Debug, Clone)]
struct Invocation {
    fire_time: Micros,
    trigger: Trigger,
    patch_ids: Vec<PatchId>,
    canvases: u32,
    work_scale: f64,
    efficiencies: Vec<f64>,
    estimated_slack: Option<Micros>,
    min_deadline: Option<Micros>,
}

impl Invocation {
    fn from_slo(ev: InvokeEvent) -> Self {
        Invocation {
            fire_time: ev.fire_time,
            trigger: ev.trigger,
            efficiencies: canvas_efficiency(&ev.stitch),
            canvases: ev.batch_size,
            patch_ids: ev.patch_ids,
            work_scale: 1.0,
            estimated_slack: Some(ev.estimated_slack),
            min_deadline: Some(ev.min_deadline),
        }
    }

    fn from_canvases(fire: BatchFire<CanvasItem>) -> Self {
        Invocation {
            fire_time: fire.fire_time,
            trigger: fire.trigger,
            canvases: fire.items.len() as u32,
            efficiencies: fire.items.iter().map(|c| c.efficiency).collect(),
            min_deadline: fire.items.iter().map(|c| c.min_deadline).min(),
            patch_ids: fire.items.into_iter().flat_map(|c| c.patch_ids).collect(),
            work_scale: 1.0,
            estimated_slack: None,
        }
    }
}

#[derive(Debug, Clone)]
struct CanvasItem {
    patch_ids: Vec<PatchId>,
    efficiency: f64,
    min_deadline: Micros,
}

#[derive(Debug, Default)]
struct Step {
    invocations: Vec<Invocation>,
    timers: Vec<Timer>,
    log: Vec<LogRecord>,
}

/// Collects a frame's patches until all have arrived, then stitches them.
#[derive(Debug, Default)]
struct FrameGrouper {
    pending: BTreeMap<u64, (usize, Vec<PatchMeta>)>,
}

impl FrameGrouper {
    fn push(
        &mut self,
        patch: PatchMeta,
        frame_key: u64,
        expected: usize,
        spec: &CanvasSpec,
    ) -> Result<Vec<CanvasItem>> {
        let entry = self.pending.entry(frame_key).or_insert_with(|| (expected, Vec::new()));
        entry.1.push(patch);
        if entry.1.len() < entry.0 {
            return Ok(Vec::new());
        }
        let (_, patches) = self.pending.remove(&frame_key).expect("present");
        let stitch = stitch_all(&patches, spec)?;
        let eff = canvas_efficiency(&stitch);
        let deadline = |id: PatchId| patches.iter().find(|p| p.patch_id == id).map(|p| p.deadline);
        Ok(stitch
            .canvases
            .iter()
            .zip(eff)
            .map(|(c, efficiency)| {
                let patch_ids: Vec<PatchId> = c.placements.iter().map(|p| p.patch_id).collect();
                let min_deadline = patch_ids.iter().filter_map(|&id| deadline(id)).min().unwrap_or(Micros::MAX);
                CanvasItem { patch_ids, efficiency, min_deadline }
            })
            .collect())
    }
}

enum CanvasBatching {
    Sequential,
    Aimd(AimdBatcher<CanvasItem>),
    Timeout(TimeoutBatcher<CanvasItem>),
}

enum Driver {
    Slo(Box<SloScheduler>),
    Canvas { grouper: FrameGrouper, batching: CanvasBatching },
    Patch { min_scale: f64 },
    Frame,
}

struct Arrived<'a> {
    patch: &'a PatchMeta,
    frame_key: u64,
    frame_patch_count: usize,
}

impl Driver {
    fn on_arrival(&mut self, a: Arrived<'_>, now: Micros, spec: &CanvasSpec, policy: &str) -> Result<Step> {
        let mut step = Step::default();
        match self {
            Driver::Slo(s) => {
                let out = s.on_patch_arrival(a.patch.clone(), now)?;
                step.invocations.extend(out.invokes.into_iter().map(Invocation::from_slo));
                step.log.push(LogRecord::Repack {
                    t_ms: now.as_millis_f64(),
                    policy: policy.into(),
                    queue_len: out.queue_len,
                    canvases: out.canvases,
                });
                if let Some(t) = out.timer {
                    step.timers.push(t);
                }
            }
            Driver::Canvas { grouper, batching } => {
                for item in grouper.push(a.patch.clone(), a.frame_key, a.frame_patch_count, spec)? {
                    match batching {
                        CanvasBatching::Sequential => step.invocations.push(Invocation::from_canvases(BatchFire {
                            fire_time: now,
                            items: vec![item],
                            trigger: Trigger::Arrival,
                        })),
                        CanvasBatching::Aimd(b) => {
                            step.invocations.extend(b.on_item(item, now).map(Invocation::from_canvases));
                        }
                        CanvasBatching::Timeout(b) => {
                            let (fire, timer) = b.on_item(item, now);
                            step.invocations.extend(fire.map(Invocation::from_canvases));
                            step.timers.extend(timer);
                        }
                    }
                }
            }
            Driver::Patch { min_scale } => {
                let scale = (a.patch.rect.area() as f64 / spec.area() as f64).max(*min_scale);
                step.invocations.push(Invocation {
                    fire_time: now,
                    trigger: Trigger::Arrival,
                    patch_ids: vec![a.patch.patch_id],
                    canvases: 1,
                    work_scale: scale,
                    efficiencies: Vec::new(),
                    estimated_slack: None,
                    min_deadline: Some(a.patch.deadline),
                });
            }
            Driver::Frame => {
                step.invocations.push(Invocation {
                    fire_time: now,
                    trigger: Trigger::Arrival,
                    patch_ids: vec![a.patch.patch_id],
                    canvases: 1,
                    work_scale: a.patch.rect.area() as f64 / spec.area() as f64,
                    efficiencies: Vec::new(),
                    estimated_slack: None,
                    min_deadline: Some(a.patch.deadline),
                });
            }
        }
        for t in &step.timers {
            step.log.push(LogRecord::TimerSet {
                t_ms: now.as_millis_f64(),
                policy: policy.into(),
                fire_ms: t.at.as_millis_f64(),
                epoch: t.epoch,
            });
        }
        Ok(step)
    }

    fn on_timer(&mut self, timer: Timer, now: Micros) -> Result<Step> {
        let mut step = Step::default();
        match self {
            Driver::Slo(s) => step.invocations.extend(s.on_timer(timer, now)?.map(Invocation::from_slo)),
            Driver::Canvas { batching: CanvasBatching::Timeout(b), .. } => {
                step.invocations.extend(b.on_timer(timer, now).map(Invocation::from_canvases))
            }
            _ => {}
        }
        Ok(step)
    }

    fn on_completion(&mut self, latency: Micros) {
        if let Driver::Canvas { batching: CanvasBatching::Aimd(b), .. } = self {
            b.observe(latency);
        }
    }

    fn on_stream_end(&mut self, now: Micros) -> Step {
        let mut step = Step::default();
        if let Driver::Canvas { batching: CanvasBatching::Aimd(b), .. } = self {
            step.invocations.extend(b.drain(now).map(Invocation::from_canvases));
        }
        step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrival(usize),
    Timer(Timer),
    Completion { invocation: usize },
}

#[derive(Debug, PartialEq, Eq)]
struct Scheduled {
    at: Micros,
    seq: u64,
    kind: EventKind,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, at: Micros, kind: EventKind) {
        self.heap.push(Scheduled { at, seq: self.seq, kind });
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop()
    }
}

/// Static per-patch data prepared before the loop.
struct PatchSlot {
    meta: PatchMeta,
    scene: usize,
    frame: u64,
    frame_key: u64,
    frame_patch_count: usize,
    arrival: Option<Micros>,
    rejected: Option<String>,
}

struct PatchOutcome {
    invocation: usize,
    infeasible: bool,
}

struct Backend {
    free_at: Vec<Micros>,
}

impl Backend {
    /// Earliest-free instance, lowest index on ties.
    fn dispatch(&mut self, fire: Micros, duration: Micros) -> (usize, Micros, Micros) {
        let (idx, &free) =
            self.free_at.iter().enumerate().min_by_key(|(i, t)| (**t, *i)).expect("at least one instance");
        let start = fire.max(free);
        let done = start + duration;
        self.free_at[idx] = done;
        (idx, start, done)
    }
}

struct Executed {
    inv: Invocation,
    instance: usize,
    dispatch: Micros,
    completion: Micros,
    t_f: Micros,
    cost: Money,
}

pub fn run(scenes: &[TraceScene], cfg: &RunConfig, seed: u64) -> Result<RunOutput> {
    let cap = cfg.validate()?;
    for s in scenes {
        s.validate()?;
    }
    let kind = cfg.policy.kind;
    let policy = kind.name();
    let billing = Billing { granularity: cfg.billing_granularity, ..Billing::new(cfg.function, cfg.prices) };

    let (mut slots, frames) = prepare_patches(scenes, cfg)?;
    schedule_transmissions(&mut slots, scenes.len(), cfg);

    let mut driver = match kind {
        PolicyKind::SloAware => Driver::Slo(Box::new(SloScheduler::new(cfg.canvas, cfg.profile.clone(), cap)?)),
        PolicyKind::SequentialCanvas => {
            Driver::Canvas { grouper: FrameGrouper::default(), batching: CanvasBatching::Sequential }
        }
        PolicyKind::Aimd => Driver::Canvas {
            grouper: FrameGrouper::default(),
            batching: CanvasBatching::Aimd(AimdBatcher::new(cfg.aimd_config(cap)?)?),
        },
        PolicyKind::Timeout => Driver::Canvas {
            grouper: FrameGrouper::default(),
            batching: CanvasBatching::Timeout(TimeoutBatcher::new(cfg.timeout_config(cap)?)?),
        },
        PolicyKind::SequentialPatch => Driver::Patch { min_scale: cfg.policy.patch_min_scale },
        PolicyKind::SequentialFrame => Driver::Frame,
    };

    let mut queue = EventQueue::default();
    let mut log = Vec::new();
    let mut arrivals_left = 0usize;
    let mut order: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].arrival.is_some()).collect();
    order.sort_by_key(|&i| (slots[i].arrival, i));
    for i in order {
        queue.push(slots[i].arrival.expect("filtered"), EventKind::Arrival(i));
        arrivals_left += 1;
    }
    for slot in slots.iter().filter(|s| s.rejected.is_some()) {
        log.push(LogRecord::Reject {
            t_ms: slot.meta.generation_time.as_millis_f64(),
            policy: policy.into(),
            patch: slot.meta.patch_id.0,
            reason: slot.rejected.clone().unwrap_or_default(),
        });
    }

    let index_of: BTreeMap<PatchId, usize> = slots.iter().enumerate().map(|(i, s)| (s.meta.patch_id, i)).collect();
    let mut exec_rng = rng::stream(seed, "exec");
    let mut backend = Backend { free_at: vec![Micros(i64::MIN); cfg.instance_count as usize] };
    let mut executed: Vec<Executed> = Vec::new();
    let mut outcomes: BTreeMap<usize, PatchOutcome> = BTreeMap::new();

    while let Some(ev) = queue.pop() {
        let now = ev.at;
        let step = match ev.kind {
            EventKind::Arrival(i) => {
                let slot = &slots[i];
                log.push(LogRecord::Arrival {
                    t_ms: now.as_millis_f64(),
                    policy: policy.into(),
                    patch: slot.meta.patch_id.0,
                    frame: slot.frame,
                    w: slot.meta.rect.w,
                    h: slot.meta.rect.h,
                    deadline_ms: slot.meta.deadline.as_millis_f64(),
                });
                let arrived =
                    Arrived { patch: &slot.meta, frame_key: slot.frame_key, frame_patch_count: slot.frame_patch_count };
                let mut step = driver.on_arrival(arrived, now, &cfg.canvas, policy)?;
                arrivals_left -= 1;
                if arrivals_left == 0 {
                    let tail = driver.on_stream_end(now);
                    step.invocations.extend(tail.invocations);
                }
                step
            }
            EventKind::Timer(t) => driver.on_timer(t, now)?,
            EventKind::Completion { invocation } => {
                let e = &executed[invocation];
                log.push(LogRecord::Complete {
                    t_ms: now.as_millis_f64(),
                    policy: policy.into(),
                    invocation: invocation as u64,
                    instance: e.instance,
                    dispatch_ms: e.dispatch.as_millis_f64(),
                    t_f_ms: e.t_f.as_millis_f64(),
                });
                driver.on_completion(e.completion - e.inv.fire_time);
                Step::default()
            }
        };
        log.extend(step.log);
        for t in step.timers {
            queue.push(t.at, EventKind::Timer(t));
        }
        for inv in step.invocations {
            let id = executed.len();
            let t_f = execution_time(cfg, &inv, &mut exec_rng)?;
            let (instance, dispatch, completion) = backend.dispatch(inv.fire_time, t_f);
            let cost = billing.bill(t_f)?;
            log.push(LogRecord::Invoke {
                t_ms: inv.fire_time.as_millis_f64(),
                policy: policy.into(),
                invocation: id as u64,
                trigger: inv.trigger.as_str().into(),
                k: inv.canvases,
                patches: inv.patch_ids.iter().map(|p| p.0).collect(),
                estimated_slack_ms: inv.estimated_slack.map(Micros::as_millis_f64),
                min_deadline_ms: inv.min_deadline.map(Micros::as_millis_f64),
                efficiencies: inv.efficiencies.clone(),
            });
            for pid in &inv.patch_ids {
                let i = index_of[pid];
                outcomes.insert(i, PatchOutcome { invocation: id, infeasible: inv.trigger == Trigger::InfeasibleSolo });
            }
            queue.push(completion, EventKind::Completion { invocation: id });
            executed.push(Executed { inv, instance, dispatch, completion, t_f, cost });
        }
    }

    let metrics = collect_metrics(policy, frames, scenes, &slots, &outcomes, &executed, cfg.slo);
    if !cfg.record_events {
        log.clear();
    }
    Ok(RunOutput { metrics, events: log })
}

fn prepare_patches(scenes: &[TraceScene], cfg: &RunConfig) -> Result<(Vec<PatchSlot>, usize)> {
    let kind = cfg.policy.kind;
    let mut ids = PatchIdSource::new();
    let mut slots = Vec::new();
    let mut frame_key = 0u64;
    let mut frames = 0;
    for (si, scene) in scenes.iter().enumerate() {
        for f in &scene.frames {
            frames += 1;
            let spec = FrameSpec {
                frame_id: f.frame_id,
                width: scene.width,
                height: scene.height,
                generation_time: f.generation_time,
                slo: cfg.slo,
            };
            let patches = if kind == PolicyKind::SequentialFrame {
                vec![PatchMeta::new(
                    ids.next_id(),
                    f.frame_id,
                    Rect::new(0, 0, scene.width, scene.height),
                    f.generation_time,
                    cfg.slo,
                    cfg.link.bytes_per_pixel,
                )]
            } else {
                partition(&spec, &cfg.partition, &f.rois, cfg.link.bytes_per_pixel, &mut ids)?
            };
            let fits = |p: &PatchMeta| p.rect.w <= cfg.canvas.width && p.rect.h <= cfg.canvas.height;
            let accepted = patches.iter().filter(|p| !kind.uses_canvases() || fits(p)).count();
            for meta in patches {
                let rejected = (kind.uses_canvases() && !fits(&meta)).then(|| {
                    format!(
                        "patch {}x{} exceeds canvas {}x{}",
                        meta.rect.w, meta.rect.h, cfg.canvas.width, cfg.canvas.height
                    )
                });
                slots.push(PatchSlot {
                    meta,
                    scene: si,
                    frame: f.frame_id,
                    frame_key,
                    frame_patch_count: accepted,
                    arrival: None,
                    rejected,
                });
            }
            frame_key += 1;
        }
    }
    Ok((slots, frames))
}

fn schedule_transmissions(slots: &mut [PatchSlot], n_scenes: usize, cfg: &RunConfig) {
    let links: Vec<Vec<usize>> = match cfg.link_mode {
        LinkMode::Shared => vec![(0..slots.len()).collect()],
        LinkMode::PerScene => {
            (0..n_scenes).map(|s| (0..slots.len()).filter(|&i| slots[i].scene == s).collect()).collect()
        }
    };
    for mut members in links {
        members.retain(|&i| slots[i].rejected.is_none());
        members.sort_by_key(|&i| (slots[i].meta.generation_time, i));
        let metas: Vec<PatchMeta> = members.iter().map(|&i| slots[i].meta.clone()).collect();
        for (&i, t) in members.iter().zip(transmission_schedule(&metas, &cfg.link)) {
            slots[i].arrival = Some(t);
        }
    }
}

fn execution_time(cfg: &RunConfig, inv: &Invocation, r: &mut ChaCha8Rng) -> Result<Micros> {
    let (mu, sigma) = cfg.profile.moments(inv.canvases.max(1))?;
    let ms = match cfg.execution {
        ExecutionModel::Sampled => rng::truncated_normal(r, mu, sigma),
        ExecutionModel::Mean => mu,
    };
    Ok(Micros::from_millis_f64(ms * inv.work_scale) + cfg.cold_start)
}

fn collect_metrics(
    policy: &str,
    frames: usize,
    scenes: &[TraceScene],
    slots: &[PatchSlot],
    outcomes: &BTreeMap<usize, PatchOutcome>,
    executed: &[Executed],
    slo: Micros,
) -> RunMetrics {
    let ms = Micros::as_millis_f64;
    let patches: Vec<PatchRecord> = slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let out = outcomes.get(&i);
            let exec = out.map(|o| &executed[o.invocation]);
            let latency = exec.map(|e| e.completion - s.meta.generation_time);
            PatchRecord {
                patch_id: s.meta.patch_id.0,
                scene: scenes[s.scene].scene_id.clone(),
                frame: s.frame,
                w: s.meta.rect.w,
                h: s.meta.rect.h,
                size_bytes: s.meta.size_bytes,
                generation_ms: ms(s.meta.generation_time),
                arrival_ms: s.arrival.map(ms),
                deadline_ms: ms(s.meta.deadline),
                invocation: out.map(|o| o.invocation as u64),
                fire_ms: exec.map(|e| ms(e.inv.fire_time)),
                dispatch_ms: exec.map(|e| ms(e.dispatch)),
                completion_ms: exec.map(|e| ms(e.completion)),
                latency_ms: latency.map(ms),
                violated: latency.is_some_and(|l| l > slo) || out.is_some_and(|o| o.infeasible),
                infeasible_at_arrival: out.is_some_and(|o| o.infeasible),
                rejected: s.rejected.is_some(),
            }
        })
        .collect();
    let bandwidth: u64 = slots.iter().filter(|s| s.arrival.is_some()).map(|s| s.meta.size_bytes).sum();
    let invocations: Vec<InvocationRecord> = executed
        .iter()
        .enumerate()
        .map(|(id, e)| InvocationRecord {
            invocation: id as u64,
            policy: policy.into(),
            trigger: e.inv.trigger.as_str().into(),
            fire_ms: ms(e.inv.fire_time),
            dispatch_ms: ms(e.dispatch),
            completion_ms: ms(e.completion),
            wait_ms: ms(e.dispatch - e.inv.fire_time),
            instance: e.instance,
            k: e.inv.canvases,
            patches: e.inv.patch_ids.len(),
            t_f_ms: ms(e.t_f),
            cost_usd: e.cost,
            estimated_slack_ms: e.inv.estimated_slack.map(ms),
            mean_efficiency: (!e.inv.efficiencies.is_empty()).then(|| crate::sim::metrics::mean(&e.inv.efficiencies)),
            efficiencies: e.inv.efficiencies.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" "),
        })
        .collect();
    let efficiencies: Vec<f64> = executed.iter().flat_map(|e| e.inv.efficiencies.iter().copied()).collect();
    RunMetrics::from_records(policy, frames, bandwidth, patches, invocations, efficiencies)
}
