//! Online SLO-aware batching invoker.
//!
//! Patches are queued and repacked onto canvases on every arrival. The batch
//! is invoked at `t_remain = earliest_deadline - slack(canvases)`, the latest
//! instant at which the conservative execution estimate still meets every
//! queued deadline. An arrival that would make the queue infeasible, or that
//! would need more canvases than GPU memory allows, flushes the previous
//! stitch immediately and starts a new queue with the arriving patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::latency::LatencyProfile;
use crate::partition::{PatchId, PatchMeta};
use crate::stitch::{stitch_all, CanvasSpec, StitchResult};
use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// The queue's remaining time was reached.
    DeadlineTimer,
    /// Adding the arriving patch would have missed the earliest deadline.
    InfeasibleArrival,
    /// Adding the arriving patch would have exceeded the canvas cap.
    MemoryCap,
    /// A patch that cannot meet its deadline even alone, invoked by itself.
    InfeasibleSolo,
    /// Baselines: one invocation per item.
    Arrival,
    /// Baselines: batch reached its size limit.
    BatchFull,
    /// Baselines: the oldest queued item waited for the timeout.
    Timeout,
    /// Baselines: leftover items flushed at the end of the stream.
    Drain,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::DeadlineTimer => "deadline_timer",
            Trigger::InfeasibleArrival => "infeasible_arrival",
            Trigger::MemoryCap => "memory_cap",
            Trigger::InfeasibleSolo => "infeasible_solo",
            Trigger::Arrival => "arrival",
            Trigger::BatchFull => "batch_full",
            Trigger::Timeout => "timeout",
            Trigger::Drain => "drain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvokeEvent {
    pub fire_time: Micros,
    pub stitch: StitchResult,
    pub patch_ids: Vec<PatchId>,
    pub batch_size: u32,
    pub estimated_slack: Micros,
    /// Earliest deadline among the batch's patches.
    pub min_deadline: Micros,
    pub trigger: Trigger,
}

/// A pending invocation instant. `epoch` identifies which arrival set it;
/// a timer whose epoch is no longer current is stale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timer {
    pub at: Micros,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalOutcome {
    pub invokes: Vec<InvokeEvent>,
    pub queue_len: usize,
    pub canvases: usize,
    pub timer: Option<Timer>,
}

#[derive(Debug, Clone)]
pub struct SloScheduler {
    spec: CanvasSpec,
    profile: LatencyProfile,
    max_canvases: u32,
    queue: Vec<PatchMeta>,
    current: StitchResult,
    previous: StitchResult,
    t_ddl: Option<Micros>,
    t_remain: Option<Micros>,
    pending: Option<Timer>,
    epoch: u64,
}

impl SloScheduler {
    pub fn new(spec: CanvasSpec, profile: LatencyProfile, max_canvases: u32) -> Result<Self> {
        spec.validate()?;
        if max_canvases < 1 {
            return Err(Error::InvalidConfig("max canvases per batch must be at least 1".into()));
        }
        Ok(SloScheduler {
            spec,
            profile,
            max_canvases,
            queue: Vec::new(),
            current: StitchResult::empty(spec),
            previous: StitchResult::empty(spec),
            t_ddl: None,
            t_remain: None,
            pending: None,
            epoch: 0,
        })
    }

    pub fn queue(&self) -> &[PatchMeta] {
        &self.queue
    }

    pub fn current_stitch(&self) -> &StitchResult {
        &self.current
    }

    pub fn previous_stitch(&self) -> &StitchResult {
        &self.previous
    }

    pub fn earliest_deadline(&self) -> Option<Micros> {
        self.t_ddl
    }

    pub fn remaining_time(&self) -> Option<Micros> {
        self.t_remain
    }

    pub fn pending_timer(&self) -> Option<Timer> {
        self.pending
    }

    pub fn max_canvases(&self) -> u32 {
        self.max_canvases
    }

    pub fn profile(&self) -> &LatencyProfile {
        &self.profile
    }

    fn slack_for(&self, stitch: &StitchResult) -> Result<Micros> {
        self.profile.slack(stitch.canvas_count().max(1) as u32)
    }

    pub fn on_patch_arrival(&mut self, patch: PatchMeta, now: Micros) -> Result<ArrivalOutcome> {
        if !Rect::new(0, 0, self.spec.width, self.spec.height).fits(patch.width(), patch.height())
            || patch.rect.is_degenerate()
        {
            return Err(Error::PatchExceedsCanvas {
                id: patch.patch_id,
                w: patch.width(),
                h: patch.height(),
                canvas_w: self.spec.width,
                canvas_h: self.spec.height,
            });
        }
        let mut invokes = Vec::new();

        self.previous = std::mem::replace(&mut self.current, StitchResult::empty(self.spec));
        self.queue.push(patch);
        let (stitch, t_ddl, t_remain) = self.plan(&self.queue)?;
        let over_cap = stitch.canvas_count() > self.max_canvases as usize;
        let infeasible = t_remain < now;

        let (stitch, t_ddl, t_remain) = if over_cap || infeasible {
            let patch = self.queue.pop().expect("queue holds the arriving patch");
            if !self.previous.is_empty() {
                let trigger = if over_cap { Trigger::MemoryCap } else { Trigger::InfeasibleArrival };
                let old = std::mem::replace(&mut self.previous, StitchResult::empty(self.spec));
                let old_queue = std::mem::take(&mut self.queue);
                invokes.push(self.make_event(now, old, &old_queue, trigger)?);
            }
            self.queue = vec![patch];
            let (stitch, t_ddl, t_remain) = self.plan(&self.queue)?;
            if t_remain < now {
                let solo = std::mem::take(&mut self.queue);
                invokes.push(self.make_event(now, stitch, &solo, Trigger::InfeasibleSolo)?);
                self.clear();
                return Ok(ArrivalOutcome { invokes, queue_len: 0, canvases: 0, timer: None });
            }
            (stitch, t_ddl, t_remain)
        } else {
            (stitch, t_ddl, t_remain)
        };
        self.current = stitch;
        self.t_ddl = Some(t_ddl);
        self.t_remain = Some(t_remain);

        self.epoch += 1;
        let timer = Timer { at: t_remain, epoch: self.epoch };
        self.pending = Some(timer);
        Ok(ArrivalOutcome {
            invokes,
            queue_len: self.queue.len(),
            canvases: self.current.canvas_count(),
            timer: Some(timer),
        })
    }

    /// Fires the current batch if `timer` is still the live one and is due.
    /// Stale or early timers are no-ops.
    pub fn on_timer(&mut self, timer: Timer, now: Micros) -> Result<Option<InvokeEvent>> {
        if self.pending != Some(timer) || self.queue.is_empty() || now < timer.at {
            return Ok(None);
        }
        let stitch = std::mem::replace(&mut self.current, StitchResult::empty(self.spec));
        let queue = std::mem::take(&mut self.queue);
        let ev = self.make_event(now, stitch, &queue, Trigger::DeadlineTimer)?;
        self.clear();
        Ok(Some(ev))
    }

    /// Stitch, earliest deadline and remaining time for a candidate queue.
    fn plan(&self, queue: &[PatchMeta]) -> Result<(StitchResult, Micros, Micros)> {
        let stitch = stitch_all(queue, &self.spec)?;
        let t_ddl = queue.iter().map(|p| p.deadline).min().expect("non-empty queue");
        let slack = self.slack_for(&stitch)?;
        Ok((stitch, t_ddl, t_ddl - slack))
    }

    fn make_event(
        &self,
        now: Micros,
        stitch: StitchResult,
        queue: &[PatchMeta],
        trigger: Trigger,
    ) -> Result<InvokeEvent> {
        let estimated_slack = self.slack_for(&stitch)?;
        Ok(InvokeEvent {
            fire_time: now,
            batch_size: stitch.canvas_count() as u32,
            patch_ids: queue.iter().map(|p| p.patch_id).collect(),
            min_deadline: queue.iter().map(|p| p.deadline).min().unwrap_or(Micros::MAX),
            estimated_slack,
            stitch,
            trigger,
        })
    }

    fn clear(&mut self) {
        self.queue.clear();
        self.current = StitchResult::empty(self.spec);
        self.previous = StitchResult::empty(self.spec);
        self.t_ddl = None;
        self.t_remain = None;
        self.pending = None;
    }
}
