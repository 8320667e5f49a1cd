//! Reference batching policies.
//!
//! * sequential: every item is invoked alone on arrival;
//! * AIMD: fire when the queue reaches the current batch size, grow the size
//!   additively while observed latency stays within target and shrink it
//!   multiplicatively otherwise;
//! * batch + timeout: fire at a fixed batch size or when the oldest queued
//!   item has waited for the timeout, whichever comes first.
//!
//! The batchers are state machines over opaque items so the simulator can
//! feed them canvases, patches or whole frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::{Timer, Trigger};
use crate::time::Micros;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchFire<T> {
    pub fire_time: Micros,
    pub items: Vec<T>,
    pub trigger: Trigger,
}

impl<T> BatchFire<T> {
    pub fn batch_size(&self) -> usize {
        self.items.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AimdConfig {
    pub initial_batch: u32,
    pub additive_step: u32,
    pub multiplicative_factor: f64,
    pub latency_target: Micros,
    /// Upper bound on the batch size, normally the GPU-memory canvas cap.
    pub max_batch: u32,
}

impl AimdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_batch < 1 || self.max_batch < 1 {
            return Err(Error::InvalidConfig("aimd batch sizes must be at least 1".into()));
        }
        if !(self.multiplicative_factor > 0.0 && self.multiplicative_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "aimd multiplicative factor must be in (0,1), got {}",
                self.multiplicative_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutBatchConfig {
    pub max_batch: u32,
    pub timeout: Micros,
}

impl TimeoutBatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_batch < 1 || self.timeout <= Micros::ZERO {
            return Err(Error::InvalidConfig("timeout batching needs max_batch >= 1 and timeout > 0".into()));
        }
        Ok(())
    }
}

/// One invocation per item, fired on arrival.
pub fn sequential_schedule<T>(items: impl IntoIterator<Item = (T, Micros)>) -> Vec<BatchFire<T>> {
    items
        .into_iter()
        .map(|(item, at)| BatchFire { fire_time: at, items: vec![item], trigger: Trigger::Arrival })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AimdBatcher<T> {
    cfg: AimdConfig,
    batch: u32,
    queue: Vec<T>,
}

impl<T> AimdBatcher<T> {
    pub fn new(cfg: AimdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AimdBatcher { batch: cfg.initial_batch.min(cfg.max_batch), cfg, queue: Vec::new() })
    }

    pub fn batch_size(&self) -> u32 {
        self.batch
    }

    pub fn on_item(&mut self, item: T, now: Micros) -> Option<BatchFire<T>> {
        self.queue.push(item);
        if self.queue.len() >= self.batch as usize {
            Some(self.fire(now, Trigger::BatchFull))
        } else {
            None
        }
    }

    /// Feeds back the latency of a completed batch.
    pub fn observe(&mut self, latency: Micros) {
        self.batch = if latency <= self.cfg.latency_target {
            self.batch.saturating_add(self.cfg.additive_step).min(self.cfg.max_batch)
        } else {
            ((self.batch as f64 * self.cfg.multiplicative_factor).floor() as u32).max(1)
        };
    }

    pub fn drain(&mut self, now: Micros) -> Option<BatchFire<T>> {
        (!self.queue.is_empty()).then(|| self.fire(now, Trigger::Drain))
    }

    fn fire(&mut self, now: Micros, trigger: Trigger) -> BatchFire<T> {
        BatchFire { fire_time: now, items: std::mem::take(&mut self.queue), trigger }
    }
}

/// Runs AIMD over a fixed arrival stream. `latency_of` supplies the observed
/// latency of each batch, fed back before the next item arrives.
pub fn aimd_schedule<T>(
    items: impl IntoIterator<Item = (T, Micros)>,
    cfg: AimdConfig,
    mut latency_of: impl FnMut(&BatchFire<T>) -> Micros,
) -> Result<Vec<BatchFire<T>>> {
    let mut b = AimdBatcher::new(cfg)?;
    let mut out = Vec::new();
    let mut last = None;
    for (item, at) in items {
        last = Some(at);
        if let Some(fire) = b.on_item(item, at) {
            b.observe(latency_of(&fire));
            out.push(fire);
        }
    }
    if let Some(fire) = last.and_then(|t| b.drain(t)) {
        out.push(fire);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TimeoutBatcher<T> {
    cfg: TimeoutBatchConfig,
    queue: Vec<T>,
    pending: Option<Timer>,
    epoch: u64,
}

impl<T> TimeoutBatcher<T> {
    pub fn new(cfg: TimeoutBatchConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(TimeoutBatcher { cfg, queue: Vec::new(), pending: None, epoch: 0 })
    }

    pub fn pending_timer(&self) -> Option<Timer> {
        self.pending
    }

    /// Queues an item. Returns a batch when the size limit is reached and
    /// otherwise, for the first item of a batch, the timer to arm.
    pub fn on_item(&mut self, item: T, now: Micros) -> (Option<BatchFire<T>>, Option<Timer>) {
        self.queue.push(item);
        if self.queue.len() >= self.cfg.max_batch as usize {
            return (Some(self.fire(now, Trigger::BatchFull)), None);
        }
        if self.queue.len() == 1 {
            self.epoch += 1;
            let t = Timer { at: now + self.cfg.timeout, epoch: self.epoch };
            self.pending = Some(t);
            return (None, Some(t));
        }
        (None, None)
    }

    pub fn on_timer(&mut self, timer: Timer, now: Micros) -> Option<BatchFire<T>> {
        if self.pending != Some(timer) || self.queue.is_empty() {
            return None;
        }
        Some(self.fire(now, Trigger::Timeout))
    }

    fn fire(&mut self, now: Micros, trigger: Trigger) -> BatchFire<T> {
        self.pending = None;
        BatchFire { fire_time: now, items: std::mem::take(&mut self.queue), trigger }
    }
}

/// Runs batch+timeout over a fixed arrival stream. A timer due at the same
/// instant as an arrival fires first.
pub fn timeout_schedule<T>(
    items: impl IntoIterator<Item = (T, Micros)>,
    cfg: TimeoutBatchConfig,
) -> Result<Vec<BatchFire<T>>> {
    let mut b = TimeoutBatcher::new(cfg)?;
    let mut out = Vec::new();
    for (item, at) in items {
        if let Some(t) = b.pending_timer().filter(|t| t.at <= at) {
            out.extend(b.on_timer(t, t.at));
        }
        let (fire, _) = b.on_item(item, at);
        out.extend(fire);
    }
    if let Some(t) = b.pending_timer() {
        out.extend(b.on_timer(t, t.at));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: i64) -> Micros {
        Micros::from_millis(v)
    }

    fn stream(times: &[i64]) -> Vec<(usize, Micros)> {
        times.iter().enumerate().map(|(i, &t)| (i, ms(t))).collect()
    }

    fn aimd(init: u32, factor: f64, target: Micros) -> AimdConfig {
        AimdConfig {
            initial_batch: init,
            additive_step: 1,
            multiplicative_factor: factor,
            latency_target: target,
            max_batch: 64,
        }
    }

    #[test]
    fn sequential_examples() {
        let ev = sequential_schedule(stream(&[0, 10, 20]));
        assert_eq!(ev.len(), 3);
        assert_eq!(ev.iter().map(|e| e.fire_time).collect::<Vec<_>>(), vec![ms(0), ms(10), ms(20)]);
        assert!(ev.iter().all(|e| e.batch_size() == 1));
        assert!(sequential_schedule(stream(&[])).is_empty());
        assert_eq!(sequential_schedule(stream(&[5])).len(), 1);
    }

    #[test]
    fn aimd_grows_under_infinite_target() {
        let times: Vec<i64> = (0..15).collect();
        let ev = aimd_schedule(stream(&times), aimd(1, 0.5, Micros::MAX), |_| ms(10)).unwrap();
        let sizes: Vec<usize> = ev.iter().map(BatchFire::batch_size).collect();
        assert_eq!(sizes, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn aimd_shrinks_under_zero_target() {
        let times: Vec<i64> = (0..9).collect();
        let ev = aimd_schedule(stream(&times), aimd(4, 0.5, Micros::ZERO), |_| ms(10)).unwrap();
        let sizes: Vec<usize> = ev.iter().map(BatchFire::batch_size).collect();
        assert_eq!(sizes, vec![4, 2, 1, 1, 1]);
    }

    #[test]
    fn aimd_empty_and_drain() {
        assert!(aimd_schedule(stream(&[]), aimd(1, 0.5, Micros::MAX), |_| ms(1)).unwrap().is_empty());
        let ev = aimd_schedule(stream(&[0, 1, 2]), aimd(5, 0.5, Micros::MAX), |_| ms(1)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].trigger, Trigger::Drain);
        assert_eq!(ev[0].fire_time, ms(2));
    }

    #[test]
    fn aimd_rejects_bad_factor() {
        assert!(AimdBatcher::<u8>::new(aimd(1, 1.0, Micros::MAX)).is_err());
        assert!(AimdBatcher::<u8>::new(aimd(0, 0.5, Micros::MAX)).is_err());
    }

    #[test]
    fn timeout_examples() {
        let cfg = |max_batch, t| TimeoutBatchConfig { max_batch, timeout: ms(t) };
        let ev = timeout_schedule(stream(&[0, 10]), cfg(2, 100)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].fire_time, ev[0].batch_size(), ev[0].trigger), (ms(10), 2, Trigger::BatchFull));

        let ev = timeout_schedule(stream(&[0]), cfg(4, 100)).unwrap();
        assert_eq!((ev[0].fire_time, ev[0].batch_size(), ev[0].trigger), (ms(100), 1, Trigger::Timeout));

        let ev = timeout_schedule(stream(&[0, 60]), cfg(2, 50)).unwrap();
        let got: Vec<_> = ev.iter().map(|e| (e.fire_time, e.batch_size())).collect();
        assert_eq!(got, vec![(ms(50), 1), (ms(110), 1)]);
    }

    #[test]
    fn timeout_timer_is_superseded_after_size_fire() {
        let mut b = TimeoutBatcher::new(TimeoutBatchConfig { max_batch: 2, timeout: ms(100) }).unwrap();
        let (_, t) = b.on_item(1, ms(0));
        let t = t.unwrap();
        let (fire, _) = b.on_item(2, ms(5));
        assert!(fire.is_some());
        b.on_item(3, ms(20));
        assert!(b.on_timer(t, ms(100)).is_none());
    }

    proptest! {
        #[test]
        fn every_item_in_exactly_one_batch(
            gaps in proptest::collection::vec(0i64..200, 0..60),
            max_batch in 1u32..6,
            timeout in 1i64..150,
            init in 1u32..6,
            lat in 0i64..100,
        ) {
            let mut t = 0;
            let times: Vec<i64> = gaps.iter().map(|g| { t += g; t }).collect();
            let n = times.len();
            let check = |fires: &[BatchFire<usize>]| {
                let mut seen: Vec<usize> = fires.iter().flat_map(|f| f.items.iter().copied()).collect();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert!(fires.windows(2).all(|w| w[0].fire_time <= w[1].fire_time));
            };
            check(&timeout_schedule(stream(&times), TimeoutBatchConfig { max_batch, timeout: ms(timeout) }).unwrap());
            let cfg = AimdConfig { max_batch: 8, ..aimd(init, 0.5, ms(50)) };
            let fires = aimd_schedule(stream(&times), cfg, |_| ms(lat)).unwrap();
            check(&fires);
            prop_assert!(fires.iter().all(|f| f.batch_size() >= 1 && f.batch_size() <= 8));
            check(&sequential_schedule(stream(&times)));
        }

        #[test]
        fn aimd_size_stays_within_bounds(obs in proptest::collection::vec(0i64..100, 0..200), cap in 1u32..10) {
            let mut b = AimdBatcher::<u8>::new(AimdConfig { max_batch: cap, ..aimd(1, 0.7, ms(50)) }).unwrap();
            for o in obs {
                b.observe(ms(o));
                prop_assert!(b.batch_size() >= 1 && b.batch_size() <= cap);
            }
        }
    }
}
