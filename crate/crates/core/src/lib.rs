//! Patch-based batching for serverless video analytics.
//!
//! Frames are cut into patches around their regions of interest, patches are
//! stitched onto fixed-size canvases, and canvases are batched into
//! serverless invocations whose firing time is driven by the earliest patch
//! deadline and a conservative latency estimate. A deterministic
//! discrete-event simulator ties the pieces together and compares the
//! deadline-driven policy with sequential, AIMD and batch+timeout baselines.
//!
//! ```text
//!  RoIs ──▶ partition ──▶ link ──▶ scheduler ──▶ backend pool ──▶ metrics
//!                                    │   ▲
//!                              stitch│   │slack
//!                                    ▼   │
//!                                 canvases ── latency profile
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cost;
pub mod error;
pub mod geometry;
pub mod latency;
pub mod partition;
pub mod scheduler;
pub mod sim;
pub mod stitch;
pub mod time;

pub use error::{Error, Result};
pub use geometry::Rect;
pub use time::Micros;
