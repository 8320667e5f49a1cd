//! Deterministic discrete-event simulation of the edge-to-cloud pipeline.

pub mod engine;
pub mod events;
pub mod link;
pub mod metrics;
pub mod rng;
pub mod trace;

pub use engine::{run, ExecutionModel, LinkMode, PolicyConfig, PolicyKind, RunConfig, RunOutput};
pub use events::LogRecord;
pub use link::{transmission_schedule, LinkModel};
pub use metrics::{InvocationRecord, PatchRecord, RunMetrics, Summary};
pub use trace::{generate_trace, TraceFrame, TraceScene, WorkloadGenConfig};
