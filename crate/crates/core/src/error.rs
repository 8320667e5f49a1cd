use thiserror::Error;

use crate::partition::PatchId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty rect set")]
    EmptyRectSet,
    #[error("zone grid finer than frame: {zones_x}x{zones_y} zones on {width}x{height} frame")]
    ZoneGridTooFine { zones_x: u32, zones_y: u32, width: u32, height: u32 },
    #[error("roi outside frame: roi #{index} {rect:?}")]
    RoiOutsideFrame { index: usize, rect: crate::Rect },
    #[error("patch exceeds canvas: patch {id} is {w}x{h}, canvas is {canvas_w}x{canvas_h}")]
    PatchExceedsCanvas { id: PatchId, w: u32, h: u32, canvas_w: u32, canvas_h: u32 },
    #[error("invalid batch size {0}")]
    InvalidBatchSize(u32),
    #[error("empty sample list for batch size {0}")]
    EmptySamples(u32),
    #[error("invalid latency profile: {0}")]
    InvalidProfile(String),
    #[error("negative execution time {0}s")]
    NegativeExecutionTime(f64),
    #[error("cannot fit one canvas: gpu memory {gpu_memory_gb} GB, model {model_size_gb} GB, canvas {vram_per_canvas_gb} GB")]
    CannotFitCanvas { gpu_memory_gb: f64, model_size_gb: f64, vram_per_canvas_gb: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("infeasible trace geometry: {0}")]
    InfeasibleGeometry(String),
    #[error("trace parse error at line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
