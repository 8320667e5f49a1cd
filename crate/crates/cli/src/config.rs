//! Experiment configuration file.
//!
//! A TOML document. Every key is optional except `profile`; relative paths
//! resolve against the directory holding the config file.
//!
//! ```toml
//! seed = 7
//! trace = "trace.jsonl"        # omit to generate from [workload]
//! scenes = 1                   # scenes generated when `trace` is absent
//! profile = "profile.csv"
//! out_dir = "out"
//! slo_ms = 1000
//! instance_count = 2
//! cold_start_ms = 0
//! billing_granularity_ms = 1   # omit for exact billing
//! execution = "sampled"        # or "mean"
//! link_mode = "shared"         # or "per-scene"
//!
//! [partition]  zones_x, zones_y
//! [canvas]     width, height, vram_per_canvas_gb
//! [function]   vcpus, memory_gb, gpu_memory_gb, model_size_gb, concurrency
//! [prices]     p_cpu, p_mem, p_gpu, p_req   (numbers or decimal strings)
//! [link]       bandwidth_mbps, bytes_per_pixel
//! [policy]     kind, patch_min_scale
//! [policy.aimd]     initial_batch, additive_step, multiplicative_factor,
//!                   latency_target_ms, max_batch
//! [policy.timeout]  max_batch, timeout_ms
//! [workload]   trace generator settings
//! [outputs]    patches, invocations, events   (booleans)
//! [sweep]      slo_ms = [...], bandwidth_mbps = [...], policies = [...]
//! ```

use std::path::{Path, PathBuf};

use patchbatch::cost::{max_canvases_per_batch, FunctionConfig, PricingTable};
use patchbatch::latency::LatencyProfile;
use patchbatch::partition::PartitionConfig;
use patchbatch::sim::engine::{AimdParams, TimeoutParams};
use patchbatch::sim::{
    generate_trace, rng, ExecutionModel, LinkMode, LinkModel, PolicyConfig, PolicyKind, RunConfig, TraceScene,
    WorkloadGenConfig,
};
use patchbatch::stitch::CanvasSpec;
use patchbatch::Micros;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Number {
    Float(f64),
    Text(String),
}

impl Number {
    fn value(&self, key: &str) -> Result<f64, CliError> {
        match self {
            Number::Float(v) => Ok(*v),
            Number::Text(s) => {
                s.trim().parse().map_err(|_| CliError::Config(format!("prices.{key}: not a number: {s:?}")))
            }
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PricesSection {
    p_cpu: Option<Number>,
    p_mem: Option<Number>,
    p_gpu: Option<Number>,
    p_req: Option<Number>,
}

impl PricesSection {
    fn resolve(&self) -> Result<PricingTable, CliError> {
        let d = PricingTable::default();
        let pick = |v: &Option<Number>, key, default| v.as_ref().map_or(Ok(default), |n| n.value(key));
        Ok(PricingTable {
            p_cpu: pick(&self.p_cpu, "p_cpu", d.p_cpu)?,
            p_mem: pick(&self.p_mem, "p_mem", d.p_mem)?,
            p_gpu: pick(&self.p_gpu, "p_gpu", d.p_gpu)?,
            p_req: pick(&self.p_req, "p_req", d.p_req)?,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PolicySection {
    kind: PolicyKind,
    patch_min_scale: f64,
    aimd: AimdParams,
    timeout: TimeoutParams,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyConfig::new(PolicyKind::SloAware);
        PolicySection { kind: p.kind, patch_min_scale: p.patch_min_scale, aimd: p.aimd, timeout: p.timeout }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub patches: bool,
    pub invocations: bool,
    pub events: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { patches: true, invocations: true, events: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub slo_ms: Vec<f64>,
    pub bandwidth_mbps: Vec<f64>,
    pub policies: Vec<PolicyKind>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentFile {
    seed: u64,
    trace: Option<PathBuf>,
    scenes: u32,
    profile: Option<PathBuf>,
    out_dir: PathBuf,
    slo_ms: f64,
    instance_count: u32,
    cold_start_ms: f64,
    billing_granularity_ms: Option<f64>,
    execution: ExecutionModel,
    link_mode: LinkMode,
    partition: PartitionConfig,
    canvas: CanvasSpec,
    function: FunctionConfig,
    prices: PricesSection,
    link: LinkModel,
    policy: PolicySection,
    workload: WorkloadGenConfig,
    outputs: Outputs,
    sweep: SweepSpec,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        ExperimentFile {
            seed: 1,
            trace: None,
            scenes: 1,
            profile: None,
            out_dir: PathBuf::from("out"),
            slo_ms: 1000.0,
            instance_count: 2,
            cold_start_ms: 0.0,
            billing_granularity_ms: None,
            execution: ExecutionModel::Sampled,
            link_mode: LinkMode::Shared,
            partition: PartitionConfig::default(),
            canvas: CanvasSpec::default(),
            function: FunctionConfig::default(),
            prices: PricesSection::default(),
            link: LinkModel::default(),
            policy: PolicySection::default(),
            workload: WorkloadGenConfig::default(),
            outputs: Outputs::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Trace source after path resolution.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Generated { workload: WorkloadGenConfig, scenes: u32 },
}

/// A parsed and resolved experiment config.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trace: TraceSource,
    pub profile_path: PathBuf,
    pub out_dir: PathBuf,
    pub outputs: Outputs,
    pub sweep: SweepSpec,
    pub run: RunConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub policy: Option<PolicyKind>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let file: ExperimentFile =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let profile_path =
            file.profile.as_deref().map(resolve).ok_or_else(|| CliError::Config("config: missing `profile`".into()))?;
        if !profile_path.is_file() {
            return Err(CliError::Config(format!("profile {}: file not found", profile_path.display())));
        }
        let profile = LatencyProfile::load(&profile_path).map_err(|e| match e {
            patchbatch::Error::Io(_) => CliError::Config(format!("profile: {e}")),
            _ => CliError::Config(format!("profile {}: {e}", profile_path.display())),
        })?;

        if !(file.slo_ms.is_finite()) || !(file.cold_start_ms >= 0.0) {
            return Err(CliError::Config("slo_ms and cold_start_ms must be finite, cold_start_ms >= 0".into()));
        }
        if file.billing_granularity_ms.is_some_and(|g| !(g > 0.0)) {
            return Err(CliError::Config("billing_granularity_ms must be positive".into()));
        }
        max_canvases_per_batch(&file.function, &file.canvas).map_err(|e| CliError::Config(e.to_string()))?;

        let mut policy = PolicyConfig::new(overrides.policy.unwrap_or(file.policy.kind));
        policy.patch_min_scale = file.policy.patch_min_scale;
        policy.aimd = file.policy.aimd;
        policy.timeout = file.policy.timeout;

        let run = RunConfig {
            partition: file.partition,
            canvas: file.canvas,
            function: file.function,
            prices: file.prices.resolve()?,
            billing_granularity: file.billing_granularity_ms.map(Micros::from_millis_f64_ceil),
            profile,
            link: file.link,
            link_mode: file.link_mode,
            policy,
            slo: Micros::from_millis_f64(file.slo_ms),
            instance_count: file.instance_count,
            cold_start: Micros::from_millis_f64(file.cold_start_ms),
            execution: file.execution,
            record_events: true,
        };

        let trace = match &file.trace {
            Some(p) => TraceSource::File(resolve(p)),
            None => {
                file.workload.validate().map_err(|e| CliError::Config(format!("workload: {e}")))?;
                TraceSource::Generated { workload: file.workload.clone(), scenes: file.scenes }
            }
        };

        Ok(ExperimentConfig {
            seed: overrides.seed.unwrap_or(file.seed),
            trace,
            profile_path,
            out_dir: overrides.out.clone().unwrap_or_else(|| resolve(&file.out_dir)),
            outputs: file.outputs,
            sweep: file.sweep,
            run,
        })
    }

    pub fn load_trace(&self) -> Result<Vec<TraceScene>, CliError> {
        match &self.trace {
            TraceSource::File(p) => {
                let f = std::fs::File::open(p).map_err(|e| CliError::Config(format!("trace {}: {e}", p.display())))?;
                patchbatch::sim::trace::read_trace(std::io::BufReader::new(f))
                    .map_err(|e| CliError::Config(format!("trace {}: {e}", p.display())))
            }
            TraceSource::Generated { workload, scenes } => generate_scenes(workload, *scenes, self.seed),
        }
    }
}

/// Generates `scenes` scenes. Scene `i` is seeded from the top-level seed
/// and the component name `scene_i`; any `seed` in the workload is ignored.
pub fn generate_scenes(workload: &WorkloadGenConfig, scenes: u32, seed: u64) -> Result<Vec<TraceScene>, CliError> {
    (0..scenes)
        .map(|i| {
            let cfg = WorkloadGenConfig {
                seed: rng::derive_seed(seed, &format!("scene_{i}")),
                scene_id: format!("scene_{i:02}"),
                ..workload.clone()
            };
            generate_trace(&cfg).map_err(CliError::from)
        })
        .collect()
}

/// The trace-generation subset of an experiment config. Other keys are
/// ignored so a full experiment config can be passed to `gen-trace`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct WorkloadOnly {
    pub seed: u64,
    pub scenes: u32,
    pub workload: WorkloadGenConfig,
}

impl Default for WorkloadOnly {
    fn default() -> Self {
        let d = ExperimentFile::default();
        WorkloadOnly { seed: d.seed, scenes: d.scenes, workload: d.workload }
    }
}

impl WorkloadOnly {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))
    }
}
