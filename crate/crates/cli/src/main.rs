use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchbatch::latency::LatencyLaw;
use patchbatch::sim::{PolicyKind, WorkloadGenConfig};
use patchbatch_cli::{config, CliError, ExperimentConfig, Overrides, ProfileGen};

#[derive(Parser)]
#[command(name = "patchbatch", version, about = "Deadline-aware patch batching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Top-level seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory or file; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scheduling policy; overrides the config file.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out: self.out.clone(), policy: self.policy }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write metric tables and the event log.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the SLO x bandwidth x policy grid from the config's [sweep] table.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic JSONL trace.
    GenTrace {
        /// Experiment config whose [workload] table and `scenes` key are used.
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "trace.jsonl")]
        out: PathBuf,
        #[arg(long)]
        frames: Option<u32>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        scenes: Option<u32>,
    },
    /// Profile a synthetic latency law and write the profile CSV.
    GenProfile {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "profile.csv")]
        out: PathBuf,
        #[arg(long, default_value = "1024x1024")]
        canvas: String,
        #[arg(long, default_value_t = 8)]
        max_k: u32,
        #[arg(long, default_value_t = 1000)]
        samples: u32,
        #[arg(long, default_value_t = LatencyLaw::default().mu_base_ms)]
        mu_base: f64,
        #[arg(long, default_value_t = LatencyLaw::default().mu_per_canvas_ms)]
        mu_per_canvas: f64,
        #[arg(long, default_value_t = LatencyLaw::default().sigma_base_ms)]
        sigma_base: f64,
        #[arg(long, default_value_t = LatencyLaw::default().sigma_per_canvas_ms)]
        sigma_per_canvas: f64,
    },
    /// Pack a list of patches and print the canvas layout.
    DumpPacking {
        #[arg(long, default_value = "1024x1024")]
        canvas: String,
        /// Comma-separated WxH list, e.g. 60x60,50x50.
        #[arg(long)]
        patches: String,
        /// Also write the listing to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = PolicyKind::ALL.iter().map(|p| p.name()).collect();
        format!("unknown policy {s:?}; expected one of {}", names.join(", "))
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, common } => {
            let cfg = ExperimentConfig::load(&config, &common.overrides())?;
            let metrics = patchbatch_cli::simulate(&cfg)?;
            println!("{}", patchbatch_cli::summary_line(&metrics.summary));
        }
        Command::Sweep { config, common } => {
            let cfg = ExperimentConfig::load(&config, &common.overrides())?;
            let rows = patchbatch_cli::sweep(&cfg, common.policy)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            println!(
                "cells={} failed={} out={}",
                rows.len(),
                failed,
                cfg.out_dir.join(patchbatch_cli::SWEEP_FILE).display()
            );
        }
        Command::GenTrace { config, seed, out, frames, fps, scenes } => {
            let (mut workload, mut n, mut top_seed) = (WorkloadGenConfig::default(), 1, 1);
            if let Some(path) = config {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
                let partial = config::WorkloadOnly::parse(&text)?;
                workload = partial.workload;
                n = partial.scenes;
                top_seed = partial.seed;
            }
            workload.n_frames = frames.unwrap_or(workload.n_frames);
            workload.fps = fps.unwrap_or(workload.fps);
            n = scenes.unwrap_or(n);
            top_seed = seed.unwrap_or(top_seed);
            workload.validate()?;
            let generated = config::generate_scenes(&workload, n, top_seed)?;
            patchbatch_cli::gen_trace(&generated, &out)?;
            let frames: usize = generated.iter().map(|s| s.frames.len()).sum();
            println!("scenes={} frames={} out={}", generated.len(), frames, out.display());
        }
        Command::GenProfile {
            seed,
            out,
            canvas,
            max_k,
            samples,
            mu_base,
            mu_per_canvas,
            sigma_base,
            sigma_per_canvas,
        } => {
            let (canvas_width, canvas_height) = patchbatch_cli::parse_dims(&canvas)?;
            let law = LatencyLaw {
                mu_base_ms: mu_base,
                mu_per_canvas_ms: mu_per_canvas,
                sigma_base_ms: sigma_base,
                sigma_per_canvas_ms: sigma_per_canvas,
            };
            let spec = ProfileGen { canvas_width, canvas_height, max_k, samples, law, seed };
            let profile = patchbatch_cli::gen_profile(&spec, &out)?;
            println!("entries={} out={}", profile.entries().len(), out.display());
        }
        Command::DumpPacking { canvas, patches, out } => {
            let text = patchbatch_cli::dump_packing(patchbatch_cli::parse_dims(&canvas)?, &patches)?;
            print!("{text}");
            if let Some(path) = out {
                patchbatch_cli::write_text(&path, &text)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
