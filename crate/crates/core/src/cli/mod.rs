//! Command-line front end: `quantize`, `simulate`, `sweep`, `compare` and
//! `validate`.
//!
//! Every command is a plain function over a [`RunConfig`] so that it can be
//! driven from tests as well as from `main`.

mod commands;
mod report;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::accel::HardwareConfig;
use crate::error::{Error, Result};
use crate::netgraph::{
    build_efficientvit_at, synthesize_weights, NetworkGraph, NetworkManifest, Variant, WeightStore,
};
use crate::quant::{parse_ratio, M2qConfig, RatioScope};

pub use commands::{
    cmd_compare, cmd_quantize, cmd_simulate, cmd_sweep, cmd_validate, CompareReport, ErrorReport,
    QuantizeOutcome, SideSummary, SweepRow, ValidationReport,
};
pub use report::{summary_table, sweep_csv};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Where the network comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    /// JSON manifest, optionally with a weight blob next to it.
    Manifest(PathBuf),
    Builder {
        variant: Variant,
        resolution: usize,
    },
}

/// Axis of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    DwBits,
    Ratio,
    Hw(HwParam),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HwParam {
    R,
    M,
    T,
    N,
    STiles,
    L,
}

impl HwParam {
    pub fn apply(self, cfg: &HardwareConfig, v: usize) -> HardwareConfig {
        let mut c = *cfg;
        match self {
            HwParam::R => c.r = v,
            HwParam::M => c.m = v,
            HwParam::T => c.t = v,
            HwParam::N => c.n = v,
            HwParam::STiles => c.s_tiles = v,
            HwParam::L => c.l = v,
        }
        c
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dw-bits" | "dw_bits" => SweepAxis::DwBits,
            "ratio" => SweepAxis::Ratio,
            "R" => SweepAxis::Hw(HwParam::R),
            "M" => SweepAxis::Hw(HwParam::M),
            "T" => SweepAxis::Hw(HwParam::T),
            "N" => SweepAxis::Hw(HwParam::N),
            "S_tiles" | "S" => SweepAxis::Hw(HwParam::STiles),
            "L" => SweepAxis::Hw(HwParam::L),
            other => return Err(Error::Config(format!(
                "unknown sweep axis {other:?}; expected dw-bits, ratio, R, M, T, N, S_tiles or L"
            ))),
        })
    }
}

impl SweepAxis {
    /// Values used when none are given. Hardware axes have no default.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::DwBits => (3..=8).map(f64::from).collect(),
            SweepAxis::Ratio => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            SweepAxis::Hw(_) => Vec::new(),
        }
    }
}

/// Everything a command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSource,
    pub quant: M2qConfig,
    /// Existing plan to simulate instead of building one.
    pub plan: Option<PathBuf>,
    pub hardware: HardwareConfig,
    pub seed: u64,
    pub calibration_samples: usize,
    pub out: PathBuf,
    pub format: Format,
    pub pipelined: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSource::Builder {
                variant: Variant::B1,
                resolution: 224,
            },
            quant: M2qConfig::default(),
            plan: None,
            hardware: HardwareConfig::default(),
            seed: 0,
            calibration_samples: 2,
            out: PathBuf::from("out"),
            format: Format::Json,
            pipelined: true,
        }
    }
}

impl RunConfig {
    pub fn builder(variant: Variant, resolution: usize) -> Self {
        RunConfig {
            model: ModelSource::Builder {
                variant,
                resolution,
            },
            ..Default::default()
        }
    }

    /// Graph plus weights: from the manifest blob if present, synthesized
    /// from the seed otherwise.
    pub fn load_model(&self) -> Result<(NetworkGraph, WeightStore)> {
        let (graph, weights) = self.load_graph()?;
        let weights = weights.unwrap_or_else(|| synthesize_weights(&graph, self.seed));
        Ok((graph, weights))
    }

    pub fn load_graph(&self) -> Result<(NetworkGraph, Option<WeightStore>)> {
        match &self.model {
            ModelSource::Manifest(p) => NetworkManifest::load(p),
            ModelSource::Builder {
                variant,
                resolution,
            } => Ok((build_efficientvit_at(*variant, *resolution)?, None)),
        }
    }

    pub(crate) fn out_file(&self, stem: &str) -> PathBuf {
        let ext = match self.format {
            Format::Json => "json",
            Format::Csv => "csv",
        };
        self.out.join(format!("{stem}.{ext}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mixq",
    version,
    about = "Mixed APoT/uniform quantization and accelerator simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate, assign schemes, and write the plan and per-layer errors.
    Quantize(RunArgs),
    /// Schedule a plan on the accelerator and write cost reports.
    Simulate(RunArgs),
    /// Sweep one axis and write one CSV row per setting.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// dw-bits, ratio, or a hardware parameter (R, M, T, N, S_tiles, L).
        #[arg(long, default_value = "dw-bits")]
        axis: String,
        /// Comma-separated settings; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Compare the mixed plan against the uniform 8-bit baseline.
    Compare(RunArgs),
    /// Check a model, and optionally a plan and hardware config.
    Validate(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Network manifest (JSON). Overrides --builder.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Built-in network: b1 or b2.
    #[arg(long, default_value = "b1")]
    pub builder: Variant,
    #[arg(long, default_value_t = 224)]
    pub resolution: usize,
    /// APoT share of computation-intensive filters, as `a:b` or a fraction.
    #[arg(long, default_value = "1:1")]
    pub ratio: String,
    /// Use uniform quantization for every filter (ratio 0).
    #[arg(long, conflicts_with = "apot_only")]
    pub uniform_only: bool,
    /// Use APoT for every computation-intensive filter (ratio 1).
    #[arg(long)]
    pub apot_only: bool,
    /// Enforce the ratio over the whole network instead of per layer.
    #[arg(long)]
    pub network_ratio: bool,
    #[arg(long, default_value_t = 4)]
    pub dw_bits: u32,
    /// Existing plan to simulate.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub hw_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Synthetic calibration inputs.
    #[arg(long, default_value_t = 2)]
    pub calibration_samples: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Run layers back to back without overlap.
    #[arg(long)]
    pub no_pipeline: bool,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let target_ratio = if self.uniform_only {
            0.0
        } else if self.apot_only {
            1.0
        } else {
            parse_ratio(&self.ratio)?
        };
        let quant = M2qConfig {
            target_ratio,
            bits_dw: self.dw_bits,
            scope: if self.network_ratio {
                RatioScope::Network
            } else {
                RatioScope::PerLayer
            },
        };
        quant.validate()?;
        let hardware = match &self.hw_config {
            Some(p) => HardwareConfig::load(p)?,
            None => HardwareConfig::default(),
        };
        if self.calibration_samples == 0 {
            return Err(Error::Config(
                "--calibration-samples must be at least 1".into(),
            ));
        }
        Ok(RunConfig {
            model: match &self.model {
                Some(p) => ModelSource::Manifest(p.clone()),
                None => ModelSource::Builder {
                    variant: self.builder,
                    resolution: self.resolution,
                },
            },
            quant,
            plan: self.plan.clone(),
            hardware,
            seed: self.seed,
            calibration_samples: self.calibration_samples,
            out: self.out.clone(),
            format: self.format,
            pipelined: !self.no_pipeline,
        })
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::InvalidGraph(vs) = &e {
                for v in vs {
                    eprintln!("  {v}");
                }
            }
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Quantize(a) => {
            let out = cmd_quantize(&a.to_config()?)?;
            println!(
                "{}: {} of {} computation-intensive filters APoT (achieved {:.4}), output MSE {:.6e}",
                out.plan.network,
                out.plan.apot_filters,
                out.plan.computation_intensive_filters,
                out.plan.achieved_apot_fraction,
                out.errors.output_mse
            );
        }
        Command::Simulate(a) => {
            let (_, report) = cmd_simulate(&a.to_config()?)?;
            print!("{}", summary_table(&[("this work", &report)]));
        }
        Command::Sweep { run, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let values = if values.is_empty() {
                axis.default_values()
            } else {
                values
            };
            let rows = cmd_sweep(&run.to_config()?, axis, &values)?;
            print!("{}", sweep_csv(&rows)?);
        }
        Command::Compare(a) => {
            let c = cmd_compare(&a.to_config()?)?;
            println!(
                "{}: compute energy ratio {:.4}, energy ratio {:.4}, latency ratio {:.4}, EDP ratio {:.4}",
                c.network, c.compute_energy_ratio, c.energy_ratio, c.latency_ratio, c.edp_ratio
            );
        }
        Command::Validate(a) => {
            let v = cmd_validate(&a.to_config()?)?;
            println!(
                "{}: {} layers, {} compute, {} MACs: ok",
                v.network, v.layers, v.compute_layers, v.total_macs
            );
        }
    }
    Ok(())
}
