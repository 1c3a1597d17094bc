use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sixdma_core::channel::{ScenarioConfig, UserDistribution};
use sixdma_core::cssca::Scheme;
use sixdma_harness::stats::mean_and_se;
use sixdma_harness::{
    emit_cdf_csv, emit_csv, emit_trace_csv, run_experiment_detailed, ExperimentConfig, Result,
    Sweep, SweepAxis,
};

#[derive(Parser)]
#[command(name = "sixdma", about = "6DMA cell-free uplink experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ergodic sum rate of every scheme over independent realizations.
    Cdf {
        #[command(flatten)]
        common: Common,
        /// Also write the per-scheme empirical CDF here.
        #[arg(long)]
        cdf_out: Option<PathBuf>,
    },
    /// Sweep the movable-region side length (in wavelengths).
    SweepMovable {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 3.0])]
        values: Vec<f64>,
    },
    /// Sweep the rotation range (in degrees).
    SweepRotation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 10.0, 20.0, 30.0])]
        values: Vec<f64>,
    },
    /// Sweep the Rician factor (in dB).
    SweepRician {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [-10.0, 0.0, 10.0, 20.0])]
        values: Vec<f64>,
    },
    /// Optimizer traces plus final rates.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Per-iteration trace output.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Hotspot,
}

#[derive(Args)]
struct Common {
    /// Experiment (or bare scenario) JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Comma-separated subset of proposed_6dma, fpa, position_only,
    /// orientation_only, centralized_mmse.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Reduced network (default).
    #[arg(long, conflicts_with = "paper_scale")]
    desk: bool,
    /// Full-size network.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, value_enum)]
    user_dist: Option<Dist>,
    #[arg(long)]
    s_max: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
    /// Record per-scheme wall time (makes output non-reproducible).
    #[arg(long)]
    timings: bool,
}

impl Common {
    fn experiment(&self, sweep: Sweep) -> Result<ExperimentConfig> {
        let mut cfg = if self.paper_scale {
            ExperimentConfig::paper_scale()
        } else {
            ExperimentConfig::desk()
        };
        if let Some(path) = &self.config {
            cfg = match ExperimentConfig::load(path) {
                Ok(c) => c,
                Err(_) => ExperimentConfig {
                    scenario: ScenarioConfig::load(path)?,
                    ..cfg
                },
            };
        }
        if sweep.axis != SweepAxis::None {
            cfg.sweep = sweep;
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(n) = self.realizations {
            cfg.num_realizations = n;
        }
        if let Some(s) = &self.schemes {
            cfg.schemes = s.clone();
        }
        if let Some(d) = self.user_dist {
            cfg.user_distribution = match d {
                Dist::Uniform => UserDistribution::Uniform,
                Dist::Hotspot => UserDistribution::Hotspot,
            };
        }
        if let Some(s) = self.s_max {
            cfg.optimizer.s_max = s;
        }
        if let Some(n) = self.eval_samples {
            cfg.eval_samples = n;
        }
        cfg.record_timings |= self.timings;
        cfg.output_path = Some(self.out.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summarize(cfg: &ExperimentConfig, rows: &[sixdma_harness::ResultRow]) {
    for &v in &cfg.sweep.values {
        for &scheme in &cfg.schemes {
            let rates: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == scheme && r.sweep_value == v)
                .filter_map(|r| r.sum_rate)
                .collect();
            if rates.is_empty() {
                continue;
            }
            let (mean, se) = mean_and_se(&rates);
            eprintln!(
                "{}={v:<6} {:<18} mean {mean:.4} ± {se:.4} bit/s/Hz ({} runs)",
                cfg.sweep.axis,
                scheme.as_str(),
                rates.len()
            );
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let sweep = |axis, values: &Vec<f64>| Sweep {
        axis,
        values: values.clone(),
    };
    let (common, sweep, cdf_out, trace) = match &cli.command {
        Command::Cdf { common, cdf_out } => (common, Sweep::none(), cdf_out.clone(), None),
        Command::SweepMovable { common, values } => {
            (common, sweep(SweepAxis::MovableRegion, values), None, None)
        }
        Command::SweepRotation { common, values } => {
            (common, sweep(SweepAxis::RotationRange, values), None, None)
        }
        Command::SweepRician { common, values } => {
            (common, sweep(SweepAxis::RicianDb, values), None, None)
        }
        Command::Convergence { common, trace } => (common, Sweep::none(), None, trace.clone()),
    };
    let cfg = common.experiment(sweep)?;
    let out = run_experiment_detailed(&cfg, trace.is_some())?;
    emit_csv(&out.rows, &common.out)?;
    if let Some(path) = cdf_out {
        emit_cdf_csv(&out.rows, path)?;
    }
    if let Some(path) = trace {
        emit_trace_csv(&out.traces, path)?;
    }
    summarize(&cfg, &out.rows);
    let failed = out.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} runs failed; see the error column");
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
