use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cldeepc_experiments::config::FileConfig;
use cldeepc_experiments::harness::{run_cell, run_grid, Axis, GridOptions};
use cldeepc_experiments::io::{write_json, write_predictor_csv, write_signal_log, PredictorRecord};
use cldeepc_experiments::report::{emit_report, MetricsReport};
use cldeepc_core::controller::ControllerKind;
use cldeepc_core::experiment::ExperimentConfig;
use cldeepc_core::plant::StateSpaceModel;

#[derive(Parser)]
#[command(name = "cldeepc", version, about = "Closed-loop data-enabled predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run; writes the signal log.
    Simulate(Common),
    /// J_rms percentiles of all three controllers over a parameter grid.
    Sweep {
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Noise-input correlation of CL-DeePC and DeePC closed-loop data.
    Correlation(Common),
    /// Error of the estimated input Toeplitz matrix over the number of past samples.
    Bias {
        /// Comma-separated past-data lengths.
        #[arg(long, value_delimiter = ',', default_values_t = vec![200.0, 400.0, 800.0, 1600.0])]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    nbar: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat TOML file with experiment settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record mean controller time per step (not reproducible across runs).
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let flags = FileConfig {
            controller: self.controller.clone(),
            nbar: self.nbar,
            p: self.p,
            f: self.f,
            noise_var: self.noise_var,
            seed: self.seed,
            realizations: self.realizations,
            steps: self.steps,
            out: self.out.as_ref().map(|p| p.display().to_string()),
            ..Default::default()
        };
        let merged = file.merge(&flags);
        let mut cfg = ExperimentConfig::default();
        merged.apply(&mut cfg)?;
        let out = PathBuf::from(merged.out.unwrap_or_else(|| "out".to_string()));
        Ok((cfg, out))
    }
}

fn emit(grid: &cldeepc_experiments::GridResults, out: &PathBuf) -> Result<()> {
    let report = MetricsReport::from_grid(grid)?;
    emit_report(&report, out)?;
    for row in &report.percentiles {
        println!(
            "{:>10} {:<9} n={:<3} J_rms median {:.5} (p10 {:.5}, p90 {:.5})",
            cldeepc_experiments::report::fmt_f64(Some(row.axis_value)),
            row.controller,
            row.count,
            row.values[2],
            row.values[0],
            row.values[4]
        );
    }
    let failed = grid.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see realizations.csv");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let model = StateSpaceModel::benchmark();
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, out) = common.resolve()?;
            cfg.validate()?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (run, ms) = run_cell(&cfg, &model, 0, common.timing)?;
            write_signal_log(&run.log, &out.join("signals.csv"))?;
            if let Some(pred) = &run.predictor {
                write_json(&PredictorRecord::from(pred), &out.join("predictor.json"))?;
                write_predictor_csv(pred, &out.join("predictor.csv"))?;
            }
            println!(
                "{} J_rms {:.6} solve_failures {} fallbacks {}{}",
                run.kind,
                run.j_rms,
                run.stats.solve_failures,
                run.stats.fallbacks,
                ms.map(|m| format!(" mean_solve_ms {m:.3}")).unwrap_or_default()
            );
            println!("wrote {}", out.display());
        }
        Command::Sweep { axis, values, common } => {
            let (cfg, out) = common.resolve()?;
            let opts = GridOptions {
                timing: common.timing,
                ..Default::default()
            };
            emit(&run_grid(&cfg, &model, Some(axis), &values, &opts)?, &out)?;
        }
        Command::Correlation(common) => {
            let (cfg, out) = common.resolve()?;
            let opts = GridOptions {
                kinds: vec![ControllerKind::ClDeepc, ControllerKind::Deepc],
                timing: common.timing,
                correlation: true,
            };
            emit(&run_grid(&cfg, &model, None, &[], &opts)?, &out)?;
        }
        Command::Bias { values, common } => {
            let (cfg, out) = common.resolve()?;
            let opts = GridOptions {
                kinds: vec![ControllerKind::ClDeepc, ControllerKind::Deepc],
                timing: common.timing,
                correlation: false,
            };
            emit(&run_grid(&cfg, &model, Some(Axis::Nbar), &values, &opts)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
