use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use cldeepc_core::controller::ControllerKind;
use cldeepc_core::experiment::{percentile, summarize_correlations};

use crate::harness::{CellResult, GridResults};

pub const PERCENTILES: [f64; 5] = [10.0, 30.0, 50.0, 70.0, 90.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationRow {
    pub axis_value: f64,
    pub seed: u64,
    pub controller: ControllerKind,
    pub j_rms: Option<f64>,
    pub solve_failures: usize,
    pub mean_solve_ms: Option<f64>,
    pub fallbacks: usize,
    pub rank_deficient_windows: usize,
    pub bias: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileRow {
    pub axis_value: f64,
    pub controller: ControllerKind,
    pub count: usize,
    /// 10th, 30th, 50th, 70th and 90th percentiles.
    pub values: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub axis_value: f64,
    pub controller: ControllerKind,
    pub count: usize,
    pub mean: f64,
    pub values: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub axis_value: f64,
    pub controller: ControllerKind,
    pub row: usize,
    pub col: usize,
    pub mean: f64,
    pub std_err: f64,
    pub realizations: usize,
}

/// Everything written by [`emit_report`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub realizations: Vec<RealizationRow>,
    pub percentiles: Vec<PercentileRow>,
    pub bias: Vec<BiasRow>,
    pub correlation: Vec<CorrelationRow>,
}

fn groups(cells: &[CellResult]) -> Vec<&[CellResult]> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=cells.len() {
        let boundary = k == cells.len()
            || cells[k].axis_value.to_bits() != cells[start].axis_value.to_bits()
            || cells[k].controller != cells[start].controller;
        if boundary {
            out.push(&cells[start..k]);
            start = k;
        }
    }
    out
}

fn bands(values: &[f64]) -> [f64; 5] {
    PERCENTILES.map(|q| percentile(values, q).unwrap_or(f64::NAN))
}

impl MetricsReport {
    /// Aggregates grid cells (expected in grid order) per axis value and controller.
    pub fn from_grid(grid: &GridResults) -> Result<Self> {
        let mut report = MetricsReport::default();
        for c in &grid.cells {
            report.realizations.push(RealizationRow {
                axis_value: c.axis_value,
                seed: c.seed,
                controller: c.controller,
                j_rms: c.j_rms,
                solve_failures: c.stats.solve_failures,
                mean_solve_ms: c.mean_solve_ms,
                fallbacks: c.stats.fallbacks,
                rank_deficient_windows: c.stats.rank_deficient_windows,
                bias: c.bias,
                error: c.error.clone(),
            });
        }
        for group in groups(&grid.cells) {
            let head = &group[0];
            let j: Vec<f64> = group.iter().filter_map(|c| c.j_rms).collect();
            if !j.is_empty() {
                report.percentiles.push(PercentileRow {
                    axis_value: head.axis_value,
                    controller: head.controller,
                    count: j.len(),
                    values: bands(&j),
                });
            }
            let b: Vec<f64> = group.iter().filter_map(|c| c.bias).collect();
            if !b.is_empty() {
                report.bias.push(BiasRow {
                    axis_value: head.axis_value,
                    controller: head.controller,
                    count: b.len(),
                    mean: b.iter().sum::<f64>() / b.len() as f64,
                    values: bands(&b),
                });
            }
            let mats: Vec<_> = group.iter().filter_map(|c| c.correlation.clone()).collect();
            if !mats.is_empty() {
                let summary = summarize_correlations(&mats, 0)?;
                for col in 0..summary.mean.ncols() {
                    for row in 0..summary.mean.nrows() {
                        report.correlation.push(CorrelationRow {
                            axis_value: head.axis_value,
                            controller: head.controller,
                            row,
                            col,
                            mean: summary.mean[(row, col)],
                            std_err: summary.std_err[(row, col)],
                            realizations: summary.realizations,
                        });
                    }
                }
            }
        }
        report.correlation.sort_by(|a, b| {
            a.axis_value
                .total_cmp(&b.axis_value)
                .then(a.controller.cmp(&b.controller))
                .then(a.row.cmp(&b.row))
                .then(a.col.cmp(&b.col))
        });
        Ok(report)
    }
}

/// Shortest round-trip representation; `NA` for missing or NaN values.
pub fn fmt_f64(v: Option<f64>) -> String {
    match v {
        Some(x) if x == 0.0 || (x.is_finite() && (1e-4..1e15).contains(&x.abs())) => format!("{x}"),
        Some(x) if !x.is_nan() => format!("{x:e}"),
        _ => "NA".to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub const REALIZATIONS_CSV: &str = "realizations.csv";
pub const PERCENTILES_CSV: &str = "percentiles.csv";
pub const BIAS_CSV: &str = "bias.csv";
pub const CORRELATION_CSV: &str = "correlation.csv";

/// Writes the four report tables into `dir`; empty tables get a header only.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(
        &dir.join(REALIZATIONS_CSV),
        &[
            "axis_value",
            "seed",
            "controller",
            "j_rms",
            "solve_failures",
            "mean_solve_ms",
            "fallbacks",
            "rank_deficient_windows",
            "bias",
            "error",
        ],
        report
            .realizations
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(Some(r.axis_value)),
                    r.seed.to_string(),
                    r.controller.to_string(),
                    fmt_f64(r.j_rms),
                    r.solve_failures.to_string(),
                    fmt_f64(r.mean_solve_ms),
                    r.fallbacks.to_string(),
                    r.rank_deficient_windows.to_string(),
                    fmt_f64(r.bias),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &dir.join(PERCENTILES_CSV),
        &["axis_value", "controller", "count", "p10", "p30", "p50", "p70", "p90"],
        report
            .percentiles
            .iter()
            .map(|r| {
                let mut row = vec![fmt_f64(Some(r.axis_value)), r.controller.to_string(), r.count.to_string()];
                row.extend(r.values.iter().map(|v| fmt_f64(Some(*v))));
                row
            })
            .collect(),
    )?;
    write_csv(
        &dir.join(BIAS_CSV),
        &["axis_value", "controller", "count", "mean", "p10", "p30", "p50", "p70", "p90"],
        report
            .bias
            .iter()
            .map(|r| {
                let mut row = vec![
                    fmt_f64(Some(r.axis_value)),
                    r.controller.to_string(),
                    r.count.to_string(),
                    fmt_f64(Some(r.mean)),
                ];
                row.extend(r.values.iter().map(|v| fmt_f64(Some(*v))));
                row
            })
            .collect(),
    )?;
    write_csv(
        &dir.join(CORRELATION_CSV),
        &["axis_value", "controller", "row", "col", "mean", "std_err", "realizations"],
        report
            .correlation
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(Some(r.axis_value)),
                    r.controller.to_string(),
                    r.row.to_string(),
                    r.col.to_string(),
                    fmt_f64(Some(r.mean)),
                    fmt_f64(Some(r.std_err)),
                    r.realizations.to_string(),
                ]
            })
            .collect(),
    )?;
    Ok(())
}
