//! Sweeps over experiment cells.
//!
//! A sweep is a base experiment plus value lists for a fixed set of axes. Cells
//! are the Cartesian product in axis order `mode, k, alpha, osl, isl,
//! offered_rps, decode_bits, decode_rule, seed` (first axis outermost), each
//! repeated `replicates` times with the seeds shifted by the replicate index.
//! Cells run independently; with the `parallel` feature they run on a rayon
//! pool, and results are always returned in cell order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{read, Experiment, ExperimentConfig, LoadError};
use crate::domain::{ConfigError, DecodePoolMode, Request, Violation};
use crate::engine::{self, EngineError, SimOptions, SimOutput};
use crate::metrics::{summarize, MetricsError, RunSummary, WindowInfo};
use crate::routing::DecodeRule;
use crate::workload::{generate_trace, measurement_filter};

/// Outcome of one simulated run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: SimOutput,
    pub summary: Result<RunSummary, MetricsError>,
}

/// Generates the experiment's trace and simulates it.
pub fn run_single(exp: &Experiment) -> Result<RunReport, EngineError> {
    let trace = generate_trace(&exp.workload);
    run_trace(exp, &trace, &exp.sim_options())
}

/// Simulates a given trace; the experiment supplies the window.
pub fn run_trace(exp: &Experiment, trace: &[Request], opts: &SimOptions) -> Result<RunReport, EngineError> {
    let output = engine::run(&exp.cluster, trace, &exp.cost, opts)?;
    let window = measurement_filter(&output.requests, &exp.workload);
    let info = WindowInfo {
        measurement_window: exp.workload.measurement_window,
        offered_rps: exp.workload.total_rps,
        decode_gpus: exp.cluster.decode_pool_size,
        total_gpus: exp.total_gpus(),
    };
    let summary = summarize(&window, &info);
    Ok(RunReport { output, summary })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    pub mode: Option<Vec<DecodePoolMode>>,
    pub k: Option<Vec<usize>>,
    pub alpha: Option<Vec<f64>>,
    pub osl: Option<Vec<u32>>,
    pub isl: Option<Vec<u32>>,
    pub offered_rps: Option<Vec<f64>>,
    pub decode_bits: Option<Vec<u8>>,
    pub decode_rule: Option<Vec<DecodeRule>>,
    pub seed: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseRef {
    /// Path to an experiment file, relative to the sweep file.
    Path(String),
    Inline(Box<ExperimentConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub base: BaseRef,
    #[serde(default)]
    pub axes: Axes,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
}

fn one() -> usize {
    1
}

fn default_max_cells() -> usize {
    10_000
}

/// A sweep with its base resolved to an in-memory config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axes: Axes,
    pub replicates: usize,
    pub max_cells: usize,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = read(path)?;
        let file: SweepFile = toml::from_str(&text).map_err(|e| LoadError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = match file.base {
            BaseRef::Inline(b) => *b,
            BaseRef::Path(p) => {
                let dir = path.parent().unwrap_or(Path::new("."));
                ExperimentConfig::load(&dir.join(p))?
            }
        };
        Ok(Self {
            base,
            axes: file.axes,
            replicates: file.replicates,
            max_cells: file.max_cells,
        })
    }

    pub fn single(base: ExperimentConfig) -> Self {
        Self {
            base,
            axes: Axes::default(),
            replicates: 1,
            max_cells: default_max_cells(),
        }
    }

    /// Every `(cell, replicate)` pair in output order.
    pub fn cells(&self) -> Result<Vec<Cell>, ConfigError> {
        let a = &self.axes;
        let b = &self.base;
        let w = &b.workload;
        let modes = a.mode.clone().unwrap_or_else(|| vec![b.cluster.mode]);
        let ks: Vec<Option<usize>> =
            a.k.as_ref()
                .map(|v| v.iter().copied().map(Some).collect())
                .unwrap_or_else(|| vec![b.cluster.decode_pool_size]);
        let alphas = a.alpha.clone().unwrap_or_else(|| vec![w.alpha]);
        let osls = a.osl.clone().unwrap_or_else(|| vec![w.osl]);
        let isls = a.isl.clone().unwrap_or_else(|| vec![w.isl]);
        let rps = a.offered_rps.clone().unwrap_or_else(|| vec![w.total_rps]);
        let bits: Vec<Option<u8>> = a
            .decode_bits
            .as_ref()
            .map(|v| v.iter().copied().map(Some).collect())
            .unwrap_or_else(|| vec![None]);
        let rules: Vec<Option<DecodeRule>> = a
            .decode_rule
            .as_ref()
            .map(|v| v.iter().copied().map(Some).collect())
            .unwrap_or_else(|| vec![b.routing.decode_rule]);
        let seeds = a.seed.clone().unwrap_or_else(|| vec![w.seed]);

        let total = [
            modes.len(),
            ks.len(),
            alphas.len(),
            osls.len(),
            isls.len(),
            rps.len(),
            bits.len(),
            rules.len(),
            seeds.len(),
            self.replicates,
        ]
        .iter()
        .product::<usize>();
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        if total > self.max_cells {
            return Err(invalid(
                "max_cells",
                format!("sweep expands to {total} runs, above the cap of {}", self.max_cells),
            ));
        }

        let mut out = Vec::with_capacity(total);
        let mut index = 0;
        for &mode in &modes {
            for &k in &ks {
                for &alpha in &alphas {
                    for &osl in &osls {
                        for &isl in &isls {
                            for &offered in &rps {
                                for &bits in &bits {
                                    for &rule in &rules {
                                        for &seed in &seeds {
                                            let mut c = b.clone();
                                            c.cluster.mode = mode;
                                            match mode {
                                                // one pinned worker per model
                                                DecodePoolMode::Isolated => {
                                                    c.cluster.decode_pool_size = None;
                                                    c.routing.decode_rule = Some(DecodeRule::Pinned);
                                                    c.routing.pinned = None;
                                                }
                                                DecodePoolMode::Shared => {
                                                    c.cluster.decode_pool_size = k;
                                                    c.routing.decode_rule = rule;
                                                }
                                            }
                                            c.workload.alpha = alpha;
                                            c.workload.osl = osl;
                                            c.workload.isl = isl;
                                            c.workload.total_rps = offered;
                                            if let Some(bits) = bits {
                                                for m in &mut c.cluster.models {
                                                    m.decode_weight_bits = Some(bits);
                                                }
                                            }
                                            for replicate in 0..self.replicates {
                                                let mut r = c.clone();
                                                r.workload.seed = seed.wrapping_add(replicate as u64);
                                                r.routing.seed = c.routing.seed.wrapping_add(replicate as u64);
                                                out.push(Cell {
                                                    index,
                                                    replicate,
                                                    config: r,
                                                });
                                            }
                                            index += 1;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(vec![Violation {
        path: path.to_string(),
        message: message.into(),
    }])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub replicate: usize,
    pub config: ExperimentConfig,
}

/// One output row. Summary fields are empty when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub decode_pool_mode: DecodePoolMode,
    pub k: usize,
    pub alpha: f64,
    pub isl: u32,
    pub osl: u32,
    pub offered_rps: f64,
    pub completed: Option<usize>,
    pub ttft_mean_s: Option<f64>,
    pub ttft_p50_s: Option<f64>,
    pub ttft_p99_s: Option<f64>,
    pub tpot_mean_s: Option<f64>,
    pub tpot_p50_s: Option<f64>,
    pub tpot_p99_s: Option<f64>,
    pub itl_mean_s: Option<f64>,
    pub e2e_mean_s: Option<f64>,
    pub interactivity_tok_s: Option<f64>,
    pub output_throughput_tok_s: Option<f64>,
    pub throughput_per_decode_gpu: Option<f64>,
    pub throughput_per_gpu_all: Option<f64>,
    pub achieved_rps: Option<f64>,
    pub achieved_offered_ratio: Option<f64>,
    pub decode_bits: u8,
    pub decode_rule: String,
    pub seed: u64,
    pub cell: usize,
    pub replicate: usize,
    pub error: Option<String>,
}

fn blank_row(config: &ExperimentConfig, cell: usize, replicate: usize) -> SummaryRow {
    let w = &config.workload;
    SummaryRow {
        decode_pool_mode: config.cluster.mode,
        k: config.cluster.decode_pool_size.unwrap_or(0),
        alpha: w.alpha,
        isl: w.isl,
        osl: w.osl,
        offered_rps: w.total_rps,
        decode_rule: config
            .routing
            .decode_rule
            .map(|r| r.as_str().to_string())
            .unwrap_or_default(),
        seed: w.seed,
        cell,
        replicate,
        ..empty_row()
    }
}

/// Row for a resolved experiment; `outcome` carries the summary or the
/// failure message.
pub fn summary_row(
    exp: &Experiment,
    cell: usize,
    replicate: usize,
    outcome: Result<&RunSummary, String>,
) -> SummaryRow {
    let w = &exp.workload;
    let mut row = SummaryRow {
        config_hash: exp.config_hash(),
        decode_pool_mode: exp.cluster.decode_pool_mode,
        k: exp.cluster.decode_pool_size,
        alpha: w.alpha,
        isl: w.isl,
        osl: w.osl,
        offered_rps: w.total_rps,
        decode_bits: exp.cluster.models[0].decode_weight_bits,
        decode_rule: exp.cluster.routing.decode_rule.as_str().to_string(),
        seed: w.seed,
        cell,
        replicate,
        ..empty_row()
    };
    match outcome {
        Ok(s) => fill(&mut row, s),
        Err(e) => row.error = Some(e),
    }
    row
}

fn empty_row() -> SummaryRow {
    SummaryRow {
        config_hash: String::new(),
        decode_pool_mode: DecodePoolMode::Shared,
        k: 0,
        alpha: 0.0,
        isl: 0,
        osl: 0,
        offered_rps: 0.0,
        completed: None,
        ttft_mean_s: None,
        ttft_p50_s: None,
        ttft_p99_s: None,
        tpot_mean_s: None,
        tpot_p50_s: None,
        tpot_p99_s: None,
        itl_mean_s: None,
        e2e_mean_s: None,
        interactivity_tok_s: None,
        output_throughput_tok_s: None,
        throughput_per_decode_gpu: None,
        throughput_per_gpu_all: None,
        achieved_rps: None,
        achieved_offered_ratio: None,
        decode_bits: 0,
        decode_rule: String::new(),
        seed: 0,
        cell: 0,
        replicate: 0,
        error: None,
    }
}

fn row_for(cell: &Cell) -> SummaryRow {
    let exp = match cell.config.resolve() {
        Ok(e) => e,
        Err(e) => {
            let mut row = blank_row(&cell.config, cell.index, cell.replicate);
            row.error = Some(e.to_string());
            return row;
        }
    };
    let outcome = run_single(&exp).map_err(|e| e.to_string());
    let summary = outcome
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|r| r.summary.as_ref().map_err(ToString::to_string));
    summary_row(&exp, cell.index, cell.replicate, summary)
}

fn fill(row: &mut SummaryRow, s: &RunSummary) {
    row.completed = Some(s.completed);
    row.ttft_mean_s = Some(s.ttft.mean);
    row.ttft_p50_s = Some(s.ttft.p50);
    row.ttft_p99_s = Some(s.ttft.p99);
    row.tpot_mean_s = Some(s.tpot.mean);
    row.tpot_p50_s = Some(s.tpot.p50);
    row.tpot_p99_s = Some(s.tpot.p99);
    row.itl_mean_s = Some(s.itl_mean);
    row.e2e_mean_s = Some(s.e2e_mean);
    row.interactivity_tok_s = Some(s.interactivity_tok_s);
    row.output_throughput_tok_s = Some(s.output_throughput_tok_s);
    row.throughput_per_decode_gpu = Some(s.throughput_per_decode_gpu);
    row.throughput_per_gpu_all = Some(s.throughput_per_gpu_all);
    row.achieved_rps = Some(s.achieved_rps);
    row.achieved_offered_ratio = Some(s.achieved_offered_ratio);
}

/// Runs every cell. `threads <= 1` runs sequentially; larger values use a
/// dedicated pool when built with the `parallel` feature.
pub fn run_cells(cells: &[Cell], threads: usize) -> Vec<SummaryRow> {
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        return pool.install(|| cells.par_iter().map(row_for).collect());
    }
    let _ = threads;
    cells.iter().map(row_for).collect()
}

pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<Vec<SummaryRow>, ConfigError> {
    Ok(run_cells(&spec.cells()?, threads))
}

pub fn write_csv<W: Write>(out: W, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(mut out: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    writeln!(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub offered_rps: f64,
    pub alpha: f64,
    pub mode: DecodePoolMode,
    /// Empty when the cell failed.
    pub ratio: Option<f64>,
}

/// Achieved/offered ratio per cell, replicates averaged.
pub fn ratio_grid(rows: &[SummaryRow]) -> Vec<RatioRow> {
    let mut out: Vec<(usize, RatioRow, usize)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((cell, acc, n)) if *cell == r.cell => {
                acc.ratio = match (acc.ratio, r.achieved_offered_ratio) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
                *n += 1;
            }
            _ => out.push((
                r.cell,
                RatioRow {
                    offered_rps: r.offered_rps,
                    alpha: r.alpha,
                    mode: r.decode_pool_mode,
                    ratio: r.achieved_offered_ratio,
                },
                1,
            )),
        }
    }
    out.into_iter()
        .map(|(_, mut row, n)| {
            row.ratio = row.ratio.map(|s| s / n as f64);
            row
        })
        .collect()
}

pub fn write_ratio_csv<W: Write>(out: W, rows: &[RatioRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
