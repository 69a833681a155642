use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use dpsim::config::{Experiment, ExperimentConfig, LoadError};
use dpsim::costmodel::{calibrate, load_targets, CalibrationOptions, CostError};
use dpsim::domain::{ConfigError, GpuSpec, ModelProfile};
use dpsim::harness::{self, SummaryRow, SweepSpec};
use dpsim::workload::{generate_trace, read_trace, write_trace};

#[derive(Parser)]
#[command(
    name = "dpsim",
    version,
    about = "Simulate disaggregated LLM serving with a pooled decode tier"
)]
struct Cli {
    /// Override the workload seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Fit cost parameters to measured latencies.
    Calibrate {
        /// CSV with columns model,prefill_bits,decode_bits,isl,osl,concurrency,ttft_ms,tpot_ms.
        targets: PathBuf,
        /// Backbone preset the measurements were taken on.
        #[arg(long, default_value = "llama3.1-8b")]
        backbone: String,
        /// Largest accepted relative residual.
        #[arg(long, default_value_t = 0.03)]
        tolerance: f64,
    },
    /// Run one experiment file and print its summary row.
    Run {
        config: PathBuf,
        /// Also write the event log here.
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Run every cell of a sweep file.
    Sweep {
        spec: PathBuf,
        /// Emit `offered_rps,alpha,mode,ratio` instead of full rows.
        #[arg(long)]
        ratio_grid: bool,
    },
    /// Simulate a recorded trace under an experiment's cluster and window.
    Replay { config: PathBuf, trace: PathBuf },
    /// Check an experiment file and report every violation.
    Validate { config: PathBuf },
    /// Write the arrival trace an experiment would generate.
    GenTrace { config: PathBuf },
}

/// Failures split by exit code: 2 for bad input, 1 for runtime problems.
enum Failure {
    Config(anyhow::Error, Vec<dpsim::domain::Violation>),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Invalid(c) => c.into(),
            other => Failure::Config(other.into(), Vec::new()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let v = e.violations().to_vec();
        Failure::Config(e.into(), v)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind, err, violations) = match f {
                Failure::Config(e, v) => (2, "config", e, v),
                Failure::Runtime(e) => (1, "runtime", e, Vec::new()),
            };
            let report = json!({
                "error": kind,
                "message": format!("{err:#}"),
                "violations": violations
                    .iter()
                    .map(|v| json!({"path": v.path, "message": v.message}))
                    .collect::<Vec<_>>(),
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Calibrate {
            targets,
            backbone,
            tolerance,
        } => cmd_calibrate(cli, targets, backbone, *tolerance),
        Command::Run { config, event_log } => cmd_run(cli, config, event_log.as_deref()),
        Command::Sweep { spec, ratio_grid } => cmd_sweep(cli, spec, *ratio_grid),
        Command::Replay { config, trace } => cmd_replay(cli, config, trace),
        Command::Validate { config } => {
            let exp = load_experiment(cli, config)?;
            let mut out = output(cli)?;
            writeln!(
                out,
                "ok {} ({} models, K={})",
                exp.config_hash(),
                exp.cluster.n_models(),
                exp.cluster.decode_pool_size
            )
            .context("writing output")?;
            Ok(())
        }
        Command::GenTrace { config } => {
            let exp = load_experiment(cli, config)?;
            let trace = generate_trace(&exp.workload);
            write_trace(output(cli)?, &trace).context("writing trace")?;
            Ok(())
        }
    }
}

fn output(cli: &Cli) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_experiment(cli: &Cli, path: &Path) -> Result<Experiment, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.workload.seed = seed;
    }
    Ok(cfg.resolve()?)
}

fn emit_rows(cli: &Cli, rows: &[SummaryRow]) -> Result<(), Failure> {
    let out = output(cli)?;
    match cli.format {
        Format::Csv => harness::write_csv(out, rows).context("writing csv")?,
        Format::Json => harness::write_json(out, rows).context("writing json")?,
    }
    Ok(())
}

fn cmd_calibrate(cli: &Cli, targets: &Path, backbone: &str, tolerance: f64) -> Result<(), Failure> {
    let model = ModelProfile::builtin(backbone)
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("unknown backbone `{backbone}`"), Vec::new()))?;
    let file = File::open(targets)
        .with_context(|| format!("opening {}", targets.display()))
        .map_err(|e| Failure::Config(e, Vec::new()))?;
    let rows = load_targets(BufReader::new(file))
        .with_context(|| format!("parsing {}", targets.display()))
        .map_err(|e| Failure::Config(e, Vec::new()))?;
    let fit = match calibrate(&rows, &model, &GpuSpec::a100_80gb(), &CalibrationOptions { tolerance }) {
        Ok(fit) => fit,
        Err(e @ CostError::InvalidTargets(_)) => return Err(Failure::Config(e.into(), Vec::new())),
        Err(CostError::CalibrationInfeasible {
            reason,
            max_rel_residual,
            residuals,
        }) => {
            let worst: Vec<String> = residuals
                .iter()
                .filter(|r| r.rel_error.abs() > tolerance)
                .map(|r| format!("row {} {}: {:+.2}%", r.row, r.metric, 100.0 * r.rel_error))
                .collect();
            return Err(Failure::Runtime(anyhow::anyhow!(
                "calibration infeasible: {reason}; max residual {:.2}%; {}",
                100.0 * max_rel_residual,
                worst.join(", ")
            )));
        }
        Err(e) => return Err(Failure::Runtime(e.into())),
    };
    let mut out = output(cli)?;
    match cli.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &fit).context("writing json")?;
            writeln!(out).context("writing output")?;
        }
        Format::Csv => {
            // `[cost]` section ready to paste into an experiment file
            let cost = toml::to_string(&fit.params).context("serializing params")?;
            writeln!(out, "# max relative residual {:.4}", fit.max_rel_residual).context("writing output")?;
            writeln!(out, "# kv_bytes_per_token = {}", fit.kv_bytes_per_token).context("writing output")?;
            writeln!(out, "[cost]\n{cost}").context("writing output")?;
        }
    }
    Ok(())
}

fn cmd_run(cli: &Cli, config: &Path, event_log: Option<&Path>) -> Result<(), Failure> {
    let exp = load_experiment(cli, config)?;
    let mut opts = exp.sim_options();
    opts.record_trace = event_log.is_some();
    let trace = generate_trace(&exp.workload);
    let report = harness::run_trace(&exp, &trace, &opts).context("simulation failed")?;
    if let Some(p) = event_log {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        report
            .output
            .trace
            .write_log(BufWriter::new(f))
            .context("writing event log")?;
    }
    let summary = report.summary.as_ref().map_err(ToString::to_string);
    emit_rows(cli, &[harness::summary_row(&exp, 0, 0, summary)])
}

fn cmd_sweep(cli: &Cli, path: &Path, ratio_grid: bool) -> Result<(), Failure> {
    let mut spec = SweepSpec::load(path)?;
    if let Some(seed) = cli.seed {
        spec.base.workload.seed = seed;
    }
    let rows = harness::run_sweep(&spec, cli.parallel)?;
    if ratio_grid {
        let grid = harness::ratio_grid(&rows);
        let out = output(cli)?;
        match cli.format {
            Format::Csv => harness::write_ratio_csv(out, &grid).context("writing csv")?,
            Format::Json => serde_json::to_writer_pretty(out, &grid).context("writing json")?,
        }
        return Ok(());
    }
    emit_rows(cli, &rows)
}

fn cmd_replay(cli: &Cli, config: &Path, trace_path: &Path) -> Result<(), Failure> {
    let exp = load_experiment(cli, config)?;
    let file = File::open(trace_path)
        .with_context(|| format!("opening {}", trace_path.display()))
        .map_err(|e| Failure::Config(e, Vec::new()))?;
    let trace = read_trace(BufReader::new(file))
        .with_context(|| format!("reading {}", trace_path.display()))
        .map_err(|e| Failure::Config(e, Vec::new()))?;
    if let Some(r) = trace.iter().find(|r| r.model_id >= exp.cluster.n_models()) {
        return Err(Failure::Config(
            anyhow::anyhow!(
                "trace request {} names model {} but the cluster has {}",
                r.id,
                r.model_id,
                exp.cluster.n_models()
            ),
            Vec::new(),
        ));
    }
    let report = harness::run_trace(&exp, &trace, &exp.sim_options()).context("simulation failed")?;
    let summary = report.summary.as_ref().map_err(ToString::to_string);
    emit_rows(cli, &[harness::summary_row(&exp, 0, 0, summary)])
}
