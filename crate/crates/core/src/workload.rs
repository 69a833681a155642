//! Open-loop request generation.
//!
//! Offered load is split across models by a Zipf law over popularity rank,
//! `P(i) = i^-alpha / sum_j j^-alpha`. Each model gets an independent arrival
//! stream; the streams are merged into one time-ordered trace.
//!
//! Randomness: model `m`'s stream draws from ChaCha8 seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` (rand_core's PCG32 seed expansion) and
//! switched to stream number `m`. Each Poisson gap consumes one `u64`:
//! `u = (x >> 11) * 2^-53`, `gap = -ln(1 - u) / rate`.

use std::io::{BufRead, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ConfigError, Request, Violations};
use crate::routing::unit_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    #[default]
    Poisson,
    /// Arrivals at `0, 1/rate, 2/rate, ...` per model.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub n_models: usize,
    /// Offered total request rate, requests/s.
    pub total_rps: f64,
    pub alpha: f64,
    pub isl: u32,
    pub osl: u32,
    pub grace_period: f64,
    pub measurement_window: f64,
    /// Extra simulated time after the window; defaults to twice the window.
    pub drain_margin: Option<f64>,
    pub seed: u64,
    pub arrival_process: ArrivalProcess,
}

impl WorkloadSpec {
    pub fn drain_margin(&self) -> f64 {
        self.drain_margin.unwrap_or(2.0 * self.measurement_window)
    }

    /// End of generation and of the simulated horizon.
    pub fn horizon(&self) -> f64 {
        self.grace_period + self.measurement_window + self.drain_margin()
    }

    pub fn window(&self) -> (f64, f64) {
        (self.grace_period, self.grace_period + self.measurement_window)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Violations::default();
        if self.n_models == 0 {
            v.push("workload.n_models", "must be at least 1");
        }
        if !(self.total_rps.is_finite() && self.total_rps > 0.0) {
            v.push("workload.total_rps", "must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            v.push("workload.alpha", "must be >= 0");
        }
        if self.isl == 0 {
            v.push("workload.isl", "must be >= 1");
        }
        if self.osl == 0 {
            v.push("workload.osl", "must be >= 1");
        }
        if !(self.grace_period.is_finite() && self.grace_period >= 0.0) {
            v.push("workload.grace_period", "must be >= 0");
        }
        if !(self.measurement_window.is_finite() && self.measurement_window > 0.0) {
            v.push("workload.measurement_window", "must be positive");
        }
        if let Some(d) = self.drain_margin {
            if !(d.is_finite() && d >= 0.0) {
                v.push("workload.drain_margin", "must be >= 0");
            }
        }
        v.into_result()
    }
}

/// Per-model request rates under a Zipf split of `total_rps`.
pub fn zipf_split(n_models: usize, alpha: f64, total_rps: f64) -> Vec<f64> {
    let weights: Vec<f64> = (1..=n_models).map(|i| (i as f64).powf(-alpha)).collect();
    let norm: f64 = weights.iter().sum();
    weights.into_iter().map(|w| total_rps * w / norm).collect()
}

fn model_arrivals(spec: &WorkloadSpec, model: usize, rate: f64) -> Vec<f64> {
    let end = spec.horizon();
    let mut out = Vec::new();
    match spec.arrival_process {
        ArrivalProcess::Deterministic => {
            let interval = 1.0 / rate;
            let mut k = 0u64;
            loop {
                let t = k as f64 * interval;
                if t >= end {
                    break;
                }
                out.push(t);
                k += 1;
            }
        }
        ArrivalProcess::Poisson => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(model as u64);
            let mut t = 0.0;
            loop {
                t += -(1.0 - unit_f64(&mut rng)).ln() / rate;
                if t >= end {
                    break;
                }
                out.push(t);
            }
        }
    }
    out
}

/// Time-ordered trace covering `[0, horizon)`. Ties are broken by model id;
/// request ids follow trace order.
pub fn generate_trace(spec: &WorkloadSpec) -> Vec<Request> {
    let rates = zipf_split(spec.n_models, spec.alpha, spec.total_rps);
    let mut arrivals: Vec<(f64, usize)> = rates
        .iter()
        .enumerate()
        .flat_map(|(m, &r)| model_arrivals(spec, m, r).into_iter().map(move |t| (t, m)))
        .collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    arrivals
        .into_iter()
        .enumerate()
        .map(|(id, (t, m))| Request::new(id as u64, m, t, spec.isl, spec.osl))
        .collect()
}

/// Requests whose completion falls in the closed measurement window.
pub fn measurement_filter<'a>(requests: &'a [Request], spec: &WorkloadSpec) -> Vec<&'a Request> {
    let (start, end) = spec.window();
    requests
        .iter()
        .filter(|r| r.is_completed())
        .filter(|r| r.completion_time().is_some_and(|t| t >= start && t <= end))
        .collect()
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn seconds_to_ns(t: f64) -> u64 {
    (t * 1e9).round() as u64
}

/// Writes `arrival_time_ns,model_id,isl,osl` lines, with a header.
pub fn write_trace<W: Write>(mut out: W, trace: &[Request]) -> std::io::Result<()> {
    writeln!(out, "arrival_time_ns,model_id,isl,osl")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{}",
            seconds_to_ns(r.arrival_time),
            r.model_id,
            r.isl,
            r.target_osl
        )?;
    }
    Ok(())
}

/// Reads a trace written by [`write_trace`]. A header line is optional; ids
/// are assigned in file order.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<Request>, TraceError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("arrival_time_ns") {
            continue;
        }
        let err = |message: String| TraceError::Parse { line: idx + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let ns: u64 = fields[0].parse().map_err(|e| err(format!("arrival_time_ns: {e}")))?;
        let model: usize = fields[1].parse().map_err(|e| err(format!("model_id: {e}")))?;
        let isl: u32 = fields[2].parse().map_err(|e| err(format!("isl: {e}")))?;
        let osl: u32 = fields[3].parse().map_err(|e| err(format!("osl: {e}")))?;
        if isl == 0 || osl == 0 {
            return Err(err("isl and osl must be >= 1".into()));
        }
        let t = ns as f64 / 1e9;
        if let Some(prev) = out.last().map(|r: &Request| r.arrival_time) {
            if t < prev {
                return Err(err("arrival times must be nondecreasing".into()));
            }
        }
        out.push(Request::new(out.len() as u64, model, t, isl, osl));
    }
    Ok(out)
}
