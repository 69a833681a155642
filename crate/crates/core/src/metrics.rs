//! Per-request latencies and per-run aggregates.
//!
//! TPOT is averaged over per-request values; ITL is the ratio of summed
//! decode time to summed decode tokens. Percentiles use nearest rank.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Request;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("request {0} lacks a complete timestamp chain")]
    IncompleteRequest(u64),
    #[error("no request completed inside the measurement window")]
    EmptyWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub ttft: f64,
    /// `None` when the request produced fewer than two tokens.
    pub tpot: Option<f64>,
    pub e2e: f64,
}

pub fn per_request_metrics(r: &Request) -> Result<RequestMetrics, MetricsError> {
    let first = r.timestamps.first_token_time;
    let done = r.timestamps.completion_time;
    let (Some(first), Some(done)) = (first, done) else {
        return Err(MetricsError::IncompleteRequest(r.id));
    };
    let tpot = (r.realized_osl >= 2).then(|| (done - first) / f64::from(r.realized_osl - 1));
    Ok(RequestMetrics {
        ttft: first - r.arrival_time,
        tpot,
        e2e: done - r.arrival_time,
    })
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it. `sorted` must be ascending and non-empty.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
}

impl LatencyStats {
    /// Zeros for an empty sample.
    pub fn from_samples(mut xs: Vec<f64>) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        xs.sort_by(f64::total_cmp);
        Self {
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            p50: nearest_rank(&xs, 50.0),
            p99: nearest_rank(&xs, 99.0),
        }
    }
}

/// Denominators for one run's aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowInfo {
    pub measurement_window: f64,
    pub offered_rps: f64,
    pub decode_gpus: usize,
    /// Prefill plus decode GPUs.
    pub total_gpus: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub completed: usize,
    /// Seconds.
    pub ttft: LatencyStats,
    /// Seconds.
    pub tpot: LatencyStats,
    pub itl_mean: f64,
    pub e2e_mean: f64,
    /// `1 / tpot.mean`; zero when no request decoded.
    pub interactivity_tok_s: f64,
    pub output_throughput_tok_s: f64,
    pub throughput_per_decode_gpu: f64,
    pub throughput_per_gpu_all: f64,
    pub achieved_rps: f64,
    pub offered_rps: f64,
    pub achieved_offered_ratio: f64,
}

/// Aggregates requests already filtered to the measurement window.
pub fn summarize(requests: &[&Request], info: &WindowInfo) -> Result<RunSummary, MetricsError> {
    if requests.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let per = requests
        .iter()
        .map(|r| per_request_metrics(r))
        .collect::<Result<Vec<_>, _>>()?;

    let tpots: Vec<f64> = per.iter().filter_map(|m| m.tpot).collect();
    let tpot = LatencyStats::from_samples(tpots.clone());
    let ttft = LatencyStats::from_samples(per.iter().map(|m| m.ttft).collect());
    let e2e_mean = per.iter().map(|m| m.e2e).sum::<f64>() / per.len() as f64;

    let (decode_time, decode_tokens) =
        requests
            .iter()
            .filter(|r| r.realized_osl >= 2)
            .fold((0.0, 0u64), |(t, n), r| {
                let span = r.timestamps.completion_time.unwrap() - r.timestamps.first_token_time.unwrap();
                (t + span, n + u64::from(r.realized_osl - 1))
            });
    let itl_mean = if decode_tokens == 0 {
        0.0
    } else {
        decode_time / decode_tokens as f64
    };

    let tokens: u64 = requests.iter().map(|r| u64::from(r.realized_osl)).sum();
    let window = info.measurement_window;
    let output = tokens as f64 / window;
    let achieved = requests.len() as f64 / window;
    Ok(RunSummary {
        completed: requests.len(),
        ttft,
        tpot,
        itl_mean,
        e2e_mean,
        interactivity_tok_s: if tpot.mean > 0.0 { 1.0 / tpot.mean } else { 0.0 },
        output_throughput_tok_s: output,
        throughput_per_decode_gpu: output / info.decode_gpus as f64,
        throughput_per_gpu_all: output / info.total_gpus as f64,
        achieved_rps: achieved,
        offered_rps: info.offered_rps,
        achieved_offered_ratio: achieved / info.offered_rps,
    })
}
