//! Discrete-event simulator for disaggregated LLM serving where several
//! task-specialized prefill models share one frozen decoder, so decode GPUs
//! can be pooled across models instead of partitioned per model.
//!
//! The crate is organised bottom-up:
//!
//! - [`domain`]: requests, model and GPU profiles, cluster topology;
//! - [`costmodel`]: roofline timing for prefill, decode steps and KV transfer,
//!   plus a least-squares fit against measured latencies;
//! - [`workload`]: Zipf-skewed open-loop arrival traces;
//! - [`routing`]: prefill and decode dispatch rules;
//! - [`engine`]: the event loop with continuous-batching decode workers;
//! - [`metrics`]: TTFT, TPOT, throughput and achieved/offered ratio;
//! - [`config`] and [`harness`]: experiment files, sweeps and output tables.
//!
//! ```
//! use dpsim::domain::{ClusterConfig, GpuSpec, ModelProfile, Request};
//! use dpsim::costmodel::CostParams;
//! use dpsim::engine::{run, SimOptions};
//! use dpsim::routing::DecodeRule;
//!
//! let models = vec![ModelProfile::llama31_8b(); 2];
//! let cluster = ClusterConfig::shared(models, 1, DecodeRule::LeastOutstandingTokens, GpuSpec::a100_80gb());
//! let cost = CostParams {
//!     prefill_flops_per_token: 1.606e10,
//!     prefill_fixed_overhead: 0.01,
//!     decode_fixed_overhead: 0.004,
//!     dequant_compute_penalty: 1.2,
//!     mfu: 0.6,
//!     mbu: 0.8,
//! };
//! let trace = vec![Request::new(0, 0, 0.0, 512, 16), Request::new(1, 1, 0.0, 512, 16)];
//! let out = run(&cluster, &trace, &cost, &SimOptions::default()).unwrap();
//! assert_eq!(out.completed().count(), 2);
//! ```

pub mod config;
pub mod costmodel;
pub mod domain;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod routing;
pub mod workload;

use thiserror::Error;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] domain::ConfigError),
    #[error(transparent)]
    Load(#[from] config::LoadError),
    #[error(transparent)]
    Cost(#[from] costmodel::CostError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Trace(#[from] workload::TraceError),
}
