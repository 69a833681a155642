//! Core value types shared by the cost model, workload generator, engine and
//! metrics: requests and their lifecycle timestamps, KV-cache handles, model
//! profiles, GPU specs and the cluster layout.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::{DecodeRule, RoutingPolicy};

/// Index into the deployed model list. Doubles as the popularity rank minus one.
pub type ModelId = usize;
pub type WorkerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decode,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Prefill => f.write_str("prefill"),
            Phase::Decode => f.write_str("decode"),
        }
    }
}

/// Final disposition of a request after a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Still queued or in flight when the run ended.
    #[default]
    Pending,
    Completed,
    /// The request's KV footprint can never fit on its decode worker.
    OverCapacity,
}

/// Lifecycle timestamps in seconds. Each is set when the engine reaches the
/// corresponding point; a completed request has all of them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timestamps {
    pub arrival: f64,
    pub prefill_start: Option<f64>,
    pub prefill_end: Option<f64>,
    pub transfer_end: Option<f64>,
    pub first_token_time: Option<f64>,
    pub completion_time: Option<f64>,
}

impl Timestamps {
    /// `arrival <= prefill_start <= prefill_end <= transfer_end <= first_token <= completion`,
    /// requiring every stamp to be present.
    pub fn is_monotone_chain(&self) -> bool {
        let chain = [
            Some(self.arrival),
            self.prefill_start,
            self.prefill_end,
            self.transfer_end,
            self.first_token_time,
            self.completion_time,
        ];
        if chain.iter().any(Option::is_none) {
            return false;
        }
        chain.windows(2).all(|w| w[0].unwrap() <= w[1].unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub model_id: ModelId,
    pub arrival_time: f64,
    /// Prompt length in tokens.
    pub isl: u32,
    /// Output tokens to generate, including the one produced by prefill.
    pub target_osl: u32,
    /// Output tokens actually delivered so far.
    pub realized_osl: u32,
    pub timestamps: Timestamps,
    pub outcome: Outcome,
    /// Decode worker the request was dispatched to, once routed.
    pub decode_worker: Option<WorkerId>,
}

impl Request {
    pub fn new(id: u64, model_id: ModelId, arrival_time: f64, isl: u32, target_osl: u32) -> Self {
        Self {
            id,
            model_id,
            arrival_time,
            isl,
            target_osl,
            realized_osl: 0,
            timestamps: Timestamps {
                arrival: arrival_time,
                ..Timestamps::default()
            },
            outcome: Outcome::Pending,
            decode_worker: None,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn completion_time(&self) -> Option<f64> {
        self.timestamps.completion_time
    }
}

/// Where a KV cache currently lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvLocation {
    Worker { phase: Phase, worker: WorkerId },
    InTransit,
}

/// A request's KV cache, abstracted to a token counter times a per-token size.
///
/// After prefill it holds the prompt cache (`isl` positions); every decode
/// step appends one position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KvHandle {
    pub request_id: u64,
    pub resident_tokens: u64,
    pub bytes_per_token: f64,
    pub location: KvLocation,
}

impl KvHandle {
    pub fn total_bytes(&self) -> f64 {
        self.resident_tokens as f64 * self.bytes_per_token
    }
}

/// Identity of the decoder weights a request decodes with. Requests can share
/// a decode batch only when their keys are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DecoderKey {
    /// The common frozen decoder, identified by its size and precision.
    Shared { param_count_bits: u64, weight_bits: u8 },
    /// A model-private decoder.
    Private(ModelId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    #[serde(default)]
    pub name: String,
    pub param_count: f64,
    pub prefill_weight_bits: u8,
    pub decode_weight_bits: u8,
    pub kv_bytes_per_token: f64,
    #[serde(default = "default_true")]
    pub shared_decoder: bool,
}

fn default_true() -> bool {
    true
}

impl ModelProfile {
    pub fn llama31_8b() -> Self {
        // 32 layers x 8 KV heads x 128 head dim x (K,V) x 2 bytes
        Self {
            name: "llama3.1-8b".to_string(),
            param_count: 8.03e9,
            prefill_weight_bits: 16,
            decode_weight_bits: 16,
            kv_bytes_per_token: 131_072.0,
            shared_decoder: true,
        }
    }

    pub fn qwen3_8b() -> Self {
        Self {
            name: "qwen3-8b".to_string(),
            param_count: 8.19e9,
            prefill_weight_bits: 16,
            decode_weight_bits: 16,
            kv_bytes_per_token: 147_456.0,
            shared_decoder: true,
        }
    }

    /// Built-in profiles looked up by name (case-insensitive).
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "llama3.1-8b" | "llama-3.1-8b" | "llama31-8b" | "llama31_8b" => Some(Self::llama31_8b()),
            "qwen3-8b" | "qwen3-8b-base" | "qwen3_8b" => Some(Self::qwen3_8b()),
            _ => None,
        }
    }

    pub fn weight_bits(&self, phase: Phase) -> u8 {
        match phase {
            Phase::Prefill => self.prefill_weight_bits,
            Phase::Decode => self.decode_weight_bits,
        }
    }

    pub fn weight_bytes(&self, phase: Phase) -> f64 {
        self.param_count * f64::from(self.weight_bits(phase)) / 8.0
    }

    pub fn decoder_key(&self, model_id: ModelId) -> DecoderKey {
        if self.shared_decoder {
            DecoderKey::Shared {
                param_count_bits: self.param_count.to_bits(),
                weight_bits: self.decode_weight_bits,
            }
        } else {
            DecoderKey::Private(model_id)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    /// Peak dense compute, FLOP/s.
    pub flops: f64,
    /// HBM bandwidth, bytes/s.
    pub hbm_bandwidth: f64,
    /// HBM capacity, bytes.
    pub hbm_capacity: f64,
    /// Prefill-to-decode KV transfer bandwidth, bytes/s.
    pub interconnect_bandwidth: f64,
    /// Fixed per-transfer latency, seconds.
    pub interconnect_latency: f64,
}

impl GpuSpec {
    /// A100 80GB SXM with NVLink between prefill and decode GPUs.
    pub fn a100_80gb() -> Self {
        Self {
            flops: 312e12,
            hbm_bandwidth: 2.039e12,
            hbm_capacity: 80e9,
            interconnect_bandwidth: 300e9,
            interconnect_latency: 100e-6,
        }
    }
}

impl Default for GpuSpec {
    fn default() -> Self {
        Self::a100_80gb()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodePoolMode {
    /// One decode worker pinned to each model.
    Isolated,
    /// Decode workers pooled across all models.
    Shared,
}

impl fmt::Display for DecodePoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodePoolMode::Isolated => f.write_str("isolated"),
            DecodePoolMode::Shared => f.write_str("shared"),
        }
    }
}

/// Deployed models plus the worker layout. Prefill worker `i` serves model `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub models: Vec<ModelProfile>,
    pub decode_pool_mode: DecodePoolMode,
    pub decode_pool_size: usize,
    pub routing: RoutingPolicy,
    pub gpu: GpuSpec,
}

impl ClusterConfig {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn prefill_workers(&self) -> usize {
        self.models.len()
    }

    /// The model-isolated baseline: one prefill and one decode GPU per model.
    pub fn isolated(models: Vec<ModelProfile>, gpu: GpuSpec) -> Self {
        let n = models.len();
        Self {
            models,
            decode_pool_mode: DecodePoolMode::Isolated,
            decode_pool_size: n,
            routing: RoutingPolicy::isolated(n),
            gpu,
        }
    }

    /// One prefill GPU per model and `k` pooled decode GPUs.
    pub fn shared(models: Vec<ModelProfile>, k: usize, rule: DecodeRule, gpu: GpuSpec) -> Self {
        let n = models.len();
        Self {
            models,
            decode_pool_mode: DecodePoolMode::Shared,
            decode_pool_size: k,
            routing: RoutingPolicy::shared(n, k, rule),
            gpu,
        }
    }

    /// Models served by decode worker `worker`.
    pub fn served_models(&self, worker: WorkerId) -> BTreeSet<ModelId> {
        match self.decode_pool_mode {
            DecodePoolMode::Shared => (0..self.n_models()).collect(),
            DecodePoolMode::Isolated => (0..self.n_models())
                .filter(|&m| self.routing.pinned_worker(m) == Some(worker))
                .collect(),
        }
    }

    /// Bytes of decoder weights resident on decode worker `worker`.
    pub fn decode_weight_bytes(&self, worker: WorkerId) -> f64 {
        let mut seen = BTreeSet::new();
        self.served_models(worker)
            .into_iter()
            .filter(|&m| seen.insert(self.models[m].decoder_key(m)))
            .map(|m| self.models[m].weight_bytes(Phase::Decode))
            .sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Violations::default();
        let n = self.models.len();
        if n == 0 {
            v.push("models", "at least one model is required");
        }
        for (i, m) in self.models.iter().enumerate() {
            let path = |f: &str| format!("models[{i}].{f}");
            if !(m.param_count.is_finite() && m.param_count > 0.0) {
                v.push(path("param_count"), "must be a positive finite number");
            }
            if !matches!(m.prefill_weight_bits, 4 | 16) {
                v.push(path("prefill_weight_bits"), "must be 16 or 4");
            }
            if !matches!(m.decode_weight_bits, 4 | 16) {
                v.push(path("decode_weight_bits"), "must be 16 or 4");
            }
            if !(m.kv_bytes_per_token.is_finite() && m.kv_bytes_per_token > 0.0) {
                v.push(path("kv_bytes_per_token"), "must be a positive finite number");
            }
            if m.weight_bytes(Phase::Prefill) > self.gpu.hbm_capacity {
                v.push(path("param_count"), "prefill weights exceed hbm_capacity");
            }
            if m.weight_bytes(Phase::Decode) > self.gpu.hbm_capacity {
                v.push(path("param_count"), "decode weights exceed hbm_capacity");
            }
        }

        // Every model flagged as using the shared decoder must agree on it.
        let shared: Vec<_> = self
            .models
            .iter()
            .enumerate()
            .filter(|(_, m)| m.shared_decoder)
            .collect();
        if let Some((first_idx, first)) = shared.first() {
            for (i, m) in shared.iter().skip(1) {
                if m.decode_weight_bits != first.decode_weight_bits {
                    v.push(
                        format!("models[{i}].decode_weight_bits"),
                        format!(
                            "shared decoder precision {} differs from models[{first_idx}] ({})",
                            m.decode_weight_bits, first.decode_weight_bits
                        ),
                    );
                }
                if m.param_count != first.param_count {
                    v.push(
                        format!("models[{i}].param_count"),
                        format!("shared decoder size differs from models[{first_idx}]"),
                    );
                }
            }
        }

        for (field, value) in [
            ("flops", self.gpu.flops),
            ("hbm_bandwidth", self.gpu.hbm_bandwidth),
            ("hbm_capacity", self.gpu.hbm_capacity),
            ("interconnect_bandwidth", self.gpu.interconnect_bandwidth),
            ("interconnect_latency", self.gpu.interconnect_latency),
        ] {
            if !(value.is_finite() && value > 0.0) {
                v.push(format!("gpu.{field}"), "must be a positive finite number");
            }
        }

        let k = self.decode_pool_size;
        if k == 0 {
            v.push("decode_pool_size", "must be at least 1");
        }
        match self.decode_pool_mode {
            DecodePoolMode::Isolated => {
                if k != n {
                    v.push(
                        "decode_pool_size",
                        format!("isolated mode requires one decode worker per model (K == {n}), got {k}"),
                    );
                }
                if self.routing.decode_rule != DecodeRule::Pinned {
                    v.push("routing.decode_rule", "isolated mode only accepts the pinned rule");
                } else {
                    let targets: BTreeSet<_> = (0..n).filter_map(|m| self.routing.pinned_worker(m)).collect();
                    if targets.len() != n {
                        v.push(
                            "routing.pinned",
                            "isolated mode requires a one-to-one model-to-worker pinning",
                        );
                    }
                }
            }
            DecodePoolMode::Shared => {
                for (i, m) in self.models.iter().enumerate() {
                    if !m.shared_decoder {
                        v.push(
                            format!("models[{i}].shared_decoder"),
                            "a shared decode pool requires every model to use the shared decoder",
                        );
                    }
                }
            }
        }

        if self.routing.prefill.len() != n {
            v.push(
                "routing.prefill",
                format!(
                    "expected one prefill mapping per model ({n}), got {}",
                    self.routing.prefill.len()
                ),
            );
        }
        for (m, &w) in self.routing.prefill.iter().enumerate() {
            if w >= n {
                v.push(
                    format!("routing.prefill[{m}]"),
                    format!("prefill worker {w} does not exist"),
                );
            }
        }
        if self.routing.decode_rule == DecodeRule::Pinned {
            if self.routing.pinned.len() != n {
                v.push(
                    "routing.pinned",
                    format!(
                        "expected one decode pin per model ({n}), got {}",
                        self.routing.pinned.len()
                    ),
                );
            }
            for (m, &w) in self.routing.pinned.iter().enumerate() {
                if w >= k {
                    v.push(
                        format!("routing.pinned[{m}]"),
                        format!("decode worker {w} does not exist"),
                    );
                }
            }
        }

        v.into_result()
    }
}

/// Checks `config` and hands it back if every invariant holds.
pub fn validate_cluster(config: ClusterConfig) -> Result<ClusterConfig, ConfigError> {
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Default)]
pub(crate) struct Violations(Vec<Violation>);

impl Violations {
    pub(crate) fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    pub(crate) fn extend(&mut self, other: ConfigError) {
        let ConfigError::Invalid(list) = other;
        self.0.extend(list);
    }

    pub(crate) fn into_result(self) -> Result<(), ConfigError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(self.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        let ConfigError::Invalid(v) = self;
        v
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
