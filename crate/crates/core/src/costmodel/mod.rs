//! Analytic timing for prefill, decode steps and KV transfer.
//!
//! Prefill is modeled as compute-bound and decode as memory-bound, both with
//! affine (roofline) forms:
//!
//! ```text
//! prefill  = prefill_fixed_overhead + penalty * isl * prefill_flops_per_token / (mfu * flops)
//! step     = decode_fixed_overhead + (decoder_weight_bytes + sum(kv_tokens * kv_bytes)) / (mbu * hbm_bandwidth)
//! transfer = interconnect_latency + kv_tokens * kv_bytes / interconnect_bandwidth
//! ```
//!
//! `penalty` is `dequant_compute_penalty` when prefill runs on 4-bit weights
//! and 1 otherwise. Decoder weights are read once per step no matter how many
//! requests are batched, which is what makes batching pay.

mod calibrate;

pub use calibrate::{
    calibrate, load_targets, predict_tpot, predict_ttft, Calibration, CalibrationOptions, CalibrationTarget, Residual,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ConfigError, DecoderKey, GpuSpec, KvHandle, ModelProfile, Phase, Violations};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("decode batch mixes decoder weight sets")]
    MixedDecoder,
    #[error("decode batch is empty")]
    EmptyBatch,
    #[error("calibration infeasible: {reason} (max relative residual {max_rel_residual:.4})")]
    CalibrationInfeasible {
        reason: String,
        max_rel_residual: f64,
        residuals: Vec<Residual>,
    },
    #[error("invalid calibration targets: {0}")]
    InvalidTargets(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// FLOP per prompt token for the served backbone.
    pub prefill_flops_per_token: f64,
    /// Seconds per prefill launch.
    pub prefill_fixed_overhead: f64,
    /// Seconds per decode step launch.
    pub decode_fixed_overhead: f64,
    /// Multiplier (>= 1) on prefill compute when prefill weights are 4-bit.
    pub dequant_compute_penalty: f64,
    /// Achieved fraction of peak FLOP/s.
    pub mfu: f64,
    /// Achieved fraction of peak HBM bandwidth.
    pub mbu: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Violations::default();
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.prefill_flops_per_token) {
            v.push("cost.prefill_flops_per_token", "must be positive");
        }
        if !(self.prefill_fixed_overhead.is_finite() && self.prefill_fixed_overhead >= 0.0) {
            v.push("cost.prefill_fixed_overhead", "must be non-negative");
        }
        if !(self.decode_fixed_overhead.is_finite() && self.decode_fixed_overhead >= 0.0) {
            v.push("cost.decode_fixed_overhead", "must be non-negative");
        }
        if !(self.dequant_compute_penalty.is_finite() && self.dequant_compute_penalty >= 1.0) {
            v.push("cost.dequant_compute_penalty", "must be >= 1");
        }
        if !(finite_pos(self.mfu) && self.mfu <= 1.0) {
            v.push("cost.mfu", "must lie in (0, 1]");
        }
        if !(finite_pos(self.mbu) && self.mbu <= 1.0) {
            v.push("cost.mbu", "must lie in (0, 1]");
        }
        v.into_result()
    }

    /// Seconds of prefill compute per prompt token at full precision.
    pub fn prefill_seconds_per_token(&self, gpu: &GpuSpec) -> f64 {
        self.prefill_flops_per_token / (self.mfu * gpu.flops)
    }

    /// Effective HBM bandwidth seen by decode steps.
    pub fn decode_bandwidth(&self, gpu: &GpuSpec) -> f64 {
        self.mbu * gpu.hbm_bandwidth
    }
}

fn dequant_factor(model: &ModelProfile, params: &CostParams) -> f64 {
    if model.prefill_weight_bits < 16 {
        params.dequant_compute_penalty
    } else {
        1.0
    }
}

/// Wall time of one prefill over `isl` prompt tokens.
pub fn prefill_time(model: &ModelProfile, isl: u32, params: &CostParams, gpu: &GpuSpec) -> f64 {
    debug_assert!(isl >= 1);
    params.prefill_fixed_overhead
        + dequant_factor(model, params) * f64::from(isl) * params.prefill_seconds_per_token(gpu)
}

/// One member of a decode batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMember {
    pub decoder: DecoderKey,
    pub kv_tokens: u64,
    pub kv_bytes_per_token: f64,
}

impl BatchMember {
    pub fn new(model: &ModelProfile, model_id: usize, kv_tokens: u64) -> Self {
        Self {
            decoder: model.decoder_key(model_id),
            kv_tokens,
            kv_bytes_per_token: model.kv_bytes_per_token,
        }
    }
}

/// Step time from aggregate byte counts; the engine keeps running totals and
/// calls this directly.
pub fn decode_step_seconds(decoder_weight_bytes: f64, kv_bytes: f64, params: &CostParams, gpu: &GpuSpec) -> f64 {
    params.decode_fixed_overhead + (decoder_weight_bytes + kv_bytes) / params.decode_bandwidth(gpu)
}

/// Wall time of one decode iteration over `batch`.
pub fn decode_step_time(
    batch: &[BatchMember],
    decoder_weight_bytes: f64,
    params: &CostParams,
    gpu: &GpuSpec,
) -> Result<f64, CostError> {
    let first = batch.first().ok_or(CostError::EmptyBatch)?;
    if batch.iter().any(|m| m.decoder != first.decoder) {
        return Err(CostError::MixedDecoder);
    }
    let kv_bytes: f64 = batch.iter().map(|m| m.kv_tokens as f64 * m.kv_bytes_per_token).sum();
    Ok(decode_step_seconds(decoder_weight_bytes, kv_bytes, params, gpu))
}

/// Wall time to move `kv` from its prefill worker to a decode worker.
pub fn transfer_time(kv: &KvHandle, gpu: &GpuSpec) -> f64 {
    debug_assert!(kv.resident_tokens >= 1);
    gpu.interconnect_latency + kv.total_bytes() / gpu.interconnect_bandwidth
}

/// Transfer time for a prompt cache of `tokens` positions.
pub fn transfer_seconds(tokens: u64, kv_bytes_per_token: f64, gpu: &GpuSpec) -> f64 {
    gpu.interconnect_latency + tokens as f64 * kv_bytes_per_token / gpu.interconnect_bandwidth
}

/// Decoder weights for a model in the decode phase.
pub fn decoder_weight_bytes(model: &ModelProfile) -> f64 {
    model.weight_bytes(Phase::Decode)
}
