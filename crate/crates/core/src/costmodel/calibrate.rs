//! Closed-form fit of [`CostParams`] to measured TTFT/TPOT rows.
//!
//! Both phases are linear in their unknowns, so the fit is two small weighted
//! least-squares solves (weights `1 / measured`, i.e. relative residuals):
//!
//! * decode: `tpot = o_d + a * weight_bytes + g * concurrency * mean_kv_tokens`,
//!   where `a = 1 / (mbu * bw)` and `g = kv_bytes_per_token * a`. The KV term is
//!   only identifiable when the rows vary concurrency or lengths independently
//!   of precision; otherwise the backbone's configured KV size is kept and only
//!   `o_d` and `a` are fitted.
//! * prefill: `ttft - transfer = o_p + s * isl` over 16-bit-prefill rows, then
//!   the dequantization penalty from the 4-bit rows with `o_p` and `s` held.
//!
//! A parameter that a target set cannot pin down (one distinct ISL, one
//! distinct decode byte count) is resolved by setting the matching fixed
//! overhead to zero, so a single consistent row is fitted exactly.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{decode_step_seconds, prefill_time, transfer_seconds, CostError, CostParams};
use crate::domain::{GpuSpec, ModelProfile};

/// One measured configuration. Either latency may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub model: String,
    pub prefill_bits: u8,
    pub decode_bits: u8,
    pub isl: u32,
    pub osl: u32,
    pub concurrency: u32,
    pub ttft_ms: Option<f64>,
    pub tpot_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Maximum relative residual accepted on any measured value.
    pub tolerance: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { tolerance: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub row: usize,
    pub metric: String,
    pub measured_ms: f64,
    pub predicted_ms: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: CostParams,
    /// KV bytes per token used by the fit: fitted when identifiable, else the
    /// backbone's configured value.
    pub kv_bytes_per_token: f64,
    pub kv_bytes_fitted: bool,
    pub residuals: Vec<Residual>,
    pub max_rel_residual: f64,
}

impl Calibration {
    /// `backbone` with the calibrated KV size.
    pub fn apply_kv(&self, backbone: &ModelProfile) -> ModelProfile {
        ModelProfile {
            kv_bytes_per_token: self.kv_bytes_per_token,
            ..backbone.clone()
        }
    }
}

/// Parses a targets CSV with header
/// `model,prefill_bits,decode_bits,isl,osl,concurrency,ttft_ms,tpot_ms`.
pub fn load_targets<R: Read>(reader: R) -> Result<Vec<CalibrationTarget>, csv::Error> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
        .deserialize()
        .collect()
}

fn row_profile(backbone: &ModelProfile, t: &CalibrationTarget, kv_bytes: f64) -> ModelProfile {
    ModelProfile {
        prefill_weight_bits: t.prefill_bits,
        decode_weight_bits: t.decode_bits,
        kv_bytes_per_token: kv_bytes,
        ..backbone.clone()
    }
}

fn weight_bytes(backbone: &ModelProfile, bits: u8) -> f64 {
    backbone.param_count * f64::from(bits) / 8.0
}

/// Mean batch KV tokens over a closed-loop run at `concurrency`: each request
/// is priced at `isl + j - 1` resident tokens for steps `j = 1..osl-1`.
fn mean_batch_kv_tokens(t: &CalibrationTarget) -> f64 {
    f64::from(t.concurrency) * (f64::from(t.isl) + (f64::from(t.osl) - 2.0) / 2.0)
}

/// Predicted TTFT (seconds) at concurrency 1: prefill plus prompt-cache transfer.
pub fn predict_ttft(
    t: &CalibrationTarget,
    backbone: &ModelProfile,
    kv_bytes: f64,
    params: &CostParams,
    gpu: &GpuSpec,
) -> f64 {
    let model = row_profile(backbone, t, kv_bytes);
    prefill_time(&model, t.isl, params, gpu) + transfer_seconds(u64::from(t.isl), kv_bytes, gpu)
}

/// Predicted TPOT (seconds): the mean decode step over a run with
/// `concurrency` requests in flight.
pub fn predict_tpot(
    t: &CalibrationTarget,
    backbone: &ModelProfile,
    kv_bytes: f64,
    params: &CostParams,
    gpu: &GpuSpec,
) -> f64 {
    decode_step_seconds(
        weight_bytes(backbone, t.decode_bits),
        kv_bytes * mean_batch_kv_tokens(t),
        params,
        gpu,
    )
}

/// Weighted least squares with column scaling; `None` when the design is
/// rank deficient.
fn weighted_lstsq(design: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let n = design.len();
    let p = design.first()?.len();
    if n < p {
        return None;
    }
    let scale: Vec<f64> = (0..p)
        .map(|j| design.iter().map(|r| r[j].abs()).fold(0.0, f64::max))
        .collect();
    if scale.contains(&0.0) {
        return None;
    }
    let a = DMatrix::from_fn(n, p, |i, j| w[i] * design[i][j] / scale[j]);
    let b = DVector::from_fn(n, |i, _| w[i] * y[i]);
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    // rank-deficient, or NaN anywhere in the spectrum
    if min.partial_cmp(&(max * 1e-10)) != Some(std::cmp::Ordering::Greater) {
        return None;
    }
    let x = svd.solve(&b, 0.0).ok()?;
    Some((0..p).map(|j| x[j] / scale[j]).collect())
}

/// Fits [`CostParams`] to `targets` for a single backbone.
pub fn calibrate(
    targets: &[CalibrationTarget],
    backbone: &ModelProfile,
    gpu: &GpuSpec,
    opts: &CalibrationOptions,
) -> Result<Calibration, CostError> {
    for (i, t) in targets.iter().enumerate() {
        if !matches!(t.prefill_bits, 4 | 16) || !matches!(t.decode_bits, 4 | 16) {
            return Err(CostError::InvalidTargets(format!("row {i}: bits must be 16 or 4")));
        }
        if t.isl == 0 || t.concurrency == 0 {
            return Err(CostError::InvalidTargets(format!(
                "row {i}: isl and concurrency must be >= 1"
            )));
        }
        if t.tpot_ms.is_some() && t.osl < 2 {
            return Err(CostError::InvalidTargets(format!("row {i}: tpot needs osl >= 2")));
        }
        for v in [t.ttft_ms, t.tpot_ms].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostError::InvalidTargets(format!(
                    "row {i}: latencies must be positive"
                )));
            }
        }
    }

    let (decode_overhead, inv_bw, kv_bytes, kv_fitted) = fit_decode(targets, backbone)?;
    let (prefill_overhead, sec_per_token, penalty) = fit_prefill(targets, kv_bytes, gpu)?;

    let flops_per_token = 2.0 * backbone.param_count;
    let params = CostParams {
        prefill_flops_per_token: flops_per_token,
        prefill_fixed_overhead: prefill_overhead,
        decode_fixed_overhead: decode_overhead,
        dequant_compute_penalty: penalty,
        mfu: flops_per_token / (sec_per_token * gpu.flops),
        mbu: 1.0 / (inv_bw * gpu.hbm_bandwidth),
    };

    let residuals = residuals(targets, backbone, kv_bytes, &params, gpu);
    let max_rel_residual = residuals.iter().map(|r| r.rel_error.abs()).fold(0.0, f64::max);

    if let Err(e) = params.validate() {
        return Err(CostError::CalibrationInfeasible {
            reason: format!("fitted parameters out of range: {e}"),
            max_rel_residual,
            residuals,
        });
    }
    if !(kv_bytes.is_finite() && kv_bytes > 0.0) {
        return Err(CostError::CalibrationInfeasible {
            reason: "fitted KV bytes per token is not positive".into(),
            max_rel_residual,
            residuals,
        });
    }
    if max_rel_residual > opts.tolerance {
        return Err(CostError::CalibrationInfeasible {
            reason: format!("residual exceeds tolerance {}", opts.tolerance),
            max_rel_residual,
            residuals,
        });
    }
    Ok(Calibration {
        params,
        kv_bytes_per_token: kv_bytes,
        kv_bytes_fitted: kv_fitted,
        residuals,
        max_rel_residual,
    })
}

/// Returns `(decode_fixed_overhead, 1 / (mbu * bw), kv_bytes_per_token, kv_fitted)`.
fn fit_decode(targets: &[CalibrationTarget], backbone: &ModelProfile) -> Result<(f64, f64, f64, bool), CostError> {
    let rows: Vec<_> = targets
        .iter()
        .filter_map(|t| t.tpot_ms.map(|ms| (t, ms / 1e3)))
        .collect();
    if rows.is_empty() {
        return Err(CostError::InvalidTargets("no row carries a TPOT measurement".into()));
    }
    let y: Vec<f64> = rows.iter().map(|(_, s)| *s).collect();
    let w: Vec<f64> = y.iter().map(|v| 1.0 / v).collect();
    let xw: Vec<f64> = rows
        .iter()
        .map(|(t, _)| weight_bytes(backbone, t.decode_bits))
        .collect();
    let xk: Vec<f64> = rows.iter().map(|(t, _)| mean_batch_kv_tokens(t)).collect();

    let full: Vec<Vec<f64>> = (0..rows.len()).map(|i| vec![1.0, xw[i], xk[i]]).collect();
    if let Some(x) = weighted_lstsq(&full, &y, &w) {
        let (o, a, g) = (x[0], x[1], x[2]);
        if a > 0.0 && g > 0.0 {
            return Ok((o, a, g / a, true));
        }
    }

    let kv = backbone.kv_bytes_per_token;
    let z: Vec<f64> = (0..rows.len()).map(|i| xw[i] + kv * xk[i]).collect();
    let affine: Vec<Vec<f64>> = z.iter().map(|&z| vec![1.0, z]).collect();
    if let Some(x) = weighted_lstsq(&affine, &y, &w) {
        return Ok((x[0], x[1], kv, false));
    }
    Ok((0.0, through_origin(&z, &y, &w), kv, false))
}

/// Returns `(prefill_fixed_overhead, seconds_per_token, dequant_penalty)`.
fn fit_prefill(targets: &[CalibrationTarget], kv_bytes: f64, gpu: &GpuSpec) -> Result<(f64, f64, f64), CostError> {
    let rows: Vec<_> = targets
        .iter()
        .filter_map(|t| {
            t.ttft_ms.map(|ms| {
                let measured = ms / 1e3;
                let compute = measured - transfer_seconds(u64::from(t.isl), kv_bytes, gpu);
                (t, measured, compute)
            })
        })
        .collect();
    let (full, quant): (Vec<&(&CalibrationTarget, f64, f64)>, Vec<_>) =
        rows.iter().partition(|(t, _, _)| t.prefill_bits == 16);
    if full.is_empty() {
        return Err(CostError::InvalidTargets(
            "at least one 16-bit prefill row with a TTFT measurement is required".into(),
        ));
    }

    let y: Vec<f64> = full.iter().map(|r| r.2).collect();
    let w: Vec<f64> = full.iter().map(|r| 1.0 / r.1).collect();
    let isl: Vec<f64> = full.iter().map(|r| f64::from(r.0.isl)).collect();
    let design: Vec<Vec<f64>> = isl.iter().map(|&x| vec![1.0, x]).collect();
    let (overhead, slope) = match weighted_lstsq(&design, &y, &w) {
        Some(x) => (x[0], x[1]),
        None => (0.0, through_origin(&isl, &y, &w)),
    };

    let penalty = if quant.is_empty() {
        1.0
    } else {
        let y: Vec<f64> = quant.iter().map(|r| r.2 - overhead).collect();
        let w: Vec<f64> = quant.iter().map(|r| 1.0 / r.1).collect();
        let x: Vec<f64> = quant.iter().map(|r| slope * f64::from(r.0.isl)).collect();
        through_origin(&x, &y, &w)
    };
    Ok((overhead, slope, penalty))
}

/// Weighted least-squares slope of `y = b * x`.
fn through_origin(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let num: f64 = (0..x.len()).map(|i| w[i] * w[i] * x[i] * y[i]).sum();
    let den: f64 = (0..x.len()).map(|i| w[i] * w[i] * x[i] * x[i]).sum();
    num / den
}

fn residuals(
    targets: &[CalibrationTarget],
    backbone: &ModelProfile,
    kv_bytes: f64,
    params: &CostParams,
    gpu: &GpuSpec,
) -> Vec<Residual> {
    let mut out = Vec::new();
    for (row, t) in targets.iter().enumerate() {
        if let Some(ms) = t.ttft_ms {
            let predicted_ms = predict_ttft(t, backbone, kv_bytes, params, gpu) * 1e3;
            out.push(Residual {
                row,
                metric: "ttft".into(),
                measured_ms: ms,
                predicted_ms,
                rel_error: (predicted_ms - ms) / ms,
            });
        }
        if let Some(ms) = t.tpot_ms {
            let predicted_ms = predict_tpot(t, backbone, kv_bytes, params, gpu) * 1e3;
            out.push(Residual {
                row,
                metric: "tpot".into(),
                measured_ms: ms,
                predicted_ms,
                rel_error: (predicted_ms - ms) / ms,
            });
        }
    }
    out
}
