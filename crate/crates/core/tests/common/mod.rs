#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;

use dpsim::costmodel::{calibrate, load_targets, Calibration, CalibrationOptions, CostParams};
use dpsim::domain::{ClusterConfig, DecodePoolMode, GpuSpec, ModelProfile, Phase, Request};
use dpsim::routing::{DecodeRule, LoadMetric};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fit(csv: &str) -> Calibration {
    let path = repo_root().join("data").join(csv);
    let targets = load_targets(File::open(&path).expect("targets file")).expect("targets parse");
    calibrate(
        &targets,
        &ModelProfile::llama31_8b(),
        &GpuSpec::a100_80gb(),
        &CalibrationOptions::default(),
    )
    .expect("calibration")
}

pub fn cost() -> CostParams {
    CostParams {
        prefill_flops_per_token: 1.606e10,
        prefill_fixed_overhead: 0.0259,
        decode_fixed_overhead: 0.0053,
        dequant_compute_penalty: 1.24,
        mfu: 0.73,
        mbu: 0.92,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    rng.next_u64() % n
}

/// A small random cluster with a tight memory budget and a bursty trace.
pub fn random_case(rng: &mut ChaCha8Rng) -> (ClusterConfig, Vec<Request>) {
    let n = 1 + below(rng, 4) as usize;
    let bits = if below(rng, 2) == 0 { 16 } else { 4 };
    let kv = 65_536.0 * (1 + below(rng, 4)) as f64;
    let model = ModelProfile {
        decode_weight_bits: bits,
        prefill_weight_bits: if below(rng, 3) == 0 { 4 } else { 16 },
        kv_bytes_per_token: kv,
        ..ModelProfile::llama31_8b()
    };
    let max_isl = 1 + below(rng, 2048);
    let max_osl = 1 + below(rng, 300);
    // room for a handful of full-size requests, sometimes less than one
    let per_request = (max_isl + max_osl) as f64 * kv;
    let mut gpu = GpuSpec::a100_80gb();
    let weights = model
        .weight_bytes(Phase::Decode)
        .max(model.weight_bytes(Phase::Prefill));
    gpu.hbm_capacity = weights + per_request * (0.5 + 8.0 * uniform(rng));

    let models = vec![model; n];
    let mut cluster = if below(rng, 3) == 0 {
        ClusterConfig::isolated(models, gpu)
    } else {
        let k = 1 + below(rng, 4) as usize;
        let rule = [
            DecodeRule::LeastOutstandingTokens,
            DecodeRule::RoundRobin,
            DecodeRule::WeightedRandom,
            DecodeRule::Pinned,
        ][below(rng, 4) as usize];
        ClusterConfig::shared(models, k, rule, gpu)
    };
    cluster.routing.seed = rng.next_u64();
    if below(rng, 2) == 0 {
        cluster.routing.load_metric = LoadMetric::ResidentKv;
    }
    assert!(cluster.decode_pool_mode == DecodePoolMode::Isolated || cluster.decode_pool_size >= 1);

    let count = 1 + below(rng, 200);
    let rate = 0.5 + 50.0 * uniform(rng);
    let mut t = 0.0;
    let trace = (0..count)
        .map(|id| {
            if below(rng, 4) != 0 {
                t += -(1.0 - uniform(rng)).ln() / rate;
            }
            let isl = 1 + below(rng, max_isl) as u32;
            let osl = 1 + below(rng, max_osl) as u32;
            Request::new(id, below(rng, n as u64) as usize, t, isl, osl)
        })
        .collect();
    (cluster, trace)
}
