//! Request dispatch. Prefill routing is a fixed model-to-worker map; decode
//! routing is pluggable, and every rule except `Pinned` ignores the model id.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ModelId, Request, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("model {0} has no mapped worker")]
    UnknownModel(ModelId),
    #[error("decode pool is empty")]
    EmptyPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    /// Fixed model-to-worker map.
    Pinned,
    /// Argmin of outstanding load, lowest worker id on ties.
    LeastOutstandingTokens,
    RoundRobin,
    /// Sampled with probability proportional to `1 / (1 + load)`.
    WeightedRandom,
}

impl DecodeRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecodeRule::Pinned => "pinned",
            DecodeRule::LeastOutstandingTokens => "least_outstanding_tokens",
            DecodeRule::RoundRobin => "round_robin",
            DecodeRule::WeightedRandom => "weighted_random",
        }
    }
}

/// What counts as a worker's load for the load-aware rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMetric {
    /// Resident KV + queued prompt tokens + tokens still to generate.
    #[default]
    OutstandingTokens,
    /// Resident KV tokens only.
    ResidentKv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    /// `prefill[m]` is the prefill worker for model `m`.
    pub prefill: Vec<WorkerId>,
    pub decode_rule: DecodeRule,
    /// `pinned[m]` is the decode worker for model `m` under [`DecodeRule::Pinned`].
    #[serde(default)]
    pub pinned: Vec<WorkerId>,
    #[serde(default)]
    pub load_metric: LoadMetric,
    /// Seed for [`DecodeRule::WeightedRandom`].
    #[serde(default)]
    pub seed: u64,
}

impl RoutingPolicy {
    pub fn isolated(n_models: usize) -> Self {
        Self {
            prefill: (0..n_models).collect(),
            decode_rule: DecodeRule::Pinned,
            pinned: (0..n_models).collect(),
            load_metric: LoadMetric::default(),
            seed: 0,
        }
    }

    pub fn shared(n_models: usize, k: usize, rule: DecodeRule) -> Self {
        Self {
            prefill: (0..n_models).collect(),
            decode_rule: rule,
            pinned: (0..n_models).map(|m| m % k.max(1)).collect(),
            load_metric: LoadMetric::default(),
            seed: 0,
        }
    }

    pub fn pinned_worker(&self, model: ModelId) -> Option<WorkerId> {
        self.pinned.get(model).copied()
    }
}

/// Prefill worker for `request`; a pure lookup.
pub fn route_prefill(request: &Request, policy: &RoutingPolicy) -> Result<WorkerId, RoutingError> {
    policy
        .prefill
        .get(request.model_id)
        .copied()
        .ok_or(RoutingError::UnknownModel(request.model_id))
}

/// Load snapshot of one decode worker at decision time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkerLoad {
    pub worker_id: WorkerId,
    pub resident_kv_tokens: u64,
    /// Prompt tokens of requests queued for (or in transit to) this worker.
    pub queued_prompt_tokens: u64,
    /// Output tokens still to be generated by queued and active requests.
    pub remaining_target_tokens: u64,
}

impl WorkerLoad {
    pub fn load(&self, metric: LoadMetric) -> u64 {
        match metric {
            LoadMetric::OutstandingTokens => {
                self.resident_kv_tokens + self.queued_prompt_tokens + self.remaining_target_tokens
            }
            LoadMetric::ResidentKv => self.resident_kv_tokens,
        }
    }
}

/// Stateful decode dispatcher: one per simulation, centralized.
#[derive(Debug, Clone)]
pub struct DecodeDispatcher {
    rule: DecodeRule,
    pinned: Vec<WorkerId>,
    metric: LoadMetric,
    next_rr: usize,
    rng: ChaCha8Rng,
}

impl DecodeDispatcher {
    pub fn new(policy: &RoutingPolicy) -> Self {
        Self {
            rule: policy.decode_rule,
            pinned: policy.pinned.clone(),
            metric: policy.load_metric,
            next_rr: 0,
            rng: ChaCha8Rng::seed_from_u64(policy.seed),
        }
    }

    pub fn rule(&self) -> DecodeRule {
        self.rule
    }

    pub fn route(&mut self, request: &Request, pool: &[WorkerLoad]) -> Result<WorkerId, RoutingError> {
        if pool.is_empty() {
            return Err(RoutingError::EmptyPool);
        }
        match self.rule {
            DecodeRule::Pinned => {
                let target = self
                    .pinned
                    .get(request.model_id)
                    .copied()
                    .ok_or(RoutingError::UnknownModel(request.model_id))?;
                pool.iter()
                    .find(|w| w.worker_id == target)
                    .map(|w| w.worker_id)
                    .ok_or(RoutingError::UnknownModel(request.model_id))
            }
            DecodeRule::LeastOutstandingTokens => Ok(least_loaded(pool, self.metric)),
            DecodeRule::RoundRobin => {
                let w = pool[self.next_rr % pool.len()].worker_id;
                self.next_rr = self.next_rr.wrapping_add(1);
                Ok(w)
            }
            DecodeRule::WeightedRandom => {
                let weights: Vec<f64> = pool.iter().map(|w| 1.0 / (1.0 + w.load(self.metric) as f64)).collect();
                let total: f64 = weights.iter().sum();
                let mut target = unit_f64(&mut self.rng) * total;
                for (w, weight) in pool.iter().zip(&weights) {
                    if target < *weight {
                        return Ok(w.worker_id);
                    }
                    target -= weight;
                }
                Ok(pool[pool.len() - 1].worker_id)
            }
        }
    }
}

/// Worker with minimal load; ties go to the lowest worker id.
pub fn least_loaded(pool: &[WorkerLoad], metric: LoadMetric) -> WorkerId {
    pool.iter()
        .min_by_key(|w| (w.load(metric), w.worker_id))
        .map(|w| w.worker_id)
        .expect("pool checked non-empty")
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one `u64`.
pub(crate) fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Convenience wrapper for a single decision with a fresh dispatcher.
pub fn route_decode(request: &Request, pool: &[WorkerLoad], policy: &RoutingPolicy) -> Result<WorkerId, RoutingError> {
    DecodeDispatcher::new(policy).route(request, pool)
}
