//! Declarative experiment files.
//!
//! One TOML file carries the cluster, GPU, cost, routing, workload and
//! simulation sections. Missing model fields fall back to a named preset and
//! missing GPU fields to the A100 80GB defaults. See `docs/config.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costmodel::CostParams;
use crate::domain::{ClusterConfig, ConfigError, DecodePoolMode, GpuSpec, ModelProfile, Violations};
use crate::engine::SimOptions;
use crate::routing::{DecodeRule, LoadMetric, RoutingPolicy};
use crate::workload::{ArrivalProcess, WorkloadSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    /// `llama31_8b` or `qwen3_8b`; supplies every field left unset.
    pub preset: Option<String>,
    pub name: Option<String>,
    pub param_count: Option<f64>,
    pub prefill_weight_bits: Option<u8>,
    pub decode_weight_bits: Option<u8>,
    pub kv_bytes_per_token: Option<f64>,
    pub shared_decoder: Option<bool>,
    /// Number of identical copies of this entry.
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub models: Vec<ModelEntry>,
    pub mode: DecodePoolMode,
    /// Decode workers; isolated mode requires one per model and may omit it.
    pub decode_pool_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSection {
    pub flops: Option<f64>,
    pub hbm_bandwidth: Option<f64>,
    pub hbm_capacity: Option<f64>,
    pub interconnect_bandwidth: Option<f64>,
    pub interconnect_latency: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSection {
    pub decode_rule: Option<DecodeRule>,
    #[serde(default)]
    pub load_metric: LoadMetric,
    #[serde(default)]
    pub seed: u64,
    /// Explicit decode pin per model (pinned rule only).
    pub pinned: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub total_rps: f64,
    #[serde(default)]
    pub alpha: f64,
    pub isl: u32,
    pub osl: u32,
    #[serde(default = "default_grace")]
    pub grace_period: f64,
    #[serde(default = "default_window")]
    pub measurement_window: f64,
    pub drain_margin: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub arrival_process: ArrivalProcess,
}

fn default_grace() -> f64 {
    30.0
}

fn default_window() -> f64 {
    60.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_max_pending")]
    pub max_pending: usize,
}

fn default_max_pending() -> usize {
    1_000_000
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            max_pending: default_max_pending(),
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cluster: ClusterSection,
    #[serde(default)]
    pub gpu: GpuSection,
    pub cost: CostParams,
    #[serde(default)]
    pub routing: RoutingSection,
    pub workload: WorkloadSection,
    #[serde(default)]
    pub sim: SimSection,
}

/// A fully resolved, validated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub cluster: ClusterConfig,
    pub cost: CostParams,
    pub workload: WorkloadSpec,
    pub max_pending: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, LoadError> {
        toml::from_str(text).map_err(|e| LoadError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = read(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_models(&self, v: &mut Violations) -> Vec<ModelProfile> {
        let mut out = Vec::new();
        for (i, e) in self.cluster.models.iter().enumerate() {
            let base = match e.preset.as_deref() {
                Some(name) => match ModelProfile::builtin(name) {
                    Some(p) => Some(p),
                    None => {
                        v.push(
                            format!("cluster.models[{i}].preset"),
                            format!("unknown preset `{name}`"),
                        );
                        continue;
                    }
                },
                None => None,
            };
            let field = |f: &str| format!("cluster.models[{i}].{f}");
            macro_rules! pick {
                ($name:ident) => {
                    match (e.$name.clone(), base.as_ref().map(|b| b.$name.clone())) {
                        (Some(x), _) | (None, Some(x)) => x,
                        (None, None) => {
                            v.push(field(stringify!($name)), "required when no preset is given");
                            continue;
                        }
                    }
                };
            }
            let profile = ModelProfile {
                name: pick!(name),
                param_count: pick!(param_count),
                prefill_weight_bits: pick!(prefill_weight_bits),
                decode_weight_bits: pick!(decode_weight_bits),
                kv_bytes_per_token: pick!(kv_bytes_per_token),
                shared_decoder: e
                    .shared_decoder
                    .or(base.as_ref().map(|b| b.shared_decoder))
                    .unwrap_or(true),
            };
            let count = e.count.unwrap_or(1);
            if count == 0 {
                v.push(field("count"), "must be at least 1");
            }
            out.extend(std::iter::repeat_n(profile, count));
        }
        out
    }

    /// Resolves presets and defaults and checks every invariant, reporting all
    /// violations at once.
    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        let mut v = Violations::default();
        let models = self.resolve_models(&mut v);
        let n = models.len();

        let d = GpuSpec::a100_80gb();
        let g = &self.gpu;
        let gpu = GpuSpec {
            flops: g.flops.unwrap_or(d.flops),
            hbm_bandwidth: g.hbm_bandwidth.unwrap_or(d.hbm_bandwidth),
            hbm_capacity: g.hbm_capacity.unwrap_or(d.hbm_capacity),
            interconnect_bandwidth: g.interconnect_bandwidth.unwrap_or(d.interconnect_bandwidth),
            interconnect_latency: g.interconnect_latency.unwrap_or(d.interconnect_latency),
        };

        let mode = self.cluster.mode;
        let k = match (mode, self.cluster.decode_pool_size) {
            (_, Some(k)) => k,
            (DecodePoolMode::Isolated, None) => n,
            (DecodePoolMode::Shared, None) => {
                v.push("cluster.decode_pool_size", "required in shared mode");
                n
            }
        };
        let rule = self.routing.decode_rule.unwrap_or(match mode {
            DecodePoolMode::Isolated => DecodeRule::Pinned,
            DecodePoolMode::Shared => DecodeRule::LeastOutstandingTokens,
        });
        let mut routing = match mode {
            DecodePoolMode::Isolated => RoutingPolicy::isolated(n),
            DecodePoolMode::Shared => RoutingPolicy::shared(n, k, rule),
        };
        routing.decode_rule = rule;
        routing.load_metric = self.routing.load_metric;
        routing.seed = self.routing.seed;
        if let Some(p) = &self.routing.pinned {
            routing.pinned = p.clone();
        }
        let cluster = ClusterConfig {
            models,
            decode_pool_mode: mode,
            decode_pool_size: k,
            routing,
            gpu,
        };

        let w = &self.workload;
        let workload = WorkloadSpec {
            n_models: n,
            total_rps: w.total_rps,
            alpha: w.alpha,
            isl: w.isl,
            osl: w.osl,
            grace_period: w.grace_period,
            measurement_window: w.measurement_window,
            drain_margin: w.drain_margin,
            seed: w.seed,
            arrival_process: w.arrival_process,
        };

        if n > 0 {
            if let Err(e) = cluster.validate() {
                v.extend(e);
            }
        }
        if let Err(e) = self.cost.validate() {
            v.extend(e);
        }
        if let Err(e) = workload.validate() {
            v.extend(e);
        }
        if self.sim.max_pending == 0 {
            v.push("sim.max_pending", "must be at least 1");
        }
        v.into_result()?;
        Ok(Experiment {
            cluster,
            cost: self.cost,
            workload,
            max_pending: self.sim.max_pending,
        })
    }
}

impl Experiment {
    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            horizon: self.workload.horizon(),
            max_pending: self.max_pending,
            record_trace: false,
            record_steps: false,
        }
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("experiment serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn total_gpus(&self) -> usize {
        self.cluster.prefill_workers() + self.cluster.decode_pool_size
    }
}

pub(crate) fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })
}
