//! Discrete-event simulation of a disaggregated cluster.
//!
//! Each model has one prefill GPU. Finished prompts are dispatched to a decode
//! worker, their KV is shipped over the interconnect, and decode workers run
//! continuous batching. The loop is single-threaded and deterministic: events
//! are ordered by `(time, kind, seq)` and every tie is broken by push order.
//!
//! Timing conventions:
//! - the first output token comes from prefill and reaches the client when the
//!   KV transfer completes, so `TTFT = transfer_end - arrival`;
//! - decode then charges `target_osl - 1` steps;
//! - at a step boundary the worker retires, then admits, then prices the step.

mod decode;
mod event;
mod prefill;

pub use decode::{Boundary, DecodeLoopState, DecodeMember};
pub use event::{Event, EventKind, EventQueue, EventTrace, TraceRecord};
pub use prefill::PrefillWorker;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{transfer_time, CostError, CostParams};
use crate::domain::{ClusterConfig, ConfigError, KvHandle, KvLocation, Outcome, Phase, Request, WorkerId};
use crate::routing::{route_prefill, DecodeDispatcher, RoutingError, WorkerLoad};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("simulation diverged at t={time:.3}s with {pending} requests in the system")]
    SimulationDiverged { time: f64, pending: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Events after this time are not processed. `f64::INFINITY` drains fully.
    pub horizon: f64,
    /// Upper bound on requests arrived but not yet finished.
    pub max_pending: usize,
    pub record_trace: bool,
    /// Keep one [`StepRecord`] per decode step.
    pub record_steps: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon: f64::INFINITY,
            max_pending: 1_000_000,
            record_trace: false,
            record_steps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub worker: WorkerId,
    pub start: f64,
    pub duration: f64,
    pub resident_kv_bytes: f64,
    /// Request ids in the batch, in admission order.
    pub members: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceLog {
    pub prefill_busy: Vec<f64>,
    pub decode_busy: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Step invocations across all decode workers.
    pub steps_charged: u64,
    /// Tokens generated by decode: one per batch member per step.
    pub decode_token_steps: u64,
    pub kv_created: u64,
    pub kv_freed: u64,
    /// Largest weights + resident KV seen on each decode worker.
    pub peak_resident_bytes: Vec<f64>,
    pub memory_violations: u64,
    /// `(request_id, decode_worker)` in dispatch order.
    pub dispatches: Vec<(u64, WorkerId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub requests: Vec<Request>,
    pub trace: EventTrace,
    pub resources: ResourceLog,
    /// Time of the last processed event.
    pub end_time: f64,
}

impl SimOutput {
    pub fn completed(&self) -> impl Iterator<Item = &Request> {
        self.requests.iter().filter(|r| r.is_completed())
    }
}

struct Sim<'a> {
    config: &'a ClusterConfig,
    cost: &'a CostParams,
    opts: &'a SimOptions,
    requests: Vec<Request>,
    queue: EventQueue,
    prefill: Vec<PrefillWorker>,
    decode: Vec<DecodeLoopState>,
    /// A wake-up is queued for this decode worker.
    wake_pending: Vec<bool>,
    /// Load of requests dispatched to a worker whose KV is still in flight.
    inbound: Vec<WorkerLoad>,
    dispatcher: DecodeDispatcher,
    trace: EventTrace,
    log: ResourceLog,
    in_system: usize,
    now: f64,
}

/// Simulates `trace` on `config` until the horizon or until every event has
/// been processed.
pub fn run(
    config: &ClusterConfig,
    trace: &[Request],
    cost: &CostParams,
    opts: &SimOptions,
) -> Result<SimOutput, EngineError> {
    config.validate()?;
    cost.validate()?;
    let mut sim = Sim::new(config, trace, cost, opts);
    sim.run()?;
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(config: &'a ClusterConfig, trace: &[Request], cost: &'a CostParams, opts: &'a SimOptions) -> Self {
        let gpu = &config.gpu;
        let prefill = (0..config.prefill_workers())
            .map(|w| {
                let served = (0..config.n_models())
                    .filter(|&m| config.routing.prefill[m] == w)
                    .collect();
                PrefillWorker::new(w, served)
            })
            .collect::<Vec<_>>();
        let decode = (0..config.decode_pool_size)
            .map(|w| {
                let key = config
                    .served_models(w)
                    .into_iter()
                    .next()
                    .map(|m| config.models[m].decoder_key(m))
                    .unwrap_or_else(|| config.models[0].decoder_key(0));
                DecodeLoopState::new(w, key, config.decode_weight_bytes(w), gpu.hbm_capacity)
            })
            .collect::<Vec<_>>();
        let k = decode.len();
        let log = ResourceLog {
            prefill_busy: vec![0.0; prefill.len()],
            decode_busy: vec![0.0; k],
            peak_resident_bytes: decode.iter().map(|d| d.resident_bytes()).collect(),
            ..ResourceLog::default()
        };
        let requests: Vec<Request> = trace
            .iter()
            .map(|r| Request::new(r.id, r.model_id, r.arrival_time, r.isl, r.target_osl))
            .collect();
        Self {
            config,
            cost,
            opts,
            requests,
            queue: EventQueue::new(),
            prefill,
            decode,
            wake_pending: vec![false; k],
            inbound: (0..k)
                .map(|w| WorkerLoad {
                    worker_id: w,
                    ..WorkerLoad::default()
                })
                .collect(),
            dispatcher: DecodeDispatcher::new(&config.routing),
            trace: EventTrace::default(),
            log,
            in_system: 0,
            now: 0.0,
        }
    }

    fn record(&mut self, kind: EventKind, request: Option<usize>, worker: Option<WorkerId>) {
        if self.opts.record_trace {
            self.trace.records.push(TraceRecord {
                time: self.now,
                kind,
                request_id: request.map(|i| self.requests[i].id),
                worker_id: worker,
            });
        }
    }

    fn run(&mut self) -> Result<(), EngineError> {
        // Arrivals are fed one at a time so the queue stays small.
        if !self.requests.is_empty() {
            self.queue
                .push(self.requests[0].arrival_time, EventKind::Arrival, Some(0), None);
        }
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.opts.horizon {
                break;
            }
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrival => self.on_arrival(ev.request.expect("arrival carries a request"))?,
                EventKind::PrefillComplete => self.on_prefill_complete(ev.worker.expect("prefill worker"))?,
                EventKind::TransferComplete => self.on_transfer_complete(
                    ev.request.expect("transfer carries a request"),
                    ev.worker.expect("decode worker"),
                )?,
                EventKind::DecodeStepComplete => self.on_decode_boundary(ev.worker.expect("decode worker")),
                EventKind::PrefillStart | EventKind::RequestComplete | EventKind::OverCapacity => {
                    unreachable!("recorded inline, never queued")
                }
            }
            if self.in_system > self.opts.max_pending {
                return Err(EngineError::SimulationDiverged {
                    time: self.now,
                    pending: self.in_system,
                });
            }
        }
        Ok(())
    }

    fn on_arrival(&mut self, index: usize) -> Result<(), EngineError> {
        self.record(EventKind::Arrival, Some(index), None);
        self.in_system += 1;
        if let Some(next) = self.requests.get(index + 1) {
            self.queue
                .push(next.arrival_time, EventKind::Arrival, Some(index + 1), None);
        }
        let w = route_prefill(&self.requests[index], &self.config.routing)?;
        self.prefill[w].queue.push_back(index);
        self.start_prefill(w);
        Ok(())
    }

    fn start_prefill(&mut self, w: WorkerId) {
        if !self.prefill[w].is_idle() {
            return;
        }
        let Some(index) = self.prefill[w].queue.pop_front() else {
            return;
        };
        let model = &self.config.models[self.requests[index].model_id];
        let ev = self.prefill[w].execute(
            index,
            &mut self.requests[index],
            model,
            self.now,
            self.cost,
            &self.config.gpu,
        );
        self.log.prefill_busy[w] = self.prefill[w].busy_time;
        self.record(EventKind::PrefillStart, Some(index), Some(w));
        self.queue.push(ev.time, ev.kind, ev.request, ev.worker);
    }

    fn pool_loads(&self) -> Vec<WorkerLoad> {
        self.decode
            .iter()
            .zip(&self.inbound)
            .map(|(d, t)| {
                let l = d.load();
                WorkerLoad {
                    worker_id: l.worker_id,
                    resident_kv_tokens: l.resident_kv_tokens,
                    queued_prompt_tokens: l.queued_prompt_tokens + t.queued_prompt_tokens,
                    remaining_target_tokens: l.remaining_target_tokens + t.remaining_target_tokens,
                }
            })
            .collect()
    }

    fn on_prefill_complete(&mut self, w: WorkerId) -> Result<(), EngineError> {
        let index = self.prefill[w].finish().expect("completion on a busy worker");
        self.record(EventKind::PrefillComplete, Some(index), Some(w));
        let loads = self.pool_loads();
        let target = self.dispatcher.route(&self.requests[index], &loads)?;

        let req = &mut self.requests[index];
        req.timestamps.prefill_end = Some(self.now);
        req.decode_worker = Some(target);
        let model = &self.config.models[req.model_id];
        let kv = KvHandle {
            request_id: req.id,
            resident_tokens: u64::from(req.isl),
            bytes_per_token: model.kv_bytes_per_token,
            location: KvLocation::InTransit,
        };
        self.log.kv_created += 1;
        self.log.dispatches.push((req.id, target));
        self.inbound[target].queued_prompt_tokens += u64::from(req.isl);
        self.inbound[target].remaining_target_tokens += u64::from(req.target_osl.saturating_sub(1));
        let done = self.now + transfer_time(&kv, &self.config.gpu);
        self.queue
            .push(done, EventKind::TransferComplete, Some(index), Some(target));

        self.start_prefill(w);
        Ok(())
    }

    fn on_transfer_complete(&mut self, index: usize, w: WorkerId) -> Result<(), EngineError> {
        self.record(EventKind::TransferComplete, Some(index), Some(w));
        let req = &mut self.requests[index];
        req.timestamps.transfer_end = Some(self.now);
        req.timestamps.first_token_time = Some(self.now);
        self.inbound[w].queued_prompt_tokens -= u64::from(req.isl);
        self.inbound[w].remaining_target_tokens -= u64::from(req.target_osl.saturating_sub(1));

        if req.target_osl <= 1 {
            // The prefill token was the whole answer.
            req.timestamps.completion_time = Some(self.now);
            req.realized_osl = 1;
            req.outcome = Outcome::Completed;
            self.finish_request(index, EventKind::RequestComplete, w);
            return Ok(());
        }

        let model = &self.config.models[req.model_id];
        let member = DecodeMember {
            index,
            request_id: req.id,
            model_id: req.model_id,
            decoder: model.decoder_key(req.model_id),
            isl: req.isl,
            target_osl: req.target_osl,
            steps_done: 0,
            kv: KvHandle {
                request_id: req.id,
                resident_tokens: u64::from(req.isl),
                bytes_per_token: model.kv_bytes_per_token,
                location: KvLocation::Worker {
                    phase: Phase::Decode,
                    worker: w,
                },
            },
        };
        self.decode[w].enqueue(member)?;
        if !self.decode[w].is_stepping() && !self.wake_pending[w] {
            // Wake after every same-time transfer has landed so they share step one.
            self.wake_pending[w] = true;
            self.queue.push(self.now, EventKind::DecodeStepComplete, None, Some(w));
        }
        Ok(())
    }

    fn finish_request(&mut self, index: usize, kind: EventKind, w: WorkerId) {
        self.log.kv_freed += 1;
        self.in_system -= 1;
        self.record(kind, Some(index), Some(w));
    }

    fn on_decode_boundary(&mut self, w: WorkerId) {
        if self.wake_pending[w] {
            self.wake_pending[w] = false;
        } else {
            self.record(EventKind::DecodeStepComplete, None, Some(w));
            let batch = self.decode[w].batch.len() as u64;
            self.decode[w].finish_step();
            self.log.steps_charged += 1;
            self.log.decode_token_steps += batch;
            self.log.decode_busy[w] = self.decode[w].busy_time;
            self.check_memory(w);
        }

        let b = self.decode[w].boundary(self.cost, &self.config.gpu);
        for m in &b.retired {
            let req = &mut self.requests[m.index];
            req.timestamps.completion_time = Some(self.now);
            req.realized_osl = m.target_osl;
            req.outcome = Outcome::Completed;
            self.finish_request(m.index, EventKind::RequestComplete, w);
        }
        for m in &b.rejected {
            self.requests[m.index].outcome = Outcome::OverCapacity;
            self.finish_request(m.index, EventKind::OverCapacity, w);
        }
        self.check_memory(w);
        if let Some(duration) = b.step {
            self.decode[w].start_step(self.now);
            if self.opts.record_steps {
                let d = &self.decode[w];
                self.log.steps.push(StepRecord {
                    worker: w,
                    start: self.now,
                    duration,
                    resident_kv_bytes: d.resident_kv_bytes(),
                    members: d.batch.iter().map(|m| m.request_id).collect(),
                });
            }
            self.queue
                .push(self.now + duration, EventKind::DecodeStepComplete, None, Some(w));
        }
    }

    fn check_memory(&mut self, w: WorkerId) {
        let d = &self.decode[w];
        let used = d.resident_bytes();
        if used > d.hbm_capacity {
            self.log.memory_violations += 1;
        }
        if used > self.log.peak_resident_bytes[w] {
            self.log.peak_resident_bytes[w] = used;
        }
    }

    fn finish(self) -> SimOutput {
        SimOutput {
            requests: self.requests,
            trace: self.trace,
            resources: self.log,
            end_time: self.now,
        }
    }
}
