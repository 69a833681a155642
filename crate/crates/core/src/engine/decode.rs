use std::collections::VecDeque;

use crate::costmodel::{decode_step_seconds, CostError, CostParams};
use crate::domain::{DecoderKey, GpuSpec, KvHandle, KvLocation, ModelId, Phase, WorkerId};
use crate::routing::WorkerLoad;

/// A request resident on (or queued for) a decode worker.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeMember {
    pub index: usize,
    pub request_id: u64,
    pub model_id: ModelId,
    pub decoder: DecoderKey,
    pub isl: u32,
    pub target_osl: u32,
    /// Decode steps already charged (the first output token came from prefill).
    pub steps_done: u32,
    pub kv: KvHandle,
}

impl DecodeMember {
    pub fn steps_needed(&self) -> u32 {
        self.target_osl.saturating_sub(1)
    }

    pub fn remaining_tokens(&self) -> u64 {
        u64::from(self.steps_needed() - self.steps_done)
    }

    /// KV bytes at the end of generation; admission reserves this up front.
    pub fn peak_kv_bytes(&self) -> f64 {
        (u64::from(self.isl) + u64::from(self.steps_needed())) as f64 * self.kv.bytes_per_token
    }
}

/// What happened at one step boundary.
#[derive(Debug, Default)]
pub struct Boundary {
    pub retired: Vec<DecodeMember>,
    pub rejected: Vec<DecodeMember>,
    pub admitted: Vec<usize>,
    /// Duration of the step just started, if the batch is non-empty.
    pub step: Option<f64>,
}

/// One decode GPU running continuous batching.
///
/// At every boundary: retire finished members, admit queued requests FIFO
/// while their peak KV fits, then price one step over the resulting batch.
/// When the step completes every member gains one KV position.
#[derive(Debug, Clone)]
pub struct DecodeLoopState {
    pub worker_id: WorkerId,
    pub decoder: DecoderKey,
    pub weight_bytes: f64,
    pub hbm_capacity: f64,
    pub batch: Vec<DecodeMember>,
    pub admission_queue: VecDeque<DecodeMember>,
    reserved_kv_bytes: f64,
    resident_tokens: u64,
    queued_prompt_tokens: u64,
    remaining_tokens: u64,
    stepping: bool,
    step_started: f64,
    current_step: f64,
    pub busy_time: f64,
}

impl DecodeLoopState {
    pub fn new(worker_id: WorkerId, decoder: DecoderKey, weight_bytes: f64, hbm_capacity: f64) -> Self {
        Self {
            worker_id,
            decoder,
            weight_bytes,
            hbm_capacity,
            batch: Vec::new(),
            admission_queue: VecDeque::new(),
            reserved_kv_bytes: 0.0,
            resident_tokens: 0,
            queued_prompt_tokens: 0,
            remaining_tokens: 0,
            stepping: false,
            step_started: 0.0,
            current_step: 0.0,
            busy_time: 0.0,
        }
    }

    pub fn is_stepping(&self) -> bool {
        self.stepping
    }

    pub fn resident_tokens(&self) -> u64 {
        self.resident_tokens
    }

    pub fn resident_kv_bytes(&self) -> f64 {
        self.batch.iter().map(|m| m.kv.total_bytes()).sum()
    }

    /// Weights plus resident KV.
    pub fn resident_bytes(&self) -> f64 {
        self.weight_bytes + self.resident_kv_bytes()
    }

    pub fn load(&self) -> WorkerLoad {
        WorkerLoad {
            worker_id: self.worker_id,
            resident_kv_tokens: self.resident_tokens,
            queued_prompt_tokens: self.queued_prompt_tokens,
            remaining_target_tokens: self.remaining_tokens,
        }
    }

    pub fn enqueue(&mut self, mut member: DecodeMember) -> Result<(), CostError> {
        if member.decoder != self.decoder {
            return Err(CostError::MixedDecoder);
        }
        member.kv.location = KvLocation::Worker {
            phase: Phase::Decode,
            worker: self.worker_id,
        };
        self.queued_prompt_tokens += u64::from(member.isl);
        self.remaining_tokens += member.remaining_tokens();
        self.admission_queue.push_back(member);
        Ok(())
    }

    /// Retire, admit and price. Returns the members that left and the new
    /// step's duration.
    pub fn boundary(&mut self, cost: &CostParams, gpu: &GpuSpec) -> Boundary {
        let mut out = Boundary::default();

        let mut kept = Vec::with_capacity(self.batch.len());
        for m in self.batch.drain(..) {
            if m.steps_done >= m.steps_needed() {
                self.reserved_kv_bytes -= m.peak_kv_bytes();
                self.resident_tokens -= m.kv.resident_tokens;
                out.retired.push(m);
            } else {
                kept.push(m);
            }
        }
        self.batch = kept;
        if self.batch.is_empty() {
            // clear accumulated rounding
            self.reserved_kv_bytes = 0.0;
        }

        while let Some(head) = self.admission_queue.front() {
            let need = head.peak_kv_bytes();
            if self.weight_bytes + need > self.hbm_capacity {
                let m = self.admission_queue.pop_front().expect("front exists");
                self.queued_prompt_tokens -= u64::from(m.isl);
                self.remaining_tokens -= m.remaining_tokens();
                out.rejected.push(m);
                continue;
            }
            if self.weight_bytes + self.reserved_kv_bytes + need > self.hbm_capacity {
                break;
            }
            let m = self.admission_queue.pop_front().expect("front exists");
            self.queued_prompt_tokens -= u64::from(m.isl);
            self.reserved_kv_bytes += need;
            self.resident_tokens += m.kv.resident_tokens;
            out.admitted.push(m.index);
            self.batch.push(m);
        }

        if self.batch.is_empty() {
            self.stepping = false;
        } else {
            let duration = decode_step_seconds(self.weight_bytes, self.resident_kv_bytes(), cost, gpu);
            self.stepping = true;
            self.current_step = duration;
            out.step = Some(duration);
        }
        out
    }

    /// Marks the step starting at `now` (for busy-time accounting).
    pub fn start_step(&mut self, now: f64) {
        self.step_started = now;
    }

    /// Every member generated one token and appended one KV position.
    pub fn finish_step(&mut self) {
        debug_assert!(self.stepping);
        self.busy_time += self.current_step;
        let _ = self.step_started;
        for m in &mut self.batch {
            m.steps_done += 1;
            m.kv.resident_tokens += 1;
        }
        self.resident_tokens += self.batch.len() as u64;
        self.remaining_tokens -= self.batch.len() as u64;
    }
}
