use std::collections::{BTreeSet, VecDeque};

use crate::costmodel::{prefill_time, CostParams};
use crate::domain::{GpuSpec, ModelId, ModelProfile, Request, WorkerId};

use super::event::{Event, EventKind};

/// A prefill GPU: single occupancy, FIFO.
#[derive(Debug, Clone)]
pub struct PrefillWorker {
    pub worker_id: WorkerId,
    pub served_models: BTreeSet<ModelId>,
    pub queue: VecDeque<usize>,
    /// Request index currently executing.
    pub current: Option<usize>,
    pub busy_until: f64,
    pub busy_time: f64,
}

impl PrefillWorker {
    pub fn new(worker_id: WorkerId, served_models: BTreeSet<ModelId>) -> Self {
        Self {
            worker_id,
            served_models,
            queue: VecDeque::new(),
            current: None,
            busy_until: 0.0,
            busy_time: 0.0,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none()
    }

    /// Starts `index` at `now` and returns its completion event (seq unset).
    pub fn execute(
        &mut self,
        index: usize,
        request: &mut Request,
        model: &ModelProfile,
        now: f64,
        cost: &CostParams,
        gpu: &GpuSpec,
    ) -> Event {
        debug_assert!(self.is_idle());
        debug_assert!(self.served_models.contains(&request.model_id));
        let duration = prefill_time(model, request.isl, cost, gpu);
        request.timestamps.prefill_start = Some(now);
        self.current = Some(index);
        self.busy_until = now + duration;
        self.busy_time += duration;
        Event {
            time: self.busy_until,
            kind: EventKind::PrefillComplete,
            request: Some(index),
            worker: Some(self.worker_id),
            seq: 0,
        }
    }

    /// Frees the worker; returns the finished request index.
    pub fn finish(&mut self) -> Option<usize> {
        self.current.take()
    }
}
