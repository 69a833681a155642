use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::WorkerId;
use crate::workload::seconds_to_ns;

/// Event kinds in processing priority order for equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    PrefillStart,
    PrefillComplete,
    TransferComplete,
    DecodeStepComplete,
    RequestComplete,
    /// A request whose KV can never fit on its decode worker was dropped.
    OverCapacity,
}

impl EventKind {
    pub fn priority(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::PrefillStart => "prefill_start",
            EventKind::PrefillComplete => "prefill_complete",
            EventKind::TransferComplete => "transfer_complete",
            EventKind::DecodeStepComplete => "decode_step_complete",
            EventKind::RequestComplete => "request_complete",
            EventKind::OverCapacity => "over_capacity",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scheduled event. `request` is an index into the run's request list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub request: Option<usize>,
    pub worker: Option<WorkerId>,
    pub seq: u64,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on `(time, kind priority, seq)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind, request: Option<usize>, worker: Option<WorkerId>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event {
            time,
            kind,
            request,
            worker,
            seq,
        }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: EventKind,
    pub request_id: Option<u64>,
    pub worker_id: Option<WorkerId>,
}

/// Processed events in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub records: Vec<TraceRecord>,
}

impl EventTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// `time_ns,kind,request_id,worker_id` lines; absent ids are left empty.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_ns,kind,request_id,worker_id")?;
        for r in &self.records {
            let req = r.request_id.map(|v| v.to_string()).unwrap_or_default();
            let worker = r.worker_id.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", seconds_to_ns(r.time), r.kind, req, worker)?;
        }
        Ok(())
    }
}
