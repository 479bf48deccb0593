//! Simulated time: a per-worker logical clock driven by a cost model, and
//! the trace of events it produces. Used for schedule analysis only; it
//! never influences results.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::groups::WorkerId;
use crate::fabric::ledger::LinkClass;

/// Costs in simulated seconds. A bandwidth of 0 makes that link free.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Bytes per second between workers on one node.
    pub intra_bandwidth: f64,
    /// Bytes per second between nodes.
    pub inter_bandwidth: f64,
    /// Fixed cost of one layer applied to one chunk.
    pub layer_fixed: f64,
    /// Additional cost per vertex per layer.
    pub vertex_layer: f64,
    /// Backward cost relative to forward.
    pub backward_factor: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            intra_bandwidth: 100e9,
            inter_bandwidth: 10e9,
            layer_fixed: 20e-6,
            vertex_layer: 50e-9,
            backward_factor: 2.0,
        }
    }
}

impl CostModel {
    /// Every layer step costs exactly `cost` forward and
    /// `backward_factor·cost` backward, and links are free.
    pub fn uniform(cost: f64, backward_factor: f64) -> Self {
        Self {
            intra_bandwidth: 0.0,
            inter_bandwidth: 0.0,
            layer_fixed: cost,
            vertex_layer: 0.0,
            backward_factor,
        }
    }

    pub fn transfer_time(&self, bytes: u64, class: LinkClass) -> f64 {
        let bw = match class {
            LinkClass::IntraNode => self.intra_bandwidth,
            LinkClass::InterNode => self.inter_bandwidth,
        };
        if bw > 0.0 {
            bytes as f64 / bw
        } else {
            0.0
        }
    }

    pub fn layer_time(&self, vertices: usize, backward: bool) -> f64 {
        let t = self.layer_fixed + self.vertex_layer * vertices as f64;
        if backward {
            t * self.backward_factor
        } else {
            t
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Compute,
    Send,
    Recv,
    Idle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub worker: WorkerId,
    pub epoch: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub kind: EventKind,
    pub chunk: Option<usize>,
    pub layer_lo: usize,
    pub layer_hi: usize,
}

/// Logical clock of one worker for one epoch.
#[derive(Clone, Debug)]
pub struct WorkerClock {
    pub worker: WorkerId,
    pub epoch: u64,
    pub now: f64,
    pub busy: f64,
    record: bool,
    pub events: Vec<TraceEvent>,
}

impl WorkerClock {
    pub fn new(worker: WorkerId, epoch: u64, record: bool) -> Self {
        Self {
            worker,
            epoch,
            now: 0.0,
            busy: 0.0,
            record,
            events: Vec::new(),
        }
    }

    fn push(&mut self, kind: EventKind, t_start: f64, t_end: f64, chunk: Option<usize>, layers: (usize, usize)) {
        if self.record {
            self.events.push(TraceEvent {
                worker: self.worker,
                epoch: self.epoch,
                t_start,
                t_end,
                kind,
                chunk,
                layer_lo: layers.0,
                layer_hi: layers.1,
            });
        }
    }

    pub fn compute(&mut self, duration: f64, chunk: Option<usize>, layers: (usize, usize)) {
        let start = self.now;
        self.now += duration;
        self.busy += duration;
        self.push(EventKind::Compute, start, self.now, chunk, layers);
    }

    /// Records a send and returns when the payload reaches the receiver.
    pub fn send(&mut self, transfer: f64, chunk: Option<usize>, layers: (usize, usize)) -> f64 {
        self.push(EventKind::Send, self.now, self.now, chunk, layers);
        self.now + transfer
    }

    /// Advances to `ready_at` if the message is not there yet, recording
    /// the wait as idle time.
    pub fn receive(&mut self, ready_at: f64, chunk: Option<usize>, layers: (usize, usize)) {
        if ready_at > self.now {
            self.push(EventKind::Idle, self.now, ready_at, chunk, layers);
            self.now = ready_at;
        }
        self.push(EventKind::Recv, self.now, self.now, chunk, layers);
    }
}

/// Fraction of worker-time spent not computing within an epoch's span:
/// `1 − Σ busy / (workers × span)`.
pub fn bubble_fraction(clocks: &[WorkerClock]) -> f64 {
    let span = clocks.iter().map(|c| c.now).fold(0.0, f64::max);
    if span <= 0.0 || clocks.is_empty() {
        return 0.0;
    }
    let busy: f64 = clocks.iter().map(|c| c.busy).sum();
    1.0 - busy / (clocks.len() as f64 * span)
}

/// The same measure computed from trace events of a single epoch.
pub fn bubble_from_events(events: &[TraceEvent], num_workers: usize) -> Option<f64> {
    if events.is_empty() || num_workers == 0 {
        return None;
    }
    let start = events.iter().map(|e| e.t_start).fold(f64::INFINITY, f64::min);
    let end = events.iter().map(|e| e.t_end).fold(f64::NEG_INFINITY, f64::max);
    let span = end - start;
    if span <= 0.0 {
        return Some(0.0);
    }
    let busy: f64 = events
        .iter()
        .filter(|e| e.kind == EventKind::Compute)
        .map(|e| e.t_end - e.t_start)
        .sum();
    Some(1.0 - busy / (num_workers as f64 * span))
}

pub fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
