use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::{CommLedger, EpochTraffic, TraceEvent, WorkerId};
use crate::nn::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss of this epoch's forward pass, before the update.
    pub train_loss: f64,
    pub train_acc: f64,
    /// Exact full-graph evaluation after the update.
    pub val_acc: f64,
    pub test_acc: f64,
    pub comm_bytes_graph: u64,
    pub comm_bytes_pipeline: u64,
    pub comm_bytes_weightsync: u64,
    /// Simulated seconds in deterministic mode, measured seconds in
    /// concurrent mode.
    pub wall_time_s: f64,
    pub bubble_fraction: f64,
}

impl EpochMetrics {
    pub(crate) fn with_traffic(mut self, t: &EpochTraffic) -> Self {
        self.comm_bytes_graph = t.graph_bytes();
        self.comm_bytes_pipeline = t.pipeline_bytes();
        self.comm_bytes_weightsync = t.data_bytes(crate::fabric::Tag::WeightSync);
        self
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainResult<T> {
    pub metrics: Vec<EpochMetrics>,
    pub params: ModelParams<T>,
    pub ledger: CommLedger,
    pub trace: Vec<TraceEvent>,
    /// Largest per-chunk activation stash held by each worker, in bytes.
    pub peak_stash_bytes: Vec<(WorkerId, u64)>,
}

impl<T> TrainResult<T> {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

pub const METRICS_HEADER: &str = "mode,epoch,train_loss,train_acc,val_acc,test_acc,comm_bytes_graph,comm_bytes_pipeline,comm_bytes_weightsync,wall_time_s,bubble_fraction";

/// CSV rendering of a metrics series; `mode` fills the first column.
pub fn metrics_csv(mode: &str, metrics: &[EpochMetrics]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{mode},{},{:.9},{:.6},{:.6},{:.6},{},{},{},{:.9},{:.9}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.val_acc,
            m.test_acc,
            m.comm_bytes_graph,
            m.comm_bytes_pipeline,
            m.comm_bytes_weightsync,
            m.wall_time_s,
            m.bubble_fraction
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, mode: &str, metrics: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(mode, metrics)).map_err(|e| Error::io(path, e))
}
