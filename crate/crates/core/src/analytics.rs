//! Closed-form communication volumes, measured-versus-predicted reports and
//! pipeline bubble analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::{bubble_from_events, TraceEvent, GIB};

pub const BYTES_PER_VALUE: u64 = 4;

/// Parameters of the communication-volume model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommModelInput {
    /// Vertices.
    pub n: u64,
    /// Graph layers.
    pub layers: u64,
    /// Hidden size.
    pub hidden: u64,
    /// Total workers; equals `stages · ways`.
    pub workers: u64,
    /// Pipeline stages.
    pub stages: u64,
    /// Graph-parallel ways per stage.
    pub ways: u64,
    /// Replication factor `Σ|B_i| / N` of the graph-parallel partition.
    pub alpha: f64,
    /// Vectors per vertex crossing a stage boundary.
    pub vecs: u64,
    pub bytes_per_value: u64,
}

impl CommModelInput {
    /// A single-worker model: one stage, one way, no replication.
    pub fn new(n: u64, layers: u64, hidden: u64) -> Self {
        Self {
            n,
            layers,
            hidden,
            workers: 1,
            stages: 1,
            ways: 1,
            alpha: 0.0,
            vecs: 1,
            bytes_per_value: BYTES_PER_VALUE,
        }
    }

    pub fn with_stages(mut self, stages: u64) -> Self {
        self.stages = stages;
        self.workers = stages * self.ways;
        self
    }

    pub fn with_ways(mut self, ways: u64) -> Self {
        self.ways = ways;
        self.workers = self.stages * ways;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_vecs(mut self, vecs: u64) -> Self {
        self.vecs = vecs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("N, L and H must be positive"));
        }
        if self.stages == 0 || self.ways == 0 || self.vecs == 0 || self.bytes_per_value == 0 {
            return Err(Error::invalid("S, W, vecs and bytes_per_value must be positive"));
        }
        if self.workers != self.stages * self.ways {
            return Err(Error::invalid(format!(
                "M = {} but S·W = {}",
                self.workers,
                self.stages * self.ways
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("replication factor {} is invalid", self.alpha)));
        }
        Ok(())
    }
}

/// Per-epoch bytes of pipelined training: `2·(S−1)·N·H·vecs·4`.
pub fn volume_pipeline(input: &CommModelInput) -> f64 {
    let s = input.stages.saturating_sub(1);
    (2 * s * input.n * input.hidden * input.vecs * input.bytes_per_value) as f64
}

/// Per-epoch bytes of graph-parallel training: `2·α·L·N·H·4`.
pub fn volume_graph(input: &CommModelInput) -> f64 {
    2.0 * input.alpha * (input.layers * input.n * input.hidden * input.bytes_per_value) as f64
}

/// Per-epoch bytes of hybrid training: the graph term over the group
/// partition plus the pipeline term across stages.
pub fn volume_hybrid(input: &CommModelInput) -> f64 {
    volume_graph(input) + volume_pipeline(input)
}

/// Exact graph-parallel bytes from the total boundary size `Σ|B_i|`.
pub fn graph_bytes_from_boundary(total_boundary: u64, layers: u64, hidden: u64) -> u64 {
    2 * BYTES_PER_VALUE * layers * total_boundary * hidden
}

/// Exact pipeline bytes.
pub fn pipeline_bytes(stages: u64, n: u64, hidden: u64, vecs: u64) -> u64 {
    2 * stages.saturating_sub(1) * n * hidden * vecs * BYTES_PER_VALUE
}

pub fn to_gib(bytes: f64) -> f64 {
    bytes / GIB
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParallelMode {
    Graph,
    Pipeline,
    Hybrid,
}

impl ParallelMode {
    pub fn name(self) -> &'static str {
        match self {
            ParallelMode::Graph => "graph",
            ParallelMode::Pipeline => "pipeline",
            ParallelMode::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for ParallelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The three configurations compared by [`crossover_report`]; all share
/// `N`, `L`, `H` and `vecs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverInput {
    pub n: u64,
    pub layers: u64,
    pub hidden: u64,
    pub vecs: u64,
    /// Replication factor of the pure graph-parallel partition.
    pub alpha_graph: f64,
    /// Stages of the pure pipeline.
    pub stages_pipeline: u64,
    /// Replication factor of each hybrid group's partition.
    pub alpha_hybrid: f64,
    pub stages_hybrid: u64,
    pub ways_hybrid: u64,
}

impl CrossoverInput {
    fn graph(&self) -> CommModelInput {
        CommModelInput::new(self.n, self.layers, self.hidden)
            .with_vecs(self.vecs)
            .with_alpha(self.alpha_graph)
    }

    fn pipeline(&self) -> CommModelInput {
        CommModelInput::new(self.n, self.layers, self.hidden)
            .with_vecs(self.vecs)
            .with_stages(self.stages_pipeline)
    }

    fn hybrid(&self) -> CommModelInput {
        CommModelInput::new(self.n, self.layers, self.hidden)
            .with_vecs(self.vecs)
            .with_stages(self.stages_hybrid)
            .with_ways(self.ways_hybrid)
            .with_alpha(self.alpha_hybrid)
    }

    /// The per-`2NH·4`-byte cost of each mode, i.e. the two sides of the
    /// crossover inequalities.
    fn cost(&self, mode: ParallelMode) -> f64 {
        let l = self.layers as f64;
        let v = self.vecs as f64;
        match mode {
            ParallelMode::Graph => self.alpha_graph * l,
            ParallelMode::Pipeline => self.stages_pipeline.saturating_sub(1) as f64 * v,
            ParallelMode::Hybrid => self.alpha_hybrid * l + self.stages_hybrid.saturating_sub(1) as f64 * v,
        }
    }
}

/// One pairwise comparison: `lhs` is the cost of `a`, `rhs` the cost of
/// `b`, and `winner` is `None` on a tie.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: ParallelMode,
    pub b: ParallelMode,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub winner: Option<ParallelMode>,
    pub inequality: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    pub volumes: Vec<(ParallelMode, f64)>,
    /// Modes from least to most traffic; tied modes share a group.
    pub ordering: Vec<Vec<ParallelMode>>,
    pub comparisons: Vec<Comparison>,
}

impl CrossoverReport {
    /// The cheapest modes (more than one on a tie).
    pub fn best(&self) -> &[ParallelMode] {
        &self.ordering[0]
    }

    pub fn comparison(&self, a: ParallelMode, b: ParallelMode) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| (c.a, c.b) == (a, b) || (c.a, c.b) == (b, a))
    }
}

impl fmt::Display for CrossoverReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (mode, bytes) in &self.volumes {
            writeln!(f, "{mode:>8}: {bytes:.0} bytes ({:.4} GiB)", to_gib(*bytes))?;
        }
        for c in &self.comparisons {
            let verdict = c.winner.map_or("tie".to_string(), |w| format!("{w} wins"));
            writeln!(f, "{} vs {}: {} -> {verdict} (margin {:.4})", c.a, c.b, c.inequality, c.margin)?;
        }
        let order: Vec<String> = self
            .ordering
            .iter()
            .map(|g| g.iter().map(|m| m.name()).collect::<Vec<_>>().join("="))
            .collect();
        write!(f, "ordering: {}", order.join(" < "))
    }
}

/// Volumes of all three modes, their ordering and the binding inequality of
/// each pairwise comparison.
pub fn crossover_report(input: &CrossoverInput) -> Result<CrossoverReport> {
    input.graph().validate()?;
    input.pipeline().validate()?;
    input.hybrid().validate()?;
    let modes = [ParallelMode::Graph, ParallelMode::Pipeline, ParallelMode::Hybrid];
    let volumes = vec![
        (ParallelMode::Graph, volume_graph(&input.graph())),
        (ParallelMode::Pipeline, volume_pipeline(&input.pipeline())),
        (ParallelMode::Hybrid, volume_hybrid(&input.hybrid())),
    ];
    let mut comparisons = Vec::new();
    for (i, &a) in modes.iter().enumerate() {
        for &b in &modes[i + 1..] {
            let (lhs, rhs) = (input.cost(a), input.cost(b));
            let winner = match lhs.partial_cmp(&rhs) {
                Some(std::cmp::Ordering::Less) => Some(a),
                Some(std::cmp::Ordering::Greater) => Some(b),
                _ => None,
            };
            let op = match winner {
                Some(w) if w == a => "<",
                Some(_) => ">",
                None => "=",
            };
            comparisons.push(Comparison {
                a,
                b,
                lhs,
                rhs,
                margin: (lhs - rhs).abs(),
                winner,
                inequality: format!("{lhs:.4} {op} {rhs:.4}"),
            });
        }
    }
    let mut sorted = modes.to_vec();
    sorted.sort_by(|x, y| input.cost(*x).total_cmp(&input.cost(*y)));
    let mut ordering: Vec<Vec<ParallelMode>> = Vec::new();
    for m in sorted {
        match ordering.last_mut() {
            Some(group) if input.cost(group[0]) == input.cost(m) => group.push(m),
            _ => ordering.push(vec![m]),
        }
    }
    Ok(CrossoverReport {
        volumes,
        ordering,
        comparisons,
    })
}

/// Bubble fraction of an ideal synchronous pipeline with uniform chunk
/// costs: `(S−1)/(K+S−1)`.
pub fn ideal_bubble(stages: usize, chunks: usize) -> f64 {
    if stages + chunks <= 1 {
        return 0.0;
    }
    stages.saturating_sub(1) as f64 / (chunks + stages - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleAnalysis {
    /// Idle share of the epoch span, averaged over the epochs in the trace.
    pub measured_bubble: f64,
    pub ideal_bubble: f64,
    pub epochs: usize,
    pub workers: usize,
}

/// Measured bubble of a trace against the ideal `(S−1)/(K+S−1)`.
pub fn bubble_analysis(trace: &[TraceEvent], stages: usize, chunks: usize) -> Result<BubbleAnalysis> {
    if trace.is_empty() {
        return Err(Error::invalid("bubble analysis needs a non-empty trace"));
    }
    let workers = trace.iter().map(|e| e.worker).collect::<BTreeSet<_>>().len();
    let mut by_epoch: BTreeMap<u64, Vec<TraceEvent>> = BTreeMap::new();
    for e in trace {
        by_epoch.entry(e.epoch).or_default().push(e.clone());
    }
    let mut total = 0.0;
    for events in by_epoch.values() {
        total += bubble_from_events(events, workers).unwrap_or(0.0);
    }
    Ok(BubbleAnalysis {
        measured_bubble: total / by_epoch.len() as f64,
        ideal_bubble: ideal_bubble(stages, chunks),
        epochs: by_epoch.len(),
        workers,
    })
}

/// Predicted per-epoch volumes of one depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub layers: u64,
    pub graph_bytes: f64,
    pub pipeline_bytes: f64,
}

/// Graph and pipeline volumes of `base` at every depth in `depths`.
pub fn depth_sweep(base: &CommModelInput, depths: &[u64]) -> Vec<DepthPoint> {
    depths
        .iter()
        .map(|&layers| {
            let i = CommModelInput { layers, ..*base };
            DepthPoint {
                layers,
                graph_bytes: volume_graph(&i),
                pipeline_bytes: volume_pipeline(&i),
            }
        })
        .collect()
}

/// Least-squares line `y = slope·x + intercept` and its coefficient of
/// determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, intercept, r2))
}

/// A public dataset's size and the hidden size used for it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceDataset {
    pub name: &'static str,
    pub vertices: u64,
    pub hidden: u64,
    pub replication: f64,
}

pub const REFERENCE_DATASETS: [ReferenceDataset; 4] = [
    ReferenceDataset {
        name: "squirrel",
        vertices: 5_200,
        hidden: 1000,
        replication: 2.22,
    },
    ReferenceDataset {
        name: "physics",
        vertices: 34_500,
        hidden: 100,
        replication: 0.99,
    },
    ReferenceDataset {
        name: "flickr",
        vertices: 89_300,
        hidden: 100,
        replication: 2.15,
    },
    ReferenceDataset {
        name: "reddit",
        vertices: 233_000,
        hidden: 100,
        replication: 2.61,
    },
];

pub fn reference_dataset(name: &str) -> Option<ReferenceDataset> {
    REFERENCE_DATASETS.iter().copied().find(|d| d.name.eq_ignore_ascii_case(name))
}

pub const REPORT_HEADER: &str = "mode,N,L,H,S,W,alpha,vecs,predicted_bytes,measured_bytes,rel_error";

/// One line of the measured-versus-predicted report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: String,
    pub input: CommModelInput,
    pub predicted_bytes: f64,
    pub measured_bytes: Option<u64>,
}

impl ReportRow {
    pub fn new(mode: ParallelMode, input: CommModelInput, measured_bytes: Option<u64>) -> Self {
        let predicted_bytes = match mode {
            ParallelMode::Graph => volume_graph(&input),
            ParallelMode::Pipeline => volume_pipeline(&input),
            ParallelMode::Hybrid => volume_hybrid(&input),
        };
        Self {
            mode: mode.name().to_string(),
            input,
            predicted_bytes,
            measured_bytes,
        }
    }

    /// `|measured − predicted| / predicted`, or 0 when both are zero.
    pub fn rel_error(&self) -> Option<f64> {
        let m = self.measured_bytes? as f64;
        if self.predicted_bytes == 0.0 {
            return Some(if m == 0.0 { 0.0 } else { f64::INFINITY });
        }
        Some((m - self.predicted_bytes).abs() / self.predicted_bytes)
    }

    pub fn to_csv(&self) -> String {
        let i = &self.input;
        let opt = |x: Option<String>| x.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            i.n,
            i.layers,
            i.hidden,
            i.stages,
            i.ways,
            i.alpha,
            i.vecs,
            self.predicted_bytes,
            opt(self.measured_bytes.map(|m| m.to_string())),
            opt(self.rel_error().map(|e| e.to_string())),
        )
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(report_csv(rows).as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::EventKind;

    #[test]
    fn pipeline_volume_examples() {
        let reddit = CommModelInput::new(233_000, 4, 100).with_stages(8);
        assert!((to_gib(volume_pipeline(&reddit)) - 1.215).abs() < 1e-3);
        let squirrel = CommModelInput::new(5200, 8, 1000).with_stages(8).with_vecs(2);
        assert!((to_gib(volume_pipeline(&squirrel)) - 0.5425).abs() < 1e-4);
        assert_eq!(volume_pipeline(&CommModelInput::new(10, 2, 3)), 0.0);
    }

    #[test]
    fn pipeline_volume_ignores_depth() {
        let base = CommModelInput::new(5200, 8, 1000).with_stages(8).with_vecs(2).with_alpha(2.0);
        let sweep = depth_sweep(&base, &[8, 16, 32, 64, 128]);
        assert!(sweep.iter().all(|p| p.pipeline_bytes == sweep[0].pipeline_bytes));
        for w in sweep.windows(2) {
            assert_eq!(w[1].graph_bytes, 2.0 * w[0].graph_bytes);
        }
    }

    #[test]
    fn graph_volume_examples() {
        assert_eq!(volume_graph(&CommModelInput::new(100, 4, 8)), 0.0);
        let g8 = CommModelInput::new(8, 2, 2).with_alpha(0.75);
        assert_eq!(volume_graph(&g8), 192.0);
        assert_eq!(graph_bytes_from_boundary(6, 2, 2), 192);
    }

    #[test]
    fn hybrid_degenerates() {
        let p = CommModelInput::new(1000, 4, 16).with_stages(4).with_vecs(2);
        assert_eq!(volume_hybrid(&p), volume_pipeline(&p));
        let g = CommModelInput::new(1000, 4, 16).with_ways(4).with_alpha(1.3);
        assert_eq!(volume_hybrid(&g), volume_graph(&g));
        assert_eq!(pipeline_bytes(4, 1000, 16, 2) as f64, volume_pipeline(&p));
    }

    fn crossover(alpha_graph: f64, layers: u64, stages_pipeline: u64) -> CrossoverInput {
        CrossoverInput {
            n: 1000,
            layers,
            hidden: 100,
            vecs: 1,
            alpha_graph,
            stages_pipeline,
            alpha_hybrid: alpha_graph / 2.0,
            stages_hybrid: 2,
            ways_hybrid: stages_pipeline / 2,
        }
    }

    #[test]
    fn sparse_graph_favors_graph_parallelism() {
        let r = crossover_report(&crossover(0.01, 4, 8)).unwrap();
        let c = r.comparison(ParallelMode::Graph, ParallelMode::Pipeline).unwrap();
        assert_eq!(c.winner, Some(ParallelMode::Graph));
        assert!((c.lhs - 0.04).abs() < 1e-12 && c.rhs == 7.0);
        assert_eq!(r.best(), &[ParallelMode::Graph]);
    }

    #[test]
    fn dense_deep_model_favors_pipeline() {
        let r = crossover_report(&crossover(2.61, 32, 8)).unwrap();
        let c = r.comparison(ParallelMode::Graph, ParallelMode::Pipeline).unwrap();
        assert_eq!(c.winner, Some(ParallelMode::Pipeline));
        assert!((c.lhs - 83.52).abs() < 1e-9);
    }

    #[test]
    fn equal_volumes_tie() {
        let mut input = crossover(0.5, 14, 8);
        input.alpha_hybrid = 0.25;
        input.stages_hybrid = 5;
        let r = crossover_report(&input).unwrap();
        let c = r.comparison(ParallelMode::Graph, ParallelMode::Pipeline).unwrap();
        assert_eq!(c.winner, None);
        assert_eq!(c.margin, 0.0);
        assert_eq!(r.ordering.len(), 2);
        assert_eq!(r.ordering[0].len(), 2);
        assert!(r.to_string().contains("tie"));
    }

    #[test]
    fn ideal_bubble_values() {
        assert_eq!(ideal_bubble(1, 4), 0.0);
        assert!((ideal_bubble(8, 32) - 7.0 / 39.0).abs() < 1e-15);
    }

    fn event(worker: usize, t_start: f64, t_end: f64, kind: EventKind) -> TraceEvent {
        TraceEvent {
            worker,
            epoch: 0,
            t_start,
            t_end,
            kind,
            chunk: None,
            layer_lo: 1,
            layer_hi: 1,
        }
    }

    #[test]
    fn synthetic_gpipe_trace_matches_ideal() {
        let (s, k) = (3usize, 5usize);
        let mut trace = Vec::new();
        for w in 0..s {
            for c in 0..k {
                let t = (w + c) as f64;
                trace.push(event(w, t, t + 1.0, EventKind::Compute));
            }
        }
        let b = bubble_analysis(&trace, s, k).unwrap();
        assert!((b.measured_bubble - b.ideal_bubble).abs() < 1e-12);
        assert!(bubble_analysis(&[], s, k).is_err());
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        let (m, b, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((m - 3.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_rows() {
        let input = CommModelInput::new(8, 2, 2).with_alpha(0.75).with_ways(3);
        let row = ReportRow::new(ParallelMode::Graph, input, Some(192));
        assert_eq!(row.rel_error(), Some(0.0));
        let csv = report_csv(&[row]);
        assert_eq!(csv.lines().next().unwrap(), REPORT_HEADER);
        assert_eq!(csv.lines().nth(1).unwrap(), "graph,8,2,2,1,3,0.75,1,192,192,0");
    }

    #[test]
    fn validation() {
        assert!(CommModelInput::new(0, 1, 1).validate().is_err());
        let mut bad = CommModelInput::new(10, 1, 1).with_stages(2);
        bad.workers = 3;
        assert!(bad.validate().is_err());
        assert!(CommModelInput::new(10, 1, 1).with_alpha(f64::NAN).validate().is_err());
    }
}
