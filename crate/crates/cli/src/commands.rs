use std::fs;
use std::path::Path;

use chunkpipe::engine::{
    save_checkpoint, train_hybrid, train_sequential, write_metrics_csv, ExecMode, StageAssignment, StalenessConfig,
    TrainConfig, TrainResult,
};
use chunkpipe::fabric::{assign_groups, write_comm_reports, write_trace, GroupMap};
use chunkpipe::graph::{save_dataset, Dataset};
use chunkpipe::nn::ModelConfig;
use chunkpipe::partition::{
    load_assignment, make_chunks, partition_from_assignment, partition_vertices, random_partition, replication_factor,
    ChunkPlan, Partition,
};
use chunkpipe::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{parse_shape, GenSpec, Mode, RunConfig};
use crate::{GenArgs, PartitionArgs, TrainArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn gen(a: GenArgs) -> Result<()> {
    let spec = match (&a.sbm, &a.er) {
        (Some(shape), None) => {
            let (blocks, block_size) = parse_shape(shape).map_err(Error::Config)?;
            GenSpec::Sbm {
                blocks,
                block_size,
                p_in: a.p_in,
                p_out: a.p_out,
                noise: a.noise,
            }
        }
        (None, Some(er)) => GenSpec::Er {
            n: er[0].parse().map_err(|_| Error::Config(format!("bad vertex count {:?}", er[0])))?,
            p: er[1].parse().map_err(|_| Error::Config(format!("bad probability {:?}", er[1])))?,
            features: a.features,
            classes: a.classes,
        },
        _ => return Err(Error::Config("give exactly one of --sbm BLOCKSxSIZE or --er N P".into())),
    };
    let d = spec.generate(a.seed)?;
    save_dataset(&d, &a.out)?;
    println!(
        "{spec}: {} vertices, {} edges, {} features, {} classes -> {}",
        d.num_vertices(),
        d.graph.num_edges(),
        d.num_features(),
        d.num_classes,
        a.out.display()
    );
    Ok(())
}

fn dataset_of(dataset: &Option<std::path::PathBuf>, gen: &Option<GenSpec>, seed: u64) -> Result<Dataset> {
    match (dataset, gen) {
        (Some(dir), None) => chunkpipe::graph::load_dataset(dir),
        (None, Some(g)) => g.generate(seed),
        _ => Err(Error::Config("give exactly one of --dataset DIR or --gen SPEC".into())),
    }
}

pub fn partition(a: PartitionArgs) -> Result<()> {
    let d = dataset_of(&a.dataset, &a.gen, a.seed)?;
    let part = partition_vertices(&d.graph, a.parts, a.seed)?;
    let baseline = random_partition(&d.graph, a.parts, a.seed)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    part.save(a.out.join("partition.txt"))?;
    println!("parts: {}", a.parts);
    println!("edge cut: {}", d.graph.edge_cut(part.assignment()));
    println!("replication factor: {:.6}", replication_factor(&part));
    println!("random baseline replication factor: {:.6}", replication_factor(&baseline));
    if let Some(k) = a.chunks {
        let plan = make_chunks(&d.graph, k, a.seed)?;
        plan.save(a.out.join("chunks.txt"))?;
        println!("chunks: {k}");
    }
    Ok(())
}

/// Derived quantities of a finished run, read back by `analyze --run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub n: u64,
    pub layers: u64,
    pub hidden: u64,
    pub stages: u64,
    pub ways: u64,
    pub chunks: u64,
    /// `Σ|B_i| / N` of the partition used inside each stage group.
    pub alpha: f64,
    pub total_boundary: u64,
    pub vecs: u64,
    pub peak_stash_bytes: Vec<(usize, u64)>,
}

pub const SUMMARY_FILE: &str = "summary.json";

fn merge(a: TrainArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { c.$f = v; } )* };
    }
    set!(mode, model, layers, hidden, epochs, lr, dropout, seed, stages, group_size, shuffle, fix_alpha,
        historical_grads, synchronous, deterministic, workers_per_node, eval_every, trace, out);
    if a.workers.is_some() {
        c.workers = a.workers;
    }
    if a.chunks.is_some() {
        c.chunks = a.chunks;
    }
    if a.partition.is_some() {
        c.partition = a.partition;
    }
    if a.chunk_file.is_some() {
        c.chunk_file = a.chunk_file;
    }
    if a.dataset.is_some() {
        c.dataset = a.dataset;
        c.generator = None;
    }
    if a.gen.is_some() {
        c.generator = a.gen;
        c.dataset = None;
    }
    c.resolve()
}

fn load_partition(c: &RunConfig, d: &Dataset, ways: usize) -> Result<Partition> {
    match &c.partition {
        Some(p) => {
            let (parts, assignment) = load_assignment(p)?;
            if parts != ways {
                return Err(Error::Config(format!(
                    "partition file has {parts} parts but the run needs {ways} graph-parallel ways"
                )));
            }
            partition_from_assignment(&d.graph, assignment, parts)
        }
        None => partition_vertices(&d.graph, ways, c.seed),
    }
}

fn load_chunks(c: &RunConfig, d: &Dataset) -> Result<ChunkPlan> {
    match &c.chunk_file {
        Some(p) => {
            let (k, assignment) = load_assignment(p)?;
            ChunkPlan::from_assignment(assignment, k)
        }
        None => make_chunks(&d.graph, c.num_chunks(), c.seed),
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut c = merge(a)?;
    let d = c.load_dataset()?;
    let n = d.num_vertices();
    let model = ModelConfig::new(c.model, c.layers, c.hidden, d.num_features(), d.num_classes).with_dropout(c.dropout);
    let mut tc = TrainConfig::new(model.clone(), c.epochs, c.seed).with_lr(c.lr).with_exec(if c.deterministic {
        ExecMode::Deterministic
    } else {
        ExecMode::Concurrent
    });
    tc.eval_every = c.eval_every;
    tc.record_trace = c.trace;

    let s = c.num_stages();
    let w = c.ways();
    let stages = StageAssignment::even(c.layers, s)?;
    let (result, groups, part, plan): (TrainResult<f32>, GroupMap, Option<Partition>, Option<ChunkPlan>) = match c.mode {
        Mode::Sequential => (train_sequential(&d, &tc)?, GroupMap::single_node(1, 1), None, None),
        Mode::Graph => {
            let part = load_partition(&c, &d, w)?;
            let groups = assign_groups(w, c.workers_per_node, 1, w)?;
            let r = train_hybrid(&d, &part, &ChunkPlan::single(n), &stages, &groups, StalenessConfig::synchronous(), &tc)?;
            (r, groups, Some(part), None)
        }
        Mode::Pipeline | Mode::Hybrid => {
            let part = if w == 1 {
                partition_from_assignment(&d.graph, vec![0; n], 1)?
            } else {
                load_partition(&c, &d, w)?
            };
            let plan = load_chunks(&c, &d)?;
            c.chunks = Some(plan.num_chunks());
            let groups = assign_groups(s * w, c.workers_per_node, s, w)?;
            let r = train_hybrid(&d, &part, &plan, &stages, &groups, c.staleness(), &tc)?;
            (r, groups, (w > 1).then_some(part), Some(plan))
        }
    };

    let out = &c.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_text(&out.join("config.json"), &c.to_json())?;
    write_metrics_csv(&out.join("metrics.csv"), c.mode.name(), &result.metrics)?;
    if c.trace {
        write_trace(&out.join("trace.jsonl"), &result.trace)?;
    }
    let reports = (0..c.epochs as u64)
        .map(|e| result.ledger.report(e, &groups))
        .collect::<Result<Vec<_>>>()?;
    write_comm_reports(&out.join("comm_report.csv"), &reports)?;
    save_checkpoint(&out.join("checkpoint"), &result.params, &model, &stages)?;
    if let Some(p) = &part {
        p.save(out.join("partition.txt"))?;
    }
    if let Some(p) = &plan {
        p.save(out.join("chunks.txt"))?;
    }
    let total_boundary = part.as_ref().map_or(0, |p| p.total_boundary()) as u64;
    let summary = RunSummary {
        mode: c.mode,
        n: n as u64,
        layers: c.layers as u64,
        hidden: c.hidden as u64,
        stages: s as u64,
        ways: w as u64,
        chunks: plan.as_ref().map_or(1, |p| p.num_chunks()) as u64,
        alpha: total_boundary as f64 / n as f64,
        total_boundary,
        vecs: c.model.vecs_per_vertex(),
        peak_stash_bytes: result.peak_stash_bytes.clone(),
    };
    write_text(
        &out.join(SUMMARY_FILE),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;

    if let Some(m) = result.final_metrics() {
        println!(
            "{} epochs, mode {}: train_loss {:.4} train_acc {:.4} val_acc {:.4} test_acc {:.4}, per-epoch bytes graph {} pipeline {} weightsync {}",
            c.epochs,
            c.mode.name(),
            m.train_loss,
            m.train_acc,
            m.val_acc,
            m.test_acc,
            m.comm_bytes_graph,
            m.comm_bytes_pipeline,
            m.comm_bytes_weightsync
        );
    }
    println!("outputs written to {}", out.display());
    Ok(())
}
