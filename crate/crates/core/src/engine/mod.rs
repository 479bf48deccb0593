//! Trainers: the sequential oracle, graph-parallel, chunk-pipelined and
//! hybrid training on top of the simulated fabric.
//!
//! All three distributed modes run on one engine of `S` stages × `G`
//! graph-parallel ranks × `K` chunks: pipelining is `G = 1`, graph
//! parallelism is `S = 1, K = 1`.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod store;
mod worker;

use std::time::{Duration, Instant};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ExecMode, StageAssignment, StalenessConfig, TrainConfig};
pub use metrics::{metrics_csv, write_metrics_csv, EpochMetrics, TrainResult, METRICS_HEADER};
pub use store::EmbeddingStore;
pub use worker::StageParams;

use crate::error::{Error, Result};
use crate::fabric::{bubble_fraction, CommLedger, CostModel, Fabric, GroupMap, TraceEvent, WorkerClock};
use crate::graph::{Dataset, Split};
use crate::nn::{
    accuracy, model_backward, model_forward, softmax_xent, Adam, DropoutPlan, ModelParams, Optimizer, Propagation,
};
use crate::partition::{partition_from_assignment, shuffle_chunk_order, ChunkPlan, Partition};
use crate::real::Real;
use crate::tensor::Matrix;
use worker::{plan_epoch, EpochCtx, Shared, Worker};

fn check_model(dataset: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let m = &cfg.model;
    if m.in_features != dataset.num_features() {
        return Err(Error::Config(format!(
            "model expects {} input features, dataset has {}",
            m.in_features,
            dataset.num_features()
        )));
    }
    if m.num_classes != dataset.num_classes {
        return Err(Error::Config(format!(
            "model expects {} classes, dataset has {}",
            m.num_classes, dataset.num_classes
        )));
    }
    if m.num_layers == 0 || m.hidden == 0 {
        return Err(Error::Config("model needs at least one layer and a positive hidden size".into()));
    }
    if !(0.0..1.0).contains(&m.dropout) {
        return Err(Error::Config(format!("dropout {} outside [0, 1)", m.dropout)));
    }
    if dataset.count(Split::Train) == 0 {
        return Err(Error::Config("dataset has no training vertices".into()));
    }
    Ok(())
}

fn dropout_plan(cfg: &TrainConfig, epoch: usize) -> Option<DropoutPlan> {
    (cfg.model.dropout > 0.0).then_some(DropoutPlan {
        rate: cfg.model.dropout,
        seed: cfg.dropout_seed(),
        epoch: epoch as u64,
    })
}

struct Evaluator<'a, T> {
    prop: &'a Propagation<T>,
    features: &'a Matrix<T>,
    labels: &'a [u32],
    val: Vec<bool>,
    test: Vec<bool>,
    last: (f64, f64),
}

impl<'a, T: Real> Evaluator<'a, T> {
    fn new(dataset: &'a Dataset, prop: &'a Propagation<T>, features: &'a Matrix<T>) -> Self {
        Self {
            prop,
            features,
            labels: &dataset.labels,
            val: dataset.mask(Split::Val),
            test: dataset.mask(Split::Test),
            last: (0.0, 0.0),
        }
    }

    /// Exact, dropout-free forward pass; reuses the last result on epochs
    /// that are not evaluated.
    fn eval(&mut self, params: &ModelParams<T>, due: bool) -> Result<(f64, f64)> {
        if due {
            let (logits, _) = model_forward(params, self.prop, self.features, None)?;
            self.last = (
                accuracy(&logits, self.labels, &self.val),
                accuracy(&logits, self.labels, &self.test),
            );
        }
        Ok(self.last)
    }
}

/// Simulated duration of one sequential epoch under `cost`.
fn sequential_time(cost: &CostModel, n: usize, layers: usize, clock: &mut WorkerClock) {
    for l in 1..=layers {
        clock.compute(cost.layer_time(n, false), Some(0), (l, l));
    }
    for l in (1..=layers).rev() {
        clock.compute(cost.layer_time(n, true), Some(0), (l, l));
    }
}

/// Exact full-graph training on one worker. This is the reference every
/// distributed mode is checked against.
pub fn train_sequential<T: Real>(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainResult<T>> {
    check_model(dataset, cfg)?;
    let prop = Propagation::<T>::new(&dataset.graph, cfg.model.self_loops);
    let features: Matrix<T> = dataset.features.cast();
    let train = dataset.mask(Split::Train);
    let mut params = ModelParams::<T>::init(&cfg.model, cfg.seed);
    let mut opt = Adam::<T>::new(cfg.optimizer);
    let mut eval = Evaluator::new(dataset, &prop, &features);
    let mut ledger = CommLedger::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        ledger.begin_epoch(epoch as u64)?;
        let (logits, cache) = model_forward(&params, &prop, &features, dropout_plan(cfg, epoch))?;
        let out = softmax_xent(&logits, &dataset.labels, &train)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let grads = model_backward(&params, &prop, &cache, &out.grad)?;
        for (slot, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            opt.step(slot, p, g);
        }
        opt.advance();
        if params.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let traffic = ledger.end_epoch()?.clone();
        let mut clock = WorkerClock::new(0, epoch as u64, cfg.record_trace);
        sequential_time(&cfg.cost, dataset.num_vertices(), cfg.model.num_layers, &mut clock);
        let wall = match cfg.exec {
            ExecMode::Deterministic => clock.now,
            ExecMode::Concurrent => start.elapsed().as_secs_f64(),
        };
        trace.append(&mut clock.events);
        let (val_acc, test_acc) = eval.eval(&params, cfg.should_eval(epoch))?;
        metrics.push(
            EpochMetrics {
                epoch,
                train_loss: out.loss,
                train_acc: out.accuracy(),
                val_acc,
                test_acc,
                comm_bytes_graph: 0,
                comm_bytes_pipeline: 0,
                comm_bytes_weightsync: 0,
                wall_time_s: wall,
                bubble_fraction: 0.0,
            }
            .with_traffic(&traffic),
        );
    }
    Ok(TrainResult {
        metrics,
        params,
        ledger,
        trace,
        peak_stash_bytes: vec![(0, 0)],
    })
}

/// Graph-parallel training: one worker per partition part, boundary
/// exchange every layer, weight gradients summed once per epoch.
pub fn train_graph_parallel<T: Real>(dataset: &Dataset, partition: &Partition, cfg: &TrainConfig) -> Result<TrainResult<T>> {
    let stages = StageAssignment::even(cfg.model.num_layers, 1)?;
    let groups = GroupMap::single_node(1, partition.num_parts());
    let plan = ChunkPlan::single(dataset.num_vertices());
    run_distributed(dataset, partition, &plan, &stages, &groups, StalenessConfig::synchronous(), cfg)
}

/// Chunk-pipelined layer-level model parallelism: one worker per stage,
/// chunks streamed through the stages with historical embeddings standing
/// in for neighbors not processed yet.
pub fn train_pipeline<T: Real>(
    dataset: &Dataset,
    plan: &ChunkPlan,
    stages: &StageAssignment,
    staleness: StalenessConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult<T>> {
    let groups = GroupMap::single_node(stages.num_stages(), 1);
    let whole = partition_from_assignment(&dataset.graph, vec![0; dataset.num_vertices()], 1)?;
    run_distributed(dataset, &whole, plan, stages, &groups, staleness, cfg)
}

/// Hybrid parallelism: `S` stage groups of `G` workers; within a group the
/// chunk is split by `partition` and processed graph-parallel, across
/// groups it is pipelined.
pub fn train_hybrid<T: Real>(
    dataset: &Dataset,
    partition: &Partition,
    plan: &ChunkPlan,
    stages: &StageAssignment,
    groups: &GroupMap,
    staleness: StalenessConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult<T>> {
    run_distributed(dataset, partition, plan, stages, groups, staleness, cfg)
}

fn build_shared<'a, T: Real>(
    dataset: &'a Dataset,
    partition: &Partition,
    plan: &'a ChunkPlan,
    groups: &'a GroupMap,
    prop: &'a Propagation<T>,
    features: &'a Matrix<T>,
    cfg: &'a TrainConfig,
) -> Shared<'a, T> {
    let g = partition.num_parts();
    let k = plan.num_chunks();
    let mut sub = vec![vec![Vec::new(); g]; k];
    for v in 0..dataset.num_vertices() {
        sub[plan.chunk_of(v)][partition.part_of(v)].push(v);
    }
    let mut boundary = vec![vec![vec![Vec::new(); g]; g]; k];
    for q in 0..g {
        for &u in partition.boundary(q) {
            boundary[plan.chunk_of(u)][partition.part_of(u)][q].push(u);
        }
    }
    Shared {
        features,
        labels: &dataset.labels,
        splits: &dataset.splits,
        train_count: dataset.count(Split::Train),
        prop,
        groups,
        cost: cfg.cost,
        model: &cfg.model,
        sub,
        boundary,
        owned: (0..g).map(|r| partition.inner(r).to_vec()).collect(),
    }
}

fn run_deterministic<T: Real>(workers: &mut [Worker<T>], sh: &Shared<T>, ctx: &EpochCtx, fabric: &Fabric<T>) -> Result<()> {
    loop {
        let mut progressed = false;
        for w in workers.iter_mut() {
            progressed |= w.advance(sh, ctx, fabric, false)?;
        }
        if workers.iter().all(Worker::is_done) {
            return Ok(());
        }
        if !progressed {
            let blocked: Vec<String> = workers
                .iter()
                .filter_map(|w| w.current_step().map(|s| format!("worker {} at {s:?}", w.id)))
                .collect();
            return Err(Error::Deadlock(format!("no worker can progress: {}", blocked.join("; "))));
        }
    }
}

fn run_concurrent<T: Real>(workers: &mut [Worker<T>], sh: &Shared<T>, ctx: &EpochCtx, fabric: &Fabric<T>) -> Result<()> {
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .iter_mut()
            .map(|w| {
                scope.spawn(move || {
                    let r = w.advance(sh, ctx, fabric, true).map(|_| ());
                    if r.is_err() {
                        fabric.close(w.id);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("worker thread panicked"))))
            .collect()
    });
    // Report the root cause rather than the peers it cut off.
    let mut first_closed = None;
    for r in results {
        match r {
            Err(Error::Closed(m)) => first_closed = first_closed.or(Some(Error::Closed(m))),
            Err(e) => return Err(e),
            Ok(()) => {}
        }
    }
    first_closed.map_or(Ok(()), Err)
}

fn run_distributed<T: Real>(
    dataset: &Dataset,
    partition: &Partition,
    plan: &ChunkPlan,
    stages: &StageAssignment,
    groups: &GroupMap,
    staleness: StalenessConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult<T>> {
    check_model(dataset, cfg)?;
    staleness.validate()?;
    let n = dataset.num_vertices();
    if stages.num_layers() != cfg.model.num_layers {
        return Err(Error::Config(format!(
            "stage assignment covers {} layers, model has {}",
            stages.num_layers(),
            cfg.model.num_layers
        )));
    }
    if groups.num_groups() != stages.num_stages() {
        return Err(Error::Config(format!(
            "{} worker groups for {} stages",
            groups.num_groups(),
            stages.num_stages()
        )));
    }
    if groups.group_size() != partition.num_parts() {
        return Err(Error::Config(format!(
            "group size {} does not match the {}-part partition",
            groups.group_size(),
            partition.num_parts()
        )));
    }
    if plan.num_vertices() != n || partition.assignment().len() != n {
        return Err(Error::Config(format!(
            "chunk plan ({}) and partition ({}) must cover all {n} vertices",
            plan.num_vertices(),
            partition.assignment().len()
        )));
    }
    if plan.chunks().iter().any(Vec::is_empty) {
        return Err(Error::Config("chunk plan has an empty chunk".into()));
    }

    let prop = Propagation::<T>::new(&dataset.graph, cfg.model.self_loops);
    let features: Matrix<T> = dataset.features.cast();
    let sh = build_shared(dataset, partition, plan, groups, &prop, &features, cfg);
    let init = ModelParams::<T>::init(&cfg.model, cfg.seed);
    let stale = !staleness.synchronous_mode && plan.num_chunks() > 1;
    let snapshots = (stale, stale && staleness.historical_gradients);
    let mut workers: Vec<Worker<T>> = Vec::with_capacity(groups.num_workers());
    for s in 0..stages.num_stages() {
        for r in 0..groups.group_size() {
            workers.push(Worker::new(
                groups.worker(s, r),
                s,
                r,
                stages.range(s),
                stages.num_stages(),
                &init,
                &cfg.model,
                cfg.optimizer,
                n,
                snapshots,
            ));
        }
    }
    let fabric = Fabric::<T>::with_watchdog(groups.clone(), Duration::from_secs(cfg.watchdog_secs.max(1)));
    let mut eval = Evaluator::new(dataset, &prop, &features);
    let mut params = init.clone();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut trace: Vec<TraceEvent> = Vec::new();

    for epoch in 0..cfg.epochs {
        let ctx = EpochCtx {
            t: epoch as u64 + 1,
            epoch: epoch as u64,
            dropout: dropout_plan(cfg, epoch),
        };
        let order: Vec<usize> = if staleness.shuffle_chunks && !staleness.synchronous_mode {
            shuffle_chunk_order(plan, epoch as u64, cfg.seed)
        } else {
            (0..plan.num_chunks()).collect()
        };
        for w in workers.iter_mut() {
            let steps = plan_epoch(groups, w.stage, w.rank, stages.range(w.stage), &order, staleness.synchronous_mode);
            w.begin_epoch(&ctx, &staleness, cfg.record_trace, steps);
        }
        fabric.begin_epoch(epoch as u64)?;
        let start = Instant::now();
        match cfg.exec {
            ExecMode::Deterministic => run_deterministic(&mut workers, &sh, &ctx, &fabric)?,
            ExecMode::Concurrent => run_concurrent(&mut workers, &sh, &ctx, &fabric)?,
        }
        let elapsed = start.elapsed().as_secs_f64();
        let traffic = fabric.end_epoch()?;
        for w in workers.iter_mut() {
            w.end_epoch(&ctx, &staleness);
        }

        let mut losses: Vec<(usize, f64, bool)> =
            workers.iter().flat_map(|w| w.losses.iter().copied()).collect();
        losses.sort_unstable_by_key(|l| l.0);
        let mut total = 0.0;
        for l in &losses {
            total += l.1;
        }
        let train_count = sh.train_count;
        let correct = losses.iter().filter(|l| l.2).count();

        let clocks: Vec<WorkerClock> = workers.iter().map(|w| w.clock.clone()).collect();
        let span = clocks.iter().map(|c| c.now).fold(0.0, f64::max);
        let bubble = bubble_fraction(&clocks);
        for w in workers.iter_mut() {
            trace.append(&mut w.clock.events);
        }

        for w in workers.iter().filter(|w| w.rank == 0) {
            w.params.write_into(&mut params, w.lo);
        }
        let (val_acc, test_acc) = eval.eval(&params, cfg.should_eval(epoch))?;
        metrics.push(
            EpochMetrics {
                epoch,
                train_loss: total / train_count as f64,
                train_acc: correct as f64 / train_count as f64,
                val_acc,
                test_acc,
                comm_bytes_graph: 0,
                comm_bytes_pipeline: 0,
                comm_bytes_weightsync: 0,
                wall_time_s: match cfg.exec {
                    ExecMode::Deterministic => span,
                    ExecMode::Concurrent => elapsed,
                },
                bubble_fraction: bubble,
            }
            .with_traffic(&traffic),
        );
    }
    for w in workers.iter().filter(|w| w.rank == 0) {
        w.params.write_into(&mut params, w.lo);
    }
    Ok(TrainResult {
        metrics,
        params,
        ledger: fabric.ledger(),
        trace,
        peak_stash_bytes: workers.iter().map(|w| (w.id, w.peak_stash)).collect(),
    })
}
