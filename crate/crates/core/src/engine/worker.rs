//! One simulated worker: the holder of a stage's layers for one graph
//! partition, executing a per-epoch list of steps.

use crate::engine::config::StalenessConfig;
use crate::engine::store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::fabric::{link_class, CostModel, Fabric, GroupMap, Message, Tag, WorkerClock, WorkerId};
use crate::graph::Split;
use crate::nn::dropout::{maybe_drop_row, DropoutPlan};
use crate::nn::layer::{accumulate_dense_grad, dense_row, gather_row, LayerMath, Propagation};
use crate::nn::loss::{argmax, xent_grad_row, xent_row};
use crate::nn::{Adam, AdamConfig, Dense, LayerKind, LayerParams, ModelConfig, ModelParams, Optimizer};
use crate::real::Real;
use crate::tensor::{row_times_t, Matrix};

/// Read-only inputs shared by all workers of a run.
pub(crate) struct Shared<'a, T> {
    pub features: &'a Matrix<T>,
    pub labels: &'a [u32],
    pub splits: &'a [Split],
    pub train_count: usize,
    pub prop: &'a Propagation<T>,
    pub groups: &'a GroupMap,
    pub cost: CostModel,
    pub model: &'a ModelConfig,
    /// `sub[k][r]`: vertices of chunk `k` owned by rank `r`, ascending.
    pub sub: Vec<Vec<Vec<usize>>>,
    /// `boundary[k][r][q]`: vertices of chunk `k` owned by rank `r` that
    /// rank `q` reads as neighbors, ascending.
    pub boundary: Vec<Vec<Vec<Vec<usize>>>>,
    /// Vertices owned by each rank, ascending.
    pub owned: Vec<Vec<usize>>,
}

/// Per-epoch inputs.
#[derive(Clone, Debug)]
pub(crate) struct EpochCtx {
    pub t: u64,
    pub epoch: u64,
    pub dropout: Option<DropoutPlan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Dir {
    Fwd,
    Bwd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Step {
    BarrierSend { to: WorkerId },
    BarrierRecv { from: WorkerId },
    InputProj { chunk: usize },
    RecvForward { chunk: usize },
    Prepare { chunk: usize, layer: usize },
    SendBoundary { chunk: usize, layer: usize, peer: usize, dir: Dir },
    RecvBoundary { chunk: usize, layer: usize, peer: usize, dir: Dir },
    Compute { chunk: usize, layer: usize },
    SendForward { chunk: usize },
    Head { chunk: usize },
    HeadBackward { chunk: usize },
    RecvBackward { chunk: usize },
    LocalBackward { chunk: usize, layer: usize },
    InputGrad { chunk: usize, layer: usize },
    SendBackward { chunk: usize },
    InputProjBackward { chunk: usize },
    AccumulateGrads,
    WeightSend { to: WorkerId },
    WeightRecv { from: WorkerId },
    Update,
}

/// Parameters owned by one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<T> {
    pub input: Option<Dense<T>>,
    pub layers: Vec<LayerParams<T>>,
    pub head: Option<Dense<T>>,
    /// Global optimizer slot of each tensor, in `tensors()` order.
    slots: Vec<usize>,
}

impl<T: Real> StageParams<T> {
    pub fn from_model(model: &ModelParams<T>, lo: usize, hi: usize, first: bool, last: bool) -> Self {
        let num_layers = model.layers.len();
        let mut slots = Vec::new();
        if first {
            slots.extend([0, 1]);
        }
        for l in lo..=hi {
            let s = ModelParams::<T>::layer_slot(l - 1);
            slots.extend([s, s + 1]);
        }
        if last {
            let s = ModelParams::<T>::layer_slot(num_layers);
            slots.extend([s, s + 1]);
        }
        Self {
            input: first.then(|| model.input.clone()),
            layers: model.layers[lo - 1..hi].to_vec(),
            head: last.then(|| model.head.clone()),
            slots,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.as_ref().map(Dense::zeros_like),
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            head: self.head.as_ref().map(Dense::zeros_like),
            slots: self.slots.clone(),
        }
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        if let Some(d) = &self.input {
            out.extend(d.tensors());
        }
        for l in &self.layers {
            out.extend(l.tensors());
        }
        if let Some(d) = &self.head {
            out.extend(d.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        if let Some(d) = &mut self.input {
            out.extend(d.tensors_mut());
        }
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        if let Some(d) = &mut self.head {
            out.extend(d.tensors_mut());
        }
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn unflatten(&mut self, values: &[T]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
    }

    fn add_flat(&mut self, values: &[T]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            for (a, &b) in t.iter_mut().zip(&values[off..off + len]) {
                *a = *a + b;
            }
            off += len;
        }
    }

    pub fn write_into(&self, model: &mut ModelParams<T>, lo: usize) {
        if let Some(d) = &self.input {
            model.input = d.clone();
        }
        for (i, l) in self.layers.iter().enumerate() {
            model.layers[lo - 1 + i] = l.clone();
        }
        if let Some(d) = &self.head {
            model.head = d.clone();
        }
    }
}

pub(crate) struct Worker<T> {
    pub id: WorkerId,
    pub stage: usize,
    pub rank: usize,
    pub lo: usize,
    pub hi: usize,
    pub first: bool,
    kind: LayerKind,
    num_layers: usize,
    pub params: StageParams<T>,
    grads: StageParams<T>,
    opt: Adam<T>,
    /// Layer inputs `dropout(h^{ℓ−1})`, one store per owned layer.
    x: Vec<EmbeddingStore<T>>,
    pre: Vec<Matrix<T>>,
    /// Layer outputs; after the local backward step a row holds the
    /// pre-activation gradient instead.
    h: Vec<Matrix<T>>,
    /// `h^{lo−1}` received from the previous stage.
    inbox: Matrix<T>,
    h0: Option<Matrix<T>>,
    x_in: Option<Matrix<T>>,
    head_in: Option<Matrix<T>>,
    glogits: Option<Matrix<T>>,
    /// Gradients sent to neighbors, one store per owned layer.
    gz: Vec<EmbeddingStore<T>>,
    self_grad: Vec<Matrix<T>>,
    /// `∂L/∂h^ℓ` for each owned layer's output.
    grad_out: Vec<Matrix<T>>,
    /// `∂L/∂h^{lo−1}`.
    grad_in: Matrix<T>,
    gh0: Option<Matrix<T>>,
    ga0: Option<Matrix<T>>,
    /// `(vertex, loss, correct)` for training vertices seen by the head.
    pub losses: Vec<(usize, f64, bool)>,
    pub clock: WorkerClock,
    stash: u64,
    pub peak_stash: u64,
    pub steps: Vec<Step>,
    pub cursor: usize,
}

impl<T: Real> Worker<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: WorkerId,
        stage: usize,
        rank: usize,
        range: (usize, usize),
        num_stages: usize,
        model: &ModelParams<T>,
        config: &ModelConfig,
        optimizer: AdamConfig,
        num_vertices: usize,
        snapshots: (bool, bool),
    ) -> Self {
        let (lo, hi) = range;
        let first = stage == 0;
        let last = stage + 1 == num_stages;
        let n = num_vertices;
        let hdim = config.hidden;
        let kind = config.kind;
        let count = hi - lo + 1;
        let params = StageParams::from_model(model, lo, hi, first, last);
        let grads = params.zeros_like();
        let pre_dim = if kind == LayerKind::Sage { 2 * hdim } else { hdim };
        let gcnii = kind == LayerKind::Gcnii;
        Self {
            id,
            stage,
            rank,
            lo,
            hi,
            first,
            kind,
            num_layers: config.num_layers,
            params,
            grads,
            opt: Adam::new(optimizer),
            x: (0..count).map(|_| EmbeddingStore::new(n, hdim, snapshots.0)).collect(),
            pre: (0..count).map(|_| Matrix::zeros(n, pre_dim)).collect(),
            h: (0..count).map(|_| Matrix::zeros(n, hdim)).collect(),
            inbox: if first { Matrix::zeros(0, 0) } else { Matrix::zeros(n, hdim) },
            h0: (first || gcnii).then(|| Matrix::zeros(n, hdim)),
            x_in: first.then(|| Matrix::zeros(n, config.in_features)),
            head_in: last.then(|| Matrix::zeros(n, hdim)),
            glogits: last.then(|| Matrix::zeros(n, config.num_classes)),
            gz: (0..count).map(|_| EmbeddingStore::new(n, hdim, snapshots.1)).collect(),
            self_grad: if kind == LayerKind::Sage {
                (0..count).map(|_| Matrix::zeros(n, hdim)).collect()
            } else {
                Vec::new()
            },
            grad_out: (0..count).map(|_| Matrix::zeros(n, hdim)).collect(),
            grad_in: Matrix::zeros(n, hdim),
            gh0: gcnii.then(|| Matrix::zeros(n, hdim)),
            ga0: first.then(|| Matrix::zeros(n, hdim)),
            losses: Vec::new(),
            clock: WorkerClock::new(id, 0, false),
            stash: 0,
            peak_stash: 0,
            steps: Vec::new(),
            cursor: 0,
        }
    }

    pub fn begin_epoch(&mut self, ctx: &EpochCtx, staleness: &StalenessConfig, record: bool, steps: Vec<Step>) {
        for s in self.x.iter_mut().chain(self.gz.iter_mut()) {
            s.begin_epoch(ctx.t, staleness);
        }
        self.losses.clear();
        self.clock = WorkerClock::new(self.id, ctx.epoch, record);
        self.stash = 0;
        self.steps = steps;
        self.cursor = 0;
    }

    pub fn end_epoch(&mut self, ctx: &EpochCtx, staleness: &StalenessConfig) {
        for s in self.x.iter_mut().chain(self.gz.iter_mut()) {
            s.end_epoch(ctx.t, staleness);
        }
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.steps.len()
    }

    pub fn current_step(&self) -> Option<Step> {
        self.steps.get(self.cursor).copied()
    }

    fn gcnii(&self) -> bool {
        self.kind == LayerKind::Gcnii
    }

    fn vecs(&self) -> usize {
        if self.gcnii() {
            2
        } else {
            1
        }
    }

    fn slot_mask(ctx: &EpochCtx, slot: usize) -> Option<crate::nn::Dropout> {
        ctx.dropout.and_then(|d| d.slot(slot))
    }

    fn send(&mut self, fabric: &Fabric<T>, sh: &Shared<T>, msg: Message<T>, chunk: Option<usize>) -> Result<()> {
        let class = link_class(sh.groups, msg.src, msg.dst);
        let transfer = sh.cost.transfer_time(msg.byte_size(), class);
        let ready = self.clock.send(transfer, chunk, (self.lo, self.hi));
        fabric.send(msg.at(ready))
    }

    fn recv(
        &mut self,
        fabric: &Fabric<T>,
        src: WorkerId,
        tag: Tag,
        blocking: bool,
        chunk: Option<usize>,
    ) -> Result<Option<Message<T>>> {
        let msg = if blocking {
            Some(fabric.recv(self.id, src, tag)?)
        } else {
            fabric.try_recv(self.id, src, tag)?
        };
        if let Some(m) = &msg {
            self.clock.receive(m.ready_at, chunk, (self.lo, self.hi));
        }
        Ok(msg)
    }

    fn check_rows(&self, msg: &Message<T>, expected: &[usize], width: usize) -> Result<()> {
        if msg.ids != expected || msg.block.cols() != width {
            return Err(Error::invalid(format!(
                "worker {} got an unexpected {} block from worker {} ({} rows x {} cols)",
                self.id,
                msg.tag,
                msg.src,
                msg.block.rows(),
                msg.block.cols()
            )));
        }
        Ok(())
    }

    /// Executes `step`. Returns `false` when a receive found nothing queued
    /// (only in non-blocking mode).
    pub fn run_step(&mut self, step: Step, sh: &Shared<T>, ctx: &EpochCtx, fabric: &Fabric<T>, blocking: bool) -> Result<bool> {
        let hdim = sh.model.hidden;
        match step {
            Step::BarrierSend { to } => {
                self.send(fabric, sh, Message::control(self.id, to), None)?;
            }
            Step::BarrierRecv { from } => {
                if self.recv(fabric, from, Tag::Control, blocking, None)?.is_none() {
                    return Ok(false);
                }
            }
            Step::InputProj { chunk } => {
                let mask = Self::slot_mask(ctx, 0);
                let input = self.params.input.as_ref().expect("first stage owns the input projection");
                let x_in = self.x_in.as_mut().expect("first stage");
                let h0 = self.h0.as_mut().expect("first stage");
                for &v in &sh.sub[chunk][self.rank] {
                    maybe_drop_row(mask.as_ref(), v, sh.features.row(v), x_in.row_mut(v));
                    dense_row(input, x_in.row(v), h0.row_mut(v));
                    for o in h0.row_mut(v) {
                        *o = o.max(T::zero());
                    }
                }
            }
            Step::RecvForward { chunk } => {
                let src = sh.groups.worker(self.stage - 1, self.rank);
                let Some(msg) = self.recv(fabric, src, Tag::ForwardEmb, blocking, Some(chunk))? else {
                    return Ok(false);
                };
                let ids = &sh.sub[chunk][self.rank];
                self.check_rows(&msg, ids, hdim * self.vecs())?;
                for (i, &v) in ids.iter().enumerate() {
                    let row = msg.block.row(i);
                    self.inbox.row_mut(v).copy_from_slice(&row[..hdim]);
                    if let Some(h0) = self.h0.as_mut() {
                        h0.row_mut(v).copy_from_slice(&row[hdim..]);
                    }
                }
            }
            Step::Prepare { chunk, layer } => {
                let j = layer - self.lo;
                let mask = Self::slot_mask(ctx, layer);
                for &v in &sh.sub[chunk][self.rank] {
                    let prev = if j > 0 {
                        self.h[j - 1].row(v)
                    } else if self.first {
                        self.h0.as_ref().expect("first stage").row(v)
                    } else {
                        self.inbox.row(v)
                    };
                    maybe_drop_row(mask.as_ref(), v, prev, self.x[j].row_mut(v));
                }
            }
            Step::SendBoundary { chunk, layer, peer, dir } => {
                let j = layer - self.lo;
                let ids = sh.boundary[chunk][self.rank][peer].clone();
                let (store, tag) = match dir {
                    Dir::Fwd => (&self.x[j], Tag::GraphBoundaryFwd),
                    Dir::Bwd => (&self.gz[j], Tag::GraphBoundaryBwd),
                };
                let mut block = Matrix::zeros(ids.len(), hdim);
                for (i, &v) in ids.iter().enumerate() {
                    let row = store.current(v).expect("boundary rows are produced before they are sent");
                    block.row_mut(i).copy_from_slice(row);
                }
                let dst = sh.groups.worker(self.stage, peer);
                self.send(fabric, sh, Message::new(self.id, dst, tag, ids, block), Some(chunk))?;
            }
            Step::RecvBoundary { chunk, layer, peer, dir } => {
                let j = layer - self.lo;
                let tag = match dir {
                    Dir::Fwd => Tag::GraphBoundaryFwd,
                    Dir::Bwd => Tag::GraphBoundaryBwd,
                };
                let src = sh.groups.worker(self.stage, peer);
                let Some(msg) = self.recv(fabric, src, tag, blocking, Some(chunk))? else {
                    return Ok(false);
                };
                self.check_rows(&msg, &sh.boundary[chunk][peer][self.rank], hdim)?;
                let store = match dir {
                    Dir::Fwd => &mut self.x[j],
                    Dir::Bwd => &mut self.gz[j],
                };
                for (i, &v) in msg.ids.iter().enumerate() {
                    store.write(v, msg.block.row(i));
                }
            }
            Step::Compute { chunk, layer } => {
                let j = layer - self.lo;
                let math = LayerMath::new(&self.params.layers[j], layer);
                let op = sh.prop.for_kind(self.kind);
                let store = &self.x[j];
                let mut agg = vec![T::zero(); hdim];
                let rows = &sh.sub[chunk][self.rank];
                for &v in rows {
                    gather_row(
                        op,
                        v,
                        false,
                        |u| Some(store.read(u).expect("neighbor value available (current or historical)")),
                        &mut agg,
                    );
                    let x_self = store.current(v).expect("own row prepared");
                    let h0 = if math.needs_h0() {
                        Some(self.h0.as_ref().expect("GCNII stage holds h0").row(v))
                    } else {
                        None
                    };
                    math.forward_row(&agg, x_self, h0, self.pre[j].row_mut(v), self.h[j].row_mut(v));
                }
                self.stash += (rows.len() * (math.pre_dim() + hdim)) as u64 * T::WIRE_BYTES;
                self.peak_stash = self.peak_stash.max(self.stash);
                let cost = sh.cost.layer_time(rows.len(), false);
                self.clock.compute(cost, Some(chunk), (layer, layer));
            }
            Step::SendForward { chunk } => {
                let ids = sh.sub[chunk][self.rank].clone();
                let width = hdim * self.vecs();
                let mut block = Matrix::zeros(ids.len(), width);
                let top = self.h.last().expect("stage owns a layer");
                for (i, &v) in ids.iter().enumerate() {
                    let row = block.row_mut(i);
                    row[..hdim].copy_from_slice(top.row(v));
                    if let Some(h0) = self.h0.as_ref().filter(|_| self.gcnii()) {
                        row[hdim..].copy_from_slice(h0.row(v));
                    }
                }
                let dst = sh.groups.worker(self.stage + 1, self.rank);
                self.send(fabric, sh, Message::new(self.id, dst, Tag::ForwardEmb, ids, block), Some(chunk))?;
            }
            Step::Head { chunk } => {
                let mask = Self::slot_mask(ctx, self.num_layers + 1);
                let head = self.params.head.as_ref().expect("last stage owns the head");
                let head_in = self.head_in.as_mut().expect("last stage");
                let glogits = self.glogits.as_mut().expect("last stage");
                let top = self.h.last().expect("stage owns a layer");
                let classes = head.weight.cols();
                let mut logits = vec![T::zero(); classes];
                let mut probs = vec![T::zero(); classes];
                for &v in &sh.sub[chunk][self.rank] {
                    maybe_drop_row(mask.as_ref(), v, top.row(v), head_in.row_mut(v));
                    dense_row(head, head_in.row(v), &mut logits);
                    if sh.splits[v] == Split::Train {
                        let label = sh.labels[v] as usize;
                        let loss = xent_row(&logits, label, &mut probs);
                        if !loss.is_finite() {
                            return Err(Error::NonFinite(format!("training loss at vertex {v}")));
                        }
                        xent_grad_row(&probs, label, sh.train_count, glogits.row_mut(v));
                        self.losses.push((v, loss, argmax(&logits) == label));
                    }
                }
            }
            Step::HeadBackward { chunk } => {
                let mask = Self::slot_mask(ctx, self.num_layers + 1);
                let head = self.params.head.as_ref().expect("last stage owns the head");
                let glogits = self.glogits.as_ref().expect("last stage");
                let top = self.grad_out.last_mut().expect("stage owns a layer");
                let mut gx = vec![T::zero(); hdim];
                for &v in &sh.sub[chunk][self.rank] {
                    row_times_t(glogits.row(v), &head.weight, &mut gx);
                    maybe_drop_row(mask.as_ref(), v, &gx, top.row_mut(v));
                    if let Some(g) = self.gh0.as_mut() {
                        g.row_mut(v).iter_mut().for_each(|x| *x = T::zero());
                    }
                }
            }
            Step::RecvBackward { chunk } => {
                let src = sh.groups.worker(self.stage + 1, self.rank);
                let Some(msg) = self.recv(fabric, src, Tag::BackwardGrad, blocking, Some(chunk))? else {
                    return Ok(false);
                };
                let ids = &sh.sub[chunk][self.rank];
                self.check_rows(&msg, ids, hdim * self.vecs())?;
                let top = self.grad_out.last_mut().expect("stage owns a layer");
                for (i, &v) in ids.iter().enumerate() {
                    let row = msg.block.row(i);
                    top.row_mut(v).copy_from_slice(&row[..hdim]);
                    if let Some(g) = self.gh0.as_mut() {
                        g.row_mut(v).copy_from_slice(&row[hdim..]);
                    }
                }
            }
            Step::LocalBackward { chunk, layer } => {
                let j = layer - self.lo;
                let math = LayerMath::new(&self.params.layers[j], layer);
                let mut ga = vec![T::zero(); hdim];
                let mut g0 = vec![T::zero(); hdim];
                let rows = &sh.sub[chunk][self.rank];
                let sage = self.kind == LayerKind::Sage;
                for &v in rows {
                    let self_grad = if sage { Some(self.self_grad[j].row_mut(v)) } else { None };
                    math.backward_row(
                        self.grad_out[j].row(v),
                        self.h[j].row(v),
                        &mut ga,
                        self.gz[j].row_mut(v),
                        self_grad,
                        self.gh0.is_some().then_some(&mut g0[..]),
                    );
                    self.h[j].row_mut(v).copy_from_slice(&ga);
                    if let Some(acc) = self.gh0.as_mut() {
                        for (a, &b) in acc.row_mut(v).iter_mut().zip(&g0) {
                            *a = *a + b;
                        }
                    }
                }
                self.stash -= (rows.len() * (math.pre_dim() + hdim)) as u64 * T::WIRE_BYTES;
                let cost = sh.cost.layer_time(rows.len(), true);
                self.clock.compute(cost, Some(chunk), (layer, layer));
            }
            Step::InputGrad { chunk, layer } => {
                let j = layer - self.lo;
                let math = LayerMath::new(&self.params.layers[j], layer);
                let op = sh.prop.for_kind(self.kind);
                let mask = Self::slot_mask(ctx, layer);
                let gz = &self.gz[j];
                let self_grad = self.self_grad.get(j);
                let target = if j > 0 { &mut self.grad_out[j - 1] } else { &mut self.grad_in };
                let mut gx = vec![T::zero(); hdim];
                for &u in &sh.sub[chunk][self.rank] {
                    math.input_grad_row(op, u, self_grad.map(|m| m.row(u)), |v| gz.read(v), &mut gx);
                    maybe_drop_row(mask.as_ref(), u, &gx, target.row_mut(u));
                }
            }
            Step::SendBackward { chunk } => {
                let ids = sh.sub[chunk][self.rank].clone();
                let mut block = Matrix::zeros(ids.len(), hdim * self.vecs());
                for (i, &v) in ids.iter().enumerate() {
                    let row = block.row_mut(i);
                    row[..hdim].copy_from_slice(self.grad_in.row(v));
                    if let Some(g) = self.gh0.as_ref() {
                        row[hdim..].copy_from_slice(g.row(v));
                    }
                }
                let dst = sh.groups.worker(self.stage - 1, self.rank);
                self.send(fabric, sh, Message::new(self.id, dst, Tag::BackwardGrad, ids, block), Some(chunk))?;
            }
            Step::InputProjBackward { chunk } => {
                let h0 = self.h0.as_ref().expect("first stage");
                let ga0 = self.ga0.as_mut().expect("first stage");
                let mut total = vec![T::zero(); hdim];
                for &v in &sh.sub[chunk][self.rank] {
                    total.copy_from_slice(self.grad_in.row(v));
                    if let Some(g) = self.gh0.as_ref() {
                        for (a, &b) in total.iter_mut().zip(g.row(v)) {
                            *a = b + *a;
                        }
                    }
                    for ((o, &g), &h) in ga0.row_mut(v).iter_mut().zip(&total).zip(h0.row(v)) {
                        *o = if h > T::zero() { g } else { T::zero() };
                    }
                }
            }
            Step::AccumulateGrads => {
                let owned = &sh.owned[self.rank];
                self.grads = self.params.zeros_like();
                for j in 0..self.params.layers.len() {
                    let math = LayerMath::new(&self.params.layers[j], self.lo + j);
                    math.accumulate_weight_grad(&self.pre[j], &self.h[j], owned.iter().copied(), &mut self.grads.layers[j]);
                    math.finish_weight_grad(&mut self.grads.layers[j]);
                }
                if let (Some(g), Some(x), Some(ga)) = (self.grads.input.as_mut(), &self.x_in, &self.ga0) {
                    accumulate_dense_grad(x, ga, owned.iter().copied(), g);
                }
                if let (Some(g), Some(x), Some(gl)) = (self.grads.head.as_mut(), &self.head_in, &self.glogits) {
                    accumulate_dense_grad(x, gl, owned.iter().copied(), g);
                }
            }
            Step::WeightSend { to } => {
                let flat = self.grads.flatten();
                let block = Matrix::from_vec(1, flat.len(), flat)?;
                self.send(fabric, sh, Message::new(self.id, to, Tag::WeightSync, Vec::new(), block), None)?;
            }
            Step::WeightRecv { from } => {
                let Some(msg) = self.recv(fabric, from, Tag::WeightSync, blocking, None)? else {
                    return Ok(false);
                };
                if msg.block.len() != self.grads.num_values() {
                    return Err(Error::dim("weight sync", self.grads.num_values(), msg.block.len()));
                }
                if self.rank == 0 {
                    self.grads.add_flat(msg.block.as_slice());
                } else {
                    self.grads.unflatten(msg.block.as_slice());
                }
            }
            Step::Update => {
                let slots = self.params.slots.clone();
                let grads = self.grads.tensors();
                for ((slot, p), g) in slots.into_iter().zip(self.params.tensors_mut()).zip(grads) {
                    self.opt.step(slot, p, g);
                }
                self.opt.advance();
                if self.params.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
                    return Err(Error::NonFinite(format!("parameters of stage {}", self.stage)));
                }
            }
        }
        Ok(true)
    }

    /// Runs steps until done, or until a receive would block in
    /// non-blocking mode. Returns whether any step ran.
    pub fn advance(&mut self, sh: &Shared<T>, ctx: &EpochCtx, fabric: &Fabric<T>, blocking: bool) -> Result<bool> {
        let mut progressed = false;
        while let Some(step) = self.current_step() {
            if !self.run_step(step, sh, ctx, fabric, blocking)? {
                break;
            }
            self.cursor += 1;
            progressed = true;
        }
        Ok(progressed)
    }
}

/// Step list of worker `(stage, rank)` for one epoch visiting chunks in
/// `order`.
pub(crate) fn plan_epoch(
    groups: &GroupMap,
    stage: usize,
    rank: usize,
    range: (usize, usize),
    order: &[usize],
    synchronous: bool,
) -> Vec<Step> {
    let num_stages = groups.num_groups();
    let g = groups.group_size();
    let me = groups.worker(stage, rank);
    let first = stage == 0;
    let last = stage + 1 == num_stages;
    let (lo, hi) = range;
    let peers: Vec<usize> = (0..g).filter(|&q| q != rank).collect();
    let mut steps = Vec::new();

    // Epoch-start barrier through worker 0.
    let m = groups.num_workers();
    if m > 1 {
        if me == 0 {
            steps.extend((1..m).map(|w| Step::BarrierRecv { from: w }));
            steps.extend((1..m).map(|w| Step::BarrierSend { to: w }));
        } else {
            steps.push(Step::BarrierSend { to: 0 });
            steps.push(Step::BarrierRecv { from: 0 });
        }
    }

    let obtain = |k: usize| {
        if first {
            Step::InputProj { chunk: k }
        } else {
            Step::RecvForward { chunk: k }
        }
    };
    let emit = |k: usize| {
        if last {
            Step::Head { chunk: k }
        } else {
            Step::SendForward { chunk: k }
        }
    };
    let obtain_grad = |k: usize| {
        if last {
            Step::HeadBackward { chunk: k }
        } else {
            Step::RecvBackward { chunk: k }
        }
    };
    let emit_grad = |k: usize| {
        if first {
            Step::InputProjBackward { chunk: k }
        } else {
            Step::SendBackward { chunk: k }
        }
    };
    let sends = |steps: &mut Vec<Step>, k: usize, layer: usize, dir: Dir| {
        steps.extend(peers.iter().map(|&peer| Step::SendBoundary { chunk: k, layer, peer, dir }));
    };
    let recvs = |steps: &mut Vec<Step>, k: usize, layer: usize, dir: Dir| {
        steps.extend(peers.iter().map(|&peer| Step::RecvBoundary { chunk: k, layer, peer, dir }));
    };
    let reverse: Vec<usize> = order.iter().rev().copied().collect();

    if synchronous {
        for layer in lo..=hi {
            for &k in order {
                if layer == lo {
                    steps.push(obtain(k));
                }
                steps.push(Step::Prepare { chunk: k, layer });
                sends(&mut steps, k, layer, Dir::Fwd);
            }
            for &k in order {
                recvs(&mut steps, k, layer, Dir::Fwd);
            }
            steps.extend(order.iter().map(|&k| Step::Compute { chunk: k, layer }));
        }
        steps.extend(order.iter().map(|&k| emit(k)));
        for layer in (lo..=hi).rev() {
            for &k in &reverse {
                if layer == hi {
                    steps.push(obtain_grad(k));
                }
                steps.push(Step::LocalBackward { chunk: k, layer });
                sends(&mut steps, k, layer, Dir::Bwd);
            }
            for &k in &reverse {
                recvs(&mut steps, k, layer, Dir::Bwd);
            }
            steps.extend(reverse.iter().map(|&k| Step::InputGrad { chunk: k, layer }));
        }
        steps.extend(reverse.iter().map(|&k| emit_grad(k)));
    } else {
        for &k in order {
            steps.push(obtain(k));
            for layer in lo..=hi {
                steps.push(Step::Prepare { chunk: k, layer });
                sends(&mut steps, k, layer, Dir::Fwd);
                recvs(&mut steps, k, layer, Dir::Fwd);
                steps.push(Step::Compute { chunk: k, layer });
            }
            steps.push(emit(k));
        }
        for &k in &reverse {
            steps.push(obtain_grad(k));
            for layer in (lo..=hi).rev() {
                steps.push(Step::LocalBackward { chunk: k, layer });
                sends(&mut steps, k, layer, Dir::Bwd);
                recvs(&mut steps, k, layer, Dir::Bwd);
                steps.push(Step::InputGrad { chunk: k, layer });
            }
            steps.push(emit_grad(k));
        }
    }

    steps.push(Step::AccumulateGrads);
    if g > 1 {
        let root = groups.worker(stage, 0);
        if rank == 0 {
            steps.extend((1..g).map(|q| Step::WeightRecv { from: groups.worker(stage, q) }));
            steps.extend((1..g).map(|q| Step::WeightSend { to: groups.worker(stage, q) }));
        } else {
            steps.push(Step::WeightSend { to: root });
            steps.push(Step::WeightRecv { from: root });
        }
    }
    steps.push(Step::Update);
    steps
}
