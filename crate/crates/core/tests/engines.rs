use chunkpipe::engine::{
    train_graph_parallel, train_hybrid, train_pipeline, train_sequential, ExecMode, StageAssignment, StalenessConfig,
    TrainConfig, TrainResult,
};
use chunkpipe::fabric::{CostModel, GroupMap, Tag};
use chunkpipe::graph::{dataset_from_graph, generate_sbm, Dataset, Graph};
use chunkpipe::nn::{LayerKind, ModelConfig, ModelParams};
use chunkpipe::partition::{make_chunks, partition_from_assignment, partition_vertices, ChunkPlan};

fn sbm() -> Dataset {
    generate_sbm(4, 16, 0.3, 0.02, 5).unwrap()
}

fn g8() -> Dataset {
    let mut edges: Vec<(usize, usize)> = (0..7).map(|v| (v, v + 1)).collect();
    edges.push((2, 5));
    dataset_from_graph(Graph::from_edges(8, &edges).unwrap(), 3, 2, 1).unwrap()
}

fn config(d: &Dataset, kind: LayerKind, layers: usize, hidden: usize, epochs: usize) -> TrainConfig {
    let model = ModelConfig::new(kind, layers, hidden, d.num_features(), d.num_classes).with_dropout(0.2);
    TrainConfig::new(model, epochs, 3).with_lr(0.01)
}

fn assert_same<T: chunkpipe::Real>(a: &TrainResult<T>, b: &TrainResult<T>) {
    assert!(a.params.bit_identical(&b.params), "params differ");
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits(), "epoch {}", x.epoch);
        assert_eq!(x.train_acc, y.train_acc);
        assert_eq!(x.val_acc, y.val_acc);
        assert_eq!(x.test_acc, y.test_acc);
    }
    assert_eq!(a.metrics.len(), b.metrics.len());
}

#[test]
fn zero_epochs_return_initial_params() {
    let d = sbm();
    let cfg = config(&d, LayerKind::Gcn, 2, 8, 0);
    let r = train_sequential::<f32>(&d, &cfg).unwrap();
    assert!(r.metrics.is_empty());
    assert!(r.params.bit_identical(&ModelParams::init(&cfg.model, cfg.seed)));
}

#[test]
fn first_epoch_loss_is_log_classes() {
    let d = sbm();
    let r = train_sequential::<f64>(&d, &config(&d, LayerKind::Gcnii, 4, 8, 1)).unwrap();
    assert!((r.metrics[0].train_loss - 4f64.ln()).abs() < 1e-9);
}

#[test]
fn single_stage_single_chunk_pipeline_is_sequential() {
    let d = sbm();
    for kind in [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gcnii] {
        let cfg = config(&d, kind, 3, 8, 4);
        let seq = train_sequential::<f32>(&d, &cfg).unwrap();
        let stages = StageAssignment::even(3, 1).unwrap();
        let pipe = train_pipeline::<f32>(&d, &ChunkPlan::single(64), &stages, StalenessConfig::default(), &cfg).unwrap();
        assert_same(&seq, &pipe);
        for (a, b) in seq.metrics.iter().zip(&pipe.metrics) {
            assert_eq!(a.wall_time_s.to_bits(), b.wall_time_s.to_bits());
        }
    }
}

#[test]
fn synchronous_pipeline_is_sequential() {
    let d = sbm();
    for kind in [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gcnii] {
        let cfg = config(&d, kind, 4, 8, 3);
        let seq = train_sequential::<f64>(&d, &cfg).unwrap();
        let plan = make_chunks(&d.graph, 8, 1).unwrap();
        let stages = StageAssignment::even(4, 4).unwrap();
        let pipe = train_pipeline::<f64>(&d, &plan, &stages, StalenessConfig::synchronous(), &cfg).unwrap();
        assert_same(&seq, &pipe);
    }
}

#[test]
fn single_worker_graph_parallel_is_sequential() {
    let d = sbm();
    let cfg = config(&d, LayerKind::Gcnii, 3, 8, 3);
    let seq = train_sequential::<f32>(&d, &cfg).unwrap();
    let part = partition_vertices(&d.graph, 1, 0).unwrap();
    let gp = train_graph_parallel::<f32>(&d, &part, &cfg).unwrap();
    assert_same(&seq, &gp);
}

#[test]
fn graph_parallel_matches_sequential_closely() {
    let d = sbm();
    let cfg = config(&d, LayerKind::Sage, 3, 8, 3);
    let seq = train_sequential::<f64>(&d, &cfg).unwrap();
    let part = partition_vertices(&d.graph, 3, 0).unwrap();
    let gp = train_graph_parallel::<f64>(&d, &part, &cfg).unwrap();
    let diff = seq.params.max_rel_diff(&gp.params);
    // Weight gradients are summed per rank first, so only rounding differs.
    assert!(diff < 1e-8, "{diff}");
}

#[test]
fn g8_boundary_traffic_is_192_bytes() {
    let d = g8();
    let part = partition_from_assignment(&d.graph, vec![0, 0, 0, 1, 1, 2, 2, 2], 3).unwrap();
    let cfg = config(&d, LayerKind::Gcn, 2, 2, 2);
    let r = train_graph_parallel::<f32>(&d, &part, &cfg).unwrap();
    for m in &r.metrics {
        assert_eq!(m.comm_bytes_graph, 192);
        assert_eq!(m.comm_bytes_pipeline, 0);
        assert!(m.comm_bytes_weightsync > 0);
    }
}

#[test]
fn graph_ledger_matches_boundary_sum() {
    let d = sbm();
    let part = partition_vertices(&d.graph, 4, 2).unwrap();
    let (l, h) = (3, 8);
    let r = train_graph_parallel::<f32>(&d, &part, &config(&d, LayerKind::Gcn, l, h, 2)).unwrap();
    let expected = 2 * 4 * l * part.total_boundary() * h;
    assert!(r.metrics.iter().all(|m| m.comm_bytes_graph == expected as u64));
}

#[test]
fn pipeline_ledger_matches_closed_form() {
    let d = sbm();
    let n = d.num_vertices() as u64;
    for (kind, vecs) in [(LayerKind::Gcn, 1), (LayerKind::Gcnii, 2)] {
        for s in [2usize, 4] {
            let cfg = config(&d, kind, 4, 8, 3);
            let plan = make_chunks(&d.graph, 4 * s, 1).unwrap();
            let stages = StageAssignment::even(4, s).unwrap();
            let r = train_pipeline::<f32>(&d, &plan, &stages, StalenessConfig::default(), &cfg).unwrap();
            let expected = 2 * (s as u64 - 1) * n * 8 * 4 * vecs;
            for m in &r.metrics {
                assert_eq!(m.comm_bytes_pipeline, expected, "{kind:?} S={s}");
                assert_eq!(m.comm_bytes_graph, 0);
            }
        }
    }
}

#[test]
fn hybrid_two_by_two_has_both_traffic_kinds() {
    let d = sbm();
    let n = d.num_vertices() as u64;
    let part = partition_vertices(&d.graph, 2, 0).unwrap();
    let plan = make_chunks(&d.graph, 8, 1).unwrap();
    let stages = StageAssignment::even(4, 2).unwrap();
    let groups = GroupMap::single_node(2, 2);
    let cfg = config(&d, LayerKind::Gcnii, 4, 8, 2);
    let r = train_hybrid::<f32>(&d, &part, &plan, &stages, &groups, StalenessConfig::default(), &cfg).unwrap();
    for (e, m) in r.metrics.iter().enumerate() {
        assert_eq!(m.comm_bytes_pipeline, 2 * n * 8 * 4 * 2);
        assert!(m.comm_bytes_graph > 0);
        let traffic = r.ledger.epoch(e as u64).unwrap();
        assert!(traffic.data_bytes(Tag::GraphBoundaryFwd) > 0);
        assert!(traffic.data_bytes(Tag::ForwardEmb) > 0);
    }
}

#[test]
fn hybrid_degenerates_to_pipeline_and_graph_parallel() {
    let d = sbm();
    let cfg = config(&d, LayerKind::Gcn, 4, 8, 3);
    let plan = make_chunks(&d.graph, 8, 1).unwrap();
    let stages = StageAssignment::even(4, 2).unwrap();
    let one = partition_vertices(&d.graph, 1, 0).unwrap();
    let pipe = train_pipeline::<f32>(&d, &plan, &stages, StalenessConfig::default(), &cfg).unwrap();
    let hyb = train_hybrid::<f32>(&d, &one, &plan, &stages, &GroupMap::single_node(2, 1), StalenessConfig::default(), &cfg)
        .unwrap();
    assert_same(&pipe, &hyb);

    let part = partition_vertices(&d.graph, 3, 0).unwrap();
    let gp = train_graph_parallel::<f32>(&d, &part, &cfg).unwrap();
    let hyb = train_hybrid::<f32>(
        &d,
        &part,
        &ChunkPlan::single(64),
        &StageAssignment::even(4, 1).unwrap(),
        &GroupMap::single_node(1, 3),
        StalenessConfig::synchronous(),
        &cfg,
    )
    .unwrap();
    assert_same(&gp, &hyb);
}

#[test]
fn concurrent_mode_matches_deterministic() {
    let d = sbm();
    let part = partition_vertices(&d.graph, 2, 0).unwrap();
    let plan = make_chunks(&d.graph, 8, 1).unwrap();
    let stages = StageAssignment::even(4, 2).unwrap();
    let groups = GroupMap::single_node(2, 2);
    let cfg = config(&d, LayerKind::Gcnii, 4, 8, 3);
    let det = train_hybrid::<f32>(&d, &part, &plan, &stages, &groups, StalenessConfig::default(), &cfg).unwrap();
    let conc_cfg = cfg.clone().with_exec(ExecMode::Concurrent);
    let conc = train_hybrid::<f32>(&d, &part, &plan, &stages, &groups, StalenessConfig::default(), &conc_cfg).unwrap();
    assert_same(&det, &conc);
    assert_eq!(det.ledger.epochs(), conc.ledger.epochs());
}

#[test]
fn uniform_cost_bubble_matches_ideal() {
    let d = sbm();
    let n = d.num_vertices();
    for (s, k) in [(2usize, 4usize), (4, 8), (4, 16)] {
        // Equal-size chunks so every chunk step costs the same.
        let plan = ChunkPlan::from_assignment((0..n).map(|v| v % k).collect(), k).unwrap();
        let stages = StageAssignment::even(s, s).unwrap();
        let mut cfg = config(&d, LayerKind::Gcn, s, 4, 1);
        cfg.cost = CostModel::uniform(1.0, 1.0);
        let r = train_pipeline::<f32>(&d, &plan, &stages, StalenessConfig::default(), &cfg).unwrap();
        let ideal = (s - 1) as f64 / (k + s - 1) as f64;
        let got = r.metrics[0].bubble_fraction;
        assert!((got - ideal).abs() < 1e-9, "S={s} K={k}: {got} vs {ideal}");
    }
}

#[test]
fn stale_pipeline_still_learns() {
    let d = sbm();
    let cfg = config(&d, LayerKind::Gcn, 2, 16, 60);
    let plan = make_chunks(&d.graph, 8, 1).unwrap();
    let stages = StageAssignment::even(2, 2).unwrap();
    let r = train_pipeline::<f32>(&d, &plan, &stages, StalenessConfig::default(), &cfg).unwrap();
    let first = r.metrics.first().unwrap().train_loss;
    let last = r.metrics.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn mismatched_shapes_are_rejected() {
    let d = sbm();
    let cfg = config(&d, LayerKind::Gcn, 4, 8, 1);
    let plan = make_chunks(&d.graph, 4, 1).unwrap();
    let stages = StageAssignment::even(4, 2).unwrap();
    let part = partition_vertices(&d.graph, 2, 0).unwrap();
    assert!(train_hybrid::<f32>(&d, &part, &plan, &stages, &GroupMap::single_node(2, 3), StalenessConfig::default(), &cfg)
        .is_err());
    assert!(train_pipeline::<f32>(&d, &ChunkPlan::single(10), &stages, StalenessConfig::default(), &cfg).is_err());
    assert!(StageAssignment::even(2, 4).is_err());
}
