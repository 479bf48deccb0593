use chunkpipe::analytics::{
    graph_bytes_from_boundary, pipeline_bytes, volume_graph, volume_hybrid, volume_pipeline, CommModelInput,
};
use chunkpipe::engine::{train_hybrid, StageAssignment, StalenessConfig, TrainConfig};
use chunkpipe::fabric::GroupMap;
use chunkpipe::graph::{dataset_from_graph, Graph};
use chunkpipe::nn::{LayerKind, ModelConfig};
use chunkpipe::partition::{make_chunks, parse_assignment, partition_vertices, random_partition, ChunkPlan};
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..60).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..4 * n).prop_map(move |pairs| {
            let edges: Vec<_> = pairs.into_iter().filter(|(u, v)| u != v).collect();
            Graph::from_edges(n, &edges).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn graph_is_symmetric(g in graph_strategy()) {
        let degree_sum: usize = g.degrees().iter().sum();
        prop_assert_eq!(degree_sum, 2 * g.num_edges());
        for (u, v) in g.edges() {
            prop_assert!(g.has_edge(v, u));
            prop_assert!(u != v);
        }
    }

    #[test]
    fn partition_covers_every_vertex_once(g in graph_strategy(), parts in 1usize..6, seed in 0u64..1000) {
        let n = g.num_vertices();
        prop_assume!(parts <= n);
        for p in [partition_vertices(&g, parts, seed).unwrap(), random_partition(&g, parts, seed).unwrap()] {
            prop_assert!(p.is_balanced());
            let mut seen = vec![0usize; n];
            for i in 0..parts {
                for &v in p.inner(i) {
                    seen[v] += 1;
                    prop_assert_eq!(p.part_of(v), i);
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn boundary_is_outside_neighbourhood(g in graph_strategy(), parts in 1usize..6, seed in 0u64..1000) {
        prop_assume!(parts <= g.num_vertices());
        let p = partition_vertices(&g, parts, seed).unwrap();
        for i in 0..parts {
            let mut expected: Vec<usize> = p
                .inner(i)
                .iter()
                .flat_map(|&v| g.neighbors(v).iter().copied())
                .filter(|&u| p.part_of(u) != i)
                .collect();
            expected.sort_unstable();
            expected.dedup();
            prop_assert_eq!(p.boundary(i), &expected[..]);
        }
        if parts == 1 {
            prop_assert_eq!(p.total_boundary(), 0);
        }
    }

    #[test]
    fn assignment_text_round_trips(g in graph_strategy(), parts in 1usize..6, seed in 0u64..1000) {
        prop_assume!(parts <= g.num_vertices());
        let p = partition_vertices(&g, parts, seed).unwrap();
        let (k, assignment) = parse_assignment(&p.to_text()).unwrap();
        prop_assert_eq!(k, parts);
        prop_assert_eq!(&assignment[..], p.assignment());
    }

    #[test]
    fn chunks_cover_every_vertex_once(g in graph_strategy(), k in 1usize..10, seed in 0u64..1000) {
        prop_assume!(k <= g.num_vertices());
        let plan = make_chunks(&g, k, seed).unwrap();
        prop_assert_eq!(plan.num_chunks(), k);
        let mut seen = vec![0usize; g.num_vertices()];
        for (c, chunk) in plan.chunks().iter().enumerate() {
            for &v in chunk {
                seen[v] += 1;
                prop_assert_eq!(plan.chunk_of(v), c);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let again = ChunkPlan::from_assignment(plan.assignment().to_vec(), k).unwrap();
        prop_assert_eq!(again, plan);
    }

    #[test]
    fn hybrid_volume_degenerates(
        n in 1u64..1_000_000,
        layers in 1u64..256,
        hidden in 1u64..2048,
        stages in 1u64..16,
        ways in 1u64..16,
        alpha in 0.0f64..8.0,
    ) {
        let base = CommModelInput::new(n, layers, hidden).with_alpha(alpha);
        let one_way = base.with_stages(stages).with_ways(1).with_alpha(0.0);
        prop_assert_eq!(volume_hybrid(&one_way), volume_pipeline(&one_way));
        let one_stage = base.with_stages(1).with_ways(ways);
        prop_assert_eq!(volume_hybrid(&one_stage), volume_graph(&one_stage));
        prop_assert_eq!(volume_pipeline(&base.with_stages(stages)), pipeline_bytes(stages, n, hidden, 1) as f64);
        let deeper = base.with_stages(stages);
        let deeper = CommModelInput { layers: layers + 1, ..deeper };
        prop_assert_eq!(volume_pipeline(&deeper), volume_pipeline(&base.with_stages(stages)));
    }

    #[test]
    fn graph_bytes_are_linear_in_depth(total in 0u64..100_000, layers in 1u64..128, hidden in 1u64..1024) {
        prop_assert_eq!(
            graph_bytes_from_boundary(total, layers, hidden),
            layers * graph_bytes_from_boundary(total, 1, hidden)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn measured_hybrid_bytes_are_exact(
        g in graph_strategy(),
        stages in 1usize..4,
        ways in 1usize..4,
        chunks_per_stage in 1usize..3,
        seed in 0u64..100,
    ) {
        let n = g.num_vertices();
        let k = stages * chunks_per_stage;
        prop_assume!(ways <= n && k <= n);
        let d = dataset_from_graph(g, 3, 2, seed).unwrap();
        let part = partition_vertices(&d.graph, ways, seed).unwrap();
        let plan = make_chunks(&d.graph, k, seed).unwrap();
        let layers = stages + 1;
        let stage_map = StageAssignment::even(layers, stages).unwrap();
        let groups = GroupMap::single_node(stages, ways);
        let model = ModelConfig::new(LayerKind::Gcnii, layers, 4, d.num_features(), d.num_classes);
        let cfg = TrainConfig::new(model, 2, seed);
        let r = train_hybrid::<f32>(&d, &part, &plan, &stage_map, &groups, StalenessConfig::default(), &cfg).unwrap();
        let graph = graph_bytes_from_boundary(part.total_boundary() as u64, layers as u64, 4);
        let pipe = pipeline_bytes(stages as u64, n as u64, 4, 2);
        for (e, m) in r.metrics.iter().enumerate() {
            prop_assert_eq!(m.comm_bytes_graph, graph);
            prop_assert_eq!(m.comm_bytes_pipeline, pipe);
            let report = r.ledger.report(e as u64, &groups).unwrap();
            prop_assert!(report.is_consistent());
        }
    }
}
