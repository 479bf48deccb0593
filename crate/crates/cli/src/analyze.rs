use std::fmt::Write as _;
use std::path::Path;

use chunkpipe::analytics::{
    bubble_analysis, crossover_report, depth_sweep, graph_bytes_from_boundary, pipeline_bytes, reference_dataset, to_gib,
    CommModelInput, CrossoverInput, ParallelMode, ReportRow, REPORT_HEADER,
};
use chunkpipe::fabric::read_trace;
use chunkpipe::nn::LayerKind;
use chunkpipe::{Error, Result};

use crate::commands::{write_text, RunSummary, SUMMARY_FILE};
use crate::compare::read_metrics;
use crate::config::Mode;
use crate::AnalyzeArgs;

fn parallel_mode(m: Mode) -> Option<ParallelMode> {
    match m {
        Mode::Sequential => None,
        Mode::Graph => Some(ParallelMode::Graph),
        Mode::Pipeline => Some(ParallelMode::Pipeline),
        Mode::Hybrid => Some(ParallelMode::Hybrid),
    }
}

fn base_input(a: &AnalyzeArgs) -> Result<Option<CommModelInput>> {
    let reference = match &a.reference {
        Some(name) => Some(reference_dataset(name).ok_or_else(|| {
            Error::Config(format!("unknown reference dataset {name:?} (squirrel, physics, flickr, reddit)"))
        })?),
        None => None,
    };
    let Some(n) = a.n.or(reference.map(|r| r.vertices)) else {
        return Ok(None);
    };
    let hidden = a.hidden.or(reference.map(|r| r.hidden)).unwrap_or(64);
    let alpha = a.alpha.or(reference.map(|r| r.replication)).unwrap_or(0.0);
    let vecs = a.model.unwrap_or(LayerKind::Gcn).vecs_per_vertex();
    let mut input = CommModelInput::new(n, a.layers.unwrap_or(8), hidden)
        .with_stages(a.stages.unwrap_or(8))
        .with_ways(a.ways.unwrap_or(1))
        .with_alpha(alpha)
        .with_vecs(vecs);
    if a.mode == Mode::Graph {
        input = input.with_stages(1).with_ways(a.ways.unwrap_or(a.stages.unwrap_or(8)));
    }
    input.validate()?;
    Ok(Some(input))
}

fn measured_row(dir: &Path) -> Result<(ReportRow, bool, String)> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let s: RunSummary = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let metrics = read_metrics(dir)?;
    let mode = parallel_mode(s.mode).unwrap_or(ParallelMode::Graph);
    let per_epoch: Vec<u64> = match mode {
        ParallelMode::Graph => metrics.column("comm_bytes_graph"),
        ParallelMode::Pipeline => metrics.column("comm_bytes_pipeline"),
        ParallelMode::Hybrid => metrics
            .column("comm_bytes_graph")
            .iter()
            .zip(metrics.column("comm_bytes_pipeline"))
            .map(|(g, p)| g + p)
            .collect(),
    }
    .into_iter()
    .map(|b| b as u64)
    .collect();
    let constant = per_epoch.windows(2).all(|w| w[0] == w[1]);
    let input = CommModelInput::new(s.n, s.layers, s.hidden)
        .with_stages(s.stages)
        .with_ways(s.ways)
        .with_alpha(s.alpha)
        .with_vecs(s.vecs);
    let mut row = ReportRow::new(mode, input, per_epoch.first().copied());
    // Exact integer form, free of the α·N rounding.
    row.predicted_bytes = match mode {
        ParallelMode::Graph => graph_bytes_from_boundary(s.total_boundary, s.layers, s.hidden),
        ParallelMode::Pipeline => pipeline_bytes(s.stages, s.n, s.hidden, s.vecs),
        ParallelMode::Hybrid => {
            graph_bytes_from_boundary(s.total_boundary, s.layers, s.hidden) + pipeline_bytes(s.stages, s.n, s.hidden, s.vecs)
        }
    } as f64;
    if s.mode == Mode::Sequential {
        row.mode = "sequential".into();
        row.predicted_bytes = 0.0;
    }
    let mut bubble = String::new();
    let trace_path = dir.join("trace.jsonl");
    if trace_path.exists() {
        let trace = read_trace(&trace_path)?;
        if !trace.is_empty() {
            let b = bubble_analysis(&trace, s.stages as usize, s.chunks as usize)?;
            bubble = format!(
                "bubble measured {:.4} ideal {:.4} over {} epochs",
                b.measured_bubble, b.ideal_bubble, b.epochs
            );
        }
    }
    Ok((row, constant, bubble))
}

pub fn run(a: AnalyzeArgs) -> Result<()> {
    let input = base_input(&a)?;
    if input.is_none() && a.run.is_empty() {
        return Err(Error::Config(
            "nothing to analyze: give --n/--reference for closed forms, or --run DIR for a measured run".into(),
        ));
    }
    if (a.crossover || !a.sweep_depth.is_empty()) && input.is_none() {
        return Err(Error::Config("--crossover and --sweep-depth need --n or --reference".into()));
    }
    let mut rows = Vec::new();
    let mut sweep_csv = None;
    if let Some(input) = input {
        let mode = parallel_mode(a.mode).ok_or_else(|| Error::Config("sequential mode has no communication to model".into()))?;
        let row = ReportRow::new(mode, input, None);
        println!(
            "{} volume: {:.0} bytes/epoch ({:.4} GiB)",
            mode,
            row.predicted_bytes,
            to_gib(row.predicted_bytes)
        );
        rows.push(row);
        if !a.sweep_depth.is_empty() {
            let mut csv = String::from("layers,graph_bytes,graph_gib,pipeline_bytes,pipeline_gib\n");
            println!("{:>6} {:>16} {:>10} {:>16} {:>10}", "layers", "graph_bytes", "graph_gib", "pipeline_bytes", "pipe_gib");
            for p in depth_sweep(&input, &a.sweep_depth) {
                println!(
                    "{:>6} {:>16.0} {:>10.4} {:>16.0} {:>10.4}",
                    p.layers,
                    p.graph_bytes,
                    to_gib(p.graph_bytes),
                    p.pipeline_bytes,
                    to_gib(p.pipeline_bytes)
                );
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    p.layers,
                    p.graph_bytes,
                    to_gib(p.graph_bytes),
                    p.pipeline_bytes,
                    to_gib(p.pipeline_bytes)
                );
            }
            sweep_csv = Some(csv);
        }
        if a.crossover {
            let stages_hybrid = a.stages_hybrid.unwrap_or(2);
            let c = CrossoverInput {
                n: input.n,
                layers: input.layers,
                hidden: input.hidden,
                vecs: input.vecs,
                alpha_graph: input.alpha,
                stages_pipeline: input.stages.max(input.workers),
                alpha_hybrid: a.alpha_hybrid.unwrap_or(input.alpha / 2.0),
                stages_hybrid,
                ways_hybrid: a.ways_hybrid.unwrap_or((input.workers / stages_hybrid).max(1)),
            };
            let report = crossover_report(&c)?;
            println!("{report}");
            let pipeline_beats_graph = report
                .comparison(ParallelMode::Graph, ParallelMode::Pipeline)
                .is_some_and(|c| c.winner == Some(ParallelMode::Pipeline));
            if input.alpha < 1.0 && pipeline_beats_graph {
                println!(
                    "note: pipelining wins on volume only; on a sparse graph with light per-layer compute, \
                     pipeline bubbles and per-chunk overheads can still make it slower in wall-clock time"
                );
            }
        }
    }
    for dir in &a.run {
        let (row, constant, bubble) = measured_row(dir)?;
        println!(
            "{}: {} predicted {:.0} measured {} rel_error {}{}",
            dir.display(),
            row.mode,
            row.predicted_bytes,
            row.measured_bytes.map_or("-".into(), |m| m.to_string()),
            row.rel_error().map_or("-".into(), |e| format!("{e:.3e}")),
            if constant { "" } else { " (varies across epochs)" }
        );
        if !bubble.is_empty() {
            println!("{}: {bubble}", dir.display());
        }
        rows.push(row);
    }
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        let mut csv = String::from(REPORT_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.to_csv());
            csv.push('\n');
        }
        write_text(&out.join("report.csv"), &csv)?;
        if let Some(s) = sweep_csv {
            write_text(&out.join("depth_sweep.csv"), &s)?;
        }
    }
    Ok(())
}
