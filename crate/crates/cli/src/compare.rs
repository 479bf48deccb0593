use std::fmt::Write as _;
use std::path::Path;

use chunkpipe::analytics::to_gib;
use chunkpipe::engine::METRICS_HEADER;
use chunkpipe::{Error, Result};

use crate::commands::write_text;
use crate::CompareArgs;

/// One parsed metrics.csv.
#[derive(Clone, Debug)]
pub struct MetricsFile {
    pub mode: String,
    /// Data lines with the mode column stripped.
    pub body: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsFile {
    pub fn column(&self, name: &str) -> Vec<f64> {
        let idx = METRICS_HEADER.split(',').skip(1).position(|h| h == name).expect("known column");
        self.rows.iter().map(|r| r[idx]).collect()
    }

    pub fn last(&self, name: &str) -> f64 {
        self.column(name).last().copied().unwrap_or(f64::NAN)
    }

    pub fn mean(&self, name: &str) -> f64 {
        let c = self.column(name);
        if c.is_empty() {
            return 0.0;
        }
        c.iter().sum::<f64>() / c.len() as f64
    }
}

pub fn read_metrics(dir: &Path) -> Result<MetricsFile> {
    let path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let format = |detail: String| Error::Format {
        what: "metrics.csv",
        detail: format!("{}: {detail}", path.display()),
    };
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(format("unexpected header".into()));
    }
    let mut mode = String::new();
    let mut body = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let (m, rest) = line.split_once(',').ok_or_else(|| format(format!("line {} has no columns", i + 2)))?;
        mode = m.to_string();
        let row = rest
            .split(',')
            .map(|x| x.parse::<f64>().map_err(|_| format(format!("line {}: bad number {x:?}", i + 2))))
            .collect::<Result<Vec<_>>>()?;
        body.push(rest.to_string());
        rows.push(row);
    }
    Ok(MetricsFile { mode, body, rows })
}

/// Prints a summary table; returns `false` when `--identical` finds a difference.
pub fn run(a: CompareArgs) -> Result<bool> {
    let files = a.runs.iter().map(|d| read_metrics(d)).collect::<Result<Vec<_>>>()?;
    let mut table = String::from(
        "run,mode,epochs,train_loss,val_acc,test_acc,graph_gib,pipeline_gib,weightsync_gib,wall_time_s,bubble_fraction\n",
    );
    for (dir, f) in a.runs.iter().zip(&files) {
        let _ = writeln!(
            table,
            "{},{},{},{:.6},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6},{:.4}",
            dir.display(),
            f.mode,
            f.rows.len(),
            f.last("train_loss"),
            f.last("val_acc"),
            f.last("test_acc"),
            to_gib(f.mean("comm_bytes_graph")),
            to_gib(f.mean("comm_bytes_pipeline")),
            to_gib(f.mean("comm_bytes_weightsync")),
            f.mean("wall_time_s"),
            f.mean("bubble_fraction"),
        );
    }
    print!("{table}");
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        write_text(&out.join("compare.csv"), &table)?;
    }
    if !a.identical {
        return Ok(true);
    }
    let first = &files[0];
    let mut same = true;
    for (dir, f) in a.runs.iter().zip(&files).skip(1) {
        if f.body != first.body {
            same = false;
            let line = f.body.iter().zip(&first.body).position(|(x, y)| x != y).unwrap_or(f.body.len().min(first.body.len()));
            println!("{} differs from {} at data line {}", dir.display(), a.runs[0].display(), line + 1);
        }
    }
    if same {
        println!("all metrics identical apart from the mode column");
    }
    Ok(same)
}
