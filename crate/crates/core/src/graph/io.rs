//! On-disk dataset directory:
//!
//! ```text
//! meta.json     {"num_vertices":N,"num_edges":M,"num_features":F,"num_classes":C}
//! graph.txt     "N M" then M lines "u v" (0-based)
//! features.f32  N·F little-endian f32, row-major
//! labels.u32    N little-endian u32
//! masks.u8      N bytes: 0 unused, 1 train, 2 val, 3 test
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_vertices: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(path, e))
}

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        detail: detail.into(),
    }
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::dim(context, expected, found));
    }
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta: DatasetMeta = serde_json::from_slice(&read(dir, "meta.json")?)?;

    let text = String::from_utf8(read(dir, "graph.txt")?)
        .map_err(|e| format_err("graph.txt", e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| format_err("graph.txt", "missing header line"))?;
    let (n, m) = parse_pair(header)?;
    check_len("graph.txt vertex count vs meta.json", meta.num_vertices, n)?;
    check_len("graph.txt edge count vs meta.json", meta.num_edges, m)?;
    let mut edges = Vec::with_capacity(m);
    for line in lines {
        edges.push(parse_pair(line)?);
    }
    check_len("graph.txt edge lines", m, edges.len())?;
    let graph = Graph::from_edges(n, &edges)?;

    let raw = read(dir, "features.f32")?;
    if raw.len() % 4 != 0 {
        return Err(format_err("features.f32", "length is not a multiple of 4 bytes"));
    }
    check_len("features.f32 values", n * meta.num_features, raw.len() / 4)?;
    let feats = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let features = Matrix::from_vec(n, meta.num_features, feats)?;

    let raw = read(dir, "labels.u32")?;
    if raw.len() % 4 != 0 {
        return Err(format_err("labels.u32", "length is not a multiple of 4 bytes"));
    }
    check_len("labels.u32 values", n, raw.len() / 4)?;
    let labels = raw
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let raw = read(dir, "masks.u8")?;
    check_len("masks.u8 values", n, raw.len())?;
    let splits = raw
        .iter()
        .map(|&b| Split::from_byte(b).ok_or_else(|| format_err("masks.u8", format!("byte {b}"))))
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(graph, features, labels, meta.num_classes, splits)
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(format_err("graph.txt", format!("bad line {line:?}"))),
    }
}

/// Writes `dataset` in canonical form (edges `u < v`, sorted).
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &dataset.graph;
    let meta = DatasetMeta {
        num_vertices: g.num_vertices(),
        num_edges: g.num_edges(),
        num_features: dataset.num_features(),
        num_classes: dataset.num_classes,
    };
    write(dir, "meta.json", &serde_json::to_vec(&meta)?)?;

    let mut text = Vec::with_capacity(16 * (g.num_edges() + 1));
    writeln!(text, "{} {}", g.num_vertices(), g.num_edges()).expect("vec write");
    for (u, v) in g.edges() {
        writeln!(text, "{u} {v}").expect("vec write");
    }
    write(dir, "graph.txt", &text)?;

    let feats: Vec<u8> = dataset
        .features
        .as_slice()
        .iter()
        .flat_map(|x| x.to_le_bytes())
        .collect();
    write(dir, "features.f32", &feats)?;
    let labels: Vec<u8> = dataset.labels.iter().flat_map(|x| x.to_le_bytes()).collect();
    write(dir, "labels.u32", &labels)?;
    let masks: Vec<u8> = dataset.splits.iter().map(|&s| s as u8).collect();
    write(dir, "masks.u8", &masks)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}
