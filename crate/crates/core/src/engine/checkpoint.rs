//! Per-stage checkpoints: a little-endian `u64` header length, a JSON
//! header, then every tensor as little-endian `f32` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::config::StageAssignment;
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, ModelParams};
use crate::real::Real;
use crate::tensor::Matrix;

const MAGIC: &str = "chunkpipe-checkpoint";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    stage: usize,
    num_stages: usize,
    layer_lo: usize,
    layer_hi: usize,
    model: ModelConfig,
    tensors: Vec<TensorInfo>,
}

pub fn stage_file(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage_{stage}.ckpt"))
}

fn named_tensors<T: Real>(
    params: &ModelParams<T>,
    stage: usize,
    stages: &StageAssignment,
) -> Vec<(String, usize, usize, Vec<T>)> {
    let (lo, hi) = stages.range(stage);
    let mut out = Vec::new();
    let mut dense = |name: &str, w: &Matrix<T>, b: &[T]| {
        out.push((format!("{name}.weight"), w.rows(), w.cols(), w.as_slice().to_vec()));
        out.push((format!("{name}.bias"), 1, b.len(), b.to_vec()));
    };
    if stage == 0 {
        dense("input", &params.input.weight, &params.input.bias);
    }
    for l in lo..=hi {
        let p = &params.layers[l - 1];
        dense(&format!("layer{l}"), &p.weight, &p.bias);
    }
    if stage + 1 == stages.num_stages() {
        dense("head", &params.head.weight, &params.head.bias);
    }
    out
}

/// Writes one file per stage into `dir` (created if missing).
pub fn save_checkpoint<T: Real>(
    dir: &Path,
    params: &ModelParams<T>,
    model: &ModelConfig,
    stages: &StageAssignment,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for stage in 0..stages.num_stages() {
        let tensors = named_tensors(params, stage, stages);
        let (layer_lo, layer_hi) = stages.range(stage);
        let header = Header {
            format: MAGIC.to_string(),
            version: 1,
            stage,
            num_stages: stages.num_stages(),
            layer_lo,
            layer_hi,
            model: model.clone(),
            tensors: tensors
                .iter()
                .map(|(name, rows, cols, _)| TensorInfo {
                    name: name.clone(),
                    rows: *rows,
                    cols: *cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut bytes = Vec::with_capacity(8 + json.len());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for (_, _, _, values) in &tensors {
            for v in values {
                bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        let path = stage_file(dir, stage);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_stage(path: &Path) -> Result<(Header, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Format {
        what: "checkpoint",
        detail: format!("{}: {detail}", path.display()),
    };
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated header length"))?.try_into().expect("8 bytes");
    let len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.format != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut off = 8 + len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let count = t.rows * t.cols;
        let raw = bytes.get(off..off + 4 * count).ok_or_else(|| bad("truncated tensor data"))?;
        tensors.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        );
        off += 4 * count;
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header, tensors))
}

/// Reassembles the full model from the stage files in `dir`.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelConfig, ModelParams<f32>)> {
    let (first, _) = read_stage(&stage_file(dir, 0))?;
    let model = first.model.clone();
    let mut params = ModelParams::<f32>::init(&model, 0);
    for stage in 0..first.num_stages {
        let (header, tensors) = read_stage(&stage_file(dir, stage))?;
        if header.model != model {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("stage {stage} disagrees on the model configuration"),
            });
        }
        for (info, values) in header.tensors.iter().zip(tensors) {
            let (name, part) = info.name.rsplit_once('.').ok_or_else(|| Error::Format {
                what: "checkpoint",
                detail: format!("tensor name {:?}", info.name),
            })?;
            let target: (&mut Matrix<f32>, &mut Vec<f32>) = match name {
                "input" => (&mut params.input.weight, &mut params.input.bias),
                "head" => (&mut params.head.weight, &mut params.head.bias),
                layer => {
                    let idx: usize = layer
                        .strip_prefix("layer")
                        .and_then(|s| s.parse().ok())
                        .filter(|&l| l >= 1 && l <= model.num_layers)
                        .ok_or_else(|| Error::Format {
                            what: "checkpoint",
                            detail: format!("tensor name {:?}", info.name),
                        })?;
                    let p = &mut params.layers[idx - 1];
                    (&mut p.weight, &mut p.bias)
                }
            };
            match part {
                "weight" => {
                    if (target.0.rows(), target.0.cols()) != (info.rows, info.cols) {
                        return Err(Error::dim("checkpoint weight", target.0.len(), values.len()));
                    }
                    target.0.as_mut_slice().copy_from_slice(&values);
                }
                _ => {
                    if target.1.len() != values.len() {
                        return Err(Error::dim("checkpoint bias", target.1.len(), values.len()));
                    }
                    target.1.copy_from_slice(&values);
                }
            }
        }
    }
    Ok((model, params))
}
