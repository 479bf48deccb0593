use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chunkpipe::engine::StalenessConfig;
use chunkpipe::graph::{dataset_from_graph, generate_er, generate_sbm_with_noise, load_dataset, Dataset, DEFAULT_FEATURE_NOISE};
use chunkpipe::nn::LayerKind;
use chunkpipe::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sequential,
    Graph,
    Pipeline,
    Hybrid,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sequential => "sequential",
            Mode::Graph => "graph",
            Mode::Pipeline => "pipeline",
            Mode::Hybrid => "hybrid",
        }
    }
}

/// A synthetic dataset description, written `sbm:BLOCKSxSIZE:P_IN:P_OUT`
/// or `er:N:P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GenSpec {
    Sbm {
        blocks: usize,
        block_size: usize,
        p_in: f64,
        p_out: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Er {
        n: usize,
        p: f64,
        #[serde(default = "default_er_features")]
        features: usize,
        #[serde(default = "default_er_classes")]
        classes: usize,
    },
}

fn default_noise() -> f64 {
    DEFAULT_FEATURE_NOISE
}

fn default_er_features() -> usize {
    16
}

fn default_er_classes() -> usize {
    4
}

impl GenSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match *self {
            GenSpec::Sbm {
                blocks,
                block_size,
                p_in,
                p_out,
                noise,
            } => generate_sbm_with_noise(blocks, block_size, p_in, p_out, noise, seed),
            GenSpec::Er { n, p, features, classes } => dataset_from_graph(generate_er(n, p, seed)?, features, classes, seed),
        }
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenSpec::Sbm {
                blocks,
                block_size,
                p_in,
                p_out,
                ..
            } => write!(f, "sbm:{blocks}x{block_size}:{p_in}:{p_out}"),
            GenSpec::Er { n, p, .. } => write!(f, "er:{n}:{p}"),
        }
    }
}

impl FromStr for GenSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| x.parse::<f64>().map_err(|_| format!("bad number {x:?} in {s:?}"));
        match parts.as_slice() {
            ["sbm", shape, p_in, p_out] => {
                let (blocks, block_size) = parse_shape(shape)?;
                Ok(GenSpec::Sbm {
                    blocks,
                    block_size,
                    p_in: num(p_in)?,
                    p_out: num(p_out)?,
                    noise: DEFAULT_FEATURE_NOISE,
                })
            }
            ["er", n, p] => Ok(GenSpec::Er {
                n: n.parse().map_err(|_| format!("bad vertex count {n:?}"))?,
                p: num(p)?,
                features: default_er_features(),
                classes: default_er_classes(),
            }),
            _ => Err(format!("expected sbm:BLOCKSxSIZE:P_IN:P_OUT or er:N:P, got {s:?}")),
        }
    }
}

/// Parses `BLOCKSxSIZE`.
pub fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected BLOCKSxSIZE, got {s:?}"))?;
    let a = a.parse().map_err(|_| format!("bad block count {a:?}"))?;
    let b = b.parse().map_err(|_| format!("bad block size {b:?}"))?;
    Ok((a, b))
}

/// Everything a training run needs; serialized as `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub generator: Option<GenSpec>,
    pub mode: Mode,
    pub model: LayerKind,
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Total workers; derived from the mode when absent.
    pub workers: Option<usize>,
    pub stages: usize,
    pub group_size: usize,
    /// Chunks per epoch; `4·stages` when absent.
    pub chunks: Option<usize>,
    pub shuffle: bool,
    pub fix_alpha: u64,
    pub historical_grads: bool,
    pub synchronous: bool,
    pub deterministic: bool,
    pub workers_per_node: usize,
    pub eval_every: usize,
    pub trace: bool,
    /// Precomputed partition file for graph and hybrid modes.
    pub partition: Option<PathBuf>,
    /// Precomputed chunk file for pipeline and hybrid modes.
    pub chunk_file: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let staleness = StalenessConfig::default();
        Self {
            dataset: None,
            generator: None,
            mode: Mode::Pipeline,
            model: LayerKind::Gcn,
            layers: 8,
            hidden: 64,
            epochs: 100,
            lr: 0.001,
            dropout: 0.5,
            seed: 0,
            workers: None,
            stages: 8,
            group_size: 1,
            chunks: None,
            shuffle: staleness.shuffle_chunks,
            fix_alpha: staleness.fix_alpha,
            historical_grads: staleness.historical_gradients,
            synchronous: staleness.synchronous_mode,
            deterministic: true,
            workers_per_node: 8,
            eval_every: 1,
            trace: true,
            partition: None,
            chunk_file: None,
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Stages actually used by the engine: 1 for sequential and graph mode.
    pub fn num_stages(&self) -> usize {
        match self.mode {
            Mode::Sequential | Mode::Graph => 1,
            Mode::Pipeline | Mode::Hybrid => self.stages,
        }
    }

    /// Graph-parallel ways per stage.
    pub fn ways(&self) -> usize {
        match self.mode {
            Mode::Sequential | Mode::Pipeline => 1,
            Mode::Graph => self.workers.unwrap_or(self.group_size),
            Mode::Hybrid => self.group_size,
        }
    }

    pub fn num_chunks(&self) -> usize {
        match self.mode {
            Mode::Sequential | Mode::Graph => 1,
            Mode::Pipeline | Mode::Hybrid => self.chunks.unwrap_or(4 * self.stages),
        }
    }

    pub fn num_workers(&self) -> usize {
        self.num_stages() * self.ways()
    }

    pub fn staleness(&self) -> StalenessConfig {
        StalenessConfig {
            shuffle_chunks: self.shuffle,
            fix_alpha: self.fix_alpha,
            historical_gradients: self.historical_grads,
            synchronous_mode: self.synchronous,
        }
    }

    /// Checks the mode-specific constraints and fills derived fields.
    pub fn resolve(mut self) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.dataset.is_some(), self.generator.is_some()) {
            (true, true) => return bad("give either a dataset directory or a generator, not both".into()),
            (false, false) => return bad("no dataset: pass --dataset DIR or --gen SPEC".into()),
            _ => {}
        }
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers and hidden must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.fix_alpha == 0 {
            return bad("fix_alpha must be at least 1".into());
        }
        if self.stages == 0 || self.group_size == 0 || self.workers_per_node == 0 {
            return bad("stages, group_size and workers_per_node must be positive".into());
        }
        match self.mode {
            Mode::Sequential => {
                if let Some(m) = self.workers.filter(|&m| m != 1) {
                    return bad(format!("sequential mode runs on 1 worker, got workers = {m}"));
                }
            }
            Mode::Graph => {
                if self.workers == Some(0) {
                    return bad("graph mode needs at least one worker".into());
                }
            }
            Mode::Pipeline => {
                if let Some(m) = self.workers.filter(|&m| m != self.stages) {
                    return bad(format!("pipeline mode requires stages == workers (stages = {}, workers = {m})", self.stages));
                }
            }
            Mode::Hybrid => {
                let sg = self.stages * self.group_size;
                if let Some(m) = self.workers.filter(|&m| m != sg) {
                    return bad(format!(
                        "hybrid mode requires stages x group_size == workers ({} x {} = {sg}, workers = {m})",
                        self.stages, self.group_size
                    ));
                }
            }
        }
        if matches!(self.mode, Mode::Pipeline | Mode::Hybrid) {
            if self.layers < self.stages {
                return bad(format!("{} layers cannot fill {} stages (need layers >= stages)", self.layers, self.stages));
            }
            if self.chunks == Some(0) {
                return bad("chunks must be positive".into());
            }
        }
        self.workers = Some(self.num_workers());
        if matches!(self.mode, Mode::Pipeline | Mode::Hybrid) {
            self.chunks = Some(self.num_chunks());
        }
        Ok(self)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.dataset, &self.generator) {
            (Some(dir), _) => load_dataset(dir),
            (None, Some(g)) => g.generate(self.seed),
            (None, None) => Err(Error::Config("no dataset configured".into())),
        }
    }
}
