use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Sage,
    Gcnii,
}

impl LayerKind {
    /// Vectors per vertex that cross a stage boundary: GCNII stages also need
    /// the initial embedding `h⁰`.
    pub fn vecs_per_vertex(self) -> u64 {
        match self {
            LayerKind::Gcnii => 2,
            LayerKind::Gcn | LayerKind::Sage => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Sage => "sage",
            LayerKind::Gcnii => "gcnii",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(LayerKind::Gcn),
            "sage" | "graphsage" => Ok(LayerKind::Sage),
            "gcnii" => Ok(LayerKind::Gcnii),
            other => Err(format!("unknown model {other:?} (expected gcn, sage or gcnii)")),
        }
    }
}

/// Shape and hyperparameters of a full model: an input projection
/// `F → H`, `L` graph layers `H → H`, and a linear head `H → C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub num_layers: usize,
    pub hidden: usize,
    pub in_features: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub gcnii_alpha: f64,
    pub gcnii_lambda: f64,
    /// Add self-loops before normalizing the adjacency.
    pub self_loops: bool,
}

impl ModelConfig {
    pub fn new(kind: LayerKind, num_layers: usize, hidden: usize, in_features: usize, num_classes: usize) -> Self {
        Self {
            kind,
            num_layers,
            hidden,
            in_features,
            num_classes,
            dropout: 0.5,
            gcnii_alpha: 0.1,
            gcnii_lambda: 0.5,
            self_loops: true,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: Matrix::zeros(rows, cols),
            bias: vec![T::zero(); cols],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.rows(), self.weight.cols())
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    /// `H×H` (GCN, GCNII) or `2H×H` (GraphSage: self rows then neighbor rows).
    pub weight: Matrix<T>,
    /// Empty for GCNII, which has no bias term.
    pub bias: Vec<T>,
    pub gcnii_alpha: f64,
    pub gcnii_lambda: f64,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros(kind: LayerKind, dim_in: usize, dim_out: usize) -> Self {
        let rows = if kind == LayerKind::Sage { 2 * dim_in } else { dim_in };
        let bias = if kind == LayerKind::Gcnii { 0 } else { dim_out };
        Self {
            kind,
            weight: Matrix::zeros(rows, dim_out),
            bias: vec![T::zero(); bias],
            gcnii_alpha: 0.1,
            gcnii_lambda: 0.5,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![T::zero(); self.bias.len()],
            ..*self
        }
    }

    pub fn dim_in(&self) -> usize {
        match self.kind {
            LayerKind::Sage => self.weight.rows() / 2,
            _ => self.weight.rows(),
        }
    }

    pub fn dim_out(&self) -> usize {
        self.weight.cols()
    }

    /// Identity-mapping strength `β_ℓ = ln(λ/ℓ + 1)` for 1-based layer `ℓ`.
    pub fn gcnii_beta(&self, layer_index: usize) -> f64 {
        (self.gcnii_lambda / layer_index as f64 + 1.0).ln()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

/// Parameters of the whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub input: Dense<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head: Dense<T>,
}

fn glorot<T: Real>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::from_f64(rng.random_range(-limit..limit)))
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights and zero biases; the head starts at zero so
    /// the first logits are uniform. Every tensor has its own RNG stream, so
    /// any slice of the model is reproducible on its own.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        let (f, h, c) = (config.in_features, config.hidden, config.num_classes);
        let input = Dense {
            weight: glorot(f, h, f, h, &mut stream(0)),
            bias: vec![T::zero(); h],
        };
        let layers = (0..config.num_layers)
            .map(|i| {
                let mut p = LayerParams::zeros(config.kind, h, h);
                let rows = p.weight.rows();
                p.weight = glorot(rows, h, rows, h, &mut stream(1 + i as u64));
                p.gcnii_alpha = config.gcnii_alpha;
                p.gcnii_lambda = config.gcnii_lambda;
                p
            })
            .collect();
        Self {
            input,
            layers,
            head: Dense::zeros(h, c),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let dense = |d: &Dense<T>| Dense {
            weight: d.weight.cast(),
            bias: d.bias.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        };
        ModelParams {
            input: dense(&self.input),
            layers: self
                .layers
                .iter()
                .map(|p| LayerParams {
                    kind: p.kind,
                    weight: p.weight.cast(),
                    bias: p.bias.iter().map(|x| U::from_f64(x.as_f64())).collect(),
                    gcnii_alpha: p.gcnii_alpha,
                    gcnii_lambda: p.gcnii_lambda,
                })
                .collect(),
            head: dense(&self.head),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.input.tensors();
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.extend(self.head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.input.tensors_mut();
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }

    /// Zero-valued parameters of the same shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.zeros_like(),
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            head: self.head.zeros_like(),
        }
    }

    /// Global tensor slot of the input projection weight; layer `i`
    /// (0-based) starts at `2 + 2i`, the head at `2 + 2L`.
    pub fn layer_slot(layer: usize) -> usize {
        2 + 2 * layer
    }

    /// Largest relative difference over all values, with an absolute floor
    /// of 1 in the denominator.
    pub fn max_rel_diff(&self, other: &Self) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(x, y)| {
                let (x, y) = (x.as_f64(), y.as_f64());
                (x - y).abs() / x.abs().max(y.abs()).max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of every value.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_zero_head() {
        let cfg = ModelConfig::new(LayerKind::Sage, 3, 8, 5, 4);
        let p = ModelParams::<f32>::init(&cfg, 1);
        assert_eq!(p.input.weight.rows(), 5);
        assert_eq!(p.layers[0].weight.rows(), 16);
        assert_eq!(p.layers[0].bias.len(), 8);
        assert!(p.head.weight.as_slice().iter().all(|&x| x == 0.0));
        let limit = (6.0f64 / 24.0).sqrt() as f32;
        assert!(p.layers[1].weight.as_slice().iter().all(|x| x.abs() <= limit));
    }

    #[test]
    fn gcnii_has_no_bias_and_beta_decays() {
        let p = LayerParams::<f64>::zeros(LayerKind::Gcnii, 4, 4);
        assert!(p.bias.is_empty());
        assert!(p.gcnii_beta(1) > p.gcnii_beta(8));
        assert!((p.gcnii_beta(1) - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn init_is_reproducible() {
        let cfg = ModelConfig::new(LayerKind::Gcn, 2, 4, 3, 2);
        assert!(ModelParams::<f32>::init(&cfg, 9).bit_identical(&ModelParams::init(&cfg, 9)));
        assert!(!ModelParams::<f32>::init(&cfg, 9).bit_identical(&ModelParams::init(&cfg, 10)));
    }
}
