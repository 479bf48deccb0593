//! Undirected graphs in CSR form, labelled datasets, and the propagation
//! matrices used by the layers.

mod generate;
mod io;

pub use generate::{
    dataset_from_graph, generate_er, generate_sbm, generate_sbm_with_noise,
    DEFAULT_FEATURE_NOISE,
};
pub use io::{load_dataset, save_dataset, DatasetMeta};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Matrix;

/// Undirected simple graph. Every edge is stored in both directions and
/// neighbor lists are sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_edges: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Edges are symmetrized,
    /// duplicates merged and self-loops dropped.
    pub fn from_edges(num_vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_vertices];
        for &(u, v) in edges {
            if u >= num_vertices || v >= num_vertices {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_vertices} vertices"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_vertices + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            num_edges: neighbors.len() / 2,
            offsets,
            neighbors,
        })
    }

    pub fn empty(num_vertices: usize) -> Self {
        Self {
            num_edges: 0,
            offsets: vec![0; num_vertices + 1],
            neighbors: Vec::new(),
        }
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    #[inline]
    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    #[inline]
    pub fn csr_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_vertices()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Canonical edge list, `u < v`, lexicographically sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_vertices()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Number of edges whose endpoints land in different parts.
    pub fn edge_cut(&self, assignment: &[usize]) -> usize {
        self.edges()
            .filter(|&(u, v)| assignment[u] != assignment[v])
            .count()
    }
}

/// Role of a vertex in the node-classification task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Unused = 0,
    Train = 1,
    Val = 2,
    Test = 3,
}

impl Split {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::Unused),
            1 => Some(Split::Train),
            2 => Some(Split::Val),
            3 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Matrix<f32>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    /// One split per vertex; the three masks are disjoint by construction.
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        features: Matrix<f32>,
        labels: Vec<u32>,
        num_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = graph.num_vertices();
        if features.rows() != n {
            return Err(Error::dim("dataset features", n, features.rows()));
        }
        if labels.len() != n {
            return Err(Error::dim("dataset labels", n, labels.len()));
        }
        if splits.len() != n {
            return Err(Error::dim("dataset masks", n, splits.len()));
        }
        if let Some((v, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::invalid(format!(
                "label {l} of vertex {v} is not below num_classes = {num_classes}"
            )));
        }
        Ok(Self {
            graph,
            features,
            labels,
            num_classes,
            splits,
        })
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.graph.num_vertices()
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|&s| s == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }
}

/// Sparse square matrix sharing the graph's CSR pattern (optionally with
/// diagonal entries added). `transpose_weights[e]` holds the weight of the
/// mirrored entry, so the adjoint product is a gather over the same rows.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedCsr<T> {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<T>,
    transpose_weights: Vec<T>,
}

/// Symmetric-normalized adjacency `D̃^{-1/2}(A+I)D̃^{-1/2}` (or without the
/// identity term, see [`normalize_adjacency_with`]).
pub type NormAdj = WeightedCsr<f64>;

impl<T: Real> WeightedCsr<T> {
    #[inline]
    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row_cols(&self, v: usize) -> &[usize] {
        &self.cols[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn row_weights(&self, v: usize) -> &[T] {
        &self.weights[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn row_transpose_weights(&self, v: usize) -> &[T] {
        &self.transpose_weights[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<T> {
        let cols = self.row_cols(u);
        cols.binary_search(&v)
            .ok()
            .map(|i| self.weights[self.offsets[u] + i])
    }

    pub fn cast<U: Real>(&self) -> WeightedCsr<U> {
        WeightedCsr {
            offsets: self.offsets.clone(),
            cols: self.cols.clone(),
            weights: self.weights.iter().map(|w| U::from_f64(w.as_f64())).collect(),
            transpose_weights: self
                .transpose_weights
                .iter()
                .map(|w| U::from_f64(w.as_f64()))
                .collect(),
        }
    }

    /// Dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.num_rows();
        let mut m = Matrix::zeros(n, n);
        for u in 0..n {
            for (&v, &w) in self.row_cols(u).iter().zip(self.row_weights(u)) {
                m.set(u, v, w);
            }
        }
        m
    }

    fn build(graph: &Graph, self_loops: bool, weight: impl Fn(usize, usize) -> f64) -> Self {
        let n = graph.num_vertices();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(graph.csr_neighbors().len() + n);
        offsets.push(0);
        for v in 0..n {
            let nbrs = graph.neighbors(v);
            if self_loops {
                let split = nbrs.partition_point(|&u| u < v);
                cols.extend_from_slice(&nbrs[..split]);
                cols.push(v);
                cols.extend_from_slice(&nbrs[split..]);
            } else {
                cols.extend_from_slice(nbrs);
            }
            offsets.push(cols.len());
        }
        let mut weights = Vec::with_capacity(cols.len());
        let mut transpose_weights = Vec::with_capacity(cols.len());
        for v in 0..n {
            for &u in &cols[offsets[v]..offsets[v + 1]] {
                weights.push(T::from_f64(weight(v, u)));
                transpose_weights.push(T::from_f64(weight(u, v)));
            }
        }
        Self {
            offsets,
            cols,
            weights,
            transpose_weights,
        }
    }
}

/// Self-loop-augmented symmetric normalization:
/// `weight(u, v) = 1 / sqrt((D_u + 1)(D_v + 1))`, including `(v, v)`.
pub fn normalize_adjacency(graph: &Graph) -> NormAdj {
    normalize_adjacency_with(graph, true)
}

/// With `self_loops = false` the plain `1 / sqrt(D_u D_v)` form is produced
/// and rows carry no diagonal entry.
pub fn normalize_adjacency_with(graph: &Graph, self_loops: bool) -> NormAdj {
    let extra = if self_loops { 1.0 } else { 0.0 };
    WeightedCsr::build(graph, self_loops, |u, v| {
        let du = graph.degree(u) as f64 + extra;
        let dv = graph.degree(v) as f64 + extra;
        1.0 / (du * dv).sqrt()
    })
}

/// Row-mean operator over `N(v)` (no self term); isolated rows are empty.
pub fn mean_adjacency(graph: &Graph) -> WeightedCsr<f64> {
    WeightedCsr::build(graph, false, |v, _| 1.0 / graph.degree(v) as f64)
}
