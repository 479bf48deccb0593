//! Seeded random graph generators.
//!
//! Edge sampling uses geometric skipping over the pair sequence, so a
//! G(n, p) draw costs O(n + m) instead of O(n²) while each pair is still
//! included independently with probability `p`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{normalize_adjacency, Dataset, Graph, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Standard deviation of the Gaussian noise added to the one-hot block
/// features of [`generate_sbm`].
pub const DEFAULT_FEATURE_NOISE: f64 = 1.0;

const EDGE_STREAM: u64 = 0;
const FEATURE_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::invalid(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

/// Number of failures before the next success of a Bernoulli(p) sequence.
fn geometric_skip(rng: &mut impl Rng, log_q: f64) -> u64 {
    if log_q == f64::NEG_INFINITY {
        return 0;
    }
    let r: f64 = rng.random();
    ((1.0 - r).ln() / log_q).floor() as u64
}

/// Pairs `(i, j)`, `j < i < n`, of a triangle, each kept with probability `p`.
fn sample_triangle(n: usize, p: f64, rng: &mut impl Rng, mut emit: impl FnMut(usize, usize)) {
    if p <= 0.0 || n < 2 {
        return;
    }
    let log_q = (1.0 - p).ln();
    let (mut v, mut w): (u64, i64) = (1, -1);
    let n = n as u64;
    while v < n {
        w += 1 + geometric_skip(rng, log_q) as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            emit(v as usize, w as usize);
        }
    }
}

/// Pairs of an `rows × cols` rectangle, each kept with probability `p`.
fn sample_rectangle(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut impl Rng,
    mut emit: impl FnMut(usize, usize),
) {
    if p <= 0.0 || rows == 0 || cols == 0 {
        return;
    }
    let log_q = (1.0 - p).ln();
    let total = rows as u64 * cols as u64;
    let mut idx: u64 = 0;
    loop {
        idx += geometric_skip(rng, log_q);
        if idx >= total {
            break;
        }
        emit((idx / cols as u64) as usize, (idx % cols as u64) as usize);
        idx += 1;
    }
}

/// Erdős–Rényi G(n, p).
pub fn generate_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::invalid("generate_er needs n >= 1"));
    }
    check_probability("p", p)?;
    let mut rng = rng_for(seed, EDGE_STREAM);
    let mut edges = Vec::new();
    sample_triangle(n, p, &mut rng, |u, v| edges.push((u, v)));
    Graph::from_edges(n, &edges)
}

/// Planted-partition stochastic block model with labels equal to block ids
/// and features one-hot(block) + N(0, [`DEFAULT_FEATURE_NOISE`]²).
pub fn generate_sbm(
    num_blocks: usize,
    block_size: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_sbm_with_noise(num_blocks, block_size, p_in, p_out, DEFAULT_FEATURE_NOISE, seed)
}

pub fn generate_sbm_with_noise(
    num_blocks: usize,
    block_size: usize,
    p_in: f64,
    p_out: f64,
    feature_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    check_probability("p_in", p_in)?;
    check_probability("p_out", p_out)?;
    if p_in <= p_out {
        return Err(Error::invalid(format!(
            "stochastic block model needs p_in > p_out (got {p_in} <= {p_out})"
        )));
    }
    if num_blocks == 0 || block_size == 0 {
        return Err(Error::invalid("stochastic block model needs at least one non-empty block"));
    }
    if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
        return Err(Error::invalid(format!("feature noise {feature_noise} is invalid")));
    }
    let n = num_blocks * block_size;
    let mut rng = rng_for(seed, EDGE_STREAM);
    let mut edges = Vec::new();
    for a in 0..num_blocks {
        let base_a = a * block_size;
        sample_triangle(block_size, p_in, &mut rng, |u, v| {
            edges.push((base_a + u, base_a + v))
        });
        for b in a + 1..num_blocks {
            let base_b = b * block_size;
            sample_rectangle(block_size, block_size, p_out, &mut rng, |u, v| {
                edges.push((base_a + u, base_b + v))
            });
        }
    }
    let graph = Graph::from_edges(n, &edges)?;
    let labels: Vec<u32> = (0..n).map(|v| (v / block_size) as u32).collect();

    let mut frng = rng_for(seed, FEATURE_STREAM);
    let noise = Normal::new(0.0, feature_noise).expect("validated std");
    let features = Matrix::from_fn(n, num_blocks, |v, c| {
        let hot = if c == v / block_size { 1.0 } else { 0.0 };
        (hot + noise.sample(&mut frng)) as f32
    });

    let mut srng = rng_for(seed, SPLIT_STREAM);
    let mut splits = vec![Split::Unused; n];
    for b in 0..num_blocks {
        let members: Vec<usize> = (b * block_size..(b + 1) * block_size).collect();
        assign_splits(&members, &mut splits, &mut srng);
    }
    Dataset::new(graph, features, labels, num_blocks, splits)
}

/// Shuffles `members` and labels the first 60% train, next 20% val, rest test.
fn assign_splits(members: &[usize], splits: &mut [Split], rng: &mut impl Rng) {
    let mut order = members.to_vec();
    order.shuffle(rng);
    let n = order.len();
    let n_train = (n as f64 * 0.6).round() as usize;
    let n_val = (n as f64 * 0.2).round() as usize;
    for (i, &v) in order.iter().enumerate() {
        splits[v] = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
}

/// Wraps a bare graph into a learnable dataset: Gaussian features, labels
/// from the arg-max of one propagation step over the first `num_classes`
/// feature columns, and a random 60/20/20 split.
pub fn dataset_from_graph(
    graph: Graph,
    num_features: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || num_features < num_classes {
        return Err(Error::invalid(format!(
            "need 1 <= num_classes ({num_classes}) <= num_features ({num_features})"
        )));
    }
    let n = graph.num_vertices();
    let mut frng = rng_for(seed, FEATURE_STREAM);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let features = Matrix::from_fn(n, num_features, |_, _| normal.sample(&mut frng) as f32);
    let adj = normalize_adjacency(&graph);
    let labels = (0..n)
        .map(|v| {
            let mut score = vec![0.0f64; num_classes];
            for (&u, &w) in adj.row_cols(v).iter().zip(adj.row_weights(v)) {
                for (c, s) in score.iter_mut().enumerate() {
                    *s += w * features.get(u, c) as f64;
                }
            }
            let mut best = 0;
            for c in 1..num_classes {
                if score[c] > score[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    let mut srng = rng_for(seed, SPLIT_STREAM);
    let mut splits = vec![Split::Unused; n];
    assign_splits(&(0..n).collect::<Vec<_>>(), &mut splits, &mut srng);
    Dataset::new(graph, features, labels, num_classes, splits)
}
