//! Vertex partitions, pipeline chunks, boundary sets, and the random-graph
//! boundary estimate.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Allowed relative overshoot of the largest part over `N / parts`.
pub const BALANCE_EPSILON: f64 = 0.05;

/// Independent region-growing attempts per call; the lowest cut wins.
const GROWTH_TRIALS: u64 = 8;

const UNASSIGNED: usize = usize::MAX;

/// Largest part size accepted for `n` vertices in `parts` parts.
///
/// Small instances cannot always meet `(1 + ε)·N/parts` (eight vertices in
/// three parts need a part of 3 > 2.8), so the bound never drops below
/// `ceil(N / parts)`.
pub fn part_capacity(n: usize, parts: usize) -> usize {
    let relaxed = ((1.0 + BALANCE_EPSILON) * n as f64 / parts as f64).floor() as usize;
    relaxed.max(n.div_ceil(parts))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    num_parts: usize,
    assignment: Vec<usize>,
    inner_sets: Vec<Vec<usize>>,
    boundary_sets: Vec<Vec<usize>>,
}

impl Partition {
    #[inline]
    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    #[inline]
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn part_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    /// `V_i`, ascending.
    #[inline]
    pub fn inner(&self, part: usize) -> &[usize] {
        &self.inner_sets[part]
    }

    /// `B_i = (∪_{v ∈ V_i} N(v)) \ V_i`, ascending.
    #[inline]
    pub fn boundary(&self, part: usize) -> &[usize] {
        &self.boundary_sets[part]
    }

    pub fn total_boundary(&self) -> usize {
        self.boundary_sets.iter().map(Vec::len).sum()
    }

    pub fn max_part_size(&self) -> usize {
        self.inner_sets.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_balanced(&self) -> bool {
        self.max_part_size() <= part_capacity(self.assignment.len(), self.num_parts)
    }

    /// Serializes as `num_parts` followed by one part id per line.
    pub fn to_text(&self) -> String {
        assignment_to_text(self.num_parts, &self.assignment)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn assignment_to_text(num_parts: usize, assignment: &[usize]) -> String {
    let mut s = String::with_capacity(4 * assignment.len() + 8);
    writeln!(s, "{num_parts}").expect("string write");
    for p in assignment {
        writeln!(s, "{p}").expect("string write");
    }
    s
}

/// Parses the text format written by [`Partition::save`] /
/// [`ChunkPlan::save`]: returns `(num_parts, assignment)`.
pub fn parse_assignment(text: &str) -> Result<(usize, Vec<usize>)> {
    let bad = |detail: String| Error::Format {
        what: "assignment file",
        detail,
    };
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let parts: usize = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .parse()
        .map_err(|e| bad(format!("header: {e}")))?;
    let assignment = lines
        .map(|l| l.parse::<usize>().map_err(|e| bad(format!("{l:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((parts, assignment))
}

pub fn load_assignment(path: impl AsRef<Path>) -> Result<(usize, Vec<usize>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_assignment(&text)
}

/// Builds a partition from an explicit vertex → part map, deriving the inner
/// and boundary sets by definition.
pub fn partition_from_assignment(
    graph: &Graph,
    assignment: Vec<usize>,
    num_parts: usize,
) -> Result<Partition> {
    let n = graph.num_vertices();
    if assignment.len() != n {
        return Err(Error::dim("partition assignment", n, assignment.len()));
    }
    if num_parts == 0 {
        return Err(Error::invalid("a partition needs at least one part"));
    }
    if let Some(&p) = assignment.iter().find(|&&p| p >= num_parts) {
        return Err(Error::invalid(format!("part id {p} >= num_parts {num_parts}")));
    }
    let mut inner_sets = vec![Vec::new(); num_parts];
    for (v, &p) in assignment.iter().enumerate() {
        inner_sets[p].push(v);
    }
    let mut stamp = vec![UNASSIGNED; n];
    let mut boundary_sets = Vec::with_capacity(num_parts);
    for (p, inner) in inner_sets.iter().enumerate() {
        let mut b = Vec::new();
        for &v in inner {
            for &u in graph.neighbors(v) {
                if assignment[u] != p && stamp[u] != p {
                    stamp[u] = p;
                    b.push(u);
                }
            }
        }
        b.sort_unstable();
        boundary_sets.push(b);
    }
    Ok(Partition {
        num_parts,
        assignment,
        inner_sets,
        boundary_sets,
    })
}

/// Balanced edge-cut partitioner: seeded greedy region growing from
/// spread-out seeds, then one boundary refinement sweep. Several seeded
/// attempts are made and the smallest cut is kept.
pub fn partition_vertices(graph: &Graph, num_parts: usize, seed: u64) -> Result<Partition> {
    let n = graph.num_vertices();
    if num_parts == 0 || num_parts > n {
        return Err(Error::invalid(format!(
            "cannot split {n} vertices into {num_parts} parts"
        )));
    }
    let assignment = if num_parts == 1 {
        vec![0; n]
    } else if num_parts == n {
        (0..n).collect()
    } else {
        let mut best: Option<(usize, Vec<usize>)> = None;
        for trial in 0..GROWTH_TRIALS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let mut a = grow_regions(graph, num_parts, &mut rng);
            refine_once(graph, num_parts, &mut a);
            let cut = graph.edge_cut(&a);
            if best.as_ref().is_none_or(|(c, _)| cut < *c) {
                best = Some((cut, a));
            }
        }
        best.expect("at least one trial").1
    };
    partition_from_assignment(graph, assignment, num_parts)
}

/// Random balanced assignment (shuffled round-robin), the baseline every
/// partitioner should beat.
pub fn random_partition(graph: &Graph, num_parts: usize, seed: u64) -> Result<Partition> {
    let n = graph.num_vertices();
    if num_parts == 0 || num_parts > n {
        return Err(Error::invalid(format!(
            "cannot split {n} vertices into {num_parts} parts"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (i, v) in order.into_iter().enumerate() {
        assignment[v] = i % num_parts;
    }
    partition_from_assignment(graph, assignment, num_parts)
}

fn pick_seeds(graph: &Graph, k: usize, rank: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let n = graph.num_vertices();
    let mut seeds = vec![rng.random_range(0..n)];
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    while seeds.len() < k {
        // Multi-source BFS distances from the seeds chosen so far.
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        queue.clear();
        for &s in &seeds {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            for &u in graph.neighbors(v) {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        // Farthest vertex (unreachable counts as infinitely far); ties broken
        // by the seeded rank.
        let next = (0..n)
            .filter(|&v| dist[v] != 0)
            .max_by_key(|&v| (dist[v], Reverse(rank[v])))
            .expect("k <= n leaves a non-seed vertex");
        seeds.push(next);
    }
    seeds
}

fn grow_regions(graph: &Graph, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = graph.num_vertices();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut rank = vec![0; n];
    for (i, &v) in order.iter().enumerate() {
        rank[v] = i;
    }
    let seeds = pick_seeds(graph, k, &rank, rng);
    let target = |p: usize| n / k + usize::from(p < n % k);

    let mut assignment = vec![UNASSIGNED; n];
    let mut sizes = vec![0usize; k];
    let mut conn: Vec<HashMap<usize, u32>> = vec![HashMap::new(); k];
    let mut heaps: Vec<BinaryHeap<(u32, Reverse<usize>, usize)>> = vec![BinaryHeap::new(); k];
    let mut remaining = n;
    let mut fallback = order.iter().copied();

    let assign = |v: usize,
                      p: usize,
                      assignment: &mut Vec<usize>,
                      sizes: &mut Vec<usize>,
                      conn: &mut Vec<HashMap<usize, u32>>,
                      heaps: &mut Vec<BinaryHeap<(u32, Reverse<usize>, usize)>>| {
        assignment[v] = p;
        sizes[p] += 1;
        for &u in graph.neighbors(v) {
            if assignment[u] == UNASSIGNED {
                let c = conn[p].entry(u).or_insert(0);
                *c += 1;
                heaps[p].push((*c, Reverse(rank[u]), u));
            }
        }
    };

    for (p, &s) in seeds.iter().enumerate() {
        assign(s, p, &mut assignment, &mut sizes, &mut conn, &mut heaps);
        remaining -= 1;
    }
    while remaining > 0 {
        let p = (0..k)
            .filter(|&p| sizes[p] < target(p))
            .min_by_key(|&p| (sizes[p], p))
            .expect("targets sum to n");
        let mut next = None;
        while let Some((_, _, v)) = heaps[p].pop() {
            if assignment[v] == UNASSIGNED {
                next = Some(v);
                break;
            }
        }
        let v = match next {
            Some(v) => v,
            None => fallback
                .by_ref()
                .find(|&v| assignment[v] == UNASSIGNED)
                .expect("an unassigned vertex remains"),
        };
        assign(v, p, &mut assignment, &mut sizes, &mut conn, &mut heaps);
        remaining -= 1;
    }
    assignment
}

/// One Kernighan–Lin style pass: each vertex moves to the neighboring part
/// with the largest positive cut gain, if that part has room.
fn refine_once(graph: &Graph, k: usize, assignment: &mut [usize]) {
    let n = graph.num_vertices();
    let cap = part_capacity(n, k);
    let mut sizes = vec![0usize; k];
    for &p in assignment.iter() {
        sizes[p] += 1;
    }
    let mut counts = vec![0i64; k];
    for v in 0..n {
        let a = assignment[v];
        if sizes[a] <= 1 {
            continue;
        }
        let nbrs = graph.neighbors(v);
        if nbrs.iter().all(|&u| assignment[u] == a) {
            continue;
        }
        for &u in nbrs {
            counts[assignment[u]] += 1;
        }
        let mut best = a;
        for &u in nbrs {
            let b = assignment[u];
            if b != a && sizes[b] < cap && (counts[b], Reverse(b)) > (counts[best], Reverse(best))
            {
                best = b;
            }
        }
        if best != a && counts[best] > counts[a] {
            assignment[v] = best;
            sizes[a] -= 1;
            sizes[best] += 1;
        }
        for &u in nbrs {
            counts[assignment[u]] = 0;
        }
        counts[a] = 0;
        counts[best] = 0;
    }
}

/// `Σ_i |B_i| / N`: the average number of remote copies per vertex.
pub fn replication_factor(partition: &Partition) -> f64 {
    partition.total_boundary() as f64 / partition.assignment.len() as f64
}

/// Expected boundary size of one part of an `n`-vertex G(n, p) graph split
/// into `m` equal parts: `(n − n/m)(1 − (1 − p)^{n/m})`.
pub fn expected_boundary(n: usize, m: usize, p: f64) -> f64 {
    let n = n as f64;
    let part = n / m as f64;
    (n - part) * (1.0 - (1.0 - p).powf(part))
}

/// Disjoint vertex chunks fed through the pipeline, one at a time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    chunk_of: Vec<usize>,
    chunks: Vec<Vec<usize>>,
}

impl ChunkPlan {
    pub fn from_assignment(chunk_of: Vec<usize>, num_chunks: usize) -> Result<Self> {
        if num_chunks == 0 {
            return Err(Error::invalid("a chunk plan needs at least one chunk"));
        }
        let mut chunks = vec![Vec::new(); num_chunks];
        for (v, &c) in chunk_of.iter().enumerate() {
            if c >= num_chunks {
                return Err(Error::invalid(format!("chunk id {c} >= num_chunks {num_chunks}")));
            }
            chunks[c].push(v);
        }
        Ok(Self { chunk_of, chunks })
    }

    /// Everything in one chunk.
    pub fn single(n: usize) -> Self {
        Self {
            chunk_of: vec![0; n],
            chunks: vec![(0..n).collect()],
        }
    }

    #[inline]
    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.chunk_of.len()
    }

    #[inline]
    pub fn chunk_of(&self, v: usize) -> usize {
        self.chunk_of[v]
    }

    #[inline]
    pub fn assignment(&self) -> &[usize] {
        &self.chunk_of
    }

    /// Members of chunk `c`, ascending.
    #[inline]
    pub fn chunk(&self, c: usize) -> &[usize] {
        &self.chunks[c]
    }

    pub fn chunks(&self) -> &[Vec<usize>] {
        &self.chunks
    }

    pub fn to_text(&self) -> String {
        assignment_to_text(self.num_chunks(), &self.chunk_of)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Locality-aware chunking with the same partitioner as
/// [`partition_vertices`].
pub fn make_chunks(graph: &Graph, num_chunks: usize, seed: u64) -> Result<ChunkPlan> {
    let part = partition_vertices(graph, num_chunks, seed)?;
    ChunkPlan::from_assignment(part.assignment, num_chunks)
}

/// Processing order of the chunks in `epoch`: a seeded Fisher–Yates shuffle,
/// reproducible for a given `(seed, epoch)`.
pub fn shuffle_chunk_order(plan: &ChunkPlan, epoch: u64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..plan.num_chunks()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4a2_0000_0000);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_er, generate_sbm};

    fn two_triangles() -> Graph {
        Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap()
    }

    fn g8() -> Graph {
        let mut edges: Vec<(usize, usize)> = (0..7).map(|i| (i, i + 1)).collect();
        edges.push((2, 5));
        Graph::from_edges(8, &edges).unwrap()
    }

    fn brute_force_boundary(graph: &Graph, assignment: &[usize], part: usize) -> Vec<usize> {
        (0..graph.num_vertices())
            .filter(|&u| assignment[u] != part)
            .filter(|&u| {
                (0..graph.num_vertices())
                    .any(|v| assignment[v] == part && graph.has_edge(u, v))
            })
            .collect()
    }

    #[test]
    fn disconnected_triangles_split_cleanly() {
        for seed in 0..5 {
            let p = partition_vertices(&two_triangles(), 2, seed).unwrap();
            assert_eq!(p.total_boundary(), 0, "seed {seed}");
            assert_eq!(replication_factor(&p), 0.0);
            assert_eq!(p.inner(0).len(), 3);
        }
    }

    #[test]
    fn one_part_has_no_boundary() {
        let g = generate_er(100, 0.1, 1).unwrap();
        let p = partition_vertices(&g, 1, 0).unwrap();
        assert!(p.boundary(0).is_empty());
        assert_eq!(replication_factor(&p), 0.0);
    }

    #[test]
    fn g8_forced_boundaries() {
        let p = partition_from_assignment(&g8(), vec![0, 0, 0, 1, 1, 2, 2, 2], 3).unwrap();
        assert_eq!(p.boundary(0), &[3, 5]);
        assert_eq!(p.boundary(1), &[2, 5]);
        assert_eq!(p.boundary(2), &[2, 4]);
        assert_eq!(replication_factor(&p), 0.75);
    }

    #[test]
    fn k4_in_pairs_replicates_everything() {
        let k4 = generate_er(4, 1.0, 0).unwrap();
        let p = partition_from_assignment(&k4, vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(replication_factor(&p), 1.0);
    }

    #[test]
    fn too_many_parts_is_an_error() {
        assert!(partition_vertices(&two_triangles(), 7, 0).is_err());
        assert!(make_chunks(&two_triangles(), 7, 0).is_err());
    }

    #[test]
    fn boundary_matches_brute_force_scan() {
        for seed in 0..6 {
            let g = generate_er(120 + 30 * seed as usize, 0.03, seed).unwrap();
            let k = 2 + seed as usize % 4;
            let p = partition_vertices(&g, k, seed).unwrap();
            for part in 0..k {
                assert_eq!(p.boundary(part), brute_force_boundary(&g, p.assignment(), part));
            }
            assert!(p.is_balanced());
        }
    }

    #[test]
    fn beats_random_assignment() {
        let mut wins = 0;
        for seed in 0..10 {
            let g = generate_er(400, 0.02, seed).unwrap();
            let ours = g.edge_cut(partition_vertices(&g, 4, seed).unwrap().assignment());
            let rand = g.edge_cut(random_partition(&g, 4, seed).unwrap().assignment());
            if ours <= rand {
                wins += 1;
            }
        }
        assert_eq!(wins, 10);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = generate_er(300, 0.02, 4).unwrap();
        assert_eq!(
            partition_vertices(&g, 5, 9).unwrap(),
            partition_vertices(&g, 5, 9).unwrap()
        );
    }

    #[test]
    fn expected_boundary_edge_cases() {
        assert_eq!(expected_boundary(1000, 4, 0.0), 0.0);
        let e = expected_boundary(1_000_000, 8, 2e-5);
        assert_eq!(format!("{:.2}", e / (1e6 - 1e6 / 8.0)), "0.92");
        let e = expected_boundary(1000, 4, 0.01);
        assert!((e - 750.0 * (1.0 - 0.99f64.powi(250))).abs() < 1e-9);
        assert!((e - 689.4).abs() < 0.5, "{e}");
    }

    #[test]
    fn chunk_extremes() {
        let g = generate_er(30, 0.2, 0).unwrap();
        let singletons = make_chunks(&g, 30, 0).unwrap();
        assert!(singletons.chunks().iter().all(|c| c.len() == 1));
        let one = make_chunks(&g, 1, 0).unwrap();
        assert_eq!(one.chunk(0), (0..30).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn chunks_recover_planted_blocks() {
        let d = generate_sbm(4, 100, 0.1, 0.005, 3).unwrap();
        let plan = make_chunks(&d.graph, 4, 3).unwrap();
        let mut majorities: Vec<usize> = plan
            .chunks()
            .iter()
            .map(|c| {
                let mut counts = [0usize; 4];
                for &v in c {
                    counts[d.labels[v] as usize] += 1;
                }
                (0..4).max_by_key(|&b| counts[b]).unwrap()
            })
            .collect();
        majorities.sort_unstable();
        assert_eq!(majorities, vec![0, 1, 2, 3]);
        assert!(plan.chunks().iter().all(|c| c.len() <= 105));
    }

    #[test]
    fn chunk_order_determinism_and_identity() {
        let plan = ChunkPlan::single(10);
        assert_eq!(shuffle_chunk_order(&plan, 3, 1), vec![0]);
        let plan = ChunkPlan::from_assignment((0..16).map(|v| v % 8).collect(), 8).unwrap();
        assert_eq!(shuffle_chunk_order(&plan, 5, 2), shuffle_chunk_order(&plan, 5, 2));
        let mut o = shuffle_chunk_order(&plan, 5, 2);
        o.sort_unstable();
        assert_eq!(o, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn chunk_order_is_uniform_over_epochs() {
        let plan = ChunkPlan::from_assignment(vec![0, 1, 2, 3], 4).unwrap();
        let mut first = [0usize; 4];
        for epoch in 0..10_000 {
            first[shuffle_chunk_order(&plan, epoch, 17)[0]] += 1;
        }
        for c in first {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.25).abs() < 0.02, "{first:?}");
        }
    }

    #[test]
    fn text_round_trip() {
        let p = partition_from_assignment(&g8(), vec![0, 0, 0, 1, 1, 2, 2, 2], 3).unwrap();
        let (k, a) = parse_assignment(&p.to_text()).unwrap();
        assert_eq!((k, a.as_slice()), (3, p.assignment()));
        assert!(parse_assignment("").is_err());
        assert!(parse_assignment("2\nx\n").is_err());
    }

    #[test]
    fn capacity_never_below_ceiling() {
        assert_eq!(part_capacity(8, 3), 3);
        assert_eq!(part_capacity(400, 4), 105);
    }
}
