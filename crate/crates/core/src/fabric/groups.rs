use crate::error::{Error, Result};

pub type WorkerId = usize;

/// Placement of workers on simulated machines and into stage groups.
///
/// Group `s` holds the `G` workers of pipeline stage `s`; the worker with
/// rank `r` in every group owns graph partition `r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupMap {
    node_of: Vec<usize>,
    groups: Vec<Vec<WorkerId>>,
    group_of: Vec<usize>,
    rank_in_group: Vec<usize>,
}

impl GroupMap {
    /// Builds a map from explicit groups; every worker must appear once.
    pub fn from_groups(node_of: Vec<usize>, groups: Vec<Vec<WorkerId>>) -> Result<Self> {
        let m = node_of.len();
        let size = groups.first().map_or(0, Vec::len);
        if groups.is_empty() || size == 0 || groups.iter().any(|g| g.len() != size) {
            return Err(Error::invalid("groups must be non-empty and of equal size"));
        }
        let mut group_of = vec![usize::MAX; m];
        let mut rank_in_group = vec![usize::MAX; m];
        for (gi, g) in groups.iter().enumerate() {
            for (r, &w) in g.iter().enumerate() {
                if w >= m || group_of[w] != usize::MAX {
                    return Err(Error::invalid(format!("worker {w} missing, duplicated or out of range")));
                }
                group_of[w] = gi;
                rank_in_group[w] = r;
            }
        }
        if group_of.contains(&usize::MAX) {
            return Err(Error::invalid("groups do not cover every worker"));
        }
        Ok(Self {
            node_of,
            groups,
            group_of,
            rank_in_group,
        })
    }

    /// A single node holding `stages × group_size` workers laid out
    /// stage-major.
    pub fn single_node(num_stages: usize, group_size: usize) -> Self {
        assign_groups(num_stages * group_size, num_stages * group_size, num_stages, group_size)
            .expect("consistent single-node layout")
    }

    pub fn num_workers(&self) -> usize {
        self.node_of.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    pub fn node_of(&self, w: WorkerId) -> usize {
        self.node_of[w]
    }

    pub fn group_of(&self, w: WorkerId) -> usize {
        self.group_of[w]
    }

    pub fn rank_in_group(&self, w: WorkerId) -> usize {
        self.rank_in_group[w]
    }

    pub fn members(&self, group: usize) -> &[WorkerId] {
        &self.groups[group]
    }

    /// Worker holding rank `rank` of group `group`.
    pub fn worker(&self, group: usize, rank: usize) -> WorkerId {
        self.groups[group][rank]
    }

    pub fn groups(&self) -> &[Vec<WorkerId>] {
        &self.groups
    }

    pub fn same_node(&self, a: WorkerId, b: WorkerId) -> bool {
        self.node_of[a] == self.node_of[b]
    }

    /// Number of groups whose members live on more than one node.
    pub fn spanning_groups(&self) -> usize {
        self.groups
            .iter()
            .filter(|g| g.iter().any(|&w| self.node_of[w] != self.node_of[g[0]]))
            .count()
    }
}

/// Places `num_stages` groups of `group_size` workers onto nodes of
/// `workers_per_node` workers (worker `w` sits on node `w / workers_per_node`).
///
/// Groups are packed first-fit into nodes with enough free workers so that
/// they stay node-local; groups that fit nowhere take the lowest free ids.
pub fn assign_groups(
    num_workers: usize,
    workers_per_node: usize,
    num_stages: usize,
    group_size: usize,
) -> Result<GroupMap> {
    if workers_per_node == 0 || num_stages == 0 || group_size == 0 {
        return Err(Error::invalid("worker, stage and group counts must be positive"));
    }
    if num_workers != num_stages * group_size {
        return Err(Error::invalid(format!(
            "num_workers ({num_workers}) must equal num_stages ({num_stages}) x group_size ({group_size})"
        )));
    }
    let node_of: Vec<usize> = (0..num_workers).map(|w| w / workers_per_node).collect();
    let num_nodes = num_workers.div_ceil(workers_per_node);
    let mut free: Vec<Vec<WorkerId>> = (0..num_nodes)
        .map(|n| (n * workers_per_node..((n + 1) * workers_per_node).min(num_workers)).collect())
        .collect();
    let mut groups: Vec<Option<Vec<WorkerId>>> = vec![None; num_stages];
    for slot in groups.iter_mut() {
        if let Some(node) = free.iter().position(|f| f.len() >= group_size) {
            *slot = Some(free[node].drain(..group_size).collect());
        }
    }
    for slot in groups.iter_mut().filter(|g| g.is_none()) {
        let mut g = Vec::with_capacity(group_size);
        for f in free.iter_mut() {
            while g.len() < group_size && !f.is_empty() {
                g.push(f.remove(0));
            }
        }
        *slot = Some(g);
    }
    GroupMap::from_groups(node_of, groups.into_iter().map(Option::unwrap).collect())
}
