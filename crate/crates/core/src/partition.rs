//! Balanced community partitioning that keeps every inter-community edge.
//!
//! The partitioner grows `M` regions from seeds spread across the graph,
//! always feeding the smallest region that can still grow with the
//! frontier node most connected to it, then makes passes of boundary
//! moves that lower the cut without breaking the balance bounds. A few
//! seedings are tried and the lowest cut is kept. Ties are broken by the
//! lowest id everywhere, so the result depends only on the graph, `M` and
//! the seed.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Slack on the `ceil(n / M)` community size cap.
pub const BALANCE_EPSILON: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    neighbor_sets: Vec<Vec<usize>>,
    local_index: Vec<usize>,
}

impl Partition {
    /// Builds a partition from a node→community map. Every community in
    /// `0..num_communities` must be non-empty.
    pub fn from_assignment(g: &Graph, assignment: Vec<usize>, num_communities: usize) -> Result<Self> {
        if assignment.len() != g.n() {
            return Err(Error::InvalidPartition(format!(
                "assignment covers {} nodes, graph has {}",
                assignment.len(),
                g.n()
            )));
        }
        if num_communities == 0 {
            return Err(Error::InvalidPartition("zero communities".into()));
        }
        let mut members = vec![Vec::new(); num_communities];
        let mut local_index = vec![0; g.n()];
        for (node, &c) in assignment.iter().enumerate() {
            if c >= num_communities {
                return Err(Error::InvalidPartition(format!(
                    "node {node} assigned to community {c}, expected < {num_communities}"
                )));
            }
            local_index[node] = members[c].len();
            members[c].push(node);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidPartition(format!("community {empty} is empty")));
        }
        let neighbor_sets = neighbor_sets(g, &assignment, num_communities);
        Ok(Self {
            assignment,
            members,
            neighbor_sets,
            local_index,
        })
    }

    /// The trivial partition with a single community.
    pub fn single(g: &Graph) -> Self {
        Self::from_assignment(g, vec![0; g.n()], 1).expect("non-empty graph")
    }

    pub fn num_communities(&self) -> usize {
        self.members.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    /// Position of `node` inside its community's member list.
    pub fn local_index(&self, node: usize) -> usize {
        self.local_index[node]
    }

    /// Sorted member node ids of community `m`.
    pub fn members(&self, m: usize) -> &[usize] {
        &self.members[m]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Sorted neighbor set `N_m`.
    pub fn neighbors(&self, m: usize) -> &[usize] {
        &self.neighbor_sets[m]
    }

    /// All members, community by community: the block ordering.
    pub fn perm(&self) -> Vec<usize> {
        self.members.concat()
    }

    pub fn cut_edges(&self, g: &Graph) -> usize {
        g.edges()
            .filter(|&(u, v)| self.assignment[u] != self.assignment[v])
            .count()
    }

    /// `max n_m / min n_m`.
    pub fn imbalance(&self) -> f64 {
        let sizes = self.sizes();
        let max = *sizes.iter().max().unwrap_or(&0) as f64;
        let min = *sizes.iter().min().unwrap_or(&1) as f64;
        max / min
    }
}

/// `N_m = { i | ∃(u,v) ∈ E, u ∈ V_m, v ∈ V_i, i ≠ m }`, sorted.
pub fn neighbor_sets(g: &Graph, assignment: &[usize], num_communities: usize) -> Vec<Vec<usize>> {
    let mut flags = vec![vec![false; num_communities]; num_communities];
    for (u, v) in g.edges() {
        let (a, b) = (assignment[u], assignment[v]);
        if a != b {
            flags[a][b] = true;
            flags[b][a] = true;
        }
    }
    flags
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .filter_map(|(i, f)| f.then_some(i))
                .collect()
        })
        .collect()
}

/// Largest community size the partitioner will produce.
pub fn size_cap(n: usize, num_communities: usize) -> usize {
    (n.div_ceil(num_communities) as f64 * (1.0 + BALANCE_EPSILON)).floor() as usize
}

/// Independent seedings tried; the lowest cut wins.
const RESTARTS: usize = 4;
const REFINE_PASSES: usize = 8;

pub fn partition_graph(g: &Graph, num_communities: usize, seed: u64) -> Result<Partition> {
    let n = g.n();
    if num_communities == 0 || num_communities > n {
        return Err(Error::InvalidPartition(format!(
            "cannot split {n} nodes into {num_communities} communities"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let seeds = spread_seeds(g, num_communities, rng.gen());
        let mut assignment = grow_regions(g, &seeds);
        backfill_empty(g, &mut assignment, num_communities);
        refine(g, &mut assignment, num_communities);
        let cut = g.edges().filter(|&(u, v)| assignment[u] != assignment[v]).count();
        if best.as_ref().is_none_or(|(c, _)| cut < *c) {
            best = Some((cut, assignment));
        }
    }
    Partition::from_assignment(g, best.expect("at least one restart").1, num_communities)
}

/// First seed uniformly at random, every further seed the node farthest
/// (in hops) from all seeds chosen so far; unreachable nodes count as
/// infinitely far.
fn spread_seeds(g: &Graph, count: usize, seed: u64) -> Vec<usize> {
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = vec![rng.gen_range(0..n)];
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    while seeds.len() < count {
        let last = *seeds.last().unwrap();
        dist[last] = 0;
        queue.push_back(last);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if dist[u] + 1 < dist[v] {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        // max_by_key keeps the last maximum; scan in reverse for the lowest id
        let next = (0..n)
            .rev()
            .filter(|v| dist[*v] != 0)
            .max_by_key(|&v| dist[v])
            .expect("fewer seeds than nodes");
        seeds.push(next);
    }
    seeds
}

fn grow_regions(g: &Graph, seeds: &[usize]) -> Vec<usize> {
    let n = g.n();
    let k = seeds.len();
    let cap = n.div_ceil(k);
    let mut assignment = vec![usize::MAX; n];
    let mut sizes = vec![0usize; k];
    // per region: candidate nodes keyed by their number of links into it
    let mut links: Vec<HashMap<usize, usize>> = vec![HashMap::new(); k];
    let mut frontiers: Vec<BinaryHeap<(usize, Reverse<usize>)>> = vec![BinaryHeap::new(); k];
    let claim = |region: usize,
                     node: usize,
                     assignment: &mut [usize],
                     links: &mut [HashMap<usize, usize>],
                     frontiers: &mut [BinaryHeap<(usize, Reverse<usize>)>]| {
        assignment[node] = region;
        for &w in g.neighbors(node) {
            if assignment[w] == usize::MAX {
                let c = links[region].entry(w).or_insert(0);
                *c += 1;
                frontiers[region].push((*c, Reverse(w)));
            }
        }
    };
    for (region, &s) in seeds.iter().enumerate() {
        claim(region, s, &mut assignment, &mut links, &mut frontiers);
        sizes[region] = 1;
    }
    let mut assigned = k;
    while assigned < n {
        // drop claimed nodes and outdated link counts from every frontier
        for r in 0..k {
            while let Some(&(c, Reverse(v))) = frontiers[r].peek() {
                if assignment[v] != usize::MAX || links[r][&v] != c {
                    frontiers[r].pop();
                } else {
                    break;
                }
            }
        }
        let growable = (0..k)
            .filter(|&r| sizes[r] < cap && !frontiers[r].is_empty())
            .min_by_key(|&r| (sizes[r], r));
        let (region, node) = match growable {
            Some(r) => (r, frontiers[r].pop().unwrap().1 .0),
            None => {
                // disconnected remainder: restart the smallest open region
                let r = (0..k)
                    .filter(|&r| sizes[r] < cap)
                    .min_by_key(|&r| (sizes[r], r))
                    .expect("capacity covers all nodes");
                let v = (0..n).find(|&v| assignment[v] == usize::MAX).unwrap();
                (r, v)
            }
        };
        claim(region, node, &mut assignment, &mut links, &mut frontiers);
        sizes[region] += 1;
        assigned += 1;
    }
    assignment
}

fn backfill_empty(g: &Graph, assignment: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&r| (sizes[r], usize::MAX - r)).unwrap();
        // prefer a boundary node of the donor, else its lowest id
        let donor_nodes: Vec<usize> = (0..g.n()).filter(|&v| assignment[v] == largest).collect();
        let node = donor_nodes
            .iter()
            .copied()
            .find(|&v| g.neighbors(v).iter().any(|&w| assignment[w] != largest))
            .unwrap_or(donor_nodes[0]);
        assignment[node] = empty;
    }
}

fn refine(g: &Graph, assignment: &mut [usize], k: usize) {
    if k == 1 {
        return;
    }
    let n = g.n();
    let max_size = size_cap(n, k);
    let min_size = ((n / k) as f64 * (1.0 - BALANCE_EPSILON)).ceil().max(1.0) as usize;
    let mut sizes = vec![0usize; k];
    for &c in assignment.iter() {
        sizes[c] += 1;
    }
    let mut links = vec![0usize; k];
    for _ in 0..REFINE_PASSES {
        let mut moved = false;
        for v in 0..n {
            let own = assignment[v];
            links.fill(0);
            for &w in g.neighbors(v) {
                links[assignment[w]] += 1;
            }
            let best = (0..k)
                .filter(|&r| r != own && links[r] > links[own] && sizes[r] < max_size)
                .max_by_key(|&r| (links[r], usize::MAX - r));
            if let Some(target) = best {
                if sizes[own] > min_size {
                    assignment[v] = target;
                    sizes[own] -= 1;
                    sizes[target] += 1;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
}

pub fn write_partition(p: &Partition, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(p.num_nodes() * 2);
    for &c in p.assignment() {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads one community id per line. The community count is one past the
/// largest id, and every community must be non-empty.
pub fn import_partition(path: &Path, g: &Graph) -> Result<Partition> {
    let text = fs::read_to_string(path)?;
    let mut assignment = Vec::with_capacity(g.n());
    for (lineno, line) in text.lines().enumerate() {
        let id = line.trim().parse::<usize>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("community id: {e}"),
        })?;
        assignment.push(id);
    }
    if assignment.len() != g.n() {
        return Err(Error::InvalidPartition(format!(
            "{} has {} lines, graph has {} nodes",
            path.display(),
            assignment.len(),
            g.n()
        )));
    }
    let m = assignment.iter().max().map_or(0, |&c| c + 1);
    Partition::from_assignment(g, assignment, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> Graph {
        let mut edges = Vec::new();
        for base in [0, 5] {
            for u in 0..5 {
                for v in u + 1..5 {
                    edges.push((base + u, base + v));
                }
            }
        }
        Graph::from_edges(10, &edges).unwrap()
    }

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn single_community() {
        let g = path(6);
        let p = partition_graph(&g, 1, 3).unwrap();
        assert_eq!(p.members(0), &[0, 1, 2, 3, 4, 5]);
        assert!(p.neighbors(0).is_empty());
    }

    #[test]
    fn singleton_communities_mirror_node_neighbors() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
        let p = partition_graph(&g, 5, 11).unwrap();
        for node in 0..5 {
            let m = p.community_of(node);
            assert_eq!(p.members(m), &[node]);
            let mut expect: Vec<usize> = g.neighbors(node).iter().map(|&v| p.community_of(v)).collect();
            expect.sort_unstable();
            assert_eq!(p.neighbors(m), expect.as_slice());
        }
    }

    #[test]
    fn two_cliques_split_without_cut_for_any_seed() {
        let g = two_cliques();
        for seed in 0..20 {
            let p = partition_graph(&g, 2, seed).unwrap();
            assert_eq!(p.cut_edges(&g), 0, "seed {seed}");
            assert_eq!(p.sizes(), vec![5, 5]);
            assert!(p.neighbors(0).is_empty() && p.neighbors(1).is_empty());
        }
    }

    #[test]
    fn too_many_communities_is_an_error() {
        assert!(matches!(
            partition_graph(&path(3), 4, 0),
            Err(Error::InvalidPartition(_))
        ));
    }

    #[test]
    fn alternating_assignment_on_a_path() {
        let g = path(6);
        let p = Partition::from_assignment(&g, vec![0, 1, 0, 1, 0, 1], 2).unwrap();
        assert_eq!(p.neighbors(0), &[1]);
        assert_eq!(p.neighbors(1), &[0]);
        assert_eq!(p.members(1), &[1, 3, 5]);
        assert_eq!(p.perm(), vec![0, 2, 4, 1, 3, 5]);
    }

    #[test]
    fn empty_community_rejected() {
        let g = path(3);
        let err = Partition::from_assignment(&g, vec![0, 0, 2], 3).unwrap_err();
        assert!(err.to_string().contains("community 1 is empty"));
    }

    #[test]
    fn import_validates_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("p.txt");
        fs::write(&file, "0\n0\n").unwrap();
        let err = import_partition(&file, &path(3)).unwrap_err();
        assert!(err.to_string().contains("2 lines"));
        fs::write(&file, "0\nx\n0\n").unwrap();
        assert!(matches!(
            import_partition(&file, &path(3)),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn all_zero_file_is_one_community() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("p.txt");
        fs::write(&file, "0\n0\n0\n").unwrap();
        let p = import_partition(&file, &path(3)).unwrap();
        assert_eq!(p.num_communities(), 1);
    }
}
