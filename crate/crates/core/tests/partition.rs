mod common;

use admm_gcn::admm::Problem;
use admm_gcn::dense::DenseMatrix;
use admm_gcn::partition::{import_partition, partition_graph, size_cap, write_partition};
use admm_gcn::{normalize_adjacency, Graph};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph_strategy() -> impl Strategy<Value = (Graph, u64)> {
    (2usize..40, 0.0f64..0.4, any::<u64>()).prop_map(|(n, p, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_graph(n, p, &mut rng), seed)
    })
}

/// Neighbour sets straight from the definition, by scanning node pairs.
fn brute_neighbors(g: &Graph, assignment: &[usize], m: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for u in 0..g.n() {
        for v in 0..g.n() {
            let (cu, cv) = (assignment[u], assignment[v]);
            if cu == m && cv != m && g.adjacency().get(u, v) != 0.0 && !out.contains(&cv) {
                out.push(cv);
            }
        }
    }
    out.sort_unstable();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_are_valid_and_balanced((g, seed) in graph_strategy(), m in 1usize..6) {
        let m = m.min(g.n());
        let p = partition_graph(&g, m, seed).unwrap();
        prop_assert_eq!(p.num_communities(), m);
        let mut seen = vec![false; g.n()];
        for c in 0..m {
            prop_assert!(!p.members(c).is_empty());
            prop_assert!(p.members(c).len() <= size_cap(g.n(), m));
            for &v in p.members(c) {
                prop_assert!(!seen[v]);
                seen[v] = true;
                prop_assert_eq!(p.community_of(v), c);
            }
            let expect = brute_neighbors(&g, p.assignment(), c);
            prop_assert_eq!(p.neighbors(c), expect.as_slice());
        }
        prop_assert!(seen.iter().all(|&s| s));
        let brute_cut = g.edges().filter(|&(u, v)| p.community_of(u) != p.community_of(v)).count();
        prop_assert_eq!(p.cut_edges(&g), brute_cut);
        prop_assert_eq!(partition_graph(&g, m, seed).unwrap(), p);
    }

    #[test]
    fn neighbour_relation_is_symmetric((g, seed) in graph_strategy(), m in 2usize..6) {
        let m = m.min(g.n());
        let p = partition_graph(&g, m, seed).unwrap();
        for a in 0..m {
            for &b in p.neighbors(a) {
                prop_assert!(b != a);
                prop_assert!(p.neighbors(b).contains(&a));
            }
        }
    }

    #[test]
    fn community_blocks_reassemble_the_adjacency((g, seed) in graph_strategy(), m in 1usize..5) {
        let m = m.min(g.n());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = random_dataset(g.n(), 2, 2, &mut rng);
        data.graph = g;
        let p = Problem::new(&data, partition_graph(&data.graph, m, seed).unwrap(), &[3]).unwrap();
        let a = normalize_adjacency(&data.graph).to_dense();
        let mut rebuilt = DenseMatrix::zeros(a.rows(), a.cols());
        for c in &p.communities {
            prop_assert_eq!(c.linked.len(), c.neighbors.len() + 1);
            for (&r, block) in &c.in_blocks {
                let dense = block.to_dense();
                for (i, &u) in c.members.iter().enumerate() {
                    for (j, &v) in p.partition.members(r).iter().enumerate() {
                        rebuilt.set(u, v, dense.get(i, j));
                    }
                }
                prop_assert_eq!(c.out_blocks[&r].to_dense(), dense.transpose());
            }
        }
        prop_assert_eq!(rebuilt, a);
        let x = DenseMatrix::from_fn(data.graph.n(), 3, |i, j| (i * 3 + j) as f64);
        prop_assert_eq!(p.stack(&p.split(&x)), x);
    }
}

#[test]
fn partition_file_round_trips() {
    let data = sbm(3, 10, 4);
    let p = partition_graph(&data.graph, 3, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("parts.txt");
    write_partition(&p, &path).unwrap();
    assert_eq!(import_partition(&path, &data.graph).unwrap(), p);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 30);
}

#[test]
fn blocks_of_an_sbm_are_recovered_without_noise_edges() {
    let data = admm_gcn::data::generate_sbm(&admm_gcn::data::SbmSpec {
        communities: 4,
        nodes_per_community: 15,
        p_in: 0.5,
        p_out: 0.0,
        ..Default::default()
    })
    .unwrap();
    let p = partition_graph(&data.graph, 4, 0).unwrap();
    assert_eq!(p.cut_edges(&data.graph), 0);
}

#[test]
fn more_communities_than_nodes_fails() {
    let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
    assert!(partition_graph(&g, 4, 0).is_err());
    assert!(partition_graph(&g, 0, 0).is_err());
}
