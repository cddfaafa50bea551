//! Undirected, unweighted graphs and the renormalized propagation matrix.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// An undirected graph stored as a symmetric 0/1 adjacency matrix with an
/// empty diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: SparseMatrix,
}

impl Graph {
    /// Builds a graph from an edge list. Repeated edges (in either
    /// direction) collapse to one and self-loops are dropped, both with a
    /// warning.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut directed = HashSet::with_capacity(edges.len());
        let mut triplets = Vec::with_capacity(2 * edges.len());
        let mut self_loops = 0usize;
        let mut duplicates = 0usize;
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "nodes",
                        index: x,
                        len: n,
                    });
                }
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            directed.insert((u, v));
            if !seen.insert((u.min(v), u.max(v))) {
                duplicates += 1;
                continue;
            }
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop(s)");
        }
        let reciprocated = directed
            .iter()
            .filter(|&&(u, v)| directed.contains(&(v, u)))
            .count();
        if reciprocated > 0 && reciprocated < directed.len() {
            log::warn!(
                "edge list looks directed ({} of {} arcs reciprocated); symmetrizing",
                reciprocated,
                directed.len()
            );
        } else if duplicates > reciprocated / 2 {
            log::warn!("dropped {} duplicate edge(s)", duplicates - reciprocated / 2);
        }
        let adjacency = SparseMatrix::from_triplets(n, n, triplets)?;
        Ok(Self { adjacency })
    }

    /// Wraps an existing adjacency matrix after checking it is symmetric,
    /// unweighted and loop-free.
    pub fn from_adjacency(adjacency: SparseMatrix) -> Result<Self> {
        if adjacency.rows() != adjacency.cols() {
            return Err(Error::InvalidGraph("adjacency is not square".into()));
        }
        if adjacency.values().iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidGraph("adjacency must be unweighted".into()));
        }
        if (0..adjacency.rows()).any(|i| adjacency.get(i, i) != 0.0) {
            return Err(Error::InvalidGraph("self-loops are not stored".into()));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::InvalidGraph("adjacency is not symmetric".into()));
        }
        Ok(Self { adjacency })
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency.row(u).0.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        self.adjacency.row(u).0
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }
}

/// `(D+I)^{-1/2} (A+I) (D+I)^{-1/2}` with the sparsity pattern of `A+I`.
pub fn normalize_adjacency(g: &Graph) -> SparseMatrix {
    let n = g.n();
    let shifted: Vec<usize> = (0..n).map(|u| g.degree(u) + 1).collect();
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::with_capacity(g.adjacency.nnz() + n);
    let mut values = Vec::with_capacity(g.adjacency.nnz() + n);
    for u in 0..n {
        let mut diagonal_done = false;
        for &v in g.neighbors(u) {
            if !diagonal_done && v > u {
                col_indices.push(u);
                values.push(1.0 / (shifted[u] as f64));
                diagonal_done = true;
            }
            col_indices.push(v);
            // the integer product is symmetric, so entry (u,v) equals (v,u) bitwise
            values.push(1.0 / ((shifted[u] * shifted[v]) as f64).sqrt());
        }
        if !diagonal_done {
            col_indices.push(u);
            values.push(1.0 / (shifted[u] as f64));
        }
        row_offsets.push(col_indices.len());
    }
    SparseMatrix::try_new(n, n, row_offsets, col_indices, values).expect("valid by construction")
}

/// Parses `u<TAB>v` lines with 0-based ids; `#` starts a comment. When `n`
/// is `None` the node count is one past the largest id.
pub fn parse_edge_list(text: &str, n: Option<usize>, origin: &Path) -> Result<Graph> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse = |f: Option<&str>| -> Result<usize> {
            f.ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg: "expected two node ids".into(),
            })?
            .parse::<usize>()
            .map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })
        };
        let u = parse(fields.next())?;
        let v = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg: "unexpected trailing field".into(),
            });
        }
        edges.push((u, v));
    }
    let n = n.unwrap_or_else(|| edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0));
    Graph::from_edges(n, &edges)
}

pub fn read_edge_list(path: &Path, n: Option<usize>) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    parse_edge_list(&text, n, path)
}

pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (u, v) in g.edges() {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}
