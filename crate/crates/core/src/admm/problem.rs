//! The training problem split into communities.

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::normalize_adjacency;
use crate::nn::LabelMask;
use crate::partition::Partition;
use crate::sparse::SparseMatrix;

/// Everything agent `m` knows about its own community.
#[derive(Clone, Debug)]
pub struct Community {
    pub id: usize,
    pub members: Vec<usize>,
    /// Communities sharing an edge with this one, ascending.
    pub neighbors: Vec<usize>,
    /// `neighbors ∪ {id}`, ascending.
    pub linked: Vec<usize>,
    /// `Ã_{m,r}` for every linked `r`.
    pub in_blocks: BTreeMap<usize, SparseMatrix>,
    /// `Ã_{r,m}` for every linked `r`.
    pub out_blocks: BTreeMap<usize, SparseMatrix>,
    pub features: DenseMatrix,
    pub labels: DenseMatrix,
    /// Local row indices of labelled training nodes.
    pub train_rows: Vec<usize>,
}

impl Community {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn in_block(&self, r: usize) -> Result<&SparseMatrix> {
        self.in_blocks.get(&r).ok_or_else(|| {
            Error::ProtocolViolation(format!("community {r} is not linked to {}", self.id))
        })
    }

    pub fn out_block(&self, r: usize) -> Result<&SparseMatrix> {
        self.out_blocks.get(&r).ok_or_else(|| {
            Error::ProtocolViolation(format!("community {} is not linked to {r}", self.id))
        })
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub a_hat: SparseMatrix,
    pub features: DenseMatrix,
    pub labels: DenseMatrix,
    pub train_mask: LabelMask,
    pub test_mask: LabelMask,
    pub partition: Partition,
    /// `C_0..C_L`.
    pub dims: Vec<usize>,
    pub communities: Vec<Community>,
    /// `ÃZ_0`, fixed for the whole run.
    pub aggregated_input: DenseMatrix,
}

impl Problem {
    pub fn new(dataset: &Dataset, partition: Partition, hidden: &[usize]) -> Result<Self> {
        dataset.validate()?;
        if partition.num_nodes() != dataset.num_nodes() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} nodes, dataset has {}",
                partition.num_nodes(),
                dataset.num_nodes()
            )));
        }
        if dataset.train_mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let a_hat = normalize_adjacency(&dataset.graph);
        let mut dims = vec![dataset.num_features()];
        dims.extend_from_slice(hidden);
        dims.push(dataset.num_classes());

        let mut communities = Vec::with_capacity(partition.num_communities());
        for m in 0..partition.num_communities() {
            let members = partition.members(m).to_vec();
            let neighbors = partition.neighbors(m).to_vec();
            let mut linked = neighbors.clone();
            linked.push(m);
            linked.sort_unstable();
            let mut in_blocks = BTreeMap::new();
            let mut out_blocks = BTreeMap::new();
            for &r in &linked {
                let theirs = partition.members(r);
                in_blocks.insert(r, a_hat.extract_block(&members, theirs)?);
                out_blocks.insert(r, a_hat.extract_block(theirs, &members)?);
            }
            let train_rows = members
                .iter()
                .enumerate()
                .filter(|&(_, &v)| dataset.train_mask.contains(v))
                .map(|(i, _)| i)
                .collect();
            communities.push(Community {
                id: m,
                features: dataset.features.select_rows(&members),
                labels: dataset.labels.select_rows(&members),
                members,
                neighbors,
                linked,
                in_blocks,
                out_blocks,
                train_rows,
            });
        }
        let aggregated_input = a_hat.spmm(&dataset.features)?;
        Ok(Self {
            a_hat,
            features: dataset.features.clone(),
            labels: dataset.labels.clone(),
            train_mask: dataset.train_mask.clone(),
            test_mask: dataset.test_mask.clone(),
            partition,
            dims,
            communities,
            aggregated_input,
        })
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_communities(&self) -> usize {
        self.communities.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Global number of labelled training nodes; every community's risk is
    /// normalized by it so the community risks sum to the global risk.
    pub fn train_total(&self) -> f64 {
        self.train_mask.len() as f64
    }

    /// Stacks per-community blocks back into node order.
    pub fn stack(&self, blocks: &[DenseMatrix]) -> DenseMatrix {
        let cols = blocks.first().map_or(0, |b| b.cols());
        let mut out = DenseMatrix::zeros(self.num_nodes(), cols);
        for (c, b) in self.communities.iter().zip(blocks) {
            b.scatter_rows_into(&mut out, &c.members);
        }
        out
    }

    /// Splits a node-ordered matrix into per-community blocks.
    pub fn split(&self, full: &DenseMatrix) -> Vec<DenseMatrix> {
        self.communities
            .iter()
            .map(|c| full.select_rows(&c.members))
            .collect()
    }

    /// Sum of the first-order messages from every linked community
    /// (direct block products; used as an oracle and by evaluation).
    pub fn block_aggregate(&self, m: usize, blocks: &[DenseMatrix]) -> DenseMatrix {
        let c = &self.communities[m];
        let mut out = DenseMatrix::zeros(c.size(), blocks[0].cols());
        for &r in &c.linked {
            c.in_blocks[&r].spmm_acc(&blocks[r], &mut out);
        }
        out
    }
}
