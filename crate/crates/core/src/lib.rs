//! Distributed ADMM training of graph convolutional networks over
//! partitioned graphs.

pub mod admm;
pub mod baselines;
pub mod data;
pub mod dense;
pub mod error;
pub mod graph;
pub mod nn;
pub mod partition;
pub mod runtime;
pub mod seed;
pub mod sparse;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use graph::{normalize_adjacency, Graph};
pub use partition::{partition_graph, Partition};
pub use sparse::SparseMatrix;
