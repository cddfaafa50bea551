//! Model state `(W, Z, U, τ, θ, k)`, its node-ordered view, and the
//! binary checkpoint format.

use std::fs;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::admm::problem::Problem;
use crate::baselines::gcn_forward;
use crate::dense::{relative_error, DenseMatrix};
use crate::error::{Error, Result};
use crate::nn;

const MAGIC: &[u8; 8] = b"ADMMGCN1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    /// `W_1..W_L`.
    pub w: Vec<DenseMatrix>,
    /// `z[l-1][m]` is `Z_{l,m}` for l = 1..L.
    pub z: Vec<Vec<DenseMatrix>>,
    /// `U_m`.
    pub u: Vec<DenseMatrix>,
    /// `τ_l` for l = 1..L.
    pub tau: Vec<f64>,
    /// `theta[l-1][m]` is `θ_{l,m}` for l = 1..L-1.
    pub theta: Vec<Vec<f64>>,
    pub k: usize,
}

/// Node-ordered copy of `(W, Z_1..Z_L, U)`, independent of the partition.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedState {
    pub w: Vec<DenseMatrix>,
    pub z: Vec<DenseMatrix>,
    pub u: DenseMatrix,
}

impl StackedState {
    /// Largest relative Frobenius distance over all blocks.
    pub fn relative_error(&self, other: &StackedState) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.w.iter().zip(&other.w) {
            worst = worst.max(relative_error(a, b));
        }
        for (a, b) in self.z.iter().zip(&other.z) {
            worst = worst.max(relative_error(a, b));
        }
        worst.max(relative_error(&self.u, &other.u))
    }

    /// SHA-256 over the bit patterns of every entry, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for m in self.w.iter().chain(&self.z).chain(std::iter::once(&self.u)) {
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl ModelState {
    /// Random weights followed by an exact forward pass, `U = 0`, unit steps.
    pub fn initialize(problem: &Problem, rng: &mut impl Rng) -> Result<Self> {
        Self::from_weights(problem, nn::init_weights(&problem.dims, rng))
    }

    /// A forward-consistent state for the given weights.
    pub fn from_weights(problem: &Problem, w: Vec<DenseMatrix>) -> Result<Self> {
        let outputs = gcn_forward(&problem.a_hat, &problem.features, &w)?;
        let layers = w.len();
        let z: Vec<Vec<DenseMatrix>> = outputs.iter().map(|o| problem.split(o)).collect();
        let u = problem
            .communities
            .iter()
            .map(|c| DenseMatrix::zeros(c.size(), problem.dims[layers]))
            .collect();
        let state = Self {
            w,
            z,
            u,
            tau: vec![1.0; layers],
            theta: vec![vec![1.0; problem.num_communities()]; layers - 1],
            k: 0,
        };
        state.validate(problem)?;
        Ok(state)
    }

    pub fn layers(&self) -> usize {
        self.w.len()
    }

    /// `Z_{l,m}`; layer 0 is the community's feature block.
    pub fn z_block<'a>(&'a self, problem: &'a Problem, l: usize, m: usize) -> &'a DenseMatrix {
        if l == 0 {
            &problem.communities[m].features
        } else {
            &self.z[l - 1][m]
        }
    }

    pub fn stacked_z(&self, problem: &Problem, l: usize) -> DenseMatrix {
        if l == 0 {
            problem.features.clone()
        } else {
            problem.stack(&self.z[l - 1])
        }
    }

    pub fn stacked(&self, problem: &Problem) -> StackedState {
        StackedState {
            w: self.w.clone(),
            z: (1..=self.layers()).map(|l| self.stacked_z(problem, l)).collect(),
            u: problem.stack(&self.u),
        }
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        let layers = problem.layers();
        let comms = problem.num_communities();
        if self.w.len() != layers || self.z.len() != layers || self.tau.len() != layers {
            return Err(Error::Shape(format!("state has {} layers, problem {layers}", self.w.len())));
        }
        if self.u.len() != comms || self.theta.len() != layers - 1 {
            return Err(Error::Shape("state block counts do not match the partition".into()));
        }
        for l in 1..=layers {
            let want = (problem.dims[l - 1], problem.dims[l]);
            if self.w[l - 1].shape() != want {
                return Err(Error::Shape(format!(
                    "W_{l} is {:?}, expected {want:?}",
                    self.w[l - 1].shape()
                )));
            }
            if self.z[l - 1].len() != comms {
                return Err(Error::Shape(format!("Z_{l} has {} blocks", self.z[l - 1].len())));
            }
            for (m, c) in problem.communities.iter().enumerate() {
                let want = (c.size(), problem.dims[l]);
                if self.z[l - 1][m].shape() != want {
                    return Err(Error::Shape(format!(
                        "Z_{{{l},{m}}} is {:?}, expected {want:?}",
                        self.z[l - 1][m].shape()
                    )));
                }
            }
        }
        for (m, c) in problem.communities.iter().enumerate() {
            if self.u[m].shape() != (c.size(), problem.dims[layers]) {
                return Err(Error::Shape(format!("U_{m} is {:?}", self.u[m].shape())));
            }
        }
        let steps = self.tau.iter().chain(self.theta.iter().flatten());
        if steps.clone().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidConfig("step parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u64).to_le_bytes());
        let comms = self.u.len();
        out.extend_from_slice(&(self.w.len() as u64).to_le_bytes());
        out.extend_from_slice(&(comms as u64).to_le_bytes());
        let mut put = |m: &DenseMatrix| {
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        self.w.iter().for_each(&mut put);
        self.z.iter().flatten().for_each(&mut put);
        self.u.iter().for_each(&mut put);
        for t in self.tau.iter().chain(self.theta.iter().flatten()) {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let k = r.u64()? as usize;
        let layers = r.u64()? as usize;
        let comms = r.u64()? as usize;
        if layers == 0 || comms == 0 {
            return Err(Error::Checkpoint("empty model".into()));
        }
        let w = (0..layers).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
        let z = (0..layers)
            .map(|_| (0..comms).map(|_| r.matrix()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let u = (0..comms).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
        let tau = (0..layers).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let theta = (0..layers - 1)
            .map(|_| (0..comms).map(|_| r.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { w, z, u, tau, theta, k })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<DenseMatrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let data = self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DenseMatrix::from_vec(rows, cols, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
