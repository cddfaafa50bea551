//! Building blocks of the activation updates for layers 1..L-1.
//!
//! The objective of `Z_{l,m}` is its own reconstruction term
//! `(ν/2)‖Z_{l,m} − relu(a_{l,m})‖²` plus one downstream term per linked
//! community `r`, each a function of the pre-activation
//! `x_r = base_r + Ã_{r,m}Z_{l,m}W_{l+1}`.

use std::collections::BTreeMap;

use crate::admm::problem::Community;
use crate::admm::Hyperparams;
use crate::dense::DenseMatrix;
use crate::error::Result;

/// A downstream term seen from the community being updated.
#[derive(Clone, Debug)]
pub struct Downstream {
    pub target: DenseMatrix,
    /// Contribution of every other community to `x_r`; `None` when zero.
    pub base: Option<DenseMatrix>,
    /// Multiplier block when the next layer is the linear output layer.
    pub u: Option<DenseMatrix>,
}

impl Downstream {
    /// Term feeding a hidden layer: `(ν/2)‖target − relu(x)‖²`.
    pub fn hidden(target: DenseMatrix, base: Option<DenseMatrix>) -> Self {
        Self { target, base, u: None }
    }

    /// Term feeding the output layer: `⟨u, target − x⟩ + (ρ/2)‖target − x‖²`.
    pub fn output(target: DenseMatrix, u: DenseMatrix, base: Option<DenseMatrix>) -> Self {
        Self {
            target,
            base,
            u: Some(u),
        }
    }

    /// `base + p`.
    pub fn preactivation(&self, p: &DenseMatrix) -> DenseMatrix {
        match &self.base {
            Some(b) => b.add(p),
            None => p.clone(),
        }
    }

    pub fn value(&self, x: &DenseMatrix, hp: &Hyperparams) -> f64 {
        let t = self.target.data();
        match &self.u {
            None => {
                let s: f64 = t
                    .iter()
                    .zip(x.data())
                    .map(|(tv, xv)| (tv - xv.max(0.0)).powi(2))
                    .sum();
                0.5 * hp.nu * s
            }
            Some(u) => t
                .iter()
                .zip(x.data())
                .zip(u.data())
                .map(|((tv, xv), uv)| {
                    let r = tv - xv;
                    uv * r + 0.5 * hp.rho * r * r
                })
                .sum(),
        }
    }

    /// Value and derivative with respect to `x`.
    pub fn value_and_dir(&self, x: &DenseMatrix, hp: &Hyperparams) -> (f64, DenseMatrix) {
        let mut dir = DenseMatrix::zeros(x.rows(), x.cols());
        let mut value = 0.0;
        match &self.u {
            None => {
                for ((d, &tv), &xv) in dir.data_mut().iter_mut().zip(self.target.data()).zip(x.data()) {
                    let r = tv - xv.max(0.0);
                    value += r * r;
                    *d = if xv > 0.0 { -hp.nu * r } else { 0.0 };
                }
                value *= 0.5 * hp.nu;
            }
            Some(u) => {
                for (((d, &tv), &xv), &uv) in dir
                    .data_mut()
                    .iter_mut()
                    .zip(self.target.data())
                    .zip(x.data())
                    .zip(u.data())
                {
                    let r = tv - xv;
                    value += uv * r + 0.5 * hp.rho * r * r;
                    *d = -(uv + hp.rho * r);
                }
            }
        }
        (value, dir)
    }
}

/// `(ν/2)‖z − relu(pre)‖²`.
pub fn own_value(z: &DenseMatrix, pre: &DenseMatrix, nu: f64) -> f64 {
    let s: f64 = z
        .data()
        .iter()
        .zip(pre.data())
        .map(|(zv, pv)| (zv - pv.max(0.0)).powi(2))
        .sum();
    0.5 * nu * s
}

/// `ν(z − relu(pre)) + (Σ_r Ã_{m,r} dir_r) W_{l+1}ᵀ`, summed over linked
/// communities in ascending order.
pub fn activation_gradient(
    community: &Community,
    z: &DenseMatrix,
    pre: &DenseMatrix,
    dirs: &BTreeMap<usize, DenseMatrix>,
    w_next: &DenseMatrix,
    nu: f64,
) -> Result<DenseMatrix> {
    let mut back = DenseMatrix::zeros(z.rows(), w_next.cols());
    for (&r, dir) in dirs {
        community.in_block(r)?.spmm_acc(dir, &mut back);
    }
    let mut grad = z.zip_map(pre, |zv, pv| nu * (zv - pv.max(0.0)));
    grad.add_assign(&back.matmul_t(w_next));
    Ok(grad)
}

/// Sum of `parts` in ascending key order, skipping `exclude`.
pub fn sum_except(parts: &BTreeMap<usize, DenseMatrix>, exclude: Option<usize>) -> Option<DenseMatrix> {
    let mut out: Option<DenseMatrix> = None;
    for (&r, p) in parts {
        if Some(r) == exclude {
            continue;
        }
        match &mut out {
            Some(acc) => acc.add_assign(p),
            None => out = Some(p.clone()),
        }
    }
    out
}
