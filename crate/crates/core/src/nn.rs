//! Activations, the masked cross-entropy risk and the closed-form
//! gradients of the two penalty terms the ADMM subproblems are built from.

use rand::Rng;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Node ids with known labels. Sorted and unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMask(Vec<usize>);

impl LabelMask {
    pub fn new(mut ids: Vec<usize>, n: usize) -> Result<Self> {
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateIndex {
                what: "label mask",
                index: w[0],
            });
        }
        if let Some(&last) = ids.last() {
            if last >= n {
                return Err(Error::IndexOutOfRange {
                    what: "label mask",
                    index: last,
                    len: n,
                });
            }
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }
}

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| v.max(0.0))
}

/// 1 where `x > 0`, else 0 (the subgradient at 0 is taken as 0).
pub fn relu_grad_mask(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Row-wise softmax with the row max subtracted first.
pub fn softmax_rows(z: &DenseMatrix) -> DenseMatrix {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Sum over `rows` of `−Σ_c y_c log softmax(z)_c`, divided by `denom`,
/// together with its gradient (zero outside `rows`).
pub fn cross_entropy_rows(
    z: &DenseMatrix,
    y: &DenseMatrix,
    rows: &[usize],
    denom: f64,
) -> (f64, DenseMatrix) {
    assert_eq!(z.shape(), y.shape(), "cross_entropy_rows: shape mismatch");
    let mut grad = DenseMatrix::zeros(z.rows(), z.cols());
    let mut total = 0.0;
    for &i in rows {
        let zr = z.row(i);
        let yr = y.row(i);
        let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = zr.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let g = grad.row_mut(i);
        for c in 0..zr.len() {
            let log_p = zr[c] - log_norm;
            total -= yr[c] * log_p;
            g[c] = (log_p.exp() - yr[c]) / denom;
        }
    }
    (total / denom, grad)
}

/// Mean cross-entropy over the masked rows and its gradient with respect
/// to the logits `z`.
pub fn masked_cross_entropy(
    z: &DenseMatrix,
    y: &DenseMatrix,
    mask: &LabelMask,
) -> Result<(f64, DenseMatrix)> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if z.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs labels {:?}",
            z.shape(),
            y.shape()
        )));
    }
    if let Some(&last) = mask.ids().last() {
        if last >= z.rows() {
            return Err(Error::IndexOutOfRange {
                what: "label mask",
                index: last,
                len: z.rows(),
            });
        }
    }
    Ok(cross_entropy_rows(z, y, mask.ids(), mask.len() as f64))
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(z: &DenseMatrix) -> Vec<usize> {
    (0..z.rows())
        .map(|i| {
            z.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (j, &v)| {
                    if v > bv {
                        (j, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Fraction of masked rows whose argmax matches the one-hot label.
pub fn accuracy(logits: &DenseMatrix, labels: &DenseMatrix, mask: &LabelMask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let pred = argmax_rows(logits);
    let truth = argmax_rows(labels);
    let hits = mask.ids().iter().filter(|&&i| pred[i] == truth[i]).count();
    hits as f64 / mask.len() as f64
}

/// Value and gradients of a penalty term with respect to `W_l`, `Z_{l-1}`
/// and `Z_l`.
#[derive(Clone, Debug)]
pub struct PhiTerms {
    pub value: f64,
    pub grad_w: DenseMatrix,
    pub grad_z_prev: DenseMatrix,
    pub grad_z: DenseMatrix,
}

fn check_layer_shapes(
    a: &SparseMatrix,
    w: &DenseMatrix,
    z_prev: &DenseMatrix,
    z: &DenseMatrix,
) -> Result<()> {
    let n = a.rows();
    if a.cols() != n || z_prev.rows() != n || z.rows() != n {
        return Err(Error::Shape(format!(
            "adjacency {}x{}, Z_prev has {} rows, Z has {} rows",
            a.rows(),
            a.cols(),
            z_prev.rows(),
            z.rows()
        )));
    }
    if w.rows() != z_prev.cols() || w.cols() != z.cols() {
        return Err(Error::Shape(format!(
            "W is {}x{}, Z_prev has {} cols, Z has {} cols",
            w.rows(),
            w.cols(),
            z_prev.cols(),
            z.cols()
        )));
    }
    Ok(())
}

/// Hidden-layer penalty value `(ν/2)‖Z − relu(agg·W)‖²` where `agg = ÃZ_{l-1}`
/// is precomputed.
pub fn hidden_penalty(agg: &DenseMatrix, w: &DenseMatrix, z: &DenseMatrix, nu: f64) -> f64 {
    let pre = agg.matmul(w);
    let mut total = 0.0;
    for (zv, pv) in z.data().iter().zip(pre.data()) {
        let r = zv - pv.max(0.0);
        total += r * r;
    }
    0.5 * nu * total
}

/// Hidden-layer penalty plus `∂/∂W` and the masked residual
/// `(Z − relu(pre)) ⊙ relu'(pre)` that the other gradients are built from.
pub fn hidden_penalty_grad(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    z: &DenseMatrix,
    nu: f64,
) -> (f64, DenseMatrix, DenseMatrix) {
    let pre = agg.matmul(w);
    let mut value = 0.0;
    let mut masked = DenseMatrix::zeros(z.rows(), z.cols());
    for ((m, zv), pv) in masked.data_mut().iter_mut().zip(z.data()).zip(pre.data()) {
        let r = zv - pv.max(0.0);
        value += r * r;
        *m = if *pv > 0.0 { r } else { 0.0 };
    }
    let mut grad_w = agg.t_matmul(&masked);
    grad_w.scale_in_place(-nu);
    (0.5 * nu * value, grad_w, masked)
}

/// Output-layer penalty `⟨U, Z − agg·W⟩ + (ρ/2)‖Z − agg·W‖²`.
pub fn output_penalty(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    z: &DenseMatrix,
    u: &DenseMatrix,
    rho: f64,
) -> f64 {
    let pre = agg.matmul(w);
    let mut total = 0.0;
    for ((zv, pv), uv) in z.data().iter().zip(pre.data()).zip(u.data()) {
        let r = zv - pv;
        total += uv * r + 0.5 * rho * r * r;
    }
    total
}

/// Output-layer penalty, `∂/∂W`, and the dual-scaled residual `U + ρ·res`.
pub fn output_penalty_grad(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    z: &DenseMatrix,
    u: &DenseMatrix,
    rho: f64,
) -> (f64, DenseMatrix, DenseMatrix) {
    let pre = agg.matmul(w);
    let mut value = 0.0;
    let mut scaled = DenseMatrix::zeros(z.rows(), z.cols());
    for (((s, zv), pv), uv) in scaled
        .data_mut()
        .iter_mut()
        .zip(z.data())
        .zip(pre.data())
        .zip(u.data())
    {
        let r = zv - pv;
        value += uv * r + 0.5 * rho * r * r;
        *s = uv + rho * r;
    }
    let mut grad_w = agg.t_matmul(&scaled);
    grad_w.scale_in_place(-1.0);
    (value, grad_w, scaled)
}

/// `φ(W_l, Z_{l-1}, Z_l) = (ν/2)‖Z_l − relu(ÃZ_{l-1}W_l)‖²_F` with all three
/// gradients.
pub fn phi_hidden(
    a: &SparseMatrix,
    w: &DenseMatrix,
    z_prev: &DenseMatrix,
    z: &DenseMatrix,
    nu: f64,
) -> Result<PhiTerms> {
    check_layer_shapes(a, w, z_prev, z)?;
    let agg = a.spmm(z_prev)?;
    let (value, grad_w, masked) = hidden_penalty_grad(&agg, w, z, nu);
    // Ã is symmetric, so Ãᵀ(·) = Ã(·)
    let mut grad_z_prev = a.spmm(&masked.matmul_t(w))?;
    grad_z_prev.scale_in_place(-nu);
    let pre = agg.matmul(w);
    let mut grad_z = z.sub(&relu(&pre));
    grad_z.scale_in_place(nu);
    Ok(PhiTerms {
        value,
        grad_w,
        grad_z_prev,
        grad_z,
    })
}

/// `φ(W_L, Z_{L-1}, Z_L, U) = ⟨U, Z_L − ÃZ_{L-1}W_L⟩ + (ρ/2)‖Z_L − ÃZ_{L-1}W_L‖²_F`
/// with all three gradients.
pub fn phi_output(
    a: &SparseMatrix,
    w: &DenseMatrix,
    z_prev: &DenseMatrix,
    z: &DenseMatrix,
    u: &DenseMatrix,
    rho: f64,
) -> Result<PhiTerms> {
    check_layer_shapes(a, w, z_prev, z)?;
    if u.shape() != z.shape() {
        return Err(Error::Shape(format!(
            "U is {:?}, Z_L is {:?}",
            u.shape(),
            z.shape()
        )));
    }
    let agg = a.spmm(z_prev)?;
    let (value, grad_w, scaled) = output_penalty_grad(&agg, w, z, u, rho);
    let mut grad_z_prev = a.spmm(&scaled.matmul_t(w))?;
    grad_z_prev.scale_in_place(-1.0);
    Ok(PhiTerms {
        value,
        grad_w,
        grad_z_prev,
        grad_z: scaled,
    })
}

/// Weights drawn from `U(−1/√fan_in, 1/√fan_in)`, one matrix per layer.
pub fn init_weights(dims: &[usize], rng: &mut impl Rng) -> Vec<DenseMatrix> {
    dims.windows(2)
        .map(|d| {
            let bound = 1.0 / (d[0] as f64).sqrt();
            DenseMatrix::from_fn(d[0], d[1], |_, _| rng.gen_range(-bound..bound))
        })
        .collect()
}
