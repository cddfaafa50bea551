//! End-to-end backpropagation training of the same GCN with first-order
//! optimizers.

use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EpochMetrics, RunMetrics};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::nn::{self, LabelMask};
use crate::sparse::SparseMatrix;

/// Intermediate products of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `ÃZ_{l-1}` for l = 1..L.
    pub aggregated: Vec<DenseMatrix>,
    /// `ÃZ_{l-1}W_l` for l = 1..L.
    pub pre: Vec<DenseMatrix>,
    /// `Z_1..Z_L`; the last one is linear.
    pub outputs: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn logits(&self) -> &DenseMatrix {
        self.outputs.last().expect("at least one layer")
    }
}

fn check_chain(a: &SparseMatrix, x: &DenseMatrix, w: &[DenseMatrix]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidConfig("a GCN needs at least one layer".into()));
    }
    if a.rows() != a.cols() || a.cols() != x.rows() {
        return Err(Error::Shape(format!(
            "adjacency {}x{} with {} feature rows",
            a.rows(),
            a.cols(),
            x.rows()
        )));
    }
    let mut width = x.cols();
    for (l, wl) in w.iter().enumerate() {
        if wl.rows() != width {
            return Err(Error::Shape(format!(
                "W_{} has {} rows, expected {width}",
                l + 1,
                wl.rows()
            )));
        }
        width = wl.cols();
    }
    Ok(())
}

pub fn gcn_forward_cached(a: &SparseMatrix, x: &DenseMatrix, w: &[DenseMatrix]) -> Result<ForwardCache> {
    check_chain(a, x, w)?;
    let last = w.len() - 1;
    let mut cache = ForwardCache {
        aggregated: Vec::with_capacity(w.len()),
        pre: Vec::with_capacity(w.len()),
        outputs: Vec::with_capacity(w.len()),
    };
    for (l, wl) in w.iter().enumerate() {
        let input = if l == 0 { x } else { &cache.outputs[l - 1] };
        let agg = a.spmm(input)?;
        let pre = agg.matmul(wl);
        let out = if l == last { pre.clone() } else { nn::relu(&pre) };
        cache.aggregated.push(agg);
        cache.pre.push(pre);
        cache.outputs.push(out);
    }
    Ok(cache)
}

/// `Z_l = relu(ÃZ_{l-1}W_l)` for hidden layers and `Z_L = ÃZ_{L-1}W_L`.
/// Returns `Z_1..Z_L`.
pub fn gcn_forward(a: &SparseMatrix, x: &DenseMatrix, w: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
    Ok(gcn_forward_cached(a, x, w)?.outputs)
}

/// Masked cross-entropy of the forward pass and its gradient with respect
/// to every weight matrix.
pub fn gcn_backward(
    a: &SparseMatrix,
    w: &[DenseMatrix],
    cache: &ForwardCache,
    y: &DenseMatrix,
    mask: &LabelMask,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let (loss, mut delta) = nn::masked_cross_entropy(cache.logits(), y, mask)?;
    let mut grads = vec![DenseMatrix::zeros(0, 0); w.len()];
    for l in (0..w.len()).rev() {
        if l + 1 < w.len() {
            let pre = &cache.pre[l];
            for (d, &p) in delta.data_mut().iter_mut().zip(pre.data()) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        grads[l] = cache.aggregated[l].t_matmul(&delta);
        if l > 0 {
            delta = a.spmm(&delta.matmul_t(&w[l]))?;
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Adam,
    Adagrad,
    Adadelta,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adadelta => "adadelta",
        }
    }

    /// 0.1 for plain gradient descent, 1e-3 for the adaptive methods.
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Gd => 0.1,
            _ => 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub adagrad_eps: f64,
    pub adadelta_decay: f64,
    pub adadelta_eps: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            adagrad_eps: 1e-8,
            adadelta_decay: 0.9,
            adadelta_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Optimizer together with its per-parameter slots.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    t: u32,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i} is {:?}, gradient is {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        }
        self.t += 1;
        let c = self.cfg;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                match c.kind {
                    OptimizerKind::Gd => *pv -= c.lr * gv,
                    OptimizerKind::Adam => {
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gv;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gv * gv;
                        let m_hat = m[j] / bias1;
                        let v_hat = v[j] / bias2;
                        *pv -= c.lr * m_hat / (v_hat.sqrt() + c.adam_eps);
                    }
                    OptimizerKind::Adagrad => {
                        v[j] += gv * gv;
                        *pv -= c.lr * gv / (v[j].sqrt() + c.adagrad_eps);
                    }
                    OptimizerKind::Adadelta => {
                        let rho = c.adadelta_decay;
                        v[j] = rho * v[j] + (1.0 - rho) * gv * gv;
                        let delta = (m[j] + c.adadelta_eps).sqrt() / (v[j] + c.adadelta_eps).sqrt() * gv;
                        m[j] = rho * m[j] + (1.0 - rho) * delta * delta;
                        *pv -= c.lr * delta;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Train accuracy, test accuracy and training loss of weights `w`.
pub fn evaluate_masks(
    a: &SparseMatrix,
    x: &DenseMatrix,
    y: &DenseMatrix,
    train: &LabelMask,
    test: &LabelMask,
    w: &[DenseMatrix],
) -> Result<(f64, f64, f64)> {
    let logits = gcn_forward(a, x, w)?.pop().expect("at least one layer");
    let (loss, _) = nn::masked_cross_entropy(&logits, y, train)?;
    Ok((nn::accuracy(&logits, y, train), nn::accuracy(&logits, y, test), loss))
}

pub fn evaluate(a: &SparseMatrix, dataset: &Dataset, w: &[DenseMatrix]) -> Result<(f64, f64, f64)> {
    evaluate_masks(
        a,
        &dataset.features,
        &dataset.labels,
        &dataset.train_mask,
        &dataset.test_mask,
        w,
    )
}

/// Full-batch training for `epochs` steps starting from `w`. One metrics
/// row per epoch, evaluated after the step.
pub fn train_baseline(
    a: &SparseMatrix,
    dataset: &Dataset,
    mut w: Vec<DenseMatrix>,
    cfg: OptimizerConfig,
    epochs: usize,
) -> Result<(Vec<DenseMatrix>, RunMetrics)> {
    let mut opt = Optimizer::new(cfg)?;
    let mut run = RunMetrics::default();
    for epoch in 1..=epochs {
        let start = Instant::now();
        let cache = gcn_forward_cached(a, &dataset.features, &w)?;
        let (_, grads) = gcn_backward(a, &w, &cache, &dataset.labels, &dataset.train_mask)?;
        opt.step(&mut w, &grads)?;
        let elapsed = start.elapsed().as_secs_f64();
        let (train_acc, test_acc, loss) = evaluate(a, dataset, &w)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        run.epochs.push(EpochMetrics {
            epoch,
            method: cfg.kind.name().into(),
            train_acc,
            test_acc,
            loss,
            train_time_s: elapsed,
            comm_time_s: 0.0,
        });
    }
    Ok((w, run))
}
