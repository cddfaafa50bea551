//! Weight updates: one backtracked gradient step per layer on the
//! quadratic surrogate `P_l(W; τ)`.

use crate::admm::ledger::{Backtracker, MajorizationRecord, Phase};
use crate::admm::Hyperparams;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::nn;

/// What `W_l` is fitted against.
#[derive(Clone, Copy, Debug)]
pub enum WeightTarget<'a> {
    /// `(ν/2)‖Z_l − relu(agg·W)‖²`
    Hidden { z: &'a DenseMatrix },
    /// `⟨U, Z_L − agg·W⟩ + (ρ/2)‖Z_L − agg·W‖²`
    Output { z: &'a DenseMatrix, u: &'a DenseMatrix },
}

impl WeightTarget<'_> {
    pub fn value(&self, agg: &DenseMatrix, w: &DenseMatrix, hp: &Hyperparams) -> f64 {
        match *self {
            WeightTarget::Hidden { z } => nn::hidden_penalty(agg, w, z, hp.nu),
            WeightTarget::Output { z, u } => nn::output_penalty(agg, w, z, u, hp.rho),
        }
    }

    pub fn value_and_grad(&self, agg: &DenseMatrix, w: &DenseMatrix, hp: &Hyperparams) -> (f64, DenseMatrix) {
        let (value, grad, _) = match *self {
            WeightTarget::Hidden { z } => nn::hidden_penalty_grad(agg, w, z, hp.nu),
            WeightTarget::Output { z, u } => nn::output_penalty_grad(agg, w, z, u, hp.rho),
        };
        (value, grad)
    }
}

#[derive(Clone, Debug)]
pub struct WeightStep {
    pub w: DenseMatrix,
    pub tau: f64,
    pub record: MajorizationRecord,
}

/// `W ← W − ∇φ/τ` with τ grown until `P(W; τ) ≥ φ(W)` at the new point.
/// `agg` is `ÃZ_{l-1}` in node order.
pub fn update_w(
    agg: &DenseMatrix,
    w: &DenseMatrix,
    target: WeightTarget<'_>,
    tau_prev: f64,
    hp: &Hyperparams,
    k: usize,
    layer: usize,
) -> Result<WeightStep> {
    let z = match target {
        WeightTarget::Hidden { z } | WeightTarget::Output { z, .. } => z,
    };
    if agg.cols() != w.rows() || agg.rows() != z.rows() || w.cols() != z.cols() {
        return Err(Error::Shape(format!(
            "W_{layer} step: agg {:?}, W {:?}, Z {:?}",
            agg.shape(),
            w.shape(),
            z.shape()
        )));
    }
    let (start, grad) = target.value_and_grad(agg, w, hp);
    let mut bt = Backtracker::new(tau_prev, start, grad.frobenius_sq(), hp);
    loop {
        let mut candidate = w.clone();
        candidate.axpy(-1.0 / bt.step(), &grad);
        let value = target.value(agg, &candidate, hp);
        if let Some(record) = bt.offer(value, k, Phase::Weight, layer)? {
            return Ok(WeightStep {
                w: candidate,
                tau: record.step,
                record,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_point_is_kept() {
        // Z = relu(agg·W) exactly, so ∇φ = 0
        let agg = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0]]).unwrap();
        let w = DenseMatrix::from_rows(&[vec![0.4, -0.1], vec![0.2, 0.7]]).unwrap();
        let z = nn::relu(&agg.matmul(&w));
        let hp = Hyperparams::default();
        let step = update_w(&agg, &w, WeightTarget::Hidden { z: &z }, 1.0, &hp, 0, 1).unwrap();
        assert_eq!(step.w, w);
        assert!(step.record.holds());
    }

    #[test]
    fn exact_quadratic_lands_on_minimizer() {
        // φ(w) = (w − 3)²/2 as ⟨U, Z − w⟩ + (ρ/2)(Z − w)² with agg = 1, U = 0, ρ = 1
        let agg = DenseMatrix::filled(1, 1, 1.0);
        let w = DenseMatrix::filled(1, 1, 0.0);
        let z = DenseMatrix::filled(1, 1, 3.0);
        let u = DenseMatrix::zeros(1, 1);
        let hp = Hyperparams {
            rho: 1.0,
            ..Hyperparams::default()
        };
        // warm start halves 2 → 1
        let step = update_w(&agg, &w, WeightTarget::Output { z: &z, u: &u }, 2.0, &hp, 0, 1).unwrap();
        assert_eq!(step.tau, 1.0);
        assert_eq!(step.w.get(0, 0), 3.0);
        assert!(step.record.holds());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let agg = DenseMatrix::zeros(2, 3);
        let w = DenseMatrix::zeros(2, 1);
        let z = DenseMatrix::zeros(2, 1);
        let hp = Hyperparams::default();
        assert!(matches!(
            update_w(&agg, &w, WeightTarget::Hidden { z: &z }, 1.0, &hp, 0, 1),
            Err(Error::Shape(_))
        ));
    }
}
