//! Community-based ADMM for GCN training: problem decomposition, model
//! state, the augmented Lagrangian and the block updates.

pub mod lagrangian;
pub mod ledger;
pub mod output;
pub mod problem;
pub mod state;
pub mod weights;
pub mod zstep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lagrangian::{augmented_lagrangian, primal_residual};
pub use ledger::{MajorizationRecord, Phase};
pub use problem::{Community, Problem};
pub use state::{ModelState, StackedState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the hidden-layer reconstruction penalties.
    pub nu: f64,
    /// Augmented-Lagrangian penalty.
    pub rho: f64,
    /// Hidden widths `C_1..C_{L-1}`; the layer count is `hidden.len() + 1`.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub fista_iters: usize,
    /// Factor by which τ and θ grow while backtracking and shrink on warm start.
    pub growth: f64,
    pub step_min: f64,
    pub step_limit: f64,
    /// Stop early once the primal residual norm drops below this.
    pub residual_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            nu: 1e-3,
            rho: 1e-3,
            hidden: vec![16],
            epochs: 50,
            fista_iters: 10,
            growth: 2.0,
            step_min: 1e-6,
            step_limit: 1e12,
            residual_tol: 1e-6,
        }
    }
}

impl Hyperparams {
    pub fn layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("nu", self.nu)?;
        positive("rho", self.rho)?;
        positive("step_min", self.step_min)?;
        if !(self.growth > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "growth factor must exceed 1, got {}",
                self.growth
            )));
        }
        if !(self.step_limit > self.step_min) {
            return Err(Error::InvalidConfig("step_limit must exceed step_min".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.fista_iters == 0 {
            return Err(Error::InvalidConfig("fista_iters must be at least 1".into()));
        }
        Ok(())
    }
}
