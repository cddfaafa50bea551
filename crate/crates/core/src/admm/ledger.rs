//! Records of every accepted backtracking step.

use serde::Serialize;

use crate::admm::Hyperparams;
use crate::error::{Error, Result};

/// Relative rounding allowance when comparing a surrogate with the
/// objective it must bound.
pub const ROUNDING_SLACK: f64 = 1e-12;

pub fn majorizes(surrogate: f64, objective: f64) -> bool {
    let scale = 1f64.max(surrogate.abs()).max(objective.abs());
    surrogate >= objective - ROUNDING_SLACK * scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Phase {
    /// Weight step, `P_l(W^{k+1}; τ) ≥ φ(W^{k+1})`.
    Weight,
    /// Activation step over the whole layer, `Q_l(Z^{k+1}; θ) ≥ ψ_l(Z^{k+1})`.
    Activation,
    /// The same inequality restricted to one community with its
    /// neighbours held at iteration k.
    Community(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MajorizationRecord {
    pub k: usize,
    pub phase: Phase,
    pub layer: usize,
    /// Accepted τ or θ.
    pub step: f64,
    /// Surrogate value at the accepted point.
    pub surrogate: f64,
    /// True objective at the accepted point.
    pub objective: f64,
    /// Objective at the starting point.
    pub start: f64,
    pub trials: usize,
}

impl MajorizationRecord {
    pub fn holds(&self) -> bool {
        majorizes(self.surrogate, self.objective)
    }
}

/// Warm-started backtracking on a quadratic surrogate
/// `f(x) − ‖g‖²/(2s)` evaluated at `x − g/s`. The step parameter starts
/// at `max(prev/growth, step_min)` and grows until the surrogate bounds
/// the objective.
#[derive(Clone, Debug)]
pub struct Backtracker {
    step: f64,
    start: f64,
    grad_sq: f64,
    trials: usize,
    growth: f64,
    limit: f64,
}

impl Backtracker {
    pub fn new(prev: f64, start: f64, grad_sq: f64, hp: &Hyperparams) -> Self {
        Self {
            step: (prev / hp.growth).max(hp.step_min),
            start,
            grad_sq,
            trials: 0,
            growth: hp.growth,
            limit: hp.step_limit,
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn surrogate(&self) -> f64 {
        self.start - self.grad_sq / (2.0 * self.step)
    }

    /// Reports the objective at the current candidate. Returns the record
    /// fields when accepted, grows the step otherwise.
    pub fn offer(
        &mut self,
        objective: f64,
        k: usize,
        phase: Phase,
        layer: usize,
    ) -> Result<Option<MajorizationRecord>> {
        self.trials += 1;
        let surrogate = self.surrogate();
        if objective.is_finite() && majorizes(surrogate, objective) {
            return Ok(Some(MajorizationRecord {
                k,
                phase,
                layer,
                step: self.step,
                surrogate,
                objective,
                start: self.start,
                trials: self.trials,
            }));
        }
        self.step *= self.growth;
        if self.step > self.limit {
            let what = match phase {
                Phase::Weight => format!("tau_{layer}"),
                _ => format!("theta_{layer}"),
            };
            return Err(Error::Divergence {
                what,
                limit: self.limit,
            });
        }
        Ok(None)
    }
}
