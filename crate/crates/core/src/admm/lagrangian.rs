//! The augmented Lagrangian of the community-split problem.

use serde::Serialize;

use crate::admm::problem::Problem;
use crate::admm::state::ModelState;
use crate::admm::Hyperparams;
use crate::dense::DenseMatrix;
use crate::error::Result;
use crate::nn;

/// The Lagrangian broken into its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LagrangianTerms {
    pub risk: f64,
    /// `(ν/2) Σ ‖Z_l − relu(ÃZ_{l-1}W_l)‖²` over hidden layers.
    pub penalty: f64,
    /// `Σ ⟨U_m, residual_m⟩`.
    pub dual: f64,
    /// `(ρ/2) Σ ‖residual_m‖²`.
    pub quadratic: f64,
}

impl LagrangianTerms {
    pub fn total(&self) -> f64 {
        self.risk + self.penalty + self.dual + self.quadratic
    }
}

/// Community `m`'s share of the risk: cross-entropy summed over its
/// training rows, divided by the global training count.
pub fn community_risk(problem: &Problem, m: usize, z_out: &DenseMatrix) -> (f64, DenseMatrix) {
    let c = &problem.communities[m];
    nn::cross_entropy_rows(z_out, &c.labels, &c.train_rows, problem.train_total())
}

/// `Σ_{r∈N_m∪{m}} Ã_{m,r} Z_{l-1,r} W_l` for every community.
fn preactivations(problem: &Problem, state: &ModelState, l: usize) -> Vec<DenseMatrix> {
    let products: Vec<DenseMatrix> = (0..problem.num_communities())
        .map(|r| state.z_block(problem, l - 1, r).matmul(&state.w[l - 1]))
        .collect();
    (0..problem.num_communities())
        .map(|m| problem.block_aggregate(m, &products))
        .collect()
}

pub fn lagrangian_terms(problem: &Problem, state: &ModelState, hp: &Hyperparams) -> Result<LagrangianTerms> {
    state.validate(problem)?;
    let layers = state.layers();
    let mut t = LagrangianTerms::default();
    for l in 1..layers {
        for (m, pre) in preactivations(problem, state, l).iter().enumerate() {
            let z = &state.z[l - 1][m];
            let r: f64 = z
                .data()
                .iter()
                .zip(pre.data())
                .map(|(zv, pv)| (zv - pv.max(0.0)).powi(2))
                .sum();
            t.penalty += 0.5 * hp.nu * r;
        }
    }
    for (m, pre) in preactivations(problem, state, layers).iter().enumerate() {
        let z = &state.z[layers - 1][m];
        t.risk += community_risk(problem, m, z).0;
        let res = z.sub(pre);
        t.dual += state.u[m].inner(&res);
        t.quadratic += 0.5 * hp.rho * res.frobenius_sq();
    }
    Ok(t)
}

pub fn augmented_lagrangian(problem: &Problem, state: &ModelState, hp: &Hyperparams) -> Result<f64> {
    Ok(lagrangian_terms(problem, state, hp)?.total())
}

/// `‖Z_L − ÃZ_{L-1}W_L‖_F` over all communities.
pub fn primal_residual(problem: &Problem, state: &ModelState) -> Result<f64> {
    state.validate(problem)?;
    let layers = state.layers();
    let sq: f64 = preactivations(problem, state, layers)
        .iter()
        .enumerate()
        .map(|(m, pre)| state.z[layers - 1][m].sub(pre).frobenius_sq())
        .sum();
    Ok(sq.sqrt())
}
