//! The output-layer activation solve and the multiplier update.

use crate::dense::DenseMatrix;
use crate::nn;

/// Data of one community's output subproblem
/// `R_m(Z) + ⟨U, Z − c⟩ + (ρ/2)‖Z − c‖²`.
#[derive(Clone, Copy, Debug)]
pub struct OutputProblem<'a> {
    /// `c_m = Σ_r p_{L-1,r→m}`.
    pub c: &'a DenseMatrix,
    pub u: &'a DenseMatrix,
    pub labels: &'a DenseMatrix,
    pub train_rows: &'a [usize],
    /// Normalizer of the risk (the global training count).
    pub train_total: f64,
    pub rho: f64,
}

impl OutputProblem<'_> {
    pub fn objective(&self, z: &DenseMatrix) -> f64 {
        let (risk, _) = nn::cross_entropy_rows(z, self.labels, self.train_rows, self.train_total);
        let mut rest = 0.0;
        for ((zv, cv), uv) in z.data().iter().zip(self.c.data()).zip(self.u.data()) {
            let r = zv - cv;
            rest += uv * r + 0.5 * self.rho * r * r;
        }
        risk + rest
    }

    pub fn gradient(&self, z: &DenseMatrix) -> DenseMatrix {
        let (_, mut g) = nn::cross_entropy_rows(z, self.labels, self.train_rows, self.train_total);
        for (((gv, zv), cv), uv) in g
            .data_mut()
            .iter_mut()
            .zip(z.data())
            .zip(self.c.data())
            .zip(self.u.data())
        {
            *gv += uv + self.rho * (zv - cv);
        }
        g
    }

    /// Per-row step sizes: `1/(ρ + 1/(2N))` on labelled rows, where the
    /// softmax Hessian is bounded by 1/2, and `1/ρ` elsewhere.
    fn row_steps(&self) -> Vec<f64> {
        let mut steps = vec![1.0 / self.rho; self.c.rows()];
        let labelled = 1.0 / (self.rho + 0.5 / self.train_total);
        for &i in self.train_rows {
            steps[i] = labelled;
        }
        steps
    }

    /// Accelerated gradient iterations from `start`. The objective has no
    /// nonsmooth part, so the proximal map is the identity.
    pub fn solve(&self, start: &DenseMatrix, iters: usize) -> DenseMatrix {
        let steps = self.row_steps();
        let mut x_prev = start.clone();
        let mut y = start.clone();
        let mut t: f64 = 1.0;
        for _ in 0..iters {
            let g = self.gradient(&y);
            let mut x = y.clone();
            for (i, &s) in steps.iter().enumerate() {
                for (xv, gv) in x.row_mut(i).iter_mut().zip(g.row(i)) {
                    *xv -= s * gv;
                }
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            y = x.zip_map(&x_prev, |a, b| a + beta * (a - b));
            x_prev = x;
            t = t_next;
        }
        x_prev
    }
}

/// `U + ρ(Z_L − c)`.
pub fn update_u(u: &DenseMatrix, z_out: &DenseMatrix, c: &DenseMatrix, rho: f64) -> DenseMatrix {
    let mut out = u.clone();
    for ((o, zv), cv) in out.data_mut().iter_mut().zip(z_out.data()).zip(c.data()) {
        *o += rho * (zv - cv);
    }
    out
}

/// Largest entrywise deviation of `U_new − U_old` from `ρ·(Z_L − c)`,
/// in units of the rounding error of one addition.
pub fn dual_identity_deviation(
    u_old: &DenseMatrix,
    u_new: &DenseMatrix,
    z_out: &DenseMatrix,
    c: &DenseMatrix,
    rho: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (((&a, &b), &zv), &cv) in u_old
        .data()
        .iter()
        .zip(u_new.data())
        .zip(z_out.data())
        .zip(c.data())
    {
        let step = rho * (zv - cv);
        let ulp = f64::EPSILON * a.abs().max(b.abs()).max(step.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(((b - a) - step).abs() / ulp);
    }
    worst
}
