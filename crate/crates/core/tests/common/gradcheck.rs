use admm_gcn::admm::output::OutputProblem;
use admm_gcn::admm::{Hyperparams, ModelState, Problem};
use admm_gcn::baselines::{gcn_backward, gcn_forward_cached};
use admm_gcn::dense::DenseMatrix;
use admm_gcn::nn::{self, LabelMask};
use admm_gcn::partition::partition_graph;
use admm_gcn::SparseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub const H: f64 = 1e-5;
pub const KINK: f64 = 1e-4;

#[derive(Debug)]
pub struct GradCheck {
    pub name: &'static str,
    pub worst: f64,
    pub trials: usize,
    pub skipped: usize,
}

fn fd_error(analytic: &DenseMatrix, x: &DenseMatrix, f: impl FnMut(&DenseMatrix) -> f64) -> f64 {
    let numeric = numeric_grad(x, H, f);
    let scale = numeric.frobenius().max(analytic.frobenius()).max(1e-8);
    analytic.sub(&numeric).frobenius() / scale
}

fn rand_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn min_abs(m: &DenseMatrix) -> f64 {
    m.data().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}

fn layer_instance(rng: &mut ChaCha8Rng) -> (SparseMatrix, DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix) {
    let n = rng.gen_range(4..12);
    let (fi, fo) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let a = admm_gcn::normalize_adjacency(&random_graph(n, 0.4, rng));
    let w = rand_matrix(fi, fo, rng);
    let z_prev = rand_matrix(n, fi, rng);
    let z = rand_matrix(n, fo, rng);
    let u = rand_matrix(n, fo, rng);
    (a, w, z_prev, z, u)
}

/// Runs `check` until `trials` of them were not excluded.
fn suite(
    name: &'static str,
    trials: usize,
    seed: u64,
    mut check: impl FnMut(&mut ChaCha8Rng) -> Option<f64>,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut done, mut skipped, mut worst) = (0, 0, 0f64);
    while done < trials {
        match check(&mut rng) {
            Some(e) => {
                worst = worst.max(e);
                done += 1;
            }
            None => skipped += 1,
        }
        assert!(skipped < 100 * trials, "{name}: every trial sits on a kink");
    }
    GradCheck {
        name,
        worst,
        trials,
        skipped,
    }
}

fn phi_hidden_suite(trials: usize) -> GradCheck {
    suite("phi_hidden", trials, 11, |rng| {
        let (a, w, z_prev, z, _) = layer_instance(rng);
        let nu = rng.gen_range(0.1..2.0);
        let pre = naive_matmul(&naive_matmul(&a.to_dense(), &z_prev), &w);
        if min_abs(&pre) < KINK {
            return None;
        }
        let t = nn::phi_hidden(&a, &w, &z_prev, &z, nu).unwrap();
        let value = |w: &DenseMatrix, zp: &DenseMatrix, z: &DenseMatrix| nn::phi_hidden(&a, w, zp, z, nu).unwrap().value;
        Some(
            fd_error(&t.grad_w, &w, |x| value(x, &z_prev, &z))
                .max(fd_error(&t.grad_z_prev, &z_prev, |x| value(&w, x, &z)))
                .max(fd_error(&t.grad_z, &z, |x| value(&w, &z_prev, x))),
        )
    })
}

fn phi_output_suite(trials: usize) -> GradCheck {
    suite("phi_output", trials, 12, |rng| {
        let (a, w, z_prev, z, u) = layer_instance(rng);
        let rho = rng.gen_range(0.1..2.0);
        let t = nn::phi_output(&a, &w, &z_prev, &z, &u, rho).unwrap();
        let value = |w: &DenseMatrix, zp: &DenseMatrix, z: &DenseMatrix| {
            nn::phi_output(&a, w, zp, z, &u, rho).unwrap().value
        };
        Some(
            fd_error(&t.grad_w, &w, |x| value(x, &z_prev, &z))
                .max(fd_error(&t.grad_z_prev, &z_prev, |x| value(&w, x, &z)))
                .max(fd_error(&t.grad_z, &z, |x| value(&w, &z_prev, x))),
        )
    })
}

fn psi_instance(rng: &mut ChaCha8Rng, layers: usize) -> (Problem, ModelState, Hyperparams) {
    let n = rng.gen_range(8..20);
    let data = random_dataset(n, rng.gen_range(2..4), rng.gen_range(2..4), rng);
    let hidden: Vec<usize> = (1..layers).map(|_| rng.gen_range(2..4)).collect();
    let m = rng.gen_range(1..=3);
    let partition = partition_graph(&data.graph, m, rng.gen()).unwrap();
    let p = Problem::new(&data, partition, &hidden).unwrap();
    let s = random_state(&p, rng.gen());
    let hp = Hyperparams {
        nu: rng.gen_range(0.1..2.0),
        rho: rng.gen_range(0.1..2.0),
        hidden,
        ..Hyperparams::default()
    };
    (p, s, hp)
}

/// Message-assembled activation gradient against differences of the
/// monolithic objective, for a hidden (`layers = 3`, l = 1) or the
/// penultimate (`layers = 2`, l = 1) block.
fn psi_suite(name: &'static str, trials: usize, layers: usize, seed: u64) -> GradCheck {
    suite(name, trials, seed, |rng| {
        let (p, s, hp) = psi_instance(rng, layers);
        if kink_margin(&p, &s, 1) < KINK {
            return None;
        }
        let ex = exchange(&p, &s, &hp);
        let mut assembled = DenseMatrix::zeros(p.num_nodes(), p.dims[1]);
        for m in 0..p.num_communities() {
            let rows = ex.agents[m].activation_grad(1).unwrap();
            for (i, &node) in p.partition.members(m).iter().enumerate() {
                assembled.row_mut(node).copy_from_slice(rows.row(i));
            }
        }
        let z = full_z(&p, &s, 1);
        Some(fd_error(&assembled, &z, |x| monolithic_activation_value(&p, &s, &hp, 1, x)))
    })
}

fn output_solve_suite(trials: usize) -> GradCheck {
    suite("z_out objective", trials, 15, |rng| {
        let n = rng.gen_range(3..10);
        let c = rng.gen_range(2..5);
        let center = rand_matrix(n, c, rng);
        let u = rand_matrix(n, c, rng);
        let labels = DenseMatrix::from_fn(n, c, |i, j| if i % c == j { 1.0 } else { 0.0 });
        let train_rows: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let prob = OutputProblem {
            c: &center,
            u: &u,
            labels: &labels,
            train_rows: &train_rows,
            train_total: rng.gen_range(1..20) as f64,
            rho: rng.gen_range(0.01..2.0),
        };
        let z = rand_matrix(n, c, rng);
        Some(fd_error(&prob.gradient(&z), &z, |x| prob.objective(x)))
    })
}

fn cross_entropy_suite(trials: usize) -> GradCheck {
    suite("masked cross-entropy", trials, 13, |rng| {
        let n = rng.gen_range(2..12);
        let c = rng.gen_range(2..6);
        let z = DenseMatrix::from_fn(n, c, |_, _| rng.gen_range(-4.0..4.0));
        let y = DenseMatrix::from_fn(n, c, |i, j| if (i * 7) % c == j { 1.0 } else { 0.0 });
        let ids: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.6)).collect();
        if ids.is_empty() {
            return None;
        }
        let mask = LabelMask::new(ids, n).unwrap();
        let (_, g) = nn::masked_cross_entropy(&z, &y, &mask).unwrap();
        Some(fd_error(&g, &z, |x| nn::masked_cross_entropy(x, &y, &mask).unwrap().0))
    })
}

fn backward_suite(trials: usize) -> GradCheck {
    suite("gcn_backward", trials, 14, |rng| {
        let n = rng.gen_range(5..14);
        let data = random_dataset(n, rng.gen_range(2..4), rng.gen_range(2..4), rng);
        let a = admm_gcn::normalize_adjacency(&data.graph);
        let layers = rng.gen_range(1..4);
        let mut dims = vec![data.features.cols()];
        dims.extend((1..layers).map(|_| rng.gen_range(2..5)));
        dims.push(data.labels.cols());
        let w: Vec<DenseMatrix> = dims.windows(2).map(|d| rand_matrix(d[0], d[1], rng)).collect();
        let cache = gcn_forward_cached(&a, &data.features, &w).unwrap();
        for pre in &cache.pre[..layers - 1] {
            if min_abs(pre) < KINK {
                return None;
            }
        }
        let (_, grads) = gcn_backward(&a, &w, &cache, &data.labels, &data.train_mask).unwrap();
        let mut worst = 0f64;
        for l in 0..layers {
            let e = fd_error(&grads[l], &w[l], |x| {
                let mut ws = w.clone();
                ws[l] = x.clone();
                let cache = gcn_forward_cached(&a, &data.features, &ws).unwrap();
                nn::masked_cross_entropy(cache.logits(), &data.labels, &data.train_mask).unwrap().0
            });
            worst = worst.max(e);
        }
        Some(worst)
    })
}

pub fn gradient_suite(trials: usize) -> Vec<GradCheck> {
    vec![
        phi_hidden_suite(trials),
        phi_output_suite(trials),
        psi_suite("psi hidden", trials, 3, 16),
        psi_suite("psi penultimate", trials, 2, 17),
        output_solve_suite(trials),
        cross_entropy_suite(trials),
        backward_suite(trials),
    ]
}
