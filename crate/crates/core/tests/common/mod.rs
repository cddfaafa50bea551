#![allow(dead_code)]

use admm_gcn::admm::{Hyperparams, ModelState, Problem};
use admm_gcn::data::{generate_sbm, Dataset, SbmSpec};
use admm_gcn::dense::DenseMatrix;
use admm_gcn::nn::{self, LabelMask};
use admm_gcn::partition::{partition_graph, Partition};
use admm_gcn::runtime::agent::CommunityAgent;
use admm_gcn::runtime::{Message, MessageKind};
use admm_gcn::seed;
use admm_gcn::{Graph, SparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradcheck;

pub fn sbm(blocks: usize, per_block: usize, seed: u64) -> Dataset {
    generate_sbm(&SbmSpec {
        communities: blocks,
        nodes_per_community: per_block,
        p_in: 0.3,
        p_out: 0.03,
        feature_dim: 8,
        signal: 2.0,
        train_per_community: 4,
        seed,
    })
    .unwrap()
}

pub fn split(dataset: &Dataset, m: usize, seed: u64) -> Partition {
    if m == 1 {
        Partition::single(&dataset.graph)
    } else {
        partition_graph(&dataset.graph, m, seed).unwrap()
    }
}

pub fn problem(dataset: &Dataset, m: usize, hidden: &[usize]) -> Problem {
    Problem::new(dataset, split(dataset, m, 3), hidden).unwrap()
}

pub fn initial_state(problem: &Problem, seed_value: u64) -> ModelState {
    let mut rng = seed::stream(seed_value, seed::INIT);
    ModelState::initialize(problem, &mut rng).unwrap()
}

/// A state with random activations and multipliers (not forward-consistent).
pub fn random_state(problem: &Problem, seed_value: u64) -> ModelState {
    let mut state = initial_state(problem, seed_value);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value ^ 0x5eed);
    let full: Vec<DenseMatrix> = (1..=problem.layers())
        .map(|l| DenseMatrix::from_fn(problem.num_nodes(), problem.dims[l], |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let u = DenseMatrix::from_fn(problem.num_nodes(), problem.dims[problem.layers()], |_, _| {
        rng.gen_range(-0.5..0.5)
    });
    for (l, z) in full.iter().enumerate() {
        state.z[l] = problem.split(z);
    }
    state.u = problem.split(&u);
    state
}

/// Random symmetric graph with `n` nodes.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub fn random_dataset(n: usize, features: usize, classes: usize, rng: &mut impl Rng) -> Dataset {
    let graph = random_graph(n, 0.15, rng);
    let labels_idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let features = DenseMatrix::from_fn(n, features, |_, _| rng.gen_range(-1.0..1.0));
    let labels = DenseMatrix::from_fn(n, classes, |i, c| if labels_idx[i] == c { 1.0 } else { 0.0 });
    let train: Vec<usize> = (0..n).filter(|i| i % 3 == 0).collect();
    let test: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
    Dataset {
        graph,
        features,
        labels,
        train_mask: LabelMask::new(train, n).unwrap(),
        test_mask: LabelMask::new(test, n).unwrap(),
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &DenseMatrix, h: f64, mut f: impl FnMut(&DenseMatrix) -> f64) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = x.get(i, j);
            probe.set(i, j, orig + h);
            let up = f(&probe);
            probe.set(i, j, orig - h);
            let down = f(&probe);
            probe.set(i, j, orig);
            g.set(i, j, (up - down) / (2.0 * h));
        }
    }
    g
}

/// A random graph of at most 60 nodes split into a random number of
/// communities from `communities`, with random activations and multipliers.
pub fn random_instance(seed: u64, communities: std::ops::RangeInclusive<usize>) -> (Problem, ModelState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(12..=60);
    let data = random_dataset(n, rng.gen_range(2..6), rng.gen_range(2..4), &mut rng);
    let m = rng.gen_range(communities);
    let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..6)).collect();
    let partition = partition_graph(&data.graph, m, seed).unwrap();
    let p = Problem::new(&data, partition, &hidden).unwrap();
    let s = random_state(&p, seed);
    (p, s)
}

pub fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    admm_gcn::dense::relative_error(a, b)
}

/// Monolithic, unpartitioned re-derivation of one outer iteration,
/// written directly from the node-level formulas.
pub struct Reference<'a> {
    pub a: &'a SparseMatrix,
    pub x: &'a DenseMatrix,
    pub y: &'a DenseMatrix,
    pub train: &'a [usize],
    pub hp: &'a Hyperparams,
}

pub struct RefState {
    pub w: Vec<DenseMatrix>,
    pub z: Vec<DenseMatrix>,
    pub u: DenseMatrix,
    pub tau: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Reference<'_> {
    fn z_prev<'b>(&'b self, s: &'b RefState, l: usize) -> &'b DenseMatrix {
        if l == 0 {
            self.x
        } else {
            &s.z[l - 1]
        }
    }

    fn phi(&self, s: &RefState, l: usize, w: &DenseMatrix, z_prev: &DenseMatrix, z: &DenseMatrix) -> nn::PhiTerms {
        let layers = s.w.len();
        if l == layers {
            nn::phi_output(self.a, w, z_prev, z, &s.u, self.hp.rho).unwrap()
        } else {
            nn::phi_hidden(self.a, w, z_prev, z, self.hp.nu).unwrap()
        }
    }

    fn backtrack(&self, prev: f64, start: f64, grad: &DenseMatrix, x: &DenseMatrix, f: impl Fn(&DenseMatrix) -> f64) -> (DenseMatrix, f64) {
        let mut step = (prev / self.hp.growth).max(self.hp.step_min);
        let gsq = grad.frobenius_sq();
        loop {
            let cand = x.sub(&grad.scaled(1.0 / step));
            let value = f(&cand);
            let bound = start - gsq / (2.0 * step);
            let scale = 1f64.max(bound.abs()).max(value.abs());
            if value <= bound + 1e-12 * scale {
                return (cand, step);
            }
            step *= self.hp.growth;
            assert!(step < 1e12, "reference diverged");
        }
    }

    pub fn iterate(&self, s: &RefState) -> RefState {
        let layers = s.w.len();
        let n_train = self.train.len() as f64;
        // W phase with iteration-k Z, U
        let mut w_new = Vec::new();
        let mut tau = Vec::new();
        for l in 1..=layers {
            let z_prev = self.z_prev(s, l - 1);
            let z = &s.z[l - 1];
            let t = self.phi(s, l, &s.w[l - 1], z_prev, z);
            let (w, step) = self.backtrack(s.tau[l - 1], t.value, &t.grad_w, &s.w[l - 1], |cand| {
                self.phi(s, l, cand, z_prev, z).value
            });
            w_new.push(w);
            tau.push(step);
        }
        // Z phase for hidden layers (Jacobi, with W^{k+1})
        let mut with_new_w = RefState {
            w: w_new.clone(),
            z: s.z.clone(),
            u: s.u.clone(),
            tau: vec![],
            theta: vec![],
        };
        let mut z_new = Vec::new();
        let mut theta = Vec::new();
        for l in 1..layers {
            let psi = |zl: &DenseMatrix| -> (f64, DenseMatrix) {
                let own = self.phi(&with_new_w, l, &w_new[l - 1], self.z_prev(s, l - 1), zl);
                let next = self.phi(&with_new_w, l + 1, &w_new[l], zl, &s.z[l]);
                (own.value + next.value, own.grad_z.add(&next.grad_z_prev))
            };
            let (start, grad) = psi(&s.z[l - 1]);
            let (z, step) = self.backtrack(s.theta[l - 1], start, &grad, &s.z[l - 1], |c| psi(c).0);
            z_new.push(z);
            theta.push(step);
        }
        // output layer: accelerated gradient with row-wise steps
        let c = self.a.spmm(self.z_prev(s, layers - 1)).unwrap().matmul(&w_new[layers - 1]);
        let grad = |z: &DenseMatrix| -> DenseMatrix {
            let (_, mut g) = nn::cross_entropy_rows(z, self.y, self.train, n_train);
            for i in 0..z.rows() {
                for j in 0..z.cols() {
                    let v = g.get(i, j) + s.u.get(i, j) + self.hp.rho * (z.get(i, j) - c.get(i, j));
                    g.set(i, j, v);
                }
            }
            g
        };
        let mut x_prev = s.z[layers - 1].clone();
        let mut y = x_prev.clone();
        let mut t = 1.0f64;
        for _ in 0..self.hp.fista_iters {
            let g = grad(&y);
            let mut x = y.clone();
            for i in 0..x.rows() {
                let lip = if self.train.contains(&i) {
                    self.hp.rho + 0.5 / n_train
                } else {
                    self.hp.rho
                };
                for j in 0..x.cols() {
                    x.set(i, j, y.get(i, j) - g.get(i, j) / lip);
                }
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = x.add(&x.sub(&x_prev).scaled((t - 1.0) / t_next));
            x_prev = x;
            t = t_next;
        }
        z_new.push(x_prev);
        let u = s.u.add(&z_new[layers - 1].sub(&c).scaled(self.hp.rho));
        with_new_w.z = z_new;
        with_new_w.u = u;
        with_new_w.tau = tau;
        with_new_w.theta = theta;
        with_new_w
    }
}

/// Plain triple-loop product, kept apart from the library kernels.
pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

pub fn dense_block(a: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| a.get(rows[i], cols[j]))
}

/// `Z_l`, with layer 0 the features.
pub fn full_z(problem: &Problem, state: &ModelState, l: usize) -> DenseMatrix {
    if l == 0 {
        problem.features.clone()
    } else {
        problem.stack(&state.z[l - 1])
    }
}

/// Every agent after the report, weight, first-order, second-order and
/// gradient supersteps, with the routed messages kept for inspection.
pub struct Exchange {
    pub agents: Vec<CommunityAgent>,
    pub first: Vec<Message>,
    pub second: Vec<Message>,
}

pub fn exchange(problem: &Problem, state: &ModelState, hp: &Hyperparams) -> Exchange {
    let comms = problem.num_communities();
    let mut agents: Vec<CommunityAgent> = (0..comms).map(|m| CommunityAgent::new(m, comms)).collect();
    for agent in &mut agents {
        for (l, w) in state.w.iter().enumerate() {
            agent
                .inbox
                .insert(MessageKind::WeightBroadcast, l + 1, comms, vec![w.clone()])
                .unwrap();
        }
    }
    let mut first = Vec::new();
    for agent in &mut agents {
        first.extend(agent.first_order(problem, state).unwrap());
    }
    for msg in &first {
        agents[msg.dst].inbox.put(msg.clone()).unwrap();
    }
    let mut second = Vec::new();
    for agent in &mut agents {
        second.extend(agent.second_order(problem, state).unwrap());
    }
    for msg in &second {
        agents[msg.dst].inbox.put(msg.clone()).unwrap();
    }
    for agent in &mut agents {
        agent.gradient(problem, state, hp).unwrap();
    }
    Exchange { agents, first, second }
}

/// Worst relative error of the first-order sums and of every second-order
/// payload against direct products of the dense normalized adjacency.
pub fn message_errors(problem: &Problem, state: &ModelState, ex: &Exchange) -> (f64, f64) {
    let a = problem.a_hat.to_dense();
    let layers = state.layers();
    let comms = problem.num_communities();
    let members = |m: usize| problem.partition.members(m);
    let mut first_err = 0f64;
    for l in 0..layers {
        let zw = naive_matmul(&full_z(problem, state, l), &state.w[l]);
        let full = naive_matmul(&a, &zw);
        for m in 0..comms {
            let expect = full.select_rows(members(m));
            let mut got = ex.agents[m]
                .inbox
                .get(MessageKind::FirstOrder, l, m)
                .unwrap()[0]
                .clone();
            for msg in ex.first.iter().filter(|x| x.dst == m && x.layer == l) {
                got.add_assign(&msg.payload[0]);
            }
            first_err = first_err.max(rel(&got, &expect));
        }
    }
    let mut second_err = 0f64;
    for msg in &ex.second {
        let (r, m, l) = (msg.src, msg.dst, msg.layer);
        let zw = naive_matmul(&full_z(problem, state, l), &state.w[l]);
        // Σ over r' linked to r except m of Ã_{r,r'} Z_{l,r'} W_{l+1}
        let mut sum = naive_matmul(&a, &zw).select_rows(members(r));
        let missing = naive_matmul(&dense_block(&a, members(r), members(m)), &zw.select_rows(members(m)));
        sum.sub_assign(&missing);
        let expect = if l + 1 < layers {
            vec![state.z[l][r].clone(), sum]
        } else {
            vec![state.z[l][r].sub(&sum), state.u[r].clone()]
        };
        assert_eq!(msg.payload.len(), 2);
        for (g, e) in msg.payload.iter().zip(&expect) {
            second_err = second_err.max(rel(g, e));
        }
    }
    (first_err, second_err)
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Gradient of the joint layer-`l` activation objective with respect to
/// the full `Z_l`, from the node-level formula.
pub fn monolithic_activation_grad(problem: &Problem, state: &ModelState, hp: &Hyperparams, l: usize) -> DenseMatrix {
    let a = problem.a_hat.to_dense();
    let layers = state.layers();
    let z_prev = full_z(problem, state, l - 1);
    let z = full_z(problem, state, l);
    let pre = naive_matmul(&naive_matmul(&a, &z_prev), &state.w[l - 1]);
    let mut g = z.zip_map(&pre, |zv, p| hp.nu * (zv - relu(p)));
    let next = naive_matmul(&naive_matmul(&a, &z), &state.w[l]);
    let z_next = full_z(problem, state, l + 1);
    let outer = if l + 1 < layers {
        DenseMatrix::from_fn(z.rows(), next.cols(), |i, j| {
            let p = next.get(i, j);
            if p > 0.0 {
                -hp.nu * (z_next.get(i, j) - p)
            } else {
                0.0
            }
        })
    } else {
        let u = problem.stack(&state.u);
        DenseMatrix::from_fn(z.rows(), next.cols(), |i, j| {
            -(u.get(i, j) + hp.rho * (z_next.get(i, j) - next.get(i, j)))
        })
    };
    let back = naive_matmul(&naive_matmul(&a.transpose(), &outer), &state.w[l].transpose());
    g.add_assign(&back);
    g
}

/// The joint layer-`l` activation objective as a function of the full `Z_l`.
pub fn monolithic_activation_value(problem: &Problem, state: &ModelState, hp: &Hyperparams, l: usize, z: &DenseMatrix) -> f64 {
    let a = problem.a_hat.to_dense();
    let layers = state.layers();
    let z_prev = full_z(problem, state, l - 1);
    let pre = naive_matmul(&naive_matmul(&a, &z_prev), &state.w[l - 1]);
    let own: f64 = z.data().iter().zip(pre.data()).map(|(zv, p)| (zv - relu(*p)).powi(2)).sum();
    let next = naive_matmul(&naive_matmul(&a, z), &state.w[l]);
    let z_next = full_z(problem, state, l + 1);
    let down = if l + 1 < layers {
        let s: f64 = z_next.data().iter().zip(next.data()).map(|(t, p)| (t - relu(*p)).powi(2)).sum();
        hp.nu / 2.0 * s
    } else {
        let u = problem.stack(&state.u);
        let r = z_next.sub(&next);
        u.inner(&r) + hp.rho / 2.0 * r.frobenius_sq()
    };
    hp.nu / 2.0 * own + down
}

/// Smallest distance from zero of the ReLU inputs that depend on `Z_l`.
pub fn kink_margin(problem: &Problem, state: &ModelState, l: usize) -> f64 {
    if l + 1 == state.layers() {
        return f64::INFINITY;
    }
    let a = problem.a_hat.to_dense();
    let pre = naive_matmul(&naive_matmul(&a, &full_z(problem, state, l)), &state.w[l]);
    pre.data().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}
