//! Community agents and the weight agent. Every method here is one
//! superstep: it reads the iteration-k state and the agent's inbox and
//! returns outgoing messages plus values for the coordinator.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::admm::ledger::MajorizationRecord;
use crate::admm::output::{dual_identity_deviation, update_u, OutputProblem};
use crate::admm::problem::{Community, Problem};
use crate::admm::state::ModelState;
use crate::admm::weights::{update_w, WeightStep, WeightTarget};
use crate::admm::zstep::{activation_gradient, own_value, sum_except, Downstream};
use crate::admm::Hyperparams;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::runtime::message::{build_first_order, build_second_order, Inbox, Message, MessageKind};
use crate::runtime::AgentClock;

/// What one agent contributes to the line search of layer `l`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LayerShare {
    /// Its share of the layer objective at iteration k.
    pub start: f64,
    pub grad_sq: f64,
    /// The community-local objective (neighbours fixed) at iteration k.
    pub local_start: f64,
}

/// Objective values at a trial point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrialShare {
    pub joint: f64,
    pub local: f64,
}

#[derive(Clone, Debug)]
struct LayerScratch {
    pre: DenseMatrix,
    own: Downstream,
    neighbors: BTreeMap<usize, Downstream>,
    grad: DenseMatrix,
    trial: Option<Trial>,
}

#[derive(Clone, Debug)]
struct Trial {
    z: DenseMatrix,
    own: f64,
    local: f64,
}

#[derive(Clone, Debug)]
pub struct CommunityAgent {
    pub id: usize,
    pub inbox: Inbox,
    pub clock: AgentClock,
    weight_agent: usize,
    w: Vec<DenseMatrix>,
    /// `sent[l][r] = p_{l,m→r}`, including `r = m`.
    sent: Vec<BTreeMap<usize, DenseMatrix>>,
    layers: Vec<Option<LayerScratch>>,
    c: Option<DenseMatrix>,
    z_out: Option<DenseMatrix>,
}

impl CommunityAgent {
    pub fn new(id: usize, weight_agent: usize) -> Self {
        Self {
            id,
            inbox: Inbox::new(id),
            clock: AgentClock::default(),
            weight_agent,
            w: Vec::new(),
            sent: Vec::new(),
            layers: Vec::new(),
            c: None,
            z_out: None,
        }
    }

    fn community<'a>(&self, problem: &'a Problem) -> &'a Community {
        &problem.communities[self.id]
    }

    /// `Z_{l,m}` for l = 1..L-1 and `[Z_{L,m}, U_m]` to the weight agent.
    pub fn report(&mut self, state: &ModelState) -> Result<Vec<Message>> {
        let layers = state.layers();
        let mut out = Vec::with_capacity(layers);
        for l in 1..layers {
            out.push(Message::new(
                MessageKind::ZReport,
                self.id,
                self.weight_agent,
                l,
                vec![state.z[l - 1][self.id].clone()],
            ));
        }
        out.push(Message::new(
            MessageKind::ZReport,
            self.id,
            self.weight_agent,
            layers,
            vec![state.z[layers - 1][self.id].clone(), state.u[self.id].clone()],
        ));
        Ok(out)
    }

    /// Takes the broadcast weights and sends `p_{l,m→r}` for l = 0..L-1
    /// to every neighbour.
    pub fn first_order(&mut self, problem: &Problem, state: &ModelState) -> Result<Vec<Message>> {
        let layers = state.layers();
        self.w = (1..=layers)
            .map(|l| {
                let mut p = self.inbox.take(MessageKind::WeightBroadcast, l, self.weight_agent)?;
                Ok(p.swap_remove(0))
            })
            .collect::<Result<_>>()?;
        self.inbox.clear(MessageKind::FirstOrder);
        self.inbox.clear(MessageKind::SecondOrder);
        self.inbox.clear(MessageKind::Probe);
        let community = self.community(problem);
        let mut out = Vec::new();
        let mut sent = Vec::with_capacity(layers);
        for l in 0..layers {
            let product = state.z_block(problem, l, self.id).matmul(&self.w[l]);
            let mut row = BTreeMap::new();
            for &r in &community.linked {
                let p = if r == self.id {
                    let p = community.out_block(r)?.spmm(&product)?;
                    self.inbox.insert(MessageKind::FirstOrder, l, r, vec![p.clone()])?;
                    p
                } else {
                    let msg = build_first_order(community, l, r, &product)?;
                    let p = msg.payload[0].clone();
                    out.push(msg);
                    p
                };
                row.insert(r, p);
            }
            sent.push(row);
        }
        self.sent = sent;
        Ok(out)
    }

    /// Forwards aggregated first-order information for l = 1..L-1.
    pub fn second_order(&mut self, problem: &Problem, state: &ModelState) -> Result<Vec<Message>> {
        let layers = state.layers();
        let community = self.community(problem);
        let mut out = Vec::new();
        for l in 1..layers {
            let received = self.inbox.collect(MessageKind::FirstOrder, l, &community.linked)?;
            for &dst in &community.neighbors {
                out.push(build_second_order(
                    community,
                    l,
                    layers,
                    dst,
                    &state.z[l][self.id],
                    &state.u[self.id],
                    &received,
                )?);
            }
        }
        Ok(out)
    }

    /// Gradients of every hidden-layer activation block and the output
    /// solve. Returns one share per layer 1..L-1.
    pub fn gradient(&mut self, problem: &Problem, state: &ModelState, hp: &Hyperparams) -> Result<Vec<LayerShare>> {
        let layers = state.layers();
        let m = self.id;
        let community = self.community(problem);
        let mut shares = Vec::with_capacity(layers.saturating_sub(1));
        self.layers = Vec::with_capacity(layers.saturating_sub(1));
        for l in 1..layers {
            let below = self.inbox.collect(MessageKind::FirstOrder, l - 1, &community.linked)?;
            let pre = sum_except(&below, None).expect("a community is linked to itself");
            let here = self.inbox.collect(MessageKind::FirstOrder, l, &community.linked)?;
            let x = sum_except(&here, None).expect("a community is linked to itself");
            let base = sum_except(&here, Some(m));
            let own = if l + 1 < layers {
                Downstream::hidden(state.z[l][m].clone(), base)
            } else {
                Downstream::output(state.z[l][m].clone(), state.u[m].clone(), base)
            };
            let (next_value, own_dir) = own.value_and_dir(&x, hp);
            let mut dirs = BTreeMap::new();
            dirs.insert(m, own_dir);
            let mut neighbors = BTreeMap::new();
            let mut neighbor_value = 0.0;
            for &r in &community.neighbors {
                let s = self.inbox.get(MessageKind::SecondOrder, l, r)?;
                if s.len() != 2 {
                    return Err(Error::ProtocolViolation(format!(
                        "second-order message {r}→{m} at layer {l} has {} blocks",
                        s.len()
                    )));
                }
                let ds = if l + 1 < layers {
                    Downstream::hidden(s[0].clone(), Some(s[1].clone()))
                } else {
                    Downstream::output(s[0].clone(), s[1].clone(), None)
                };
                let xr = ds.preactivation(&self.sent[l][&r]);
                let (v, dir) = ds.value_and_dir(&xr, hp);
                neighbor_value += v;
                dirs.insert(r, dir);
                neighbors.insert(r, ds);
            }
            let z = &state.z[l - 1][m];
            let own_v = own_value(z, &pre, hp.nu);
            let grad = activation_gradient(community, z, &pre, &dirs, &self.w[l], hp.nu)?;
            let local_self = own.value(&own.preactivation(&self.sent[l][&m]), hp);
            shares.push(LayerShare {
                start: own_v + next_value,
                grad_sq: grad.frobenius_sq(),
                local_start: own_v + local_self + neighbor_value,
            });
            self.layers.push(Some(LayerScratch {
                pre,
                own,
                neighbors,
                grad,
                trial: None,
            }));
        }

        let top = self.inbox.collect(MessageKind::FirstOrder, layers - 1, &community.linked)?;
        let c = sum_except(&top, None).expect("a community is linked to itself");
        let solve = OutputProblem {
            c: &c,
            u: &state.u[m],
            labels: &community.labels,
            train_rows: &community.train_rows,
            train_total: problem.train_total(),
            rho: hp.rho,
        };
        self.z_out = Some(solve.solve(&state.z[layers - 1][m], hp.fista_iters));
        self.c = Some(c);
        Ok(shares)
    }

    /// The assembled gradient of the layer-`l` activation block, once
    /// the gradient superstep has run.
    pub fn activation_grad(&self, l: usize) -> Option<&DenseMatrix> {
        self.layers.get(l.checked_sub(1)?)?.as_ref().map(|s| &s.grad)
    }

    /// Builds trial points `Z − ∇/θ_l` for every layer with a step and
    /// sends their first-order products.
    pub fn probe(&mut self, problem: &Problem, state: &ModelState, hp: &Hyperparams, steps: &[Option<f64>]) -> Result<Vec<Message>> {
        self.inbox.clear(MessageKind::Probe);
        let m = self.id;
        let community = &problem.communities[m];
        let mut out = Vec::new();
        for (i, step) in steps.iter().enumerate() {
            let Some(theta) = *step else { continue };
            let l = i + 1;
            let scratch = self.layers[i]
                .as_mut()
                .ok_or_else(|| Error::ProtocolViolation(format!("no gradient for layer {l}")))?;
            let mut z = state.z[l - 1][m].clone();
            z.axpy(-1.0 / theta, &scratch.grad);
            let product = z.matmul(&self.w[l]);
            let own = own_value(&z, &scratch.pre, hp.nu);
            let mut local = own;
            for &r in &community.linked {
                let p = community.out_block(r)?.spmm(&product)?;
                let ds = if r == m { &scratch.own } else { &scratch.neighbors[&r] };
                local += ds.value(&ds.preactivation(&p), hp);
                if r == m {
                    self.inbox.insert(MessageKind::Probe, l, m, vec![p])?;
                } else {
                    out.push(Message::new(MessageKind::Probe, m, r, l, vec![p]));
                }
            }
            scratch.trial = Some(Trial { z, own, local });
        }
        Ok(out)
    }

    /// Objective shares at the trial points, using every neighbour's probe.
    pub fn evaluate_trial(&mut self, problem: &Problem, hp: &Hyperparams, steps: &[Option<f64>]) -> Result<Vec<Option<TrialShare>>> {
        let linked = &problem.communities[self.id].linked;
        let mut out = Vec::with_capacity(steps.len());
        for (i, step) in steps.iter().enumerate() {
            if step.is_none() {
                out.push(None);
                continue;
            }
            let l = i + 1;
            let probes = self.inbox.collect(MessageKind::Probe, l, linked)?;
            let x = sum_except(&probes, None).expect("a community is linked to itself");
            let scratch = self.layers[i].as_ref().expect("gradient computed before probing");
            let trial = scratch.trial.as_ref().expect("probe built before evaluation");
            out.push(Some(TrialShare {
                joint: trial.own + scratch.own.value(&x, hp),
                local: trial.local,
            }));
        }
        Ok(out)
    }

    /// The accepted trial block of layer `l`.
    pub fn take_trial(&mut self, l: usize) -> Result<DenseMatrix> {
        self.layers
            .get_mut(l - 1)
            .and_then(|s| s.as_mut())
            .and_then(|s| s.trial.take())
            .map(|t| t.z)
            .ok_or_else(|| Error::ProtocolViolation(format!("no trial for layer {l}")))
    }

    pub fn take_output(&mut self) -> Result<DenseMatrix> {
        self.z_out
            .take()
            .ok_or_else(|| Error::ProtocolViolation("output solve missing".into()))
    }

    /// `U_m + ρ(Z_L^{k+1} − c_m)` along with the squared residual and the
    /// deviation from the exact increment.
    pub fn multiplier(&mut self, state: &ModelState, hp: &Hyperparams) -> Result<(DenseMatrix, f64, f64)> {
        let layers = state.layers();
        let c = self
            .c
            .take()
            .ok_or_else(|| Error::ProtocolViolation("aggregate c missing".into()))?;
        let z = &state.z[layers - 1][self.id];
        let u_old = &state.u[self.id];
        let u_new = update_u(u_old, z, &c, hp.rho);
        let residual = z.sub(&c).frobenius_sq();
        let deviation = dual_identity_deviation(u_old, &u_new, z, &c, hp.rho);
        self.layers.clear();
        Ok((u_new, residual, deviation))
    }
}

/// Agent `M`: owns the weight updates.
#[derive(Clone, Debug)]
pub struct WeightAgent {
    pub id: usize,
    pub inbox: Inbox,
    pub clock: AgentClock,
}

impl WeightAgent {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            inbox: Inbox::new(id),
            clock: AgentClock::default(),
        }
    }

    /// Stacks the reported blocks, takes one backtracked step per layer
    /// (concurrently when a pool is given) and broadcasts the result.
    pub fn step(
        &mut self,
        problem: &Problem,
        state: &ModelState,
        hp: &Hyperparams,
        pool: Option<&rayon::ThreadPool>,
    ) -> Result<(Vec<Message>, Vec<WeightStep>)> {
        let layers = state.layers();
        let comms = problem.num_communities();
        let mut z = Vec::with_capacity(layers);
        let mut u_blocks = Vec::with_capacity(comms);
        for l in 1..=layers {
            let mut blocks = Vec::with_capacity(comms);
            for m in 0..comms {
                let mut payload = self.inbox.take(MessageKind::ZReport, l, m)?;
                if l == layers {
                    if payload.len() != 2 {
                        return Err(Error::ProtocolViolation(format!(
                            "output report from {m} has {} blocks",
                            payload.len()
                        )));
                    }
                    u_blocks.push(payload.pop().unwrap());
                }
                blocks.push(payload.swap_remove(0));
            }
            z.push(problem.stack(&blocks));
        }
        let u = problem.stack(&u_blocks);
        let k = state.k;
        let one = |l: usize| -> Result<WeightStep> {
            let computed;
            let agg = if l == 1 {
                &problem.aggregated_input
            } else {
                computed = problem.a_hat.spmm(&z[l - 2])?;
                &computed
            };
            let target = if l == layers {
                WeightTarget::Output { z: &z[l - 1], u: &u }
            } else {
                WeightTarget::Hidden { z: &z[l - 1] }
            };
            update_w(agg, &state.w[l - 1], target, state.tau[l - 1], hp, k, l)
        };
        let steps: Vec<WeightStep> = match pool {
            Some(pool) => pool.install(|| (1..=layers).into_par_iter().map(one).collect::<Result<_>>())?,
            None => (1..=layers).map(one).collect::<Result<_>>()?,
        };
        let mut out = Vec::with_capacity(comms * layers);
        for m in 0..comms {
            for (i, s) in steps.iter().enumerate() {
                out.push(Message::new(
                    MessageKind::WeightBroadcast,
                    self.id,
                    m,
                    i + 1,
                    vec![s.w.clone()],
                ));
            }
        }
        Ok((out, steps))
    }
}

/// Records of a finished weight phase.
pub fn weight_records(steps: &[WeightStep]) -> Vec<MajorizationRecord> {
    steps.iter().map(|s| s.record).collect()
}
