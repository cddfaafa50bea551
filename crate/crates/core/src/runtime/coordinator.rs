//! Superstep scheduling, message routing, timing, and the outer ADMM
//! iteration.

use web_time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::admm::ledger::{Backtracker, MajorizationRecord, Phase};
use crate::admm::problem::Problem;
use crate::admm::state::ModelState;
use crate::admm::Hyperparams;
use crate::baselines::evaluate_masks;
use crate::data::{EpochMetrics, RunMetrics};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::runtime::agent::{weight_records, CommunityAgent, LayerShare, TrialShare, WeightAgent};
use crate::runtime::message::{Message, MessageKind};
use crate::runtime::transport::{InProcess, Transport};
use crate::runtime::{AgentClock, Schedule};

/// Messages routed during one outer iteration, self-deliveries excluded.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MessageCounts {
    /// Indexed by layer 0..L-1.
    pub first_order: Vec<usize>,
    /// Indexed by layer 0..L-1; entry 0 stays 0.
    pub second_order: Vec<usize>,
    pub probes: usize,
    pub reports: usize,
    pub broadcasts: usize,
}

impl MessageCounts {
    fn new(layers: usize) -> Self {
        Self {
            first_order: vec![0; layers],
            second_order: vec![0; layers],
            ..Self::default()
        }
    }

    fn count(&mut self, msg: &Message) {
        match msg.kind {
            MessageKind::FirstOrder => self.first_order[msg.layer] += 1,
            MessageKind::SecondOrder => self.second_order[msg.layer] += 1,
            MessageKind::Probe => self.probes += 1,
            MessageKind::ZReport => self.reports += 1,
            MessageKind::WeightBroadcast => self.broadcasts += 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationReport {
    /// Iteration counter after the update.
    pub k: usize,
    pub weight_records: Vec<MajorizationRecord>,
    pub activation_records: Vec<MajorizationRecord>,
    /// Per-community view of each accepted activation step (diagnostic).
    pub community_records: Vec<MajorizationRecord>,
    pub messages: MessageCounts,
    /// `‖Z_L^{k+1} − c‖_F` summed over communities.
    pub residual: f64,
    /// Worst deviation of `U^{k+1} − U^k` from `ρ·residual`, in units of
    /// one rounding error.
    pub dual_deviation_ulps: f64,
    pub train_seconds: f64,
    pub comm_seconds: f64,
}

impl IterationReport {
    /// Whether every enforced inequality held.
    pub fn majorization_holds(&self) -> bool {
        self.weight_records
            .iter()
            .chain(&self.activation_records)
            .all(|r| r.holds())
    }
}

pub struct Runtime {
    schedule: Schedule,
    pool: Option<rayon::ThreadPool>,
    transport: Box<dyn Transport>,
    agents: Vec<CommunityAgent>,
    weight: WeightAgent,
    train_seconds: f64,
    comm_seconds: f64,
    counts: MessageCounts,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

impl Runtime {
    pub fn new(problem: &Problem, schedule: Schedule, transport: Box<dyn Transport>) -> Result<Self> {
        let comms = problem.num_communities();
        let pool = match schedule {
            Schedule::Serial => None,
            Schedule::Parallel { workers } => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers.max(1))
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Self {
            schedule,
            pool,
            transport,
            agents: (0..comms).map(|m| CommunityAgent::new(m, comms)).collect(),
            weight: WeightAgent::new(comms),
            train_seconds: 0.0,
            comm_seconds: 0.0,
            counts: MessageCounts::default(),
        })
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    /// Clocks of the community agents followed by the weight agent.
    pub fn clocks(&self) -> Vec<AgentClock> {
        self.agents
            .iter()
            .map(|a| a.clock)
            .chain(std::iter::once(self.weight.clock))
            .collect()
    }

    pub fn bytes_moved(&self) -> u64 {
        self.transport.bytes_moved()
    }

    fn serial(&self) -> bool {
        matches!(self.schedule, Schedule::Serial)
    }

    /// Runs `f` on every community agent, then routes what they sent.
    fn superstep<T, F>(&mut self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut CommunityAgent) -> Result<(Vec<Message>, T)> + Sync + Send,
    {
        let start = Instant::now();
        let Self { pool, agents, .. } = self;
        let results: Vec<(Result<(Vec<Message>, T)>, f64)> = match pool {
            Some(pool) => pool.install(|| agents.par_iter_mut().map(|a| timed(|| f(a))).collect()),
            None => agents.iter_mut().map(|a| timed(|| f(a))).collect(),
        };
        let wall = start.elapsed().as_secs_f64();
        let busiest = results.iter().map(|r| r.1).fold(0.0, f64::max);
        if self.serial() {
            self.train_seconds += wall;
        } else {
            self.train_seconds += busiest;
            self.comm_seconds += wall - busiest;
        }
        let serial = self.serial();
        let mut outgoing = Vec::new();
        let mut values = Vec::with_capacity(results.len());
        for (m, (result, spent)) in results.into_iter().enumerate() {
            let clock = &mut self.agents[m].clock;
            clock.compute_seconds += spent;
            if !serial {
                clock.comm_seconds += wall - spent;
            }
            let (msgs, value) = result.map_err(|e| Error::Agent {
                agent: m,
                source: Box::new(e),
            })?;
            outgoing.extend(msgs);
            values.push(value);
        }
        self.route(outgoing)?;
        Ok(values)
    }

    fn route(&mut self, outgoing: Vec<Message>) -> Result<()> {
        if outgoing.is_empty() {
            return Ok(());
        }
        let start = Instant::now();
        for msg in &outgoing {
            self.counts.count(msg);
        }
        let delivered = self.transport.deliver(outgoing)?;
        for msg in delivered {
            if msg.dst == self.weight.id {
                self.weight.inbox.put(msg)?;
            } else {
                let dst = msg.dst;
                self.agents
                    .get_mut(dst)
                    .ok_or_else(|| Error::ProtocolViolation(format!("no agent {dst}")))?
                    .inbox
                    .put(msg)?;
            }
        }
        let spent = start.elapsed().as_secs_f64();
        if self.serial() {
            self.train_seconds += spent;
        } else {
            self.comm_seconds += spent;
            for a in &mut self.agents {
                a.clock.comm_seconds += spent;
            }
            self.weight.clock.comm_seconds += spent;
        }
        Ok(())
    }

    fn weight_phase(
        &mut self,
        problem: &Problem,
        state: &ModelState,
        hp: &Hyperparams,
    ) -> Result<Vec<crate::admm::weights::WeightStep>> {
        let (result, spent) = timed(|| self.weight.step(problem, state, hp, self.pool.as_ref()));
        self.train_seconds += spent;
        self.weight.clock.compute_seconds += spent;
        if !self.serial() {
            for a in &mut self.agents {
                a.clock.comm_seconds += spent;
            }
        }
        let (msgs, steps) = result.map_err(|e| Error::Agent {
            agent: self.weight.id,
            source: Box::new(e),
        })?;
        self.route(msgs)?;
        Ok(steps)
    }

    /// One pass of the three phases: weights, activations, multipliers.
    pub fn outer_iteration(&mut self, problem: &Problem, state: &mut ModelState, hp: &Hyperparams) -> Result<IterationReport> {
        state.validate(problem)?;
        if self.agents.len() != problem.num_communities() {
            return Err(Error::InvalidConfig(format!(
                "runtime has {} agents, problem has {} communities",
                self.agents.len(),
                problem.num_communities()
            )));
        }
        let layers = state.layers();
        let comms = problem.num_communities();
        let (train0, comm0) = (self.train_seconds, self.comm_seconds);
        self.counts = MessageCounts::new(layers);
        let k = state.k;
        let st: &ModelState = state;

        // weight phase
        self.superstep(|a| Ok((a.report(st)?, ())))?;
        let w_steps = self.weight_phase(problem, st, hp)?;

        // activation phase: two message rounds, gradients, joint line search
        self.superstep(|a| Ok((a.first_order(problem, st)?, ())))?;
        self.superstep(|a| Ok((a.second_order(problem, st)?, ())))?;
        let shares: Vec<Vec<LayerShare>> = self.superstep(|a| Ok((Vec::new(), a.gradient(problem, st, hp)?)))?;

        let hidden = layers - 1;
        let mut trackers: Vec<Backtracker> = (0..hidden)
            .map(|i| {
                let start: f64 = shares.iter().map(|s| s[i].start).sum();
                let grad_sq: f64 = shares.iter().map(|s| s[i].grad_sq).sum();
                Backtracker::new(st.theta[i][0], start, grad_sq, hp)
            })
            .collect();
        let mut accepted: Vec<Option<MajorizationRecord>> = vec![None; hidden];
        let mut new_z: Vec<Vec<DenseMatrix>> = vec![Vec::new(); hidden];
        let mut community_records = Vec::new();
        while accepted.iter().any(|a| a.is_none()) {
            let steps: Vec<Option<f64>> = (0..hidden)
                .map(|i| accepted[i].is_none().then(|| trackers[i].step()))
                .collect();
            let steps_ref = &steps;
            self.superstep(|a| Ok((a.probe(problem, st, hp, steps_ref)?, ())))?;
            let trials: Vec<Vec<Option<TrialShare>>> =
                self.superstep(|a| Ok((Vec::new(), a.evaluate_trial(problem, hp, steps_ref)?)))?;
            for i in 0..hidden {
                if accepted[i].is_some() {
                    continue;
                }
                let joint: f64 = trials.iter().map(|t| t[i].expect("pending layer").joint).sum();
                if let Some(rec) = trackers[i].offer(joint, k, Phase::Activation, i + 1)? {
                    for m in 0..comms {
                        let local = trials[m][i].expect("pending layer").local;
                        let share = shares[m][i];
                        community_records.push(MajorizationRecord {
                            k,
                            phase: Phase::Community(m),
                            layer: i + 1,
                            step: rec.step,
                            surrogate: share.local_start - share.grad_sq / (2.0 * rec.step),
                            objective: local,
                            start: share.local_start,
                            trials: rec.trials,
                        });
                        new_z[i].push(self.agents[m].take_trial(i + 1)?);
                    }
                    accepted[i] = Some(rec);
                }
            }
        }
        let outputs = self
            .agents
            .iter_mut()
            .map(|a| a.take_output())
            .collect::<Result<Vec<_>>>()?;

        // commit activations
        let activation_records: Vec<MajorizationRecord> = accepted.into_iter().map(|r| r.expect("accepted")).collect();
        for (i, blocks) in new_z.into_iter().enumerate() {
            state.z[i] = blocks;
            state.theta[i] = vec![activation_records[i].step; comms];
        }
        state.z[layers - 1] = outputs;

        // multiplier phase
        let st: &ModelState = state;
        let dual: Vec<(DenseMatrix, f64, f64)> = self.superstep(|a| Ok((Vec::new(), a.multiplier(st, hp)?)))?;
        let mut residual_sq = 0.0;
        let mut deviation: f64 = 0.0;
        let mut u = Vec::with_capacity(comms);
        for (u_new, res, dev) in dual {
            residual_sq += res;
            deviation = deviation.max(dev);
            u.push(u_new);
        }
        state.u = u;
        for (l, s) in w_steps.iter().enumerate() {
            state.w[l] = s.w.clone();
            state.tau[l] = s.tau;
        }
        state.k += 1;

        Ok(IterationReport {
            k: state.k,
            weight_records: weight_records(&w_steps),
            activation_records,
            community_records,
            messages: std::mem::take(&mut self.counts),
            residual: residual_sq.sqrt(),
            dual_deviation_ulps: deviation,
            train_seconds: self.train_seconds - train0,
            comm_seconds: self.comm_seconds - comm0,
        })
    }
}

/// One outer iteration on a fresh in-process runtime.
pub fn run_epoch(
    problem: &Problem,
    state: &ModelState,
    hp: &Hyperparams,
    schedule: Schedule,
) -> Result<(ModelState, Vec<AgentClock>)> {
    let mut runtime = Runtime::new(problem, schedule, Box::new(InProcess))?;
    let mut next = state.clone();
    runtime.outer_iteration(problem, &mut next, hp)?;
    Ok((next, runtime.clocks()))
}

/// Drives the outer iterations and evaluates after each one.
pub struct AdmmTrainer {
    problem: Problem,
    hp: Hyperparams,
    state: ModelState,
    runtime: Runtime,
    history: Vec<IterationReport>,
}

impl AdmmTrainer {
    pub fn new(
        problem: Problem,
        hp: Hyperparams,
        state: ModelState,
        schedule: Schedule,
        transport: Box<dyn Transport>,
    ) -> Result<Self> {
        hp.validate()?;
        if hp.layers() != problem.layers() {
            return Err(Error::InvalidConfig(format!(
                "{} layers configured, problem built for {}",
                hp.layers(),
                problem.layers()
            )));
        }
        state.validate(&problem)?;
        let runtime = Runtime::new(&problem, schedule, transport)?;
        Ok(Self {
            problem,
            hp,
            state,
            runtime,
            history: Vec::new(),
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn history(&self) -> &[IterationReport] {
        &self.history
    }

    pub fn clocks(&self) -> Vec<AgentClock> {
        self.runtime.clocks()
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn step(&mut self) -> Result<&IterationReport> {
        let report = self.runtime.outer_iteration(&self.problem, &mut self.state, &self.hp)?;
        self.history.push(report);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Train accuracy, test accuracy and training loss of the current weights.
    pub fn evaluate(&self) -> Result<(f64, f64, f64)> {
        let p = &self.problem;
        evaluate_masks(&p.a_hat, &p.features, &p.labels, &p.train_mask, &p.test_mask, &self.state.w)
    }

    /// Runs up to `hp.epochs` iterations, stopping early once the primal
    /// residual falls below `hp.residual_tol`.
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochMetrics, &IterationReport)) -> Result<RunMetrics> {
        let mut run = RunMetrics::default();
        let method = self.runtime.schedule().method_name();
        for epoch in 1..=self.hp.epochs {
            self.step()?;
            let report = self.history.last().expect("just pushed");
            let (train_acc, test_acc, loss) = self.evaluate()?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let row = EpochMetrics {
                epoch,
                method: method.into(),
                train_acc,
                test_acc,
                loss,
                train_time_s: report.train_seconds,
                comm_time_s: report.comm_seconds,
            };
            on_epoch(&row, report);
            run.epochs.push(row);
            if report.residual < self.hp.residual_tol {
                break;
            }
        }
        Ok(run)
    }
}
