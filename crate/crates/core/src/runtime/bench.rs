//! Serial against parallel timing on identical seeds.

use web_time::Instant;

use serde::Serialize;

use crate::admm::{Hyperparams, ModelState, Problem, StackedState};
use crate::data::{Dataset, RunMetrics};
use crate::error::{Error, Result};
use crate::partition::{partition_graph, Partition};
use crate::runtime::{AdmmTrainer, InProcess, Schedule};
use crate::seed;

/// Largest relative Frobenius error accepted between the two runs.
pub const ITERATE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct BenchRun {
    pub method: &'static str,
    pub communities: usize,
    pub total_seconds: f64,
    pub train_seconds: f64,
    pub comm_seconds: f64,
    pub checksum: String,
    #[serde(skip)]
    pub state: StackedState,
    #[serde(skip)]
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub serial: BenchRun,
    pub parallel: BenchRun,
    pub relative_error: f64,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.serial.total_seconds / self.parallel.total_seconds
    }

    /// Two-row timing table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<16}{:>12}{:>12}{:>12}{:>10}\n",
            "method", "total (s)", "train (s)", "comm (s)", "speedup"
        );
        for (run, speedup) in [(&self.serial, 1.0), (&self.parallel, self.speedup())] {
            out.push_str(&format!(
                "{:<16}{:>12.3}{:>12.3}{:>12.3}{:>10.2}\n",
                run.method, run.total_seconds, run.train_seconds, run.comm_seconds, speedup
            ));
        }
        out
    }
}

/// The partition used for `communities` agents under master seed `master`.
pub fn partition_for(dataset: &Dataset, communities: usize, master: u64) -> Result<Partition> {
    if communities == 1 {
        Ok(Partition::single(&dataset.graph))
    } else {
        partition_graph(&dataset.graph, communities, seed::derive(master, seed::PARTITION))
    }
}

pub fn bench_run(dataset: &Dataset, hp: &Hyperparams, communities: usize, schedule: Schedule, master: u64) -> Result<BenchRun> {
    let problem = Problem::new(dataset, partition_for(dataset, communities, master)?, &hp.hidden)?;
    let state = ModelState::initialize(&problem, &mut seed::stream(master, seed::INIT))?;
    let mut trainer = AdmmTrainer::new(problem, hp.clone(), state, schedule, Box::new(InProcess))?;
    let start = Instant::now();
    let metrics = trainer.train(|_, _| {})?;
    let total_seconds = start.elapsed().as_secs_f64();
    let (train_seconds, comm_seconds) = trainer
        .history()
        .iter()
        .fold((0.0, 0.0), |(t, c), r| (t + r.train_seconds, c + r.comm_seconds));
    let state = trainer.state().stacked(trainer.problem());
    Ok(BenchRun {
        method: schedule.method_name(),
        communities,
        total_seconds,
        train_seconds,
        comm_seconds,
        checksum: state.checksum(),
        state,
        metrics,
    })
}

/// One community on the calling thread against `communities` agents on
/// `workers` threads. Fails when the final iterates disagree.
pub fn run_bench(dataset: &Dataset, hp: &Hyperparams, communities: usize, workers: usize, master: u64) -> Result<BenchReport> {
    let serial = bench_run(dataset, hp, 1, Schedule::Serial, master)?;
    let parallel = bench_run(dataset, hp, communities, Schedule::Parallel { workers }, master)?;
    let relative_error = serial.state.relative_error(&parallel.state);
    if !(relative_error <= ITERATE_TOLERANCE) {
        return Err(Error::IterateMismatch {
            error: relative_error,
            tolerance: ITERATE_TOLERANCE,
        });
    }
    Ok(BenchReport {
        serial,
        parallel,
        relative_error,
    })
}
