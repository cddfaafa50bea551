//! The multi-agent runtime: one agent per community plus a weight agent,
//! exchanging messages in barrier-separated supersteps.

pub mod agent;
pub mod bench;
pub mod coordinator;
pub mod message;
pub mod transport;

use serde::{Deserialize, Serialize};

pub use coordinator::{run_epoch, AdmmTrainer, IterationReport, MessageCounts, Runtime};
pub use message::{Message, MessageKind};
pub use transport::{InProcess, Loopback, Recording, Replay, TraceSink, Transport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Agents and layers one after another on the calling thread.
    Serial,
    /// Agents of each superstep (and layers of the weight phase) on a
    /// pool of `workers` threads.
    Parallel { workers: usize },
}

impl Schedule {
    pub fn method_name(self) -> &'static str {
        match self {
            Schedule::Serial => "admm_serial",
            Schedule::Parallel { .. } => "admm_parallel",
        }
    }
}

/// Time one agent spent computing versus waiting on messages and barriers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AgentClock {
    pub compute_seconds: f64,
    pub comm_seconds: f64,
}
