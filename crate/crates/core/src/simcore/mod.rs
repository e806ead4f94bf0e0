//! Trace-driven memory controller simulation.
//!
//! One rank, open-row policy, FR-FCFS scheduling with RowHammer-unsafe ACTs
//! skipped rather than stalled behind. Every ACT is fed to exact oracles so
//! a run reports the worst per-row sliding-window count it produced.

use core::fmt;

use crate::config::Picos;
use crate::mitigations::{MechanismKind, Mode};
use crate::rowblocker::RowBlockerError;

mod engine;
pub mod metrics;
pub mod oracle;
pub mod trace;

pub use engine::run;
pub use metrics::{Command, CommandKind, DelayStats, RowCount, SimMetrics, ThreadStats};
pub use oracle::{max_window_count, SafetyOracle, TimingViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemRequest {
    pub thread: u16,
    pub bank: u16,
    pub row: u32,
    pub ready_at: Picos,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOptions {
    pub mechanism: MechanismKind,
    pub mode: Mode,
    pub seed: u64,
    /// Simulation stops here; defaults to the last arrival plus one refresh window.
    pub horizon: Option<Picos>,
    pub record_commands: bool,
    /// Track the blast-weighted disturbance per victim (costs `2 * r_blast`
    /// updates per ACT).
    pub weighted_oracle: bool,
    pub top_rows: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mechanism: MechanismKind::None,
            mode: Mode::FullFunctional,
            seed: 0,
            horizon: None,
            record_commands: false,
            weighted_oracle: false,
            top_rows: 16,
        }
    }
}

impl SimOptions {
    pub fn new(mechanism: MechanismKind) -> Self {
        Self { mechanism, ..Self::default() }
    }

    pub fn mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn horizon(mut self, horizon: Picos) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn record_commands(mut self) -> Self {
        self.record_commands = true;
        self
    }

    pub fn weighted(mut self) -> Self {
        self.weighted_oracle = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    InvalidRequest {
        seq: u64,
        reason: &'static str,
    },
    /// A thread's requests are not in non-decreasing `ready_at` order.
    Unsorted {
        thread: u16,
        seq: u64,
    },
    Mechanism(RowBlockerError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidRequest { seq, reason } => write!(f, "request {seq}: {reason}"),
            Self::Unsorted { thread, seq } => {
                write!(f, "request {seq} of thread {thread} arrives before its predecessor")
            }
            Self::Mechanism(e) => write!(f, "mechanism invariant violated: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

impl From<RowBlockerError> for SimError {
    fn from(e: RowBlockerError) -> Self {
        Self::Mechanism(e)
    }
}
