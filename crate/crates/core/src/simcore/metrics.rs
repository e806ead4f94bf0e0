use alloc::vec::Vec;

use crate::config::Picos;
use crate::mitigations::{MechanismKind, Mode};
use crate::rowblocker::RowAddr;
use crate::simcore::oracle::TimingViolation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThreadStats {
    pub served: u64,
    pub total_latency: u64,
    pub max_latency: Picos,
    pub acts: u64,
    /// ACTs this thread issued to rows that were blacklisted at the time.
    pub blacklisted_acts: u64,
}

/// Nearest-rank percentiles of a set of durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DelayStats {
    pub count: u64,
    pub p50: Picos,
    pub p90: Picos,
    pub p100: Picos,
}

impl DelayStats {
    pub fn from_samples(samples: &[Picos]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let rank = |q: u64| {
            let n = s.len() as u64;
            let k = (q * n).div_ceil(100).max(1);
            s[(k - 1) as usize]
        };
        Self { count: s.len() as u64, p50: rank(50), p90: rank(90), p100: rank(100) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CommandKind {
    Act,
    Column,
    /// Neighbour refresh requested by the mechanism (ACT + precharge).
    Refresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Command {
    pub at: Picos,
    pub kind: CommandKind,
    pub bank: u16,
    pub row: u32,
    /// Request sequence number, absent for refreshes.
    pub seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RowCount {
    pub bank: u16,
    pub row: u32,
    pub count: u32,
}

impl From<(RowAddr, u32)> for RowCount {
    fn from((r, count): (RowAddr, u32)) -> Self {
        Self { bank: r.bank, row: r.row, count }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimMetrics {
    pub mechanism: Option<MechanismKind>,
    pub mode: Option<Mode>,
    pub end_time: Picos,
    pub requests: u64,
    pub served: u64,
    pub threads: Vec<ThreadStats>,

    pub row_hits: u64,
    pub row_misses: u64,
    pub row_conflicts: u64,
    pub acts: u64,
    pub refreshes: u64,

    /// Requests whose ACT RowBlocker held back, one per blocking episode.
    pub blocked_acts: u64,
    pub blocked_delay: DelayStats,
    /// Blocked ACTs to rows truly activated fewer than N_BL times in the
    /// current filter lifetime.
    pub false_positives: u64,
    pub false_positive_delay: DelayStats,
    /// `false_positives / acts`.
    pub false_positive_rate: f64,
    /// ACTs a non-enforcing BlockHammer judged unsafe but let through.
    pub observed_unsafe_acts: u64,
    pub observed_false_positives: u64,

    /// Largest per-row ACT count in any sliding refresh window.
    pub max_window_count: u32,
    pub max_window_row: Option<RowAddr>,
    /// `(t_cbf / t_refw) * n_rh_star`.
    pub window_bound: u32,
    pub top_rows: Vec<RowCount>,
    pub max_weighted_disturbance: Option<f64>,
    pub max_victim_exposure: u64,

    /// Peak RHLI per epoch, indexed `[epoch][thread][bank]`.
    pub rhli_epochs: Vec<Vec<Vec<f64>>>,
    /// Peak RHLI over the run per thread.
    pub max_rhli: Vec<f64>,

    pub timing_violations: Vec<TimingViolation>,
    pub commands: Option<Vec<Command>>,

    #[cfg_attr(feature = "serde", serde(skip))]
    pub blocked_delays: Vec<Picos>,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub false_positive_delays: Vec<Picos>,
}

impl SimMetrics {
    /// The oracle saw some row exceed the per-window bound.
    pub fn oracle_violated(&self) -> bool {
        self.max_window_count > self.window_bound
    }

    pub fn served_by(&self, threads: &[u16]) -> u64 {
        threads.iter().map(|&t| self.threads.get(usize::from(t)).map_or(0, |s| s.served)).sum()
    }

    pub(crate) fn finish(&mut self) {
        self.blocked_delay = DelayStats::from_samples(&self.blocked_delays);
        self.false_positive_delay = DelayStats::from_samples(&self.false_positive_delays);
        self.false_positive_rate = if self.acts == 0 { 0.0 } else { self.false_positives as f64 / self.acts as f64 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        assert_eq!(DelayStats::from_samples(&[]), DelayStats::default());
        let s: Vec<Picos> = (1..=10).collect();
        let d = DelayStats::from_samples(&s);
        assert_eq!((d.count, d.p50, d.p90, d.p100), (10, 5, 9, 10));
        let d = DelayStats::from_samples(&[7]);
        assert_eq!((d.p50, d.p100), (7, 7));
    }
}
