//! AttackThrottler: counts each `<thread, bank>`'s activations of blacklisted
//! rows, turns them into a RowHammer likelihood index (RHLI) and limits the
//! thread's in-flight requests to the bank accordingly.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::ResolvedConfig;

/// How the mechanism acts on its verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Verdicts and RHLI are tracked but never enforced.
    ObserveOnly,
    #[default]
    FullFunctional,
}

#[derive(Debug, Clone)]
pub struct AttackThrottler {
    threads: usize,
    banks: usize,
    /// Two counters per `<thread, bank>`, index `(thread * banks + bank) * 2 + filter`.
    counters: Vec<u32>,
    /// Active counter per bank, switched in step with that bank's D-CBF.
    active: Vec<u8>,
    saturation: u32,
    quota_max: u32,
    mode: Mode,
    /// RHLI denominator scaled by `t_refw`: `n_rh_star * t_cbf - n_bl * t_refw`.
    denom: u128,
    t_refw: u128,
}

impl AttackThrottler {
    pub fn new(cfg: &ResolvedConfig, mode: Mode) -> Self {
        let threads = usize::from(cfg.timings.threads);
        let banks = usize::from(cfg.timings.banks_per_rank);
        let (denom, t_refw) = cfg.rhli_denominator();
        Self {
            threads,
            banks,
            counters: vec![0; threads * banks * 2],
            active: vec![0; banks],
            saturation: cfg.derived.throttle_saturation,
            quota_max: cfg.params.quota_max,
            mode,
            denom,
            t_refw,
        }
    }

    fn slot(&self, thread: u16, bank: u16) -> usize {
        let (t, b) = (usize::from(thread), usize::from(bank));
        debug_assert!(t < self.threads && b < self.banks);
        (t * self.banks + b) * 2
    }

    pub fn record_blacklisted_act(&mut self, thread: u16, bank: u16) {
        let i = self.slot(thread, bank);
        for c in &mut self.counters[i..i + 2] {
            if *c < self.saturation {
                *c += 1;
            }
        }
    }

    /// Active counter value.
    pub fn count(&self, thread: u16, bank: u16) -> u32 {
        let i = self.slot(thread, bank);
        self.counters[i + usize::from(self.active[usize::from(bank)])]
    }

    pub fn rhli(&self, thread: u16, bank: u16) -> f64 {
        let num = u128::from(self.count(thread, bank)) * self.t_refw;
        num as f64 / self.denom as f64
    }

    /// Linear in RHLI: `ceil(quota_max * (1 - rhli))`, zero once RHLI reaches 1.
    pub fn quota(&self, thread: u16, bank: u16) -> u32 {
        if self.mode == Mode::ObserveOnly {
            return self.quota_max;
        }
        let used = u128::from(self.count(thread, bank)) * self.t_refw;
        if used >= self.denom {
            return 0;
        }
        let q = (u128::from(self.quota_max) * (self.denom - used)).div_ceil(self.denom);
        q as u32
    }

    /// Clears the active counters of `bank` and switches to the other set.
    pub fn on_clear(&mut self, bank: u16) {
        let b = usize::from(bank);
        let a = usize::from(self.active[b]);
        for t in 0..self.threads {
            self.counters[(t * self.banks + b) * 2 + a] = 0;
        }
        self.active[b] ^= 1;
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn banks(&self) -> usize {
        self.banks
    }

    pub fn quota_max(&self) -> u32 {
        self.quota_max
    }

    /// Active-counter RHLI for every `<thread, bank>`, thread-major.
    pub fn rhli_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.threads as u16).map(|t| (0..self.banks as u16).map(|b| self.rhli(t, b)).collect()).collect()
    }
}
