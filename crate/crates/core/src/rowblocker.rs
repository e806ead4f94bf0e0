//! RowBlocker: per-bank D-CBF blacklists plus a per-rank history of recent
//! activations. An ACT is unsafe only when its row is both blacklisted and
//! was activated less than `t_delay` ago.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::config::{Picos, ResolvedConfig};
use crate::filters::{row_address_bits, DualCountingBloomFilter, H3HashSet};

/// A row within the rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RowAddr {
    pub bank: u16,
    pub row: u32,
}

impl RowAddr {
    pub const fn new(bank: u16, row: u32) -> Self {
        Self { bank, row }
    }
}

impl fmt::Display for RowAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.bank, self.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Verdict {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowBlockerError {
    /// More live activations than the capacity formula allows; the caller
    /// issued ACTs faster than the rank timing permits.
    HistoryOverflow { capacity: usize, at: Picos },
}

impl fmt::Display for RowBlockerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::HistoryOverflow { capacity, at } => {
                write!(f, "history buffer overflow ({capacity} entries) at {at} ps")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RowBlockerError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryEntry {
    pub row: RowAddr,
    pub stamp: Picos,
    pub valid: bool,
}

/// Circular queue of the rank's activations within the last `t_delay`,
/// oldest at the head. Live entries per row are indexed for the lookup.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    entries: VecDeque<HistoryEntry>,
    capacity: usize,
    t_delay: Picos,
    /// Most recent stamp and live-entry count per row.
    live: BTreeMap<RowAddr, (Picos, u32)>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize, t_delay: Picos) -> Self {
        Self { entries: VecDeque::with_capacity(capacity), capacity, t_delay, live: BTreeMap::new() }
    }

    /// Drops entries at least `t_delay` old.
    pub fn expire(&mut self, now: Picos) {
        while let Some(head) = self.entries.front() {
            if now.saturating_sub(head.stamp) < self.t_delay {
                break;
            }
            let row = head.row;
            self.entries.pop_front();
            if let Some(slot) = self.live.get_mut(&row) {
                slot.1 -= 1;
                if slot.1 == 0 {
                    self.live.remove(&row);
                }
            }
        }
    }

    pub fn push(&mut self, row: RowAddr, now: Picos) -> Result<(), RowBlockerError> {
        self.expire(now);
        if self.entries.len() == self.capacity {
            return Err(RowBlockerError::HistoryOverflow { capacity: self.capacity, at: now });
        }
        self.entries.push_back(HistoryEntry { row, stamp: now, valid: true });
        let slot = self.live.entry(row).or_insert((now, 0));
        slot.0 = now;
        slot.1 += 1;
        Ok(())
    }

    /// Whether `row` has an activation younger than `t_delay`. Correct
    /// whether or not `expire(now)` ran first.
    pub fn recently_activated(&self, row: RowAddr, now: Picos) -> bool {
        self.last_activation(row).is_some_and(|stamp| now.saturating_sub(stamp) < self.t_delay)
    }

    pub fn last_activation(&self, row: RowAddr) -> Option<Picos> {
        self.live.get(&row).map(|&(stamp, _)| stamp)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }
}

/// RowBlocker state for one rank. Epoch clears are phase-aligned across
/// banks: every bank's D-CBF is cleared at each multiple of the epoch length.
#[derive(Debug, Clone)]
pub struct RowBlocker {
    filters: Vec<DualCountingBloomFilter>,
    history: HistoryBuffer,
    t_delay: Picos,
    epoch_len: Picos,
    next_epoch: Picos,
    rng: ChaCha8Rng,
}

impl RowBlocker {
    pub fn new(cfg: &ResolvedConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &cfg.params;
        let bits = row_address_bits(cfg.timings.rows_per_bank);
        let filters = (0..cfg.timings.banks_per_rank)
            .map(|_| {
                let a = H3HashSet::seeded(p.hash_family, p.hash_count, p.cbf_counters, bits, &mut rng);
                let b = H3HashSet::seeded(p.hash_family, p.hash_count, p.cbf_counters, bits, &mut rng);
                DualCountingBloomFilter::new(p.cbf_counters as usize, a, b, p.n_bl)
            })
            .collect();
        Self {
            filters,
            history: HistoryBuffer::new(cfg.derived.history_capacity, cfg.derived.t_delay),
            t_delay: cfg.derived.t_delay,
            epoch_len: cfg.derived.epoch_len,
            next_epoch: cfg.derived.epoch_len,
            rng,
        }
    }

    pub fn is_blacklisted(&self, row: RowAddr) -> bool {
        self.filters[usize::from(row.bank)].is_blacklisted(row.row)
    }

    /// Pure query.
    pub fn is_act_safe(&self, row: RowAddr, now: Picos) -> Verdict {
        if self.is_blacklisted(row) && self.history.recently_activated(row, now) {
            Verdict::Unsafe
        } else {
            Verdict::Safe
        }
    }

    /// Earliest time an ACT to `row` becomes safe, assuming no epoch clear
    /// happens first. `None` when it is safe now.
    pub fn safe_at(&self, row: RowAddr, now: Picos) -> Option<Picos> {
        if self.is_act_safe(row, now) == Verdict::Safe {
            return None;
        }
        self.history.last_activation(row).map(|stamp| stamp + self.t_delay)
    }

    pub fn on_activate(&mut self, row: RowAddr, now: Picos) -> Result<(), RowBlockerError> {
        self.history.push(row, now)?;
        self.filters[usize::from(row.bank)].insert(row.row);
        Ok(())
    }

    /// Clears every due epoch up to `now`; returns how many boundaries passed.
    pub fn on_epoch_tick(&mut self, now: Picos) -> u32 {
        let mut ticks = 0;
        while now >= self.next_epoch {
            let at = self.next_epoch;
            for f in &mut self.filters {
                f.clear_and_swap(at, &mut self.rng);
            }
            self.next_epoch += self.epoch_len;
            ticks += 1;
        }
        ticks
    }

    pub fn next_epoch(&self) -> Picos {
        self.next_epoch
    }

    pub fn epoch_len(&self) -> Picos {
        self.epoch_len
    }

    pub fn t_delay(&self) -> Picos {
        self.t_delay
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    pub fn filter(&self, bank: u16) -> &DualCountingBloomFilter {
        &self.filters[usize::from(bank)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Config, PS_PER_NS, PS_PER_US};
    use alloc::vec;

    fn table1() -> ResolvedConfig {
        Config::table1().resolve().unwrap()
    }

    fn scaled() -> ResolvedConfig {
        Config::scaled().resolve().unwrap()
    }

    const R: RowAddr = RowAddr::new(0, 42);

    #[test]
    fn expire_boundary_is_inclusive() {
        let mut hb = HistoryBuffer::new(8, 1_000);
        hb.expire(5);
        assert!(hb.is_empty());
        hb.push(R, 0).unwrap();
        hb.expire(999);
        assert_eq!(hb.len(), 1);
        hb.expire(1_000);
        assert!(hb.is_empty());
        assert!(!hb.recently_activated(R, 1_000));
    }

    #[test]
    fn recency_lookup() {
        let mut hb = HistoryBuffer::new(8, 1_000);
        hb.push(R, 10_000).unwrap();
        assert!(hb.recently_activated(R, 10_001));
        assert!(!hb.recently_activated(R, 11_001));
        assert!(!hb.recently_activated(RowAddr::new(1, 42), 10_001));
    }

    #[test]
    fn overflow_is_reported() {
        let mut hb = HistoryBuffer::new(2, 1_000);
        hb.push(R, 0).unwrap();
        hb.push(R, 1).unwrap();
        assert_eq!(hb.push(R, 2), Err(RowBlockerError::HistoryOverflow { capacity: 2, at: 2 }));
        hb.push(R, 1_000).unwrap();
    }

    /// Four ACTs per tFAW at the rank pacing for two delay windows never
    /// exceed the computed capacity; cross-checked against an unbounded log.
    #[test]
    fn capacity_holds_at_max_rate() {
        for cfg in [table1(), scaled()] {
            let gap = cfg.timings.rank_act_gap();
            let mut hb = HistoryBuffer::new(cfg.derived.history_capacity, cfg.derived.t_delay);
            let mut log = Vec::new();
            let mut now = 0;
            let mut row = 0;
            while now < 2 * cfg.derived.t_delay {
                let addr = RowAddr::new((row % 16) as u16, row);
                hb.push(addr, now).unwrap();
                log.push(now);
                let live = log.iter().filter(|&&s| now - s < cfg.derived.t_delay).count();
                assert_eq!(hb.len(), live);
                assert!(hb.len() <= cfg.derived.history_capacity);
                now += gap;
                row += 1;
            }
        }
    }

    #[test]
    fn recency_matches_brute_force_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let t_delay = 500;
        let mut hb = HistoryBuffer::new(10_000, t_delay);
        let mut log: Vec<(RowAddr, Picos)> = Vec::new();
        let mut now = 0;
        for _ in 0..2_000 {
            now += rng.random_range(0..60);
            let row = RowAddr::new(rng.random_range(0..2), rng.random_range(0..6));
            if rng.random_bool(0.5) {
                hb.push(row, now).unwrap();
                log.push((row, now));
            } else {
                let brute = log.iter().any(|&(r, s)| r == row && now - s < t_delay);
                assert_eq!(hb.recently_activated(row, now), brute);
            }
        }
    }

    #[test]
    fn verdict_table() {
        let cfg = table1();
        let mut rb = RowBlocker::new(&cfg, 0);
        let other = RowAddr::new(3, 7);
        rb.on_activate(other, 0).unwrap();
        // not blacklisted, activated 1 ns ago
        assert_eq!(rb.is_act_safe(other, PS_PER_NS), Verdict::Safe);

        let mut t = 0;
        for _ in 0..cfg.params.n_bl {
            rb.on_activate(R, t).unwrap();
            t += cfg.timings.t_rc;
        }
        let last = t - cfg.timings.t_rc;
        assert!(rb.is_blacklisted(R));
        assert_eq!(rb.is_act_safe(R, last + PS_PER_US), Verdict::Unsafe);
        assert_eq!(rb.safe_at(R, last + PS_PER_US), Some(last + cfg.derived.t_delay));
        assert_eq!(rb.is_act_safe(R, last + cfg.derived.t_delay - 1), Verdict::Unsafe);
        assert_eq!(rb.is_act_safe(R, last + cfg.derived.t_delay), Verdict::Safe);
    }

    #[test]
    fn query_is_pure() {
        let cfg = scaled();
        let mut rb = RowBlocker::new(&cfg, 1);
        for i in 0..20 {
            rb.on_activate(R, i * cfg.timings.t_rc).unwrap();
        }
        let before = (rb.history().len(), rb.filter(0).clone());
        let v1 = rb.is_act_safe(R, 2_000_000);
        let v2 = rb.is_act_safe(R, 2_000_000);
        assert_eq!(v1, v2);
        assert_eq!(before, (rb.history().len(), rb.filter(0).clone()));
    }

    #[test]
    fn activation_updates_history_and_both_filters() {
        let cfg = scaled();
        let mut rb = RowBlocker::new(&cfg, 2);
        rb.on_activate(R, 5).unwrap();
        assert_eq!(rb.history().last_activation(R), Some(5));
        assert!(rb.filter(0).active().test(R.row) >= 1);
        assert!(rb.filter(0).passive().test(R.row) >= 1);
        rb.on_epoch_tick(cfg.derived.epoch_len);
        assert!(rb.filter(0).active().test(R.row) >= 1);
    }

    #[test]
    fn epoch_ticks() {
        let cfg = scaled();
        let mut rb = RowBlocker::new(&cfg, 3);
        let ep = cfg.derived.epoch_len;
        assert_eq!(rb.on_epoch_tick(ep - 1), 0);
        for i in 0..u64::from(cfg.params.n_bl) {
            rb.on_activate(R, i * cfg.timings.t_rc).unwrap();
        }
        assert!(rb.is_blacklisted(R));
        assert_eq!(rb.on_epoch_tick(ep), 1);
        assert!(rb.is_blacklisted(R));
        assert_eq!(rb.on_epoch_tick(2 * ep), 1);
        assert!(!rb.is_blacklisted(R));
        assert_eq!(rb.next_epoch(), 3 * ep);
    }

    /// Unsafe turns Safe no later than `t_delay` after the last ACT.
    #[test]
    fn liveness() {
        let cfg = scaled();
        let mut rb = RowBlocker::new(&cfg, 4);
        let mut now = 0;
        let mut acts = vec![];
        for _ in 0..200 {
            while rb.is_act_safe(R, now) == Verdict::Unsafe {
                let last = rb.history().last_activation(R).unwrap();
                assert!(now < last + cfg.derived.t_delay);
                now = rb.safe_at(R, now).unwrap();
            }
            rb.on_epoch_tick(now);
            rb.on_activate(R, now).unwrap();
            acts.push(now);
            now += cfg.timings.t_rc;
        }
    }
}
