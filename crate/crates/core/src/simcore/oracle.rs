//! Exact post-hoc checkers: per-row sliding-window activation counts, the
//! blast-weighted disturbance each victim accumulates, un-refreshed victim
//! exposure, and DRAM timing.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use crate::config::{BlastProfile, DramTimings, Picos};
use crate::rowblocker::RowAddr;

/// Maximum number of timestamps in any half-open window `[t, t + window)`.
/// Expects `stamps` sorted ascending; two-pointer scan.
pub fn max_window_count(stamps: &[Picos], window: Picos) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..stamps.len() {
        while stamps[lo] + window <= stamps[hi] {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

#[derive(Debug, Clone, Default)]
struct RowLog {
    window: VecDeque<Picos>,
    max: u32,
    total: u64,
}

/// Streaming form of [`max_window_count`] for every row.
#[derive(Debug, Clone)]
pub struct SafetyOracle {
    window: Picos,
    rows: BTreeMap<RowAddr, RowLog>,
}

impl SafetyOracle {
    pub fn new(window: Picos) -> Self {
        Self { window, rows: BTreeMap::new() }
    }

    /// Activations must be recorded in non-decreasing time order.
    pub fn record(&mut self, row: RowAddr, now: Picos) {
        let log = self.rows.entry(row).or_default();
        while log.window.front().is_some_and(|&t| t + self.window <= now) {
            log.window.pop_front();
        }
        log.window.push_back(now);
        log.total += 1;
        log.max = log.max.max(log.window.len() as u32);
    }

    pub fn max_window(&self, row: RowAddr) -> u32 {
        self.rows.get(&row).map_or(0, |l| l.max)
    }

    /// Row with the largest window count (lowest address on ties).
    pub fn worst(&self) -> Option<(RowAddr, u32)> {
        self.rows.iter().map(|(&r, l)| (r, l.max)).fold(None, |best, (r, m)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((r, m)),
        })
    }

    /// Rows sorted by descending window count, at most `n`.
    pub fn top(&self, n: usize) -> Vec<(RowAddr, u32)> {
        let mut v: Vec<_> = self.rows.iter().map(|(&r, l)| (r, l.max)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(n);
        v
    }

    pub fn rows_tracked(&self) -> usize {
        self.rows.len()
    }
}

/// Sliding-window, blast-weighted disturbance per victim: an ACT of row `a`
/// adds `c_k` to rows `a ± k`. The worst window sum is comparable to `N_RH`.
#[derive(Debug, Clone)]
pub struct DisturbanceOracle {
    window: Picos,
    factors: Vec<f64>,
    rows_per_bank: u32,
    victims: BTreeMap<RowAddr, (VecDeque<(Picos, f64)>, f64)>,
    worst: f64,
    worst_row: Option<RowAddr>,
}

impl DisturbanceOracle {
    pub fn new(window: Picos, blast: &BlastProfile, rows_per_bank: u32) -> Self {
        Self {
            window,
            factors: blast.impact_factors().to_vec(),
            rows_per_bank,
            victims: BTreeMap::new(),
            worst: 0.0,
            worst_row: None,
        }
    }

    pub fn record(&mut self, aggressor: RowAddr, now: Picos) {
        for (i, &c) in self.factors.iter().enumerate() {
            let k = i as u32 + 1;
            let below = aggressor.row.checked_sub(k);
            let above = aggressor.row.checked_add(k).filter(|&r| r < self.rows_per_bank);
            for v in [below, above].into_iter().flatten() {
                let victim = RowAddr::new(aggressor.bank, v);
                let (q, sum) = self.victims.entry(victim).or_default();
                while let Some(&(t, w)) = q.front() {
                    if t + self.window > now {
                        break;
                    }
                    q.pop_front();
                    *sum -= w;
                }
                q.push_back((now, c));
                *sum += c;
                if *sum > self.worst {
                    self.worst = *sum;
                    self.worst_row = Some(victim);
                }
            }
        }
    }

    pub fn worst(&self) -> (f64, Option<RowAddr>) {
        (self.worst, self.worst_row)
    }
}

/// Adjacent-aggressor activations each victim has absorbed since it was
/// last activated or refreshed.
#[derive(Debug, Clone)]
pub struct ExposureOracle {
    rows_per_bank: u32,
    exposure: BTreeMap<RowAddr, u64>,
    worst: u64,
}

impl ExposureOracle {
    pub fn new(rows_per_bank: u32) -> Self {
        Self { rows_per_bank, exposure: BTreeMap::new(), worst: 0 }
    }

    /// `row` was opened: its own charge is restored and its neighbours are disturbed.
    pub fn on_activate(&mut self, row: RowAddr) {
        self.exposure.remove(&row);
        let below = row.row.checked_sub(1);
        let above = Some(row.row + 1).filter(|&r| r < self.rows_per_bank);
        for v in [below, above].into_iter().flatten() {
            let e = self.exposure.entry(RowAddr::new(row.bank, v)).or_default();
            *e += 1;
            self.worst = self.worst.max(*e);
        }
    }

    pub fn exposure(&self, row: RowAddr) -> u64 {
        self.exposure.get(&row).copied().unwrap_or(0)
    }

    pub fn worst(&self) -> u64 {
        self.worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TimingViolation {
    /// Two ACTs to one bank closer than tRC.
    Trc { bank: u16, at: Picos, previous: Picos },
    /// Five ACTs to the rank within tFAW.
    Tfaw { at: Picos, oldest: Picos },
    /// Two ACTs to the rank closer than the rank ACT gap.
    RankGap { at: Picos, previous: Picos },
}

/// Streaming check of every ACT-class command against DRAM timing.
#[derive(Debug, Clone)]
pub struct TimingAuditor {
    t_rc: Picos,
    t_faw: Picos,
    gap: Picos,
    last_bank: Vec<Option<Picos>>,
    recent: VecDeque<Picos>,
    violations: Vec<TimingViolation>,
}

impl TimingAuditor {
    pub fn new(t: &DramTimings) -> Self {
        Self {
            t_rc: t.t_rc,
            t_faw: t.t_faw,
            gap: t.rank_act_gap(),
            last_bank: alloc::vec![None; usize::from(t.banks_per_rank)],
            recent: VecDeque::with_capacity(5),
            violations: Vec::new(),
        }
    }

    pub fn on_act(&mut self, bank: u16, at: Picos) {
        let slot = &mut self.last_bank[usize::from(bank)];
        if let Some(prev) = *slot {
            if at < prev + self.t_rc {
                self.violations.push(TimingViolation::Trc { bank, at, previous: prev });
            }
        }
        *slot = Some(at);
        if let Some(&prev) = self.recent.back() {
            if at < prev + self.gap {
                self.violations.push(TimingViolation::RankGap { at, previous: prev });
            }
        }
        self.recent.push_back(at);
        if self.recent.len() == 5 {
            let oldest = self.recent.pop_front().unwrap();
            if at < oldest + self.t_faw {
                self.violations.push(TimingViolation::Tfaw { at, oldest });
            }
        }
    }

    pub fn violations(&self) -> &[TimingViolation] {
        &self.violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    fn brute(stamps: &[Picos], window: Picos) -> usize {
        stamps.iter().map(|&s| stamps.iter().filter(|&&t| t >= s && t < s + window).count()).max().unwrap_or(0)
    }

    #[test]
    fn window_examples() {
        assert_eq!(max_window_count(&[], 10), 0);
        assert_eq!(max_window_count(&[1, 2, 3, 4], 10), 4);
        assert_eq!(max_window_count(&[0, 10, 20, 30], 10), 1);
        assert_eq!(max_window_count(&[0, 9, 10, 11], 10), 3);
    }

    #[test]
    fn window_matches_quadratic_recount() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(0..80);
            let mut s: Vec<Picos> = (0..n).map(|_| rng.random_range(0..500)).collect();
            s.sort_unstable();
            let w = rng.random_range(1..120);
            assert_eq!(max_window_count(&s, w), brute(&s, w));

            let mut o = SafetyOracle::new(w);
            let r = RowAddr::new(0, 1);
            for &t in &s {
                o.record(r, t);
            }
            assert_eq!(o.max_window(r) as usize, brute(&s, w));
        }
    }

    #[test]
    fn oracle_reports_worst_row() {
        let mut o = SafetyOracle::new(100);
        for t in 0..5 {
            o.record(RowAddr::new(0, 1), t);
        }
        for t in 0..3 {
            o.record(RowAddr::new(1, 1), t);
        }
        assert_eq!(o.worst(), Some((RowAddr::new(0, 1), 5)));
        assert_eq!(o.top(1), vec![(RowAddr::new(0, 1), 5)]);
        assert_eq!(o.rows_tracked(), 2);
    }

    #[test]
    fn disturbance_weights_by_distance() {
        let blast = BlastProfile::geometric(3, 0.5).unwrap();
        let mut d = DisturbanceOracle::new(100, &blast, 64);
        // rows 9 and 11 sandwich row 10; rows 8 and 12 add 0.5 each
        for t in 0..4 {
            d.record(RowAddr::new(0, 9), t);
            d.record(RowAddr::new(0, 11), t);
            d.record(RowAddr::new(0, 8), t);
            d.record(RowAddr::new(0, 12), t);
        }
        let (worst, row) = d.worst();
        assert_eq!(worst, 4.0 * (1.0 + 1.0 + 0.5 + 0.5));
        assert_eq!(row, Some(RowAddr::new(0, 10)));
        // old contributions leave the window
        let mut d = DisturbanceOracle::new(10, &blast, 64);
        d.record(RowAddr::new(0, 1), 0);
        d.record(RowAddr::new(0, 1), 10);
        assert_eq!(d.worst().0, 1.0);
    }

    #[test]
    fn exposure_resets_on_activation() {
        let mut e = ExposureOracle::new(16);
        let v = RowAddr::new(0, 5);
        e.on_activate(RowAddr::new(0, 4));
        e.on_activate(RowAddr::new(0, 6));
        assert_eq!(e.exposure(v), 2);
        e.on_activate(v);
        assert_eq!(e.exposure(v), 0);
        assert_eq!(e.worst(), 2);
        e.on_activate(RowAddr::new(0, 15));
        assert_eq!(e.exposure(RowAddr::new(0, 14)), 1);
    }

    #[test]
    fn auditor_flags_each_timing_rule() {
        let t = DramTimings::ddr4();
        let mut a = TimingAuditor::new(&t);
        a.on_act(0, 0);
        a.on_act(0, t.t_rc - 1);
        assert!(matches!(a.violations(), [TimingViolation::Trc { .. }]));

        let mut a = TimingAuditor::new(&t);
        a.on_act(0, 0);
        a.on_act(1, 1);
        assert!(matches!(a.violations(), [TimingViolation::RankGap { .. }]));

        let mut a = TimingAuditor::new(&t);
        let gap = t.rank_act_gap();
        for i in 0..5 {
            a.on_act(i, u64::from(i) * gap);
        }
        // 4 * 8750 = 35000 = tFAW: the fifth ACT is exactly on time
        assert!(a.violations().is_empty());
        let mut a = TimingAuditor::new(&DramTimings { t_faw: 45_000, ..t });
        for i in 0..5 {
            a.on_act(i, u64::from(i) * 10_000);
        }
        assert!(a.violations().iter().any(|v| matches!(v, TimingViolation::Tfaw { at: 40_000, oldest: 0 })));
    }
}
