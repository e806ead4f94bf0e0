//! Epoch-census model of the worst-case attack and a search that checks it
//! against the real RowBlocker.
//!
//! From one CBF's point of view every epoch of an aggressor row falls into
//! one of five types, depending on whether the row reached `N_BL` in the
//! previous epoch and in the current one. Each type caps how many ACTs the
//! epoch can hold, and types can only follow certain other types. An attack
//! succeeds iff some census `(n_0..n_4)` of epoch types fitting in one
//! window exceeds the threshold while respecting those rules.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::config::{Picos, ResolvedConfig};
use crate::rowblocker::{RowAddr, RowBlocker, Verdict};
use crate::simcore::oracle::max_window_count;
use crate::simcore::MemRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EpochType {
    /// Below the threshold before and during the epoch, never blacklisted.
    T0,
    /// Below before; blacklisted late in the epoch, not carried over.
    T1,
    /// Below before; reaches `N_BL` so also blacklisted next epoch.
    T2,
    /// Blacklisted from the previous epoch; stays below `N_BL`.
    T3,
    /// Blacklisted throughout and reaches `N_BL` again.
    T4,
}

impl EpochType {
    pub const ALL: [EpochType; 5] = [Self::T0, Self::T1, Self::T2, Self::T3, Self::T4];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether an epoch of type `self` may directly follow one of type `prev`.
    pub fn may_follow(self, prev: EpochType) -> bool {
        let prev_below = matches!(prev, Self::T0 | Self::T1 | Self::T3);
        match self {
            Self::T0 | Self::T1 | Self::T2 => prev_below,
            Self::T3 | Self::T4 => !prev_below,
        }
    }
}

impl fmt::Display for EpochType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.index())
    }
}

/// How many epochs of each type an attack contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochCensus {
    pub n: [u32; 5],
}

impl EpochCensus {
    pub fn of(pairs: &[(EpochType, u32)]) -> Self {
        let mut c = Self::default();
        for &(t, k) in pairs {
            c.n[t.index()] += k;
        }
        c
    }

    pub fn epochs(&self) -> u32 {
        self.n.iter().sum()
    }

    pub fn get(&self, t: EpochType) -> u32 {
        self.n[t.index()]
    }

    /// Every distinct epoch order in which each epoch may follow the one before.
    pub fn orderings(&self) -> Vec<Vec<EpochType>> {
        fn go(left: &mut [u32; 5], cur: &mut Vec<EpochType>, out: &mut Vec<Vec<EpochType>>) {
            if left.iter().all(|&k| k == 0) {
                out.push(cur.clone());
                return;
            }
            for t in EpochType::ALL {
                if left[t.index()] == 0 || cur.last().is_some_and(|&prev| !t.may_follow(prev)) {
                    continue;
                }
                left[t.index()] -= 1;
                cur.push(t);
                go(left, cur, out);
                cur.pop();
                left[t.index()] += 1;
            }
        }
        let mut out = Vec::new();
        go(&mut self.n.clone(), &mut Vec::new(), &mut out);
        out
    }
}

impl fmt::Display for EpochCensus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<_> = EpochType::ALL
            .iter()
            .filter(|t| self.get(**t) > 0)
            .map(|t| alloc::format!("{t}:{}", self.get(*t)))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// The quantities the census model needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SecurityParams {
    pub n_bl: u32,
    pub n_rh_star: u32,
    pub t_ep: Picos,
    pub t_delay: Picos,
    pub t_rc: Picos,
    pub t_cbf: Picos,
    pub t_refw: Picos,
}

impl From<&ResolvedConfig> for SecurityParams {
    fn from(c: &ResolvedConfig) -> Self {
        Self {
            n_bl: c.params.n_bl,
            n_rh_star: c.derived.n_rh_star,
            t_ep: c.derived.epoch_len,
            t_delay: c.derived.t_delay,
            t_rc: c.timings.t_rc,
            t_cbf: c.params.t_cbf,
            t_refw: c.timings.t_refw,
        }
    }
}

impl SecurityParams {
    /// Whether `total` ACTs in one lifetime exceed `(t_cbf / t_refw) * n_rh_star`.
    pub fn exceeds(&self, total: u64) -> bool {
        u128::from(total) * u128::from(self.t_refw) > u128::from(self.n_rh_star) * u128::from(self.t_cbf)
    }

    /// Epochs that fit in one filter lifetime.
    pub fn max_epochs(&self) -> u32 {
        (self.t_cbf / self.t_ep) as u32
    }

    /// Census sizes enumerated: epochs that fit in one refresh window.
    pub fn window_epochs(&self) -> u32 {
        (self.t_refw / self.t_ep) as u32
    }
}

/// Largest ACT count an epoch of type `tag` can hold. `residual` is how many
/// more ACTs the row may take before reaching `N_BL` (`1..=N_BL`).
///
/// T2 solves `t_ep = residual * t_rc + (N - residual) * t_delay` for `N`.
/// T3 is capped by the delay as the row is blacklisted throughout.
pub fn nep_max(tag: EpochType, p: &SecurityParams, residual: u32) -> u64 {
    let paced = p.t_ep / p.t_delay;
    let n_bl = u64::from(p.n_bl);
    let r = u64::from(residual);
    match tag {
        EpochType::T0 => r.saturating_sub(1),
        EpochType::T1 => n_bl - 1,
        EpochType::T2 => {
            let num = u128::from(p.t_ep) + u128::from(r) * u128::from(p.t_delay.saturating_sub(p.t_rc));
            (num / u128::from(p.t_delay)) as u64
        }
        EpochType::T3 => (n_bl - 1).min(paced),
        EpochType::T4 => paced,
    }
}

/// The bounds as printed in the original table: T2 with a minus sign and T3
/// without the delay cap. Reported for comparison, not used for verdicts.
pub fn nep_max_printed(tag: EpochType, p: &SecurityParams, residual: u32) -> i64 {
    let r = i128::from(residual);
    match tag {
        EpochType::T2 => {
            let num = i128::from(p.t_ep) - r * i128::from(p.t_delay.saturating_sub(p.t_rc));
            num.div_euclid(i128::from(p.t_delay)) as i64
        }
        EpochType::T3 => i64::from(p.n_bl) - 1,
        t => nep_max(t, p, residual) as i64,
    }
}

/// Predecessor rules in summed form. With `first_epoch_slack` each side may
/// exceed its predecessor total by one, for an initial epoch with no predecessor.
fn predecessors_ok(c: &EpochCensus, first_epoch_slack: bool) -> bool {
    let n = c.n.map(u64::from);
    let slack = u64::from(first_epoch_slack);
    n[0] + n[1] + n[2] <= n[0] + n[1] + n[3] + slack && n[3] + n[4] <= n[2] + n[4] + slack
}

pub fn census_total(c: &EpochCensus, p: &SecurityParams, residual: u32) -> u64 {
    EpochType::ALL.iter().map(|&t| u64::from(c.get(t)) * nep_max(t, p, residual)).sum()
}

/// Constraint (1): the census exceeds the lifetime threshold and fits in one lifetime.
pub fn exceeds_and_fits(c: &EpochCensus, p: &SecurityParams, residual: u32) -> bool {
    p.exceeds(census_total(c, p, residual)) && u128::from(p.t_ep) * u128::from(c.epochs()) <= u128::from(p.t_cbf)
}

/// One epoch of a concrete attack plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochPlan {
    pub tag: EpochType,
    /// ACTs the row gets in this epoch.
    pub acts: u64,
    /// ACTs left before the row reaches `N_BL` on entry; 0 when it enters blacklisted.
    pub residual: u32,
}

/// Count range an epoch of type `tag` can hold when entered with `residual`
/// (0 = blacklisted on entry), or `None` if the type is impossible there.
fn count_range(tag: EpochType, p: &SecurityParams, residual: u32) -> Option<(u64, u64)> {
    let n_bl = u64::from(p.n_bl);
    let r = u64::from(residual);
    match (tag, residual) {
        (EpochType::T0, 1..) => Some((0, r - 1)),
        (EpochType::T1, 1..) => {
            let hi = (n_bl - 1).min(nep_max(EpochType::T2, p, residual));
            (r <= hi).then_some((r, hi))
        }
        (EpochType::T2, 1..) => {
            let hi = nep_max(EpochType::T2, p, residual);
            (hi >= n_bl).then_some((hi, hi))
        }
        (EpochType::T3, 0) => Some((0, nep_max(EpochType::T3, p, residual))),
        (EpochType::T4, 0) => {
            let hi = nep_max(EpochType::T4, p, residual);
            (hi >= n_bl).then_some((hi, hi))
        }
        _ => None,
    }
}

/// Residual after an epoch ending with `acts` ACTs: counts of a below-threshold
/// epoch carry into the next epoch's active filter.
fn next_residual(tag: EpochType, p: &SecurityParams, acts: u64) -> u32 {
    match tag {
        EpochType::T2 | EpochType::T4 => 0,
        _ => p.n_bl - acts as u32,
    }
}

/// Best plan for a fixed epoch order. The first epoch's predecessor lies
/// outside the window so its residual is free; every later residual follows
/// from the previous epoch's count.
pub fn best_plan(order: &[EpochType], p: &SecurityParams) -> Option<(u64, Vec<EpochPlan>)> {
    let states = p.n_bl as usize + 1;
    // (total so far, parent state, acts in this epoch)
    type Cell = Option<(u64, usize, u64)>;
    let mut layers: Vec<Vec<Cell>> = Vec::with_capacity(order.len() + 1);
    layers.push(alloc::vec![Some((0, usize::MAX, 0)); states]);
    for (i, &tag) in order.iter().enumerate() {
        let last_epoch = i + 1 == order.len();
        let prev = layers.last().unwrap();
        let mut next: Vec<Cell> = alloc::vec![None; states];
        let mut offer = |acts: u64, total: u64, state: usize| {
            let s = next_residual(tag, p, acts) as usize;
            if next[s].is_none_or(|(best, _, _)| total + acts > best) {
                next[s] = Some((total + acts, state, acts));
            }
        };
        // (lo, hi, total so far, state) for every state the epoch can follow
        let mut spans: Vec<(u64, u64, u64, usize)> = prev
            .iter()
            .enumerate()
            .filter_map(|(state, cell)| {
                let (total, _, _) = (*cell)?;
                let (lo, hi) = count_range(tag, p, state as u32)?;
                Some((lo, hi, total, state))
            })
            .collect();
        let interior = !last_epoch && matches!(tag, EpochType::T0 | EpochType::T1 | EpochType::T3);
        if !interior {
            for &(_, hi, total, state) in &spans {
                offer(hi, total, state);
            }
        } else if let (Some(min_lo), Some(max_hi)) = (spans.iter().map(|s| s.0).min(), spans.iter().map(|s| s.1).max())
        {
            // fewer ACTs can pay off through a larger residual later, so every
            // count is tried, each with the best predecessor whose range covers it
            spans.sort_unstable_by_key(|s| (s.0, s.3));
            let mut open: BinaryHeap<(u64, Reverse<usize>, u64)> = BinaryHeap::new();
            let mut pending = spans.iter().peekable();
            for acts in min_lo..=max_hi {
                while let Some(&(_, hi, total, state)) = pending.next_if(|s| s.0 <= acts) {
                    open.push((total, Reverse(state), hi));
                }
                while open.peek().is_some_and(|top| top.2 < acts) {
                    open.pop();
                }
                if let Some(&(total, Reverse(state), _)) = open.peek() {
                    offer(acts, total, state);
                }
            }
        }
        layers.push(next);
    }
    let last = layers.last().unwrap();
    let (mut state, &(total, _, _)) =
        last.iter().enumerate().filter_map(|(s, c)| c.as_ref().map(|c| (s, c))).max_by_key(|(_, c)| c.0)?;
    let mut plan = Vec::with_capacity(order.len());
    for (i, &tag) in order.iter().enumerate().rev() {
        let (_, parent, acts) = layers[i + 1][state].unwrap();
        plan.push(EpochPlan { tag, acts, residual: parent as u32 });
        state = parent;
    }
    plan.reverse();
    Some((total, plan))
}

/// Best plan over every order consistent with the census.
pub fn census_best(c: &EpochCensus, p: &SecurityParams) -> Option<(u64, Vec<EpochPlan>)> {
    c.orderings().iter().filter_map(|o| best_plan(o, p)).max_by_key(|(total, _)| *total)
}

/// Whether `c` describes a successful attack for the best residual choices.
pub fn check_census(c: &EpochCensus, p: &SecurityParams) -> bool {
    check_census_with(c, p, false)
}

pub fn check_census_with(c: &EpochCensus, p: &SecurityParams, first_epoch_slack: bool) -> bool {
    feasible(c, p, first_epoch_slack) && census_best(c, p).is_some_and(|(total, _)| p.exceeds(total))
}

fn feasible(c: &EpochCensus, p: &SecurityParams, first_epoch_slack: bool) -> bool {
    predecessors_ok(c, first_epoch_slack) && u128::from(p.t_ep) * u128::from(c.epochs()) <= u128::from(p.t_cbf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SecurityVerdict {
    pub satisfiable: bool,
    pub witness: Option<EpochCensus>,
    pub witness_plan: Option<Vec<EpochPlan>>,
    /// Largest total over every census that satisfies the ordering and time
    /// constraints, whether or not it exceeds the threshold.
    pub max_total_acts: u64,
    pub max_total_census: EpochCensus,
    /// `(t_cbf / t_refw) * n_rh_star`, rounded down.
    pub threshold: u64,
    pub censuses_checked: u64,
}

fn censuses(max_epochs: u32) -> impl Iterator<Item = EpochCensus> {
    let m = max_epochs;
    (0..=m).flat_map(move |a| {
        (0..=m - a).flat_map(move |b| {
            (0..=m - a - b).flat_map(move |c| {
                (0..=m - a - b - c)
                    .flat_map(move |d| (0..=m - a - b - c - d).map(move |e| EpochCensus { n: [a, b, c, d, e] }))
            })
        })
    })
}

/// Exhaustive search over every census fitting in one refresh window, every
/// epoch order and every admissible residual.
pub fn verify_unsat(p: &SecurityParams) -> SecurityVerdict {
    verify_with(p, false)
}

pub fn verify_with(p: &SecurityParams, first_epoch_slack: bool) -> SecurityVerdict {
    let mut v = SecurityVerdict {
        satisfiable: false,
        witness: None,
        witness_plan: None,
        max_total_acts: 0,
        max_total_census: EpochCensus::default(),
        threshold: (u128::from(p.n_rh_star) * u128::from(p.t_cbf) / u128::from(p.t_refw)) as u64,
        censuses_checked: 0,
    };
    for c in censuses(p.window_epochs()) {
        v.censuses_checked += 1;
        if !feasible(&c, p, first_epoch_slack) {
            continue;
        }
        let Some((total, plan)) = census_best(&c, p) else { continue };
        if total > v.max_total_acts {
            v.max_total_acts = total;
            v.max_total_census = c;
            if p.exceeds(total) {
                v.satisfiable = true;
                v.witness = Some(c);
                v.witness_plan = Some(plan);
            }
        }
    }
    v
}

/// One row of the per-type bound table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundRow {
    pub tag: EpochType,
    pub nep_max: u64,
    pub printed: i64,
}

/// Per-type bounds at the attacker-optimal residual (`N_BL`).
pub fn bound_table(p: &SecurityParams) -> Vec<BoundRow> {
    EpochType::ALL
        .iter()
        .map(|&tag| BoundRow { tag, nep_max: nep_max(tag, p, p.n_bl), printed: nep_max_printed(tag, p, p.n_bl) })
        .collect()
}

/// ACT times for one row realizing `plan`, epoch by epoch, starting at 0.
/// Up to `residual` ACTs of an epoch go `fast_gap` apart, the rest `t_delay`.
pub fn witness_schedule(plan: &[EpochPlan], p: &SecurityParams, fast_gap: Picos) -> Vec<Picos> {
    let mut out: Vec<Picos> = Vec::new();
    for (e, ep) in plan.iter().enumerate() {
        let start = e as u64 * p.t_ep;
        let end = start + p.t_ep;
        let fast = ep.acts.min(u64::from(ep.residual));
        // a blacklisted row must keep t_delay from its previous ACT
        let mut t = match out.last() {
            Some(&last) if fast == 0 => (last + p.t_delay).max(start),
            _ => start,
        };
        for i in 0..ep.acts {
            if t >= end {
                break;
            }
            out.push(t);
            t += if i + 1 < fast { fast_gap } else { p.t_delay };
        }
    }
    out
}

/// Simulator trace replaying `plan` as a double-sided attack on bank 0: both
/// aggressors of the victim follow the schedule, one request slot apart.
/// ACTs rotate over every thread so no single `<thread, bank>` pair is
/// throttled; the census model bounds what RowBlocker alone admits.
pub fn witness_trace(plan: &[EpochPlan], cfg: &ResolvedConfig) -> Vec<MemRequest> {
    let p = SecurityParams::from(cfg);
    let t = &cfg.timings;
    let pace = t.t_rc.max(t.rank_act_gap());
    let victim = t.rows_per_bank / 2;
    let threads = u64::from(t.threads.max(1));
    let mut out = Vec::new();
    for (i, at) in witness_schedule(plan, &p, 2 * pace).into_iter().enumerate() {
        for (j, (row, ready_at)) in [(victim - 1, at), (victim + 1, at + pace)].into_iter().enumerate() {
            let k = 2 * i as u64 + j as u64;
            out.push(MemRequest { thread: (k % threads) as u16, bank: 0, row, ready_at, seq: k });
        }
    }
    out
}

/// Outcome of driving RowBlocker with adversarial single-row schedules.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrossReport {
    pub candidates: u64,
    /// Worst count in an epoch-aligned filter lifetime `[k * t_ep, k * t_ep + t_cbf)`.
    pub aligned_max: u64,
    /// Worst count in any sliding refresh window.
    pub sliding_max: u64,
    pub bound: u64,
    pub analytic_satisfiable: bool,
    /// `aligned_max > bound` matches the census verdict.
    pub agrees: bool,
}

#[derive(Debug, Clone, Copy)]
enum Placement {
    /// As early as the row's state allows.
    Early,
    /// As late as possible so the ACTs end at the epoch boundary.
    Late,
    /// Start at a given fraction (per mille) into the epoch.
    At(u32),
}

/// Greedily performs up to `budget[e]` ACTs per epoch, each at the earliest
/// time RowBlocker allows given the placement; returns the ACT times.
fn drive(rb: &mut RowBlocker, p: &SecurityParams, plan: &[(u32, Placement)]) -> Vec<Picos> {
    let row = RowAddr::new(0, 1);
    let mut acts: Vec<Picos> = Vec::new();
    for (e, &(budget, place)) in plan.iter().enumerate() {
        let start = e as u64 * p.t_ep;
        let end = start + p.t_ep;
        let first = match place {
            Placement::Early => start,
            Placement::Late => end.saturating_sub(u64::from(budget) * p.t_rc).max(start),
            Placement::At(pm) => start + p.t_ep * u64::from(pm) / 1000,
        };
        let mut t = first;
        for _ in 0..budget {
            if let Some(&last) = acts.last() {
                t = t.max(last + p.t_rc);
            }
            if t >= end {
                break;
            }
            rb.on_epoch_tick(t);
            if rb.is_act_safe(row, t) == Verdict::Unsafe {
                t = rb.safe_at(row, t).expect("unsafe implies a pending delay");
                if t >= end {
                    break;
                }
                rb.on_epoch_tick(t);
                if rb.is_act_safe(row, t) == Verdict::Unsafe {
                    break;
                }
            }
            rb.on_activate(row, t).expect("single-row history cannot overflow");
            acts.push(t);
            t += p.t_rc;
        }
    }
    acts
}

fn aligned_max(acts: &[Picos], p: &SecurityParams) -> u64 {
    let Some(&last) = acts.last() else { return 0 };
    let mut best = 0;
    let mut k = 0;
    while k * p.t_ep <= last {
        let lo = k * p.t_ep;
        let hi = lo + p.t_cbf;
        let n = acts.iter().filter(|&&t| t >= lo && t < hi).count() as u64;
        best = best.max(n);
        k += 1;
    }
    best
}

/// Adversarial search through the actual RowBlocker: a grid of per-epoch
/// budgets and placements, then `random_candidates` random plans. `cfg`
/// should be small (a single bank is enough; only one row is attacked).
pub fn cross_validate(cfg: &ResolvedConfig, random_candidates: u64, seed: u64) -> CrossReport {
    let p = SecurityParams::from(cfg);
    let mut one_bank = cfg.clone();
    one_bank.timings.banks_per_rank = 1;
    let epochs = (2 * p.window_epochs()).max(4) as usize;
    let n_bl = p.n_bl;
    let full = (p.t_ep / p.t_rc) as u32 + 1;
    let budgets = [0, n_bl / 2, n_bl.saturating_sub(1), n_bl, n_bl + 1, 2 * n_bl, full];
    let placements = [Placement::Early, Placement::Late, Placement::At(500)];

    let mut report = CrossReport {
        candidates: 0,
        aligned_max: 0,
        sliding_max: 0,
        bound: (u128::from(p.n_rh_star) * u128::from(p.t_cbf) / u128::from(p.t_refw)) as u64,
        analytic_satisfiable: verify_unsat(&p).satisfiable,
        agrees: false,
    };
    let mut evaluate = |plan: &[(u32, Placement)], rb_seed: u64| {
        let mut rb = RowBlocker::new(&one_bank, rb_seed);
        let acts = drive(&mut rb, &p, plan);
        report.candidates += 1;
        report.aligned_max = report.aligned_max.max(aligned_max(&acts, &p));
        report.sliding_max = report.sliding_max.max(max_window_count(&acts, p.t_refw) as u64);
    };

    // grid over the first three epochs, the rest hammered greedily
    for &b0 in &budgets {
        for &b1 in &budgets {
            for &b2 in &budgets {
                for &pl in &placements {
                    let mut plan = alloc::vec![(full, Placement::Early); epochs];
                    plan[0] = (b0, pl);
                    plan[1] = (b1, pl);
                    plan[2] = (b2, Placement::Early);
                    evaluate(&plan, 0);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..random_candidates {
        let plan: Vec<(u32, Placement)> = (0..epochs)
            .map(|_| {
                let budget = match rng.random_range(0..4u8) {
                    0 => rng.random_range(0..=n_bl + 1),
                    1 => full,
                    2 => rng.random_range(n_bl.saturating_sub(2)..=n_bl + 2),
                    _ => rng.random_range(0..=full),
                };
                let place = match rng.random_range(0..3u8) {
                    0 => Placement::Early,
                    1 => Placement::Late,
                    _ => Placement::At(rng.random_range(0..1000)),
                };
                (budget, place)
            })
            .collect();
        evaluate(&plan, i);
    }
    report.agrees = (report.aligned_max > report.bound) == report.analytic_satisfiable;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Config, APPENDIX_ROWS};

    fn table1() -> SecurityParams {
        SecurityParams::from(&Config::table1().resolve().unwrap())
    }

    fn halved(mut c: Config) -> SecurityParams {
        let d = c.resolve().unwrap().derived.t_delay;
        c.t_delay_override = Some(d / 2);
        SecurityParams::from(&c.resolve().unwrap())
    }

    #[test]
    fn table1_bounds() {
        let p = table1();
        assert_eq!(nep_max(EpochType::T4, &p, 8_192), 4_120);
        assert_eq!(nep_max(EpochType::T0, &p, 8_192), 8_191);
        assert_eq!(nep_max(EpochType::T1, &p, 8_192), 8_191);
        assert_eq!(nep_max(EpochType::T2, &p, 8_192), 12_263);
        assert_eq!(nep_max(EpochType::T3, &p, 8_192), 4_120);
        assert_eq!(nep_max_printed(EpochType::T3, &p, 8_192), 8_191);
        // floor((32 ms - 8192 * (t_delay - t_rc)) / t_delay)
        assert_eq!(nep_max_printed(EpochType::T2, &p, 8_192), -4_023);
    }

    #[test]
    fn census_checks() {
        let p = table1();
        assert!(!check_census(&EpochCensus::default(), &p));
        // n2 > n3 violates the ordering rules
        assert!(!check_census(&EpochCensus::of(&[(EpochType::T2, 2)]), &p));
        let c = EpochCensus::of(&[(EpochType::T2, 1), (EpochType::T3, 1)]);
        assert_eq!(census_total(&c, &p, 8_192), 16_383);
        assert!(!check_census(&c, &p));
    }

    #[test]
    fn table1_is_unsat() {
        let v = verify_unsat(&table1());
        assert!(!v.satisfiable);
        assert_eq!(v.witness, None);
        assert_eq!(v.threshold, 16_384);
        assert_eq!(v.max_total_acts, 16_383);
    }

    #[test]
    fn appendix_rows_are_unsat() {
        let expect = [(32_768, 16_383), (16_384, 8_191), (8_192, 4_095), (4_096, 2_047), (2_048, 1_023), (1_024, 511)];
        for ((n_rh, _), (n, total)) in APPENDIX_ROWS.iter().zip(expect) {
            assert_eq!(*n_rh, n);
            let p = SecurityParams::from(&Config::appendix(n).unwrap().resolve().unwrap());
            let v = verify_unsat(&p);
            assert!(!v.satisfiable, "N_RH = {n}");
            assert_eq!(v.max_total_acts, total, "N_RH = {n}");
        }
    }

    #[test]
    fn halved_delay_is_sat() {
        let p = halved(Config::table1());
        assert_eq!(p.t_delay, 3_883_125);
        let v = verify_unsat(&p);
        assert!(v.satisfiable);
        let w = v.witness.unwrap();
        assert_eq!(w, EpochCensus::of(&[(EpochType::T2, 1), (EpochType::T3, 1)]));
        let plan = v.witness_plan.unwrap();
        assert_eq!(
            plan.iter().map(|e| (e.tag, e.acts)).collect::<Vec<_>>(),
            [(EpochType::T2, 16_335), (EpochType::T3, 8_191)]
        );
        assert_eq!(v.max_total_acts, 16_335 + 8_191);
    }

    #[test]
    fn first_epoch_slack_stays_unsat() {
        let p = table1();
        // the summed rules alone would admit T1 then T2, but the T1 count
        // shrinks the residual T2 starts with
        let v = verify_with(&p, true);
        assert!(!v.satisfiable);
        assert_eq!(v.max_total_acts, 16_383);
        let (total, plan) = best_plan(&[EpochType::T1, EpochType::T2], &p).unwrap();
        assert_eq!(total, 12_288);
        assert_eq!((plan[0].acts, plan[1].residual), (4_096, 4_096));
    }

    #[test]
    fn coupled_residuals_bound_below_threshold_epochs() {
        // two below-threshold epochs share one active filter
        let p = SecurityParams {
            n_bl: 4,
            n_rh_star: 5,
            t_ep: 32_000_000_000,
            t_delay: 63_999_996_000,
            t_rc: 1_000,
            t_cbf: 64_000_000_000,
            t_refw: 64_000_000_000,
        };
        let c = EpochCensus::of(&[(EpochType::T0, 1), (EpochType::T1, 1)]);
        assert!(p.exceeds(census_total(&c, &p, 4)));
        assert_eq!(census_best(&c, &p).unwrap().0, 4);
        assert!(!check_census(&c, &p));
    }

    #[test]
    fn bound_table_lists_all_types() {
        let rows = bound_table(&table1());
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[2].nep_max, 12_263);
    }

    #[test]
    fn predecessor_relation() {
        use EpochType::*;
        assert!(T2.may_follow(T1) && T2.may_follow(T3) && !T2.may_follow(T2));
        assert!(T4.may_follow(T2) && T3.may_follow(T4) && !T3.may_follow(T1));
        assert_eq!(EpochCensus::of(&[(T2, 1), (T3, 1)]).orderings(), [vec![T2, T3], vec![T3, T2]]);
        let c = EpochCensus::of(&[(T0, 1), (T2, 2), (T3, 2), (T4, 1)]);
        let orders = c.orderings();
        assert!(!orders.is_empty());
        assert!(orders.iter().all(|o| o.len() == 6 && o.windows(2).all(|w| w[1].may_follow(w[0]))));
    }

    #[test]
    fn witness_schedule_reaches_census_total() {
        let p = halved(Config::table1());
        let v = verify_unsat(&p);
        let acts = witness_schedule(&v.witness_plan.unwrap(), &p, p.t_rc);
        assert!(p.exceeds(acts.len() as u64), "{}", acts.len());
        assert!(acts.windows(2).all(|w| w[1] - w[0] >= p.t_rc));
    }

    #[test]
    fn halved_witness_replays_past_the_bound() {
        use crate::mitigations::MechanismKind;
        use crate::simcore::{run, SimOptions};
        let mut c = Config::table1();
        c.t_delay_override = Some(3_883_125);
        let cfg = c.resolve().unwrap();
        let v = verify_unsat(&SecurityParams::from(&cfg));
        let trace = witness_trace(&v.witness_plan.unwrap(), &cfg);
        let m = run(&trace, &cfg, &SimOptions::new(MechanismKind::BlockHammer)).unwrap();
        assert!(m.oracle_violated(), "{} <= {}", m.max_window_count, m.window_bound);
        assert!(m.timing_violations.is_empty());
    }

    #[test]
    fn scaled_cross_validation_agrees() {
        let cfg = Config::scaled().resolve().unwrap();
        let r = cross_validate(&cfg, 2_000, 1);
        assert!(!r.analytic_satisfiable);
        assert!(r.aligned_max <= r.bound && r.sliding_max <= r.bound, "{r:?}");
        assert!(r.agrees);
    }

    #[test]
    fn broken_scaled_config_is_found() {
        let mut c = Config::scaled();
        c.t_delay_override = Some(c.resolve().unwrap().derived.t_delay / 2);
        let cfg = c.resolve().unwrap();
        let r = cross_validate(&cfg, 200, 2);
        assert!(r.analytic_satisfiable);
        assert!(r.aligned_max > r.bound);
        assert!(r.agrees);
    }

    #[test]
    fn delay_dominated_config() {
        let mut c = Config::scaled();
        c.params.n_bl = 63;
        let cfg = c.resolve().unwrap();
        assert!(cfg.derived.t_delay > 240_000_000);
        let r = cross_validate(&cfg, 200, 3);
        assert!(r.agrees && !r.analytic_satisfiable);
        assert!(r.aligned_max >= 63 && r.aligned_max <= 64, "{r:?}");
    }

    #[test]
    fn unaligned_windows_can_exceed_when_n_bl_is_large() {
        let mut c = Config::scaled();
        c.params.n_bl = 32;
        let cfg = c.resolve().unwrap();
        let r = cross_validate(&cfg, 500, 4);
        assert!(r.agrees && !r.analytic_satisfiable);
        assert!(r.aligned_max <= r.bound);
        // N_BL - 1 late in one epoch, N_BL - 1 early in the next, then paced:
        // the lifetime guarantee does not cover windows straddling two lifetimes
        assert!(r.sliding_max > r.bound, "{r:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_params() -> impl Strategy<Value = SecurityParams> {
            (2u32..4_000, 1u32..100, 1u64..200).prop_filter_map("valid", |(n_rh_star, frac, t_rc_ns)| {
                let n_bl = (n_rh_star * frac / 100).max(1);
                let t_refw = 64_000_000_000u64;
                let t_rc = t_rc_ns * 1_000;
                let t_delay = crate::config::tdelay_for(n_rh_star, n_bl, t_refw, t_refw, t_rc).ok()?;
                (t_delay > t_rc).then_some(SecurityParams {
                    n_bl,
                    n_rh_star,
                    t_ep: t_refw / 2,
                    t_delay,
                    t_rc,
                    t_cbf: t_refw,
                    t_refw,
                })
            })
        }

        proptest! {
            #[test]
            fn t4_never_beats_t2(p in any_params(), r in 1u32..10_000) {
                let r = r.min(p.n_bl);
                prop_assert!(nep_max(EpochType::T4, &p, r) <= nep_max(EpochType::T2, &p, r));
            }

            #[test]
            fn adding_epochs_keeps_threshold_exceeded(p in any_params(), n in proptest::array::uniform5(0u32..3), extra in 0usize..5) {
                let c = EpochCensus { n };
                let mut bigger = c;
                bigger.n[extra] += 1;
                let r = p.n_bl;
                if p.exceeds(census_total(&c, &p, r)) {
                    prop_assert!(p.exceeds(census_total(&bigger, &p, r)));
                }
            }

            #[test]
            fn plan_search_matches_brute_force(p in any_params(), a in 0usize..5, b in 0usize..5) {
                prop_assume!(p.n_bl <= 300);
                let order = [EpochType::ALL[a], EpochType::ALL[b]];
                let mut brute: Option<u64> = None;
                for r0 in 0..=p.n_bl {
                    let Some((lo, hi)) = count_range(order[0], &p, r0) else { continue };
                    for c0 in lo..=hi {
                        let r1 = next_residual(order[0], &p, c0);
                        if let Some((_, h1)) = count_range(order[1], &p, r1) {
                            brute = brute.max(Some(c0 + h1));
                        }
                    }
                }
                prop_assert_eq!(best_plan(&order, &p).map(|b| b.0), brute);
            }

            #[test]
            fn derived_configs_are_unsat(p in any_params()) {
                prop_assert!(!verify_unsat(&p).satisfiable);
            }
        }
    }
}
