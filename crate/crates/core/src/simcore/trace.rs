//! Synthetic workloads: timing-limited attack patterns, seeded adversarial
//! fuzz traces and Zipf-popularity benign threads.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Exp, Zipf};

use crate::config::{Picos, ResolvedConfig, PS_PER_MS};
use crate::simcore::MemRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Two rows sandwiching the victim, alternated on every ACT.
    DoubleSided,
    /// `n` rows around the victim (`v-1, v+1, v-2, v+2, ...`), round-robin.
    ManySided(u32),
    /// Quiet until just before the first epoch boundary, then a double-sided
    /// burst timed so each aggressor reaches `N_BL - 1` before the boundary.
    EpochStraddle,
    /// Seeded random mix of dense, sparse, idle and boundary-aligned segments.
    Fuzz(u64),
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DoubleSided => f.write_str("double_sided"),
            Self::ManySided(n) => write!(f, "many_sided({n})"),
            Self::EpochStraddle => f.write_str("epoch_straddle"),
            Self::Fuzz(seed) => write!(f, "fuzz({seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceError {
    ManySidedTooWide {
        n: u32,
        max: u32,
    },
    ManySidedTooNarrow,
    /// The attack rows do not fit around the victim.
    RowOutOfRange {
        row: i64,
    },
    UnknownGenerator,
    NoThreads,
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ManySidedTooWide { n, max } => {
                write!(f, "many_sided({n}) exceeds twice the blast radius ({max})")
            }
            Self::ManySidedTooNarrow => f.write_str("many_sided needs at least 2 rows"),
            Self::RowOutOfRange { row } => write!(f, "attack row {row} is outside the bank"),
            Self::UnknownGenerator => {
                f.write_str("expected attack:{double_sided,many_sided(N),epoch_straddle,fuzz(SEED)} or benign:{L,M,H}")
            }
            Self::NoThreads => f.write_str("benign generator needs at least one thread"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TraceError {}

/// Where and for how long an attack runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub thread: u16,
    pub bank: u16,
    pub victim: u32,
    pub start: Picos,
    pub duration: Picos,
}

impl AttackSpec {
    /// Thread 0 on bank 0, victim in the middle of the bank, two refresh windows.
    pub fn new(kind: AttackKind, cfg: &ResolvedConfig) -> Self {
        Self {
            kind,
            thread: 0,
            bank: 0,
            victim: cfg.timings.rows_per_bank / 2,
            start: 0,
            duration: 2 * cfg.timings.t_refw,
        }
    }
}

fn row_at(victim: u32, offset: i64, rows: u32) -> Result<u32, TraceError> {
    let row = i64::from(victim) + offset;
    if row < 0 || row >= i64::from(rows) {
        return Err(TraceError::RowOutOfRange { row });
    }
    Ok(row as u32)
}

/// Aggressor rows of a many-sided pattern, nearest first.
pub fn many_sided_rows(victim: u32, n: u32, rows: u32) -> Result<Vec<u32>, TraceError> {
    (0..i64::from(n))
        .map(|i| {
            let k = i / 2 + 1;
            row_at(victim, if i % 2 == 0 { -k } else { k }, rows)
        })
        .collect()
}

struct Emitter {
    thread: u16,
    bank: u16,
    out: Vec<MemRequest>,
}

impl Emitter {
    fn push(&mut self, ready_at: Picos, row: u32) {
        self.out.push(MemRequest { thread: self.thread, bank: self.bank, row, ready_at, seq: 0 });
    }

    /// Round-robin over `rows`, one request every `pace`, `count` requests.
    fn hammer(&mut self, rows: &[u32], from: Picos, pace: Picos, count: u64) -> Picos {
        for i in 0..count {
            self.push(from + i * pace, rows[(i % rows.len() as u64) as usize]);
        }
        from + count * pace
    }
}

pub fn gen_attack_trace(spec: &AttackSpec, cfg: &ResolvedConfig) -> Result<Vec<MemRequest>, TraceError> {
    let t = &cfg.timings;
    let rows = t.rows_per_bank;
    let pace = t.t_rc.max(t.rank_act_gap());
    let end = spec.start + spec.duration;
    let mut em = Emitter { thread: spec.thread, bank: spec.bank, out: Vec::new() };
    let pair = [row_at(spec.victim, -1, rows)?, row_at(spec.victim, 1, rows)?];
    match spec.kind {
        AttackKind::DoubleSided => {
            em.hammer(&pair, spec.start, pace, spec.duration / pace);
        }
        AttackKind::ManySided(n) => {
            let max = 2 * cfg.params.blast.blast_radius() as u32;
            if n > max {
                return Err(TraceError::ManySidedTooWide { n, max });
            }
            if n < 2 {
                return Err(TraceError::ManySidedTooNarrow);
            }
            let set = many_sided_rows(spec.victim, n, rows)?;
            em.hammer(&set, spec.start, pace, spec.duration / pace);
        }
        AttackKind::EpochStraddle => {
            let ep = cfg.derived.epoch_len;
            let boundary = (spec.start / ep + 1) * ep;
            let fast = 2 * u64::from(cfg.params.n_bl - 1);
            let from = boundary.saturating_sub(fast * pace).max(spec.start);
            em.hammer(&pair, from, pace, end.saturating_sub(from) / pace);
        }
        AttackKind::Fuzz(seed) => fuzz(&mut em, spec, cfg, seed)?,
    }
    Ok(em.out)
}

fn fuzz(em: &mut Emitter, spec: &AttackSpec, cfg: &ResolvedConfig, seed: u64) -> Result<(), TraceError> {
    let t = &cfg.timings;
    let pace = t.t_rc.max(t.rank_act_gap());
    let ep = cfg.derived.epoch_len;
    let n_bl = u64::from(cfg.params.n_bl);
    let bound = u64::from(cfg.lifetime_threshold());
    let end = spec.start + spec.duration;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut offsets: Vec<i64> = (-4..=4).filter(|&o| o != 0).collect();
    offsets.shuffle(&mut rng);
    let k = rng.random_range(2..=4usize);
    let pool = offsets[..k].iter().map(|&o| row_at(spec.victim, o, t.rows_per_bank)).collect::<Result<Vec<_>, _>>()?;

    // One dense phase in which every pool row exceeds the bound, so the
    // unprotected run of every fuzz trace is unsafe. Time for it is held
    // back from the other segments so it always fits before `end`.
    let forced_at = rng.random_range(0..4usize);
    let forced_count = (bound + 1) * k as u64 + k as u64 + rng.random_range(0..=bound);
    let limit = end.saturating_sub((forced_count + 1) * pace).max(spec.start);
    let mut forced = false;
    let mut now = spec.start;
    let mut segment = 0;
    while now < end {
        if !forced && (segment == forced_at || now >= limit) {
            now = em.hammer(&pool, now, pace, forced_count);
            forced = true;
            segment += 1;
            continue;
        }
        let stop = if forced { end } else { limit };
        let room = stop.saturating_sub(now) / pace;
        let mut subset = pool.clone();
        subset.shuffle(&mut rng);
        subset.truncate(rng.random_range(1..=k));
        match rng.random_range(0..4u8) {
            0 => {
                let count = rng.random_range(1..=4 * (bound + 1)).min(room.max(1));
                now = em.hammer(&subset, now, pace, count);
            }
            1 => {
                for _ in 0..rng.random_range(1..=64) {
                    let next = now + rng.random_range(pace..=2 * cfg.derived.t_delay);
                    if next >= stop {
                        now = stop;
                        break;
                    }
                    now = next;
                    em.push(now, subset[rng.random_range(0..subset.len())]);
                }
            }
            2 => now = (now + rng.random_range(0..ep)).min(stop),
            _ => {
                let boundary = (now / ep + 1) * ep;
                let lead = rng.random_range(0..=2 * n_bl) * pace;
                let from = now.max(boundary.saturating_sub(lead));
                if from >= stop {
                    now = stop;
                } else {
                    let count = rng.random_range(n_bl..=4 * n_bl).min(((stop - from) / pace).max(1));
                    now = em.hammer(&pool, from, pace, count);
                }
            }
        }
        segment += 1;
    }
    em.out.retain(|r| r.ready_at < end);
    Ok(())
}

/// Benign intensity classes, by row-buffer conflicts per kilo-instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenignCategory {
    L,
    M,
    H,
}

impl BenignCategory {
    /// Mean inter-arrival time, probability of re-touching the previous row,
    /// and the per-row activation cap per 64 ms.
    pub fn profile(self) -> (Picos, f64, u32) {
        match self {
            Self::L => (200_000, 0.9, 78),
            Self::M => (80_000, 0.6, 109),
            Self::H => (30_000, 0.2, 314),
        }
    }

    /// Per-row cap scaled to the configured refresh window (at least 1).
    pub fn row_cap(self, t_refw: Picos) -> u32 {
        let (_, _, cap) = self.profile();
        ((u128::from(cap) * u128::from(t_refw) / u128::from(64 * PS_PER_MS)) as u32).max(1)
    }
}

impl FromStr for BenignCategory {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" | "l" => Ok(Self::L),
            "M" | "m" => Ok(Self::M),
            "H" | "h" => Ok(Self::H),
            _ => Err(TraceError::UnknownGenerator),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenignSpec {
    pub category: BenignCategory,
    /// Thread ids to generate; rows are partitioned so threads never share one.
    pub threads: Vec<u16>,
    pub seed: u64,
    pub start: Picos,
    pub duration: Picos,
    /// Zipf exponent of row popularity.
    pub zipf_s: f64,
    /// Distinct rows per `<thread, bank>`.
    pub working_set: u32,
}

impl BenignSpec {
    pub fn new(category: BenignCategory, threads: Vec<u16>, seed: u64, cfg: &ResolvedConfig) -> Self {
        Self { category, threads, seed, start: 0, duration: 2 * cfg.timings.t_refw, zipf_s: 1.1, working_set: 2_048 }
    }
}

/// Requests whose per-row count in every trailing refresh window stays
/// within the category cap (resampling the row when a pick would exceed it).
pub fn gen_benign_trace(spec: &BenignSpec, cfg: &ResolvedConfig) -> Result<Vec<MemRequest>, TraceError> {
    if spec.threads.is_empty() {
        return Err(TraceError::NoThreads);
    }
    let t = &cfg.timings;
    let stride = u32::from(t.threads);
    let working_set = spec.working_set.min(t.rows_per_bank / stride).max(1);
    let (mean_gap, locality, _) = spec.category.profile();
    let cap = spec.category.row_cap(t.t_refw) as usize;
    let gap = Exp::new(1.0 / mean_gap as f64).expect("positive rate");
    let zipf = Zipf::new(f64::from(working_set), spec.zipf_s).expect("valid Zipf parameters");
    let end = spec.start + spec.duration;
    let mut out = Vec::new();
    for &thread in &spec.threads {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (u64::from(thread) << 48) ^ 0x5eed);
        let mut history: BTreeMap<(u16, u32), VecDeque<Picos>> = BTreeMap::new();
        let mut prev: Option<(u16, u32)> = None;
        let mut now = spec.start;
        loop {
            now += (gap.sample(&mut rng) as Picos).max(1);
            if now >= end {
                break;
            }
            let mut admits = |key: (u16, u32)| {
                let h = history.entry(key).or_default();
                while h.front().is_some_and(|&s| s + t.t_refw <= now) {
                    h.pop_front();
                }
                h.len() < cap
            };
            let mut pick = None;
            if let Some(p) = prev.filter(|_| rng.random_bool(locality)) {
                if admits(p) {
                    pick = Some(p);
                }
            }
            for _ in 0..32 {
                if pick.is_some() {
                    break;
                }
                let bank = rng.random_range(0..t.banks_per_rank);
                let rank = zipf.sample(&mut rng) as u32 - 1;
                let row = rank * stride + u32::from(thread) % stride;
                if admits((bank, row)) {
                    pick = Some((bank, row));
                }
            }
            let Some(key) = pick else { continue };
            history.entry(key).or_default().push_back(now);
            out.push(MemRequest { thread, bank: key.0, row: key.1, ready_at: now, seq: 0 });
            prev = Some(key);
        }
    }
    Ok(out)
}

/// Concatenates traces, orders them by arrival and numbers them.
pub fn merge(traces: impl IntoIterator<Item = Vec<MemRequest>>) -> Vec<MemRequest> {
    let mut all: Vec<MemRequest> = traces.into_iter().flatten().collect();
    all.sort_by_key(|r| (r.ready_at, r.thread));
    for (i, r) in all.iter_mut().enumerate() {
        r.seq = i as u64;
    }
    all
}

/// A `--gen` argument: `attack:<kind>` or `benign:<L|M|H>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Attack(AttackKind),
    Benign(BenignCategory),
}

impl FromStr for Generator {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, variant) = s.split_once(':').ok_or(TraceError::UnknownGenerator)?;
        match kind {
            "benign" => variant.parse().map(Self::Benign),
            "attack" => {
                let arg = |name: &str| {
                    variant
                        .strip_prefix(name)
                        .and_then(|r| r.strip_prefix('('))
                        .and_then(|r| r.strip_suffix(')'))
                        .and_then(|n| n.parse::<u64>().ok())
                };
                match variant {
                    "double_sided" => Ok(Self::Attack(AttackKind::DoubleSided)),
                    "epoch_straddle" => Ok(Self::Attack(AttackKind::EpochStraddle)),
                    _ => {
                        if let Some(n) = arg("many_sided") {
                            let n = u32::try_from(n).map_err(|_| TraceError::UnknownGenerator)?;
                            Ok(Self::Attack(AttackKind::ManySided(n)))
                        } else if let Some(seed) = arg("fuzz") {
                            Ok(Self::Attack(AttackKind::Fuzz(seed)))
                        } else {
                            Err(TraceError::UnknownGenerator)
                        }
                    }
                }
            }
            _ => Err(TraceError::UnknownGenerator),
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Attack(k) => write!(f, "attack:{k}"),
            Self::Benign(c) => write!(f, "benign:{c:?}"),
        }
    }
}

impl Generator {
    /// Default workload for the CLI: the attack on thread 0, or the benign
    /// category on every configured thread.
    pub fn generate(self, cfg: &ResolvedConfig, seed: u64) -> Result<Vec<MemRequest>, TraceError> {
        let trace = match self {
            Self::Attack(kind) => {
                let kind = match kind {
                    AttackKind::Fuzz(s) => AttackKind::Fuzz(s ^ seed),
                    k => k,
                };
                gen_attack_trace(&AttackSpec::new(kind, cfg), cfg)?
            }
            Self::Benign(category) => {
                let threads = (0..cfg.timings.threads).collect();
                gen_benign_trace(&BenignSpec::new(category, threads, seed, cfg), cfg)?
            }
        };
        Ok(merge([trace]))
    }
}
