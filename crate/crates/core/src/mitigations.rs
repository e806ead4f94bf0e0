//! Mechanism interface used by the simulator, with three implementations:
//! no mitigation, BlockHammer (RowBlocker + AttackThrottler) and PARA.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::config::{Picos, ResolvedConfig};
use crate::rowblocker::{RowAddr, RowBlocker, RowBlockerError, Verdict};
use crate::throttler::AttackThrottler;
pub use crate::throttler::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MechanismKind {
    None,
    BlockHammer,
    Para,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::BlockHammer => "blockhammer",
            Self::Para => "para",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownMechanism;

impl fmt::Display for UnknownMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("expected one of: none, blockhammer, para")
    }
}

impl FromStr for MechanismKind {
    type Err = UnknownMechanism;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "blockhammer" => Ok(Self::BlockHammer),
            "para" => Ok(Self::Para),
            _ => Err(UnknownMechanism),
        }
    }
}

/// Something the mechanism wants to know about or decide on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismEvent {
    /// A thread wants to put one more request to `bank` in flight.
    Admission {
        thread: u16,
        bank: u16,
        in_flight: u32,
    },
    /// The scheduler is about to activate `row`.
    ActAttempt {
        row: RowAddr,
        now: Picos,
    },
    ActIssued {
        thread: u16,
        row: RowAddr,
        now: Picos,
    },
    RowClose {
        row: RowAddr,
        now: Picos,
    },
    EpochTick {
        now: Picos,
    },
}

/// Extra command the mechanism asks the controller to perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideEffect {
    /// Activate-and-close `row` to restore its charge.
    Refresh(RowAddr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MechanismVerdict {
    pub admit_request: bool,
    pub act_safe: bool,
    pub side_effects: Vec<SideEffect>,
}

impl MechanismVerdict {
    pub fn pass() -> Self {
        Self { admit_request: true, act_safe: true, side_effects: Vec::new() }
    }
}

/// Per-activation refresh probability such that a victim survives
/// `n_rh_star` aggressor activations unrefreshed with probability at most
/// `failure_target`: `p = 1 - failure_target^(1 / n_rh_star)`.
pub fn para_probability(n_rh_star: u32, failure_target: f64) -> f64 {
    debug_assert!(failure_target > 0.0 && failure_target < 1.0 && n_rh_star >= 1);
    -libm::expm1(libm::log(failure_target) / f64::from(n_rh_star))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParaConfig {
    pub p: f64,
    pub failure_target: f64,
    pub rng_seed: u64,
}

impl ParaConfig {
    pub fn tuned(n_rh_star: u32, failure_target: f64, rng_seed: u64) -> Self {
        Self { p: para_probability(n_rh_star, failure_target), failure_target, rng_seed }
    }
}

/// Each adjacent row of the closed row is refreshed independently with
/// probability `p`; a per-victim chance of `p` is what the tuning assumes.
#[derive(Debug, Clone)]
pub struct Para {
    cfg: ParaConfig,
    rows_per_bank: u32,
    rng: ChaCha8Rng,
}

impl Para {
    pub fn new(cfg: ParaConfig, rows_per_bank: u32) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Self { cfg, rows_per_bank, rng }
    }

    pub fn config(&self) -> &ParaConfig {
        &self.cfg
    }

    pub fn on_row_close(&mut self, row: RowAddr) -> Vec<SideEffect> {
        let mut out = Vec::new();
        let p = self.cfg.p.clamp(0.0, 1.0);
        if row.row > 0 && self.rng.random_bool(p) {
            out.push(SideEffect::Refresh(RowAddr::new(row.bank, row.row - 1)));
        }
        if row.row + 1 < self.rows_per_bank && self.rng.random_bool(p) {
            out.push(SideEffect::Refresh(RowAddr::new(row.bank, row.row + 1)));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BlockHammer {
    pub rowblocker: RowBlocker,
    pub throttler: AttackThrottler,
    mode: Mode,
}

impl BlockHammer {
    pub fn new(cfg: &ResolvedConfig, mode: Mode, seed: u64) -> Self {
        Self { rowblocker: RowBlocker::new(cfg, seed), throttler: AttackThrottler::new(cfg, mode), mode }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Verdict the full mechanism would give, regardless of mode.
    pub fn verdict(&self, row: RowAddr, now: Picos) -> Verdict {
        self.rowblocker.is_act_safe(row, now)
    }

    pub fn on_act(&mut self, thread: u16, row: RowAddr, now: Picos) -> Result<(), RowBlockerError> {
        if self.rowblocker.is_blacklisted(row) {
            self.throttler.record_blacklisted_act(thread, row.bank);
        }
        self.rowblocker.on_activate(row, now)
    }

    pub fn on_epoch(&mut self, now: Picos) -> u32 {
        let ticks = self.rowblocker.on_epoch_tick(now);
        for _ in 0..ticks {
            for b in 0..self.throttler.banks() as u16 {
                self.throttler.on_clear(b);
            }
        }
        ticks
    }
}

#[derive(Debug, Clone)]
pub enum Mechanism {
    None,
    BlockHammer(Box<BlockHammer>),
    Para(Box<Para>),
}

impl Mechanism {
    pub fn build(kind: MechanismKind, mode: Mode, cfg: &ResolvedConfig, seed: u64) -> Self {
        match kind {
            MechanismKind::None => Self::None,
            MechanismKind::BlockHammer => Self::BlockHammer(Box::new(BlockHammer::new(cfg, mode, seed))),
            MechanismKind::Para => Self::Para(Box::new(Para::new(
                ParaConfig::tuned(cfg.derived.n_rh_star, cfg.para_failure_target, seed),
                cfg.timings.rows_per_bank,
            ))),
        }
    }

    pub fn kind(&self) -> MechanismKind {
        match self {
            Self::None => MechanismKind::None,
            Self::BlockHammer(_) => MechanismKind::BlockHammer,
            Self::Para(_) => MechanismKind::Para,
        }
    }

    /// Whether the mechanism alters scheduling (ObserveOnly BlockHammer does not).
    pub fn enforces(&self) -> bool {
        match self {
            Self::None => false,
            Self::BlockHammer(bh) => bh.mode == Mode::FullFunctional,
            Self::Para(_) => true,
        }
    }

    pub fn step(&mut self, event: MechanismEvent) -> Result<MechanismVerdict, RowBlockerError> {
        let mut v = MechanismVerdict::pass();
        match (self, event) {
            (Self::None, _) => {}
            (Self::BlockHammer(bh), MechanismEvent::Admission { thread, bank, in_flight }) => {
                v.admit_request = bh.mode == Mode::ObserveOnly || in_flight < bh.throttler.quota(thread, bank);
            }
            (Self::BlockHammer(bh), MechanismEvent::ActAttempt { row, now }) => {
                v.act_safe = bh.mode == Mode::ObserveOnly || bh.verdict(row, now) == Verdict::Safe;
            }
            (Self::BlockHammer(bh), MechanismEvent::ActIssued { thread, row, now }) => {
                bh.on_act(thread, row, now)?;
            }
            (Self::BlockHammer(bh), MechanismEvent::EpochTick { now }) => {
                bh.on_epoch(now);
            }
            (Self::Para(para), MechanismEvent::RowClose { row, .. }) => {
                v.side_effects = para.on_row_close(row);
            }
            _ => {}
        }
        Ok(v)
    }
}
