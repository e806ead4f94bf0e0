//! Mechanism and DRAM parameters, validation, and the derived quantities
//! (effective threshold, activation delay, history buffer size, saturations).
//!
//! All times are integer picoseconds. The activation delay is computed with
//! exact integer arithmetic and rounded up, so the enforced delay is never
//! shorter than the real-valued one.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::filters::HashFamily;

/// Simulated time, in picoseconds.
pub type Picos = u64;

pub const PS_PER_NS: Picos = 1_000;
pub const PS_PER_US: Picos = 1_000_000;
pub const PS_PER_MS: Picos = 1_000_000_000;

/// Geometry and timing of one DRAM rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DramTimings {
    /// Minimum ACT-to-ACT interval within a bank.
    pub t_rc: Picos,
    /// Rolling window holding at most four ACTs per rank.
    pub t_faw: Picos,
    /// Refresh window.
    pub t_refw: Picos,
    /// Column access occupancy of a bank; a request completes this long
    /// after its column command.
    pub t_cl: Picos,
    pub banks_per_rank: u16,
    pub rows_per_bank: u32,
    pub threads: u16,
}

impl DramTimings {
    /// DDR4 values used throughout: 46.25 ns tRC, 35 ns tFAW, 64 ms refresh,
    /// 16 banks of 64K rows.
    pub fn ddr4() -> Self {
        Self {
            t_rc: 46_250,
            t_faw: 35_000,
            t_refw: 64 * PS_PER_MS,
            t_cl: 13_750,
            banks_per_rank: 16,
            rows_per_bank: 65_536,
            threads: 8,
        }
    }

    /// Minimum spacing between two ACTs to the rank. Keeping ACTs at least
    /// tFAW/4 apart is what bounds the history buffer occupancy.
    pub fn rank_act_gap(&self) -> Picos {
        self.t_faw.div_ceil(4)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_rc == 0 || self.t_faw == 0 || self.t_refw == 0 || self.t_cl == 0 {
            return Err(ConfigError::InvalidTiming("all durations must be positive"));
        }
        if self.t_rc >= self.t_refw || self.t_faw >= self.t_refw {
            return Err(ConfigError::InvalidTiming("t_rc and t_faw must be shorter than t_refw"));
        }
        if self.banks_per_rank == 0 {
            return Err(ConfigError::InvalidTiming("banks_per_rank must be at least 1"));
        }
        if self.rows_per_bank < 2 {
            return Err(ConfigError::InvalidTiming("rows_per_bank must be at least 2"));
        }
        if self.threads == 0 {
            return Err(ConfigError::InvalidTiming("threads must be at least 1"));
        }
        Ok(())
    }
}

/// How far hammering a row reaches and how strongly it disturbs rows at
/// each distance. `impact_factors[k - 1]` is the factor at distance `k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlastProfile {
    impact_factors: Vec<f64>,
}

impl BlastProfile {
    pub fn new(impact_factors: Vec<f64>) -> Result<Self, ConfigError> {
        let profile = Self { impact_factors };
        profile.validate()?;
        Ok(profile)
    }

    /// Only immediately adjacent rows are disturbed (double-sided model).
    pub fn adjacent() -> Self {
        Self { impact_factors: vec![1.0] }
    }

    /// `c_k = ratio^(k-1)` up to `radius` rows away.
    pub fn geometric(radius: usize, ratio: f64) -> Result<Self, ConfigError> {
        let mut factors = Vec::with_capacity(radius);
        let mut c = 1.0;
        for _ in 0..radius {
            factors.push(c);
            c *= ratio;
        }
        Self::new(factors)
    }

    pub fn blast_radius(&self) -> usize {
        self.impact_factors.len()
    }

    pub fn impact_factors(&self) -> &[f64] {
        &self.impact_factors
    }

    /// Impact factor at distance `k` (zero beyond the radius).
    pub fn factor(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.impact_factors.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let Some(&first) = self.impact_factors.first() else {
            return Err(ConfigError::EmptyBlastProfile);
        };
        if first != 1.0 {
            return Err(ConfigError::InvalidBlastProfile("c_1 must equal 1"));
        }
        if self.impact_factors[1..].iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return Err(ConfigError::InvalidBlastProfile("impact factors beyond distance 1 must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Tunable BlockHammer parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockHammerParams {
    /// RowHammer threshold: ACTs to one row within a refresh window that can flip bits.
    pub n_rh: u32,
    pub blast: BlastProfile,
    /// Blacklisting threshold.
    pub n_bl: u32,
    /// Counting Bloom filter lifetime (two epochs).
    pub t_cbf: Picos,
    pub cbf_counters: u32,
    pub hash_count: usize,
    pub hash_family: HashFamily,
    /// Baseline in-flight request limit per `<thread, bank>`.
    pub quota_max: u32,
}

impl BlockHammerParams {
    pub fn validate(&self, timings: &DramTimings) -> Result<(), ConfigError> {
        self.blast.validate()?;
        if self.n_rh == 0 {
            return Err(ConfigError::InvalidParam("n_rh must be positive"));
        }
        if self.n_bl == 0 {
            return Err(ConfigError::InvalidParam("n_bl must be positive"));
        }
        if self.t_cbf == 0 || self.t_cbf > timings.t_refw {
            return Err(ConfigError::InvalidParam("t_cbf must lie in (0, t_refw]"));
        }
        if !self.t_cbf.is_multiple_of(2) {
            return Err(ConfigError::InvalidParam("t_cbf must split into two equal epochs"));
        }
        if !self.cbf_counters.is_power_of_two() {
            return Err(ConfigError::InvalidParam("cbf_counters must be a power of two"));
        }
        if self.hash_count == 0 {
            return Err(ConfigError::InvalidParam("hash_count must be at least 1"));
        }
        if self.quota_max == 0 {
            return Err(ConfigError::InvalidParam("quota_max must be at least 1"));
        }
        Ok(())
    }
}

/// Quantities derived from [`BlockHammerParams`] and [`DramTimings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DerivedParams {
    pub n_rh_star: u32,
    pub t_delay: Picos,
    pub epoch_len: Picos,
    pub history_capacity: usize,
    pub counter_saturation: u32,
    pub throttle_saturation: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    InvalidTiming(&'static str),
    EmptyBlastProfile,
    InvalidBlastProfile(&'static str),
    InvalidParam(&'static str),
    /// `(t_cbf / t_refw) * n_rh_star - n_bl` is not positive.
    DelayDenominator {
        n_bl: u32,
        n_rh_star: u32,
    },
    /// `t_cbf - n_bl * t_rc` is not positive.
    DelayNumerator {
        n_bl: u32,
    },
    DerivedInvariant(&'static str),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidTiming(msg) => write!(f, "invalid DRAM timing: {msg}"),
            Self::EmptyBlastProfile => f.write_str("blast profile has no impact factors"),
            Self::InvalidBlastProfile(msg) => write!(f, "invalid blast profile: {msg}"),
            Self::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Self::DelayDenominator { n_bl, n_rh_star } => {
                write!(f, "n_bl = {n_bl} must be below the lifetime-scaled threshold of n_rh_star = {n_rh_star}")
            }
            Self::DelayNumerator { n_bl } => {
                write!(f, "{n_bl} back-to-back activations do not fit in one filter lifetime")
            }
            Self::DerivedInvariant(msg) => write!(f, "derived parameters invalid: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ConfigError {}

/// Effective per-row threshold so that hammering every row in the blast
/// radius on both sides adds up to no more than `n_rh` adjacent activations.
pub fn compute_nrh_star(n_rh: u32, blast: &BlastProfile) -> Result<u32, ConfigError> {
    blast.validate()?;
    let sum: f64 = blast.impact_factors().iter().sum();
    Ok(libm::floor(f64::from(n_rh) / (2.0 * sum)) as u32)
}

/// Delay between activations of a blacklisted row, rounded up to the next
/// picosecond:
///
/// ```text
///            t_cbf - n_bl * t_rc
/// t_delay = ------------------------------
///           (t_cbf / t_refw) * n_rh_star - n_bl
/// ```
///
/// Evaluated as `t_refw * (t_cbf - n_bl * t_rc) / (t_cbf * n_rh_star - n_bl * t_refw)`.
/// `n_bl = 0` is accepted here (the parameter validator rejects it).
pub fn tdelay_for(n_rh_star: u32, n_bl: u32, t_cbf: Picos, t_refw: Picos, t_rc: Picos) -> Result<Picos, ConfigError> {
    let n_bl_w = u128::from(n_bl);
    let fast = n_bl_w * u128::from(t_rc);
    let t_cbf_w = u128::from(t_cbf);
    if fast >= t_cbf_w {
        return Err(ConfigError::DelayNumerator { n_bl });
    }
    let scaled = t_cbf_w * u128::from(n_rh_star);
    let blacklisted = n_bl_w * u128::from(t_refw);
    if scaled <= blacklisted {
        return Err(ConfigError::DelayDenominator { n_bl, n_rh_star });
    }
    let num = u128::from(t_refw) * (t_cbf_w - fast);
    let den = scaled - blacklisted;
    Picos::try_from(num.div_ceil(den)).map_err(|_| ConfigError::DerivedInvariant("t_delay overflows"))
}

pub fn compute_tdelay(p: &BlockHammerParams, t: &DramTimings) -> Result<Picos, ConfigError> {
    let n_rh_star = compute_nrh_star(p.n_rh, &p.blast)?;
    tdelay_for(n_rh_star, p.n_bl, p.t_cbf, t.t_refw, t.t_rc)
}

/// Worst-case number of ACTs a rank can perform within one `t_delay` window.
pub fn compute_history_capacity(t_delay: Picos, t_faw: Picos) -> usize {
    let acts = (4 * u128::from(t_delay)).div_ceil(u128::from(t_faw));
    usize::try_from(acts).unwrap_or(usize::MAX)
}

pub fn resolve(p: &BlockHammerParams, t: &DramTimings) -> Result<DerivedParams, ConfigError> {
    t.validate()?;
    p.validate(t)?;
    let n_rh_star = compute_nrh_star(p.n_rh, &p.blast)?;
    if p.n_bl >= n_rh_star {
        return Err(ConfigError::DelayDenominator { n_bl: p.n_bl, n_rh_star });
    }
    let t_delay = tdelay_for(n_rh_star, p.n_bl, p.t_cbf, t.t_refw, t.t_rc)?;
    let throttle_saturation = (u128::from(n_rh_star) * u128::from(p.t_cbf) / u128::from(t.t_refw)) as u32;
    let derived = DerivedParams {
        n_rh_star,
        t_delay,
        epoch_len: p.t_cbf / 2,
        history_capacity: compute_history_capacity(t_delay, t.t_faw),
        counter_saturation: p.n_bl,
        throttle_saturation,
    };
    derived.check(p, t)?;
    Ok(derived)
}

impl DerivedParams {
    fn check(&self, p: &BlockHammerParams, t: &DramTimings) -> Result<(), ConfigError> {
        if self.t_delay <= t.t_rc {
            return Err(ConfigError::DerivedInvariant("t_delay must exceed t_rc"));
        }
        if self.history_capacity < 4 {
            return Err(ConfigError::DerivedInvariant("history buffer needs at least 4 entries"));
        }
        if self.throttle_saturation <= p.n_bl {
            return Err(ConfigError::DerivedInvariant("throttle saturation must exceed the blacklisting threshold"));
        }
        Ok(())
    }
}

/// A complete, unresolved configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Config {
    pub timings: DramTimings,
    pub params: BlockHammerParams,
    /// Per-refresh-window failure probability PARA is tuned for.
    pub para_failure_target: f64,
    /// Replaces the derived `t_delay`. Only meant for breaking a configuration
    /// on purpose (negative testing of the verifier and simulator).
    pub t_delay_override: Option<Picos>,
}

/// Row thresholds with their appendix CBF sizes: `(n_rh, cbf_counters)`.
pub const APPENDIX_ROWS: [(u32, u32); 6] =
    [(32_768, 1_024), (16_384, 1_024), (8_192, 1_024), (4_096, 2_048), (2_048, 4_096), (1_024, 8_192)];

impl Config {
    /// DDR4 with a 32K RowHammer threshold, tuned for double-sided attacks.
    pub fn table1() -> Self {
        Self::appendix(32_768).expect("32K is an appendix row")
    }

    /// One row of the per-threshold table: N_RH* = N_RH/2, N_BL = N_RH/4,
    /// t_cbf = 64 ms, CBF size growing as the threshold shrinks.
    pub fn appendix(n_rh: u32) -> Option<Self> {
        let (_, cbf_counters) = APPENDIX_ROWS.iter().copied().find(|&(n, _)| n == n_rh)?;
        let timings = DramTimings::ddr4();
        Some(Self {
            timings,
            params: BlockHammerParams {
                n_rh,
                blast: BlastProfile::adjacent(),
                n_bl: n_rh / 4,
                t_cbf: timings.t_refw,
                cbf_counters,
                hash_count: 4,
                hash_family: HashFamily::H3,
                quota_max: 16,
            },
            para_failure_target: 1e-15,
            t_delay_override: None,
        })
    }

    /// Small-threshold configuration for simulation-based checks:
    /// N_RH* = 64 (N_RH = 252 with a six-row, halving blast profile),
    /// N_BL = 16, and a 250 µs refresh window (64 ms scaled by 64/16384).
    pub fn scaled() -> Self {
        let timings = DramTimings { t_refw: 250 * PS_PER_US, threads: 4, ..DramTimings::ddr4() };
        Self {
            timings,
            params: BlockHammerParams {
                n_rh: 252,
                blast: BlastProfile::geometric(6, 0.5).expect("valid geometric profile"),
                n_bl: 16,
                t_cbf: timings.t_refw,
                cbf_counters: 1_024,
                hash_count: 4,
                hash_family: HashFamily::H3,
                quota_max: 16,
            },
            para_failure_target: 1e-3,
            t_delay_override: None,
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let mut derived = resolve(&self.params, &self.timings)?;
        if let Some(t_delay) = self.t_delay_override {
            if t_delay == 0 {
                return Err(ConfigError::InvalidParam("t_delay override must be positive"));
            }
            derived.t_delay = t_delay;
            derived.history_capacity = compute_history_capacity(t_delay, self.timings.t_faw).max(4);
        }
        if !(self.para_failure_target > 0.0 && self.para_failure_target < 1.0) {
            return Err(ConfigError::InvalidParam("para_failure_target must lie in (0, 1)"));
        }
        Ok(ResolvedConfig {
            timings: self.timings,
            params: self.params.clone(),
            derived,
            para_failure_target: self.para_failure_target,
        })
    }
}

/// Validated configuration plus its derived parameters. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResolvedConfig {
    pub timings: DramTimings,
    pub params: BlockHammerParams,
    pub derived: DerivedParams,
    pub para_failure_target: f64,
}

impl ResolvedConfig {
    /// Whether `count` activations within one filter lifetime exceed
    /// `(t_cbf / t_refw) * n_rh_star`, compared exactly.
    pub fn exceeds_lifetime_threshold(&self, count: u64) -> bool {
        u128::from(count) * u128::from(self.timings.t_refw)
            > u128::from(self.derived.n_rh_star) * u128::from(self.params.t_cbf)
    }

    /// `(t_cbf / t_refw) * n_rh_star`, rounded down: the largest per-lifetime
    /// activation count that is still safe.
    pub fn lifetime_threshold(&self) -> u32 {
        self.derived.throttle_saturation
    }

    /// Denominator of the likelihood index, `(t_cbf / t_refw) * n_rh_star - n_bl`,
    /// as the exact fraction `(num, den)`.
    pub fn rhli_denominator(&self) -> (u128, u128) {
        let t_refw = u128::from(self.timings.t_refw);
        let num =
            u128::from(self.derived.n_rh_star) * u128::from(self.params.t_cbf) - u128::from(self.params.n_bl) * t_refw;
        (num, t_refw)
    }

    /// Window within which the oracle counts activations of one row.
    pub fn refresh_window(&self) -> Picos {
        self.timings.t_refw
    }
}
