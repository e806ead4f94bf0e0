//! BlockHammer RowHammer-prevention model and a trace-driven DRAM controller
//! simulator built around it.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! the command line or wall-clock time lives in the companion `rhsim` crate.
//!
//! Layout:
//!
//! - [`config`]: DRAM timings, mechanism parameters and every derived quantity.
//! - [`filters`]: H3 hashing, counting Bloom filters and the dual (D-CBF) blacklist.
//! - [`rowblocker`]: blacklist + activation history, answering "is this ACT safe?".
//! - [`throttler`]: per `<thread, bank>` RowHammer likelihood index and quotas.
//! - [`mitigations`]: the mechanism interface (None, BlockHammer, PARA).
//! - [`simcore`]: controller event loop, trace generators and the exact safety oracle.
//! - [`security`]: epoch-census feasibility checker and cross-validation search.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod config;
pub mod filters;
pub mod mitigations;
pub mod rowblocker;
pub mod security;
pub mod simcore;
pub mod throttler;

pub use config::{
    BlastProfile, BlockHammerParams, Config, ConfigError, DerivedParams, DramTimings, Picos, ResolvedConfig,
};
pub use filters::{CountingBloomFilter, DualCountingBloomFilter, H3HashSet, HashFamily, RowHasher};
pub use mitigations::{Mechanism, MechanismEvent, MechanismVerdict, Mode, ParaConfig};
pub use rowblocker::{RowAddr, RowBlocker, Verdict};
pub use simcore::{MemRequest, SimError, SimMetrics, SimOptions};
pub use throttler::AttackThrottler;
