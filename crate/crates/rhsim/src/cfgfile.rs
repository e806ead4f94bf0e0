//! Flat `key = value` configuration files.
//!
//! A file may start from a preset (`preset = table1`, `scaled`, or
//! `appendix_<n_rh>`) and override individual keys. Durations take a `ps`,
//! `ns`, `us` or `ms` suffix; bare numbers are picoseconds.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rhsim_core::config::{BlastProfile, Config, ConfigError, Picos, PS_PER_MS, PS_PER_NS, PS_PER_US};
use rhsim_core::filters::HashFamily;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CfgError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("line {line}: `preset` must come before every other key")]
    LatePreset { line: usize },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

const KEYS: &[&str] = &[
    "preset",
    "t_rc",
    "t_faw",
    "t_refw",
    "t_cl",
    "banks",
    "rows_per_bank",
    "threads",
    "n_rh",
    "blast_factors",
    "blast_radius",
    "blast_ratio",
    "n_bl",
    "t_cbf",
    "cbf_counters",
    "hash_count",
    "hash_family",
    "quota_max",
    "para_failure_target",
    "t_delay_override",
];

/// Parses a duration such as `46.25ns` into exact picoseconds.
pub fn parse_duration(s: &str) -> Result<Picos, String> {
    let s = s.trim();
    let (num, unit) = match s.find(|c: char| c.is_ascii_alphabetic()) {
        Some(i) => s.split_at(i),
        None => (s, "ps"),
    };
    let scale = match unit.trim() {
        "ps" => 1,
        "ns" => PS_PER_NS,
        "us" => PS_PER_US,
        "ms" => PS_PER_MS,
        u => return Err(format!("unknown time unit `{u}`")),
    };
    let num = num.trim();
    let (int, frac) = num.split_once('.').unwrap_or((num, ""));
    if int.is_empty() && frac.is_empty() {
        return Err("missing number".into());
    }
    let digits = |d: &str| d.is_empty() || d.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return Err(format!("`{num}` is not a non-negative decimal"));
    }
    let whole: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|e| format!("{e}"))? };
    let mut ps = whole * u128::from(scale);
    if !frac.is_empty() {
        let f: u128 = frac.parse().map_err(|e| format!("{e}"))?;
        let den = 10u128.checked_pow(frac.len() as u32).ok_or("too many decimals")?;
        let scaled = f * u128::from(scale);
        if !scaled.is_multiple_of(den) {
            return Err(format!("`{s}` is not a whole number of picoseconds"));
        }
        ps += scaled / den;
    }
    Picos::try_from(ps).map_err(|_| "duration overflows".into())
}

pub fn preset(name: &str) -> Option<Config> {
    match name {
        "table1" => Some(Config::table1()),
        "scaled" => Some(Config::scaled()),
        _ => name.strip_prefix("appendix_")?.parse().ok().and_then(Config::appendix),
    }
}

/// Parses a configuration file; defaults to the `table1` preset.
pub fn parse_config(text: &str) -> Result<Config, CfgError> {
    let mut cfg = Config::table1();
    let mut seen = BTreeSet::new();
    let mut radius: Option<(usize, usize)> = None;
    let mut ratio: Option<(usize, f64)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(CfgError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(CfgError::UnknownKey { line, key: key.into() });
        }
        if !seen.insert(key.to_string()) {
            return Err(CfgError::Duplicate { line, key: key.into() });
        }
        let bad = |reason: String| CfgError::BadValue { line, key: key.into(), reason };
        let dur = || parse_duration(value).map_err(bad);
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.replace('_', "").parse().map_err(|e: T::Err| e.to_string())
        }
        let t = &mut cfg.timings;
        let p = &mut cfg.params;
        match key {
            "preset" => {
                if seen.len() > 1 {
                    return Err(CfgError::LatePreset { line });
                }
                cfg = preset(value).ok_or_else(|| bad("expected table1, scaled or appendix_<n_rh>".into()))?;
            }
            "t_rc" => t.t_rc = dur()?,
            "t_faw" => t.t_faw = dur()?,
            "t_refw" => t.t_refw = dur()?,
            "t_cl" => t.t_cl = dur()?,
            "banks" => t.banks_per_rank = num(value).map_err(bad)?,
            "rows_per_bank" => t.rows_per_bank = num(value).map_err(bad)?,
            "threads" => t.threads = num(value).map_err(bad)?,
            "n_rh" => p.n_rh = num(value).map_err(bad)?,
            "blast_factors" => {
                let factors =
                    value.split(',').map(|f| num::<f64>(f.trim())).collect::<Result<Vec<_>, _>>().map_err(bad)?;
                p.blast = BlastProfile::new(factors)?;
            }
            "blast_radius" => radius = Some((line, num(value).map_err(bad)?)),
            "blast_ratio" => ratio = Some((line, num(value).map_err(bad)?)),
            "n_bl" => p.n_bl = num(value).map_err(bad)?,
            "t_cbf" => p.t_cbf = dur()?,
            "cbf_counters" => p.cbf_counters = num(value).map_err(bad)?,
            "hash_count" => p.hash_count = num(value).map_err(bad)?,
            "hash_family" => {
                p.hash_family = match value {
                    "h3" => HashFamily::H3,
                    "shift_xor" => HashFamily::ShiftXor,
                    _ => return Err(bad("expected h3 or shift_xor".into())),
                }
            }
            "quota_max" => p.quota_max = num(value).map_err(bad)?,
            "para_failure_target" => cfg.para_failure_target = num(value).map_err(bad)?,
            "t_delay_override" => cfg.t_delay_override = Some(dur()?),
            _ => unreachable!("key list and match arms agree"),
        }
    }
    match (radius, ratio) {
        (None, None) => {}
        (Some((line, _)), _) | (_, Some((line, _))) if seen.contains("blast_factors") => {
            return Err(CfgError::BadValue {
                line,
                key: "blast_factors".into(),
                reason: "give either blast_factors or blast_radius/blast_ratio".into(),
            });
        }
        (r, q) => {
            let radius = r.map_or(cfg.params.blast.blast_radius(), |(_, r)| r);
            let ratio = q.map_or(0.5, |(_, q)| q);
            cfg.params.blast = BlastProfile::geometric(radius, ratio)?;
        }
    }
    Ok(cfg)
}

/// Writes `cfg` back out in the same format, one key per line.
pub fn to_text(cfg: &Config) -> String {
    let t = &cfg.timings;
    let p = &cfg.params;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
    kv("t_rc", format!("{}ps", t.t_rc));
    kv("t_faw", format!("{}ps", t.t_faw));
    kv("t_refw", format!("{}ps", t.t_refw));
    kv("t_cl", format!("{}ps", t.t_cl));
    kv("banks", t.banks_per_rank.to_string());
    kv("rows_per_bank", t.rows_per_bank.to_string());
    kv("threads", t.threads.to_string());
    kv("n_rh", p.n_rh.to_string());
    let factors: Vec<String> = p.blast.impact_factors().iter().map(|f| format!("{f:?}")).collect();
    kv("blast_factors", factors.join(","));
    kv("n_bl", p.n_bl.to_string());
    kv("t_cbf", format!("{}ps", p.t_cbf));
    kv("cbf_counters", p.cbf_counters.to_string());
    kv("hash_count", p.hash_count.to_string());
    kv(
        "hash_family",
        match p.hash_family {
            HashFamily::H3 => "h3",
            HashFamily::ShiftXor => "shift_xor",
        }
        .into(),
    );
    kv("quota_max", p.quota_max.to_string());
    kv("para_failure_target", format!("{:?}", cfg.para_failure_target));
    if let Some(d) = cfg.t_delay_override {
        kv("t_delay_override", format!("{d}ps"));
    }
    s
}
