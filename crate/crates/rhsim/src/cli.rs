use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info, warn};
use rayon::prelude::*;
use rhsim_core::config::{Config, Picos, ResolvedConfig, PS_PER_US};
use rhsim_core::mitigations::{para_probability, MechanismKind, Mode};
use rhsim_core::security::{self, bound_table, cross_validate, verify_with, SecurityParams, SecurityVerdict};
use rhsim_core::simcore::trace::{
    gen_attack_trace, gen_benign_trace, merge, AttackSpec, BenignSpec, Generator, TraceError,
};
use rhsim_core::simcore::{self, MemRequest, SimError, SimMetrics, SimOptions};
use serde::Serialize;
use thiserror::Error;

use crate::cfgfile::{self, parse_duration, CfgError};
use crate::report::{write_report, Format};
use crate::tracefile::{self, TraceFileError};

#[derive(Debug, Parser)]
#[command(name = "rhsim", version, about = "BlockHammer RowHammer mitigation simulator and verifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the derived parameters of a configuration.
    Derive(DeriveArgs),
    /// Check whether any epoch census defeats the configuration.
    Verify(VerifyArgs),
    /// Run one trace through the controller model.
    Simulate(SimulateArgs),
    /// Write a generated trace to a file.
    Trace(TraceArgs),
    /// Run every config x seed x mechanism combination in parallel.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// JSON or CSV report, chosen by extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Also drive RowBlocker with this many random single-row attack plans
    /// (after a fixed grid). Only practical for small configurations.
    #[arg(long)]
    pub search: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MechanismArg {
    None,
    Blockhammer,
    Para,
}

impl From<MechanismArg> for MechanismKind {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::None => Self::None,
            MechanismArg::Blockhammer => Self::BlockHammer,
            MechanismArg::Para => Self::Para,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Observe,
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Observe => Self::ObserveOnly,
            ModeArg::Full => Self::FullFunctional,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Workload {
    /// Trace file (`ready_at_ps,thread,bank,row` per line).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Generator such as `attack:double_sided`, `attack:many_sided(12)`,
    /// `attack:epoch_straddle`, `attack:fuzz(7)` or `benign:H`. Repeat to
    /// mix: attacks take threads 0, 1, ... and benign traffic the rest.
    #[arg(long = "gen")]
    pub generators: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub workload: Workload,
    #[arg(long, value_enum, default_value_t = MechanismArg::Blockhammer)]
    pub mechanism: MechanismArg,
    /// Only affects BlockHammer.
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop time, e.g. `100ms`; defaults to the last arrival plus one refresh window.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Include the full command log in the report.
    #[arg(long)]
    pub record_commands: bool,
    /// Track the blast-weighted disturbance of every victim row.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long = "gen", required = true)]
    pub generators: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    #[command(flatten)]
    pub workload: Workload,
    #[arg(long = "mechanism", value_enum, default_values_t = [MechanismArg::None, MechanismArg::Blockhammer])]
    pub mechanisms: Vec<MechanismArg>,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    /// Seeds 0..N.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// One row per run; JSON or CSV by extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: CfgError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("simulation invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } => 1,
            Self::Io { .. } => 3,
            Self::Parse(_) => 4,
            Self::Invariant(_) => 6,
        }
    }
}

/// Successful outcomes that still map to a distinct exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Satisfiable,
    OracleViolation { mechanism: MechanismKind, count: u32, bound: u32 },
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::Satisfiable => 2,
            Self::OracleViolation { .. } => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn load_config(path: &Path) -> Result<(Config, ResolvedConfig), CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg_err = |source| CliError::Config { path: path.to_path_buf(), source };
    let cfg = cfgfile::parse_config(&text).map_err(cfg_err)?;
    let resolved = cfg.resolve().map_err(|e| cfg_err(e.into()))?;
    debug!("loaded {} (t_delay {} ps)", path.display(), resolved.derived.t_delay);
    Ok((cfg, resolved))
}

/// Builds a mixed workload: the n-th attack runs on thread n, benign
/// generators share the remaining threads.
pub fn generate(specs: &[String], cfg: &ResolvedConfig, seed: u64) -> Result<Vec<MemRequest>, CliError> {
    let gens = specs
        .iter()
        .map(|s| s.parse::<Generator>().map_err(|e| CliError::Parse(format!("--gen {s}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if let [single] = gens[..] {
        return single.generate(cfg, seed).map_err(trace_err);
    }
    let attacks = gens.iter().filter(|g| matches!(g, Generator::Attack(_))).count();
    let threads = cfg.timings.threads;
    if attacks >= usize::from(threads) && gens.len() > attacks {
        return Err(CliError::Parse(format!("{attacks} attacks leave no thread for benign traffic")));
    }
    let benign_threads: Vec<u16> = (attacks as u16..threads).collect();
    let mut parts = Vec::new();
    let mut next_attack = 0u16;
    for (i, g) in gens.iter().enumerate() {
        let part_seed = seed.wrapping_add(i as u64);
        let part = match *g {
            Generator::Attack(kind) => {
                let mut spec = AttackSpec::new(kind, cfg);
                spec.thread = next_attack;
                spec.bank = next_attack % cfg.timings.banks_per_rank;
                next_attack += 1;
                if let rhsim_core::simcore::trace::AttackKind::Fuzz(s) = kind {
                    spec.kind = rhsim_core::simcore::trace::AttackKind::Fuzz(s ^ seed);
                }
                gen_attack_trace(&spec, cfg)
            }
            Generator::Benign(category) => {
                gen_benign_trace(&BenignSpec::new(category, benign_threads.clone(), part_seed, cfg), cfg)
            }
        };
        parts.push(part.map_err(trace_err)?);
    }
    Ok(merge(parts))
}

fn trace_err(e: TraceError) -> CliError {
    CliError::Parse(format!("trace generation: {e}"))
}

fn load_workload(w: &Workload, cfg: &ResolvedConfig, seed: u64) -> Result<Vec<MemRequest>, CliError> {
    match &w.trace {
        Some(path) => {
            let file = fs::File::open(path).map_err(io_err(path))?;
            tracefile::read_trace(BufReader::new(file)).map_err(|e| match e {
                TraceFileError::Io(source) => CliError::Io { path: path.clone(), source },
                TraceFileError::Parse { .. } => CliError::Parse(format!("{}: {e}", path.display())),
            })
        }
        None => generate(&w.generators, cfg, seed),
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Mechanism(_) => CliError::Invariant(e.to_string()),
        _ => CliError::Parse(format!("trace: {e}")),
    }
}

fn save<T: Serialize>(path: &Option<PathBuf>, doc: &T) -> Result<(), CliError> {
    if let Some(p) = path {
        write_report(p, doc).map_err(io_err(p))?;
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn fmt_time(ps: Picos) -> String {
    if ps >= 1_000 * PS_PER_US {
        format!("{} ps ({:.3} ms)", ps, ps as f64 / 1e9)
    } else {
        format!("{} ps ({:.3} us)", ps, ps as f64 / 1e6)
    }
}

#[derive(Debug, Serialize)]
pub struct DeriveReport {
    pub config: Config,
    pub derived: rhsim_core::DerivedParams,
    pub n_rh_star_ratio: f64,
    pub rank_act_gap: Picos,
    pub para_probability: f64,
}

pub fn derive_report(cfg: &Config, r: &ResolvedConfig) -> DeriveReport {
    DeriveReport {
        config: cfg.clone(),
        derived: r.derived,
        n_rh_star_ratio: f64::from(r.derived.n_rh_star) / f64::from(r.params.n_rh),
        rank_act_gap: r.timings.rank_act_gap(),
        para_probability: para_probability(r.derived.n_rh_star, r.para_failure_target),
    }
}

fn cmd_derive(a: &DeriveArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let (cfg, r) = load_config(&a.config)?;
    let rep = derive_report(&cfg, &r);
    let d = &r.derived;
    let rows: Vec<(&str, String)> = vec![
        ("n_rh", r.params.n_rh.to_string()),
        ("n_rh_star", d.n_rh_star.to_string()),
        ("n_rh_star / n_rh", format!("{:.4}", rep.n_rh_star_ratio)),
        ("n_bl", r.params.n_bl.to_string()),
        ("t_cbf", fmt_time(r.params.t_cbf)),
        ("epoch_len", fmt_time(d.epoch_len)),
        ("t_delay", fmt_time(d.t_delay)),
        ("history_capacity", d.history_capacity.to_string()),
        ("counter_saturation", d.counter_saturation.to_string()),
        ("throttle_saturation", d.throttle_saturation.to_string()),
        ("para_probability", format!("{:.6e}", rep.para_probability)),
    ];
    let w = |e| CliError::Io { path: "<stdout>".into(), source: e };
    for (k, v) in &rows {
        writeln!(out, "{k:<22}{v}").map_err(w)?;
    }
    writeln!(out).map_err(w)?;
    serde_json::to_writer_pretty(&mut *out, &rep).map_err(|e| w(e.into()))?;
    writeln!(out).map_err(w)?;
    save(&a.out, &rep)?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub verdict: SecurityVerdict,
    pub with_first_epoch_slack: SecurityVerdict,
    pub bounds: Vec<security::BoundRow>,
    pub search: Option<security::CrossReport>,
}

fn describe(v: &SecurityVerdict) -> String {
    if v.satisfiable {
        let plan = v.witness_plan.as_deref().unwrap_or_default();
        let steps: Vec<String> = plan.iter().map(|e| format!("{}={}", e.tag, e.acts)).collect();
        format!(
            "SAT: census {} reaches {} > {} ({})",
            v.witness.unwrap_or_default(),
            v.max_total_acts,
            v.threshold,
            steps.join(" -> ")
        )
    } else {
        format!("UNSAT: best census {} reaches {} <= {}", v.max_total_census, v.max_total_acts, v.threshold)
    }
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let (_, r) = load_config(&a.config)?;
    let p = SecurityParams::from(&r);
    let rep = VerifyReport {
        verdict: verify_with(&p, false),
        with_first_epoch_slack: verify_with(&p, true),
        bounds: bound_table(&p),
        search: a.search.map(|n| cross_validate(&r, n, a.seed)),
    };
    let w = |e| CliError::Io { path: "<stdout>".into(), source: e };
    writeln!(out, "{}", describe(&rep.verdict)).map_err(w)?;
    writeln!(out, "with first-epoch slack: {}", describe(&rep.with_first_epoch_slack)).map_err(w)?;
    writeln!(out, "\n{:<6}{:>12}{:>12}", "type", "bound", "printed").map_err(w)?;
    for b in &rep.bounds {
        writeln!(out, "{:<6}{:>12}{:>12}", b.tag.to_string(), b.nep_max, b.printed).map_err(w)?;
    }
    if let Some(s) = &rep.search {
        writeln!(
            out,
            "\nsearch: {} plans, aligned max {}, sliding max {}, bound {}, {}",
            s.candidates,
            s.aligned_max,
            s.sliding_max,
            s.bound,
            if s.agrees { "agrees" } else { "DISAGREES" }
        )
        .map_err(w)?;
    }
    save(&a.out, &rep)?;
    Ok(if rep.verdict.satisfiable { Outcome::Satisfiable } else { Outcome::Ok })
}

fn parse_horizon(h: &Option<String>) -> Result<Option<Picos>, CliError> {
    h.as_deref().map(|s| parse_duration(s).map_err(|e| CliError::Parse(format!("--horizon: {e}")))).transpose()
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let (_, cfg) = load_config(&a.config)?;
    let trace = load_workload(&a.workload, &cfg, a.seed)?;
    let mechanism = MechanismKind::from(a.mechanism);
    let mut opts = SimOptions::new(mechanism).mode(a.mode.into()).seed(a.seed);
    opts.horizon = parse_horizon(&a.horizon)?;
    opts.record_commands = a.record_commands;
    opts.weighted_oracle = a.weighted;
    info!("simulating {} requests under {mechanism}", trace.len());
    let m = simcore::run(&trace, &cfg, &opts).map_err(sim_err)?;
    write_summary(out, &m).map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })?;
    save(&a.out, &m)?;
    if !m.timing_violations.is_empty() {
        return Err(CliError::Invariant(format!("{} DRAM timing violations", m.timing_violations.len())));
    }
    if m.oracle_violated() {
        warn!("row {:?} activated {} times in one refresh window", m.max_window_row, m.max_window_count);
        return Ok(Outcome::OracleViolation { mechanism, count: m.max_window_count, bound: m.window_bound });
    }
    Ok(Outcome::Ok)
}

fn write_summary(out: &mut dyn Write, m: &SimMetrics) -> io::Result<()> {
    writeln!(out, "served {}/{} requests by {} ps", m.served, m.requests, m.end_time)?;
    writeln!(
        out,
        "acts {} (hits {}, misses {}, conflicts {}, refreshes {})",
        m.acts, m.row_hits, m.row_misses, m.row_conflicts, m.refreshes
    )?;
    writeln!(out, "max window count {} (bound {})", m.max_window_count, m.window_bound)?;
    writeln!(
        out,
        "blocked {} (false positives {}, rate {:.6}), delay p50 {} p90 {} p100 {}",
        m.blocked_acts,
        m.false_positives,
        m.false_positive_rate,
        m.blocked_delay.p50,
        m.blocked_delay.p90,
        m.blocked_delay.p100
    )
}

fn cmd_trace(a: &TraceArgs) -> Result<Outcome, CliError> {
    let (_, cfg) = load_config(&a.config)?;
    let trace = generate(&a.generators, &cfg, a.seed)?;
    let file = fs::File::create(&a.out).map_err(io_err(&a.out))?;
    tracefile::write_trace(io::BufWriter::new(file), &trace).map_err(io_err(&a.out))?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub config: String,
    pub seed: u64,
    pub mechanism: String,
    pub requests: u64,
    pub served: u64,
    pub acts: u64,
    pub max_window_count: u32,
    pub window_bound: u32,
    pub violated: bool,
    pub blocked_acts: u64,
    pub false_positive_rate: f64,
    pub blocked_delay_p50: Picos,
    pub blocked_delay_p100: Picos,
    pub end_time: Picos,
}

fn cmd_sweep(a: &SweepArgs) -> Result<Outcome, CliError> {
    let configs = a.configs.iter().map(|p| load_config(p).map(|(_, r)| (p, r))).collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for (path, cfg) in &configs {
        for seed in 0..a.seeds {
            for &m in &a.mechanisms {
                jobs.push((*path, cfg, seed, MechanismKind::from(m)));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .map_err(|e| CliError::Invariant(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(path, cfg, seed, mechanism)| {
                let trace = load_workload(&a.workload, cfg, seed)?;
                let opts = SimOptions::new(mechanism).mode(a.mode.into()).seed(seed);
                let m = simcore::run(&trace, cfg, &opts).map_err(sim_err)?;
                Ok(SweepRow {
                    config: path.display().to_string(),
                    seed,
                    mechanism: mechanism.to_string(),
                    requests: m.requests,
                    served: m.served,
                    acts: m.acts,
                    max_window_count: m.max_window_count,
                    window_bound: m.window_bound,
                    violated: m.oracle_violated(),
                    blocked_acts: m.blocked_acts,
                    false_positive_rate: m.false_positive_rate,
                    blocked_delay_p50: m.blocked_delay.p50,
                    blocked_delay_p100: m.blocked_delay.p100,
                    end_time: m.end_time,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    match Format::for_path(&a.out) {
        Format::Csv => {
            let mut w =
                csv::Writer::from_path(&a.out).map_err(|e| CliError::Io { path: a.out.clone(), source: e.into() })?;
            for r in &rows {
                w.serialize(r).map_err(|e| CliError::Io { path: a.out.clone(), source: e.into() })?;
            }
            w.flush().map_err(io_err(&a.out))?;
        }
        Format::Json => write_report(&a.out, &rows).map_err(io_err(&a.out))?,
    }
    Ok(Outcome::Ok)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Derive(a) => cmd_derive(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Trace(a) => cmd_trace(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}
