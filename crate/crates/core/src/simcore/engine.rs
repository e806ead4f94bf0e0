use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::config::{Picos, ResolvedConfig};
use crate::mitigations::{Mechanism, MechanismEvent, MechanismKind, Mode, SideEffect};
use crate::rowblocker::{RowAddr, Verdict};
use crate::simcore::metrics::{Command, CommandKind, SimMetrics, ThreadStats};
use crate::simcore::oracle::{DisturbanceOracle, ExposureOracle, SafetyOracle, TimingAuditor};
use crate::simcore::{MemRequest, SimError, SimOptions};

/// Runs `trace` to completion or to the horizon.
///
/// Requests enter a per-thread FIFO; the head is admitted to its bank's queue
/// once it is ready and the thread has fewer than `quota_max` requests in
/// flight to that bank (fewer than the throttler's quota under a
/// full-functional BlockHammer). Each bank then serves pending neighbour
/// refreshes first, row hits next, and the oldest ACT judged safe last.
pub fn run(trace: &[MemRequest], cfg: &ResolvedConfig, opts: &SimOptions) -> Result<SimMetrics, SimError> {
    let mut engine = Engine::new(trace, cfg, opts)?;
    engine.run()?;
    Ok(engine.finish())
}

#[derive(Debug, Clone)]
struct Queued {
    req: MemRequest,
    /// Start of the current blocking episode.
    blocked_since: Option<Picos>,
    /// Cached `safe_at` while blocked.
    blocked_until: Option<Picos>,
    /// Bank generation at which the verdict above was computed.
    checked: Option<u64>,
    false_positive: bool,
}

#[derive(Debug, Clone, Default)]
struct Bank {
    open_row: Option<u32>,
    last_act: Option<Picos>,
    busy_until: Picos,
    /// Sorted by `(ready_at, seq)`.
    queue: Vec<Queued>,
    /// Queued requests that would hit `open_row`.
    hits: usize,
    refreshes: VecDeque<u32>,
    /// Bumped whenever the bank's filter or history may have changed.
    generation: u64,
    /// Generation of the last episode sweep; `None` once a request arrives.
    swept: Option<u64>,
    /// Earliest cached `blocked_until` found by that sweep.
    wake: Picos,
}

#[derive(Debug, Clone, Copy, Default)]
struct Shadow {
    epoch: u64,
    cur: u32,
    prev: u32,
}

struct Engine<'a> {
    cfg: &'a ResolvedConfig,
    opts: &'a SimOptions,
    mech: Mechanism,
    horizon: Picos,
    n_banks: usize,
    pending: Vec<VecDeque<MemRequest>>,
    in_flight: Vec<u32>,
    banks: Vec<Bank>,
    rank_last: Option<Picos>,
    faw: VecDeque<Picos>,
    /// `(done_at, thread, bank, ready_at)`
    completions: BinaryHeap<Reverse<(Picos, u16, u16, Picos)>>,
    oracle: SafetyOracle,
    disturbance: Option<DisturbanceOracle>,
    exposure: ExposureOracle,
    auditor: TimingAuditor,
    shadow: BTreeMap<RowAddr, Shadow>,
    next_epoch: Option<Picos>,
    rhli_peak: Vec<f64>,
    metrics: SimMetrics,
    now: Picos,
}

impl<'a> Engine<'a> {
    fn new(trace: &[MemRequest], cfg: &'a ResolvedConfig, opts: &'a SimOptions) -> Result<Self, SimError> {
        let t = &cfg.timings;
        let threads = usize::from(t.threads);
        let n_banks = usize::from(t.banks_per_rank);
        let mut pending = vec![VecDeque::new(); threads];
        let mut last_ready = 0;
        for r in trace {
            if usize::from(r.thread) >= threads {
                return Err(SimError::InvalidRequest { seq: r.seq, reason: "thread out of range" });
            }
            if usize::from(r.bank) >= n_banks {
                return Err(SimError::InvalidRequest { seq: r.seq, reason: "bank out of range" });
            }
            if r.row >= t.rows_per_bank {
                return Err(SimError::InvalidRequest { seq: r.seq, reason: "row out of range" });
            }
            let q: &mut VecDeque<MemRequest> = &mut pending[usize::from(r.thread)];
            if q.back().is_some_and(|p| p.ready_at > r.ready_at) {
                return Err(SimError::Unsorted { thread: r.thread, seq: r.seq });
            }
            q.push_back(*r);
            last_ready = last_ready.max(r.ready_at);
        }
        let mech = Mechanism::build(opts.mechanism, opts.mode, cfg, opts.seed);
        let next_epoch = matches!(mech, Mechanism::BlockHammer(_)).then_some(cfg.derived.epoch_len);
        let metrics = SimMetrics {
            mechanism: Some(opts.mechanism),
            mode: (opts.mechanism == MechanismKind::BlockHammer).then_some(opts.mode),
            requests: trace.len() as u64,
            threads: vec![ThreadStats::default(); threads],
            window_bound: cfg.lifetime_threshold(),
            commands: opts.record_commands.then(Vec::new),
            ..SimMetrics::default()
        };
        Ok(Self {
            cfg,
            opts,
            mech,
            horizon: opts.horizon.unwrap_or(last_ready + t.t_refw),
            n_banks,
            pending,
            in_flight: vec![0; threads * n_banks],
            banks: vec![Bank::default(); n_banks],
            rank_last: None,
            faw: VecDeque::with_capacity(4),
            completions: BinaryHeap::new(),
            oracle: SafetyOracle::new(t.t_refw),
            disturbance: opts
                .weighted_oracle
                .then(|| DisturbanceOracle::new(t.t_refw, &cfg.params.blast, t.rows_per_bank)),
            exposure: ExposureOracle::new(t.rows_per_bank),
            auditor: TimingAuditor::new(t),
            shadow: BTreeMap::new(),
            next_epoch,
            rhli_peak: vec![0.0; threads * n_banks],
            metrics,
            now: 0,
        })
    }

    fn enforcing_bh(&self) -> bool {
        matches!(&self.mech, Mechanism::BlockHammer(bh) if bh.mode() == Mode::FullFunctional)
    }

    fn run(&mut self) -> Result<(), SimError> {
        loop {
            self.step()?;
            if self.idle() {
                break;
            }
            match self.next_event() {
                Some(t) if t <= self.horizon => self.now = t,
                _ => break,
            }
        }
        Ok(())
    }

    fn idle(&self) -> bool {
        self.completions.is_empty()
            && self.pending.iter().all(VecDeque::is_empty)
            && self.banks.iter().all(|b| b.queue.is_empty() && b.refreshes.is_empty())
    }

    fn step(&mut self) -> Result<(), SimError> {
        let now = self.now;
        while let Some(&Reverse((at, thread, bank, ready_at))) = self.completions.peek() {
            if at > now {
                break;
            }
            self.completions.pop();
            self.in_flight[usize::from(thread) * self.n_banks + usize::from(bank)] -= 1;
            let s = &mut self.metrics.threads[usize::from(thread)];
            s.served += 1;
            s.total_latency += at - ready_at;
            s.max_latency = s.max_latency.max(at - ready_at);
            self.metrics.served += 1;
        }
        self.epochs(now);
        self.admit(now);
        if self.enforcing_bh() {
            self.update_episodes(now);
        }
        self.issue_columns(now);
        self.issue_act(now)
    }

    fn epochs(&mut self, now: Picos) {
        let Mechanism::BlockHammer(bh) = &mut self.mech else { return };
        while let Some(boundary) = self.next_epoch.filter(|&b| b <= now) {
            self.metrics.rhli_epochs.push(split_rows(&self.rhli_peak, self.n_banks));
            bh.on_epoch(boundary);
            for t in 0..bh.throttler.threads() {
                for b in 0..self.n_banks {
                    self.rhli_peak[t * self.n_banks + b] = bh.throttler.rhli(t as u16, b as u16);
                }
            }
            for bank in &mut self.banks {
                bank.generation += 1;
            }
            self.next_epoch = Some(boundary + self.cfg.derived.epoch_len);
        }
    }

    fn admit(&mut self, now: Picos) {
        let quota_max = self.cfg.params.quota_max;
        for t in 0..self.pending.len() {
            while let Some(&head) = self.pending[t].front() {
                if head.ready_at > now {
                    break;
                }
                let idx = t * self.n_banks + usize::from(head.bank);
                let in_flight = self.in_flight[idx];
                if in_flight >= quota_max {
                    break;
                }
                let verdict = self
                    .mech
                    .step(MechanismEvent::Admission { thread: head.thread, bank: head.bank, in_flight })
                    .expect("admission has no side effects");
                if !verdict.admit_request {
                    break;
                }
                self.pending[t].pop_front();
                self.in_flight[idx] += 1;
                let bank = &mut self.banks[usize::from(head.bank)];
                bank.swept = None;
                if bank.open_row == Some(head.row) {
                    bank.hits += 1;
                }
                let at = bank.queue.partition_point(|q| (q.req.ready_at, q.req.seq) < (head.ready_at, head.seq));
                bank.queue.insert(
                    at,
                    Queued {
                        req: head,
                        blocked_since: None,
                        blocked_until: None,
                        checked: None,
                        false_positive: false,
                    },
                );
            }
        }
    }

    fn update_episodes(&mut self, now: Picos) {
        let Mechanism::BlockHammer(bh) = &self.mech else { return };
        let n_bl = self.cfg.params.n_bl;
        let epoch_len = self.cfg.derived.epoch_len;
        for (b, bank) in self.banks.iter_mut().enumerate() {
            if bank.swept == Some(bank.generation) && now < bank.wake {
                continue;
            }
            bank.swept = Some(bank.generation);
            bank.wake = Picos::MAX;
            for q in &mut bank.queue {
                if bank.open_row == Some(q.req.row) {
                    continue;
                }
                if let Some(u) = q.blocked_until.filter(|&u| now < u) {
                    bank.wake = bank.wake.min(u);
                }
                if q.checked == Some(bank.generation) && q.blocked_until.is_none_or(|u| now < u) {
                    continue;
                }
                let row = RowAddr::new(b as u16, q.req.row);
                q.checked = Some(bank.generation);
                match bh.rowblocker.safe_at(row, now) {
                    Some(until) => {
                        q.blocked_until = Some(until);
                        bank.wake = bank.wake.min(until);
                        if q.blocked_since.is_none() {
                            q.blocked_since = Some(now);
                            self.metrics.blocked_acts += 1;
                            q.false_positive = lifetime_count(&self.shadow, epoch_len, row, now) < n_bl;
                            if q.false_positive {
                                self.metrics.false_positives += 1;
                            }
                        }
                    }
                    None => {
                        q.blocked_until = None;
                        if let Some(since) = q.blocked_since.take() {
                            record_episode(&mut self.metrics, since, q.false_positive, now);
                        }
                    }
                }
            }
        }
    }

    fn issue_columns(&mut self, now: Picos) {
        for b in 0..self.n_banks {
            let bank = &self.banks[b];
            if bank.busy_until > now || !bank.refreshes.is_empty() {
                continue;
            }
            let Some(open) = bank.open_row else { continue };
            if bank.hits == 0 {
                continue;
            }
            let i = bank.queue.iter().position(|q| q.req.row == open).expect("hit count is exact");
            let bank = &mut self.banks[b];
            bank.hits -= 1;
            let q = bank.queue.remove(i);
            if let Some(since) = q.blocked_since {
                record_episode(&mut self.metrics, since, q.false_positive, now);
            }
            self.metrics.row_hits += 1;
            self.log(now, CommandKind::Column, b as u16, open, Some(q.req.seq));
            self.complete_at(&q.req, now);
        }
    }

    fn act_ready(&self, b: usize) -> Picos {
        let t = &self.cfg.timings;
        let bank = &self.banks[b];
        let mut ready = bank.busy_until;
        if let Some(last) = bank.last_act {
            ready = ready.max(last + t.t_rc);
        }
        if let Some(last) = self.rank_last {
            ready = ready.max(last + t.rank_act_gap());
        }
        if self.faw.len() == 4 {
            ready = ready.max(self.faw[0] + t.t_faw);
        }
        ready
    }

    fn is_safe(&self, b: usize, q: &Queued, now: Picos) -> bool {
        match &self.mech {
            Mechanism::BlockHammer(bh) if bh.mode() == Mode::FullFunctional => {
                if q.checked == Some(self.banks[b].generation) {
                    return q.blocked_until.is_none_or(|u| u <= now);
                }
                bh.verdict(RowAddr::new(b as u16, q.req.row), now) == Verdict::Safe
            }
            _ => true,
        }
    }

    fn issue_act(&mut self, now: Picos) -> Result<(), SimError> {
        // (is_request, key, bank, queue index)
        let mut best: Option<(bool, (Picos, u64), usize, usize)> = None;
        for b in 0..self.n_banks {
            let bank = &self.banks[b];
            if bank.busy_until > now || (bank.queue.is_empty() && bank.refreshes.is_empty()) {
                continue;
            }
            if self.act_ready(b) > now {
                continue;
            }
            let cand = if !bank.refreshes.is_empty() {
                Some((false, (0, b as u64), b, 0))
            } else if bank.hits > 0 {
                None
            } else {
                bank.queue
                    .iter()
                    .position(|q| self.is_safe(b, q, now))
                    .map(|i| (true, (bank.queue[i].req.ready_at, bank.queue[i].req.seq), b, i))
            };
            if let Some(c) = cand {
                if best.is_none_or(|x| (c.0, c.1) < (x.0, x.1)) {
                    best = Some(c);
                }
            }
        }
        let Some((is_request, _, b, i)) = best else { return Ok(()) };
        if is_request {
            self.activate(b, i, now)
        } else {
            self.refresh(b, now);
            Ok(())
        }
    }

    fn close_row(&mut self, b: usize, now: Picos) {
        let Some(open) = self.banks[b].open_row.take() else { return };
        self.banks[b].hits = 0;
        let v = self
            .mech
            .step(MechanismEvent::RowClose { row: RowAddr::new(b as u16, open), now })
            .expect("row close has no fallible effects");
        for SideEffect::Refresh(r) in v.side_effects {
            self.banks[b].refreshes.push_back(r.row);
        }
    }

    fn activate(&mut self, b: usize, i: usize, now: Picos) -> Result<(), SimError> {
        let q = self.banks[b].queue.remove(i);
        let req = q.req;
        let row = RowAddr::new(req.bank, req.row);
        if self.banks[b].open_row.is_some() {
            self.metrics.row_conflicts += 1;
            self.close_row(b, now);
        } else {
            self.metrics.row_misses += 1;
        }
        if let Some(since) = q.blocked_since {
            record_episode(&mut self.metrics, since, q.false_positive, now);
        }
        if let Mechanism::BlockHammer(bh) = &self.mech {
            if bh.rowblocker.is_blacklisted(row) {
                self.metrics.threads[usize::from(req.thread)].blacklisted_acts += 1;
            }
            if bh.mode() == Mode::ObserveOnly && bh.verdict(row, now) == Verdict::Unsafe {
                self.metrics.observed_unsafe_acts += 1;
                if lifetime_count(&self.shadow, self.cfg.derived.epoch_len, row, now) < self.cfg.params.n_bl {
                    self.metrics.observed_false_positives += 1;
                }
            }
        }
        self.mech.step(MechanismEvent::ActIssued { thread: req.thread, row, now })?;
        if let Mechanism::BlockHammer(bh) = &self.mech {
            let idx = usize::from(req.thread) * self.n_banks + b;
            let r = bh.throttler.rhli(req.thread, req.bank);
            if r > self.rhli_peak[idx] {
                self.rhli_peak[idx] = r;
            }
        }
        self.record_act(b, req.row, now);
        self.metrics.acts += 1;
        self.metrics.threads[usize::from(req.thread)].acts += 1;
        self.log(now, CommandKind::Act, req.bank, req.row, Some(req.seq));
        let bank = &mut self.banks[b];
        bank.open_row = Some(req.row);
        bank.hits = bank.queue.iter().filter(|q| q.req.row == req.row).count();
        self.complete_at(&req, now);
        Ok(())
    }

    fn refresh(&mut self, b: usize, now: Picos) {
        let row = self.banks[b].refreshes.pop_front().expect("refresh pending");
        self.close_row(b, now);
        self.record_act(b, row, now);
        self.metrics.refreshes += 1;
        self.log(now, CommandKind::Refresh, b as u16, row, None);
        let bank = &mut self.banks[b];
        bank.open_row = None;
        bank.busy_until = now + self.cfg.timings.t_rc;
    }

    /// Bookkeeping common to every ACT-class command.
    fn record_act(&mut self, b: usize, row: u32, now: Picos) {
        let addr = RowAddr::new(b as u16, row);
        self.oracle.record(addr, now);
        if let Some(d) = &mut self.disturbance {
            d.record(addr, now);
        }
        self.exposure.on_activate(addr);
        self.auditor.on_act(b as u16, now);
        self.rank_last = Some(now);
        if self.faw.len() == 4 {
            self.faw.pop_front();
        }
        self.faw.push_back(now);
        self.banks[b].last_act = Some(now);
        self.banks[b].generation += 1;
        let e = now / self.cfg.derived.epoch_len;
        let s = self.shadow.entry(addr).or_default();
        if s.epoch != e {
            s.prev = if s.epoch + 1 == e { s.cur } else { 0 };
            s.cur = 0;
            s.epoch = e;
        }
        s.cur += 1;
    }

    fn complete_at(&mut self, req: &MemRequest, now: Picos) {
        let done = now + self.cfg.timings.t_cl;
        self.banks[usize::from(req.bank)].busy_until = done;
        self.completions.push(Reverse((done, req.thread, req.bank, req.ready_at)));
    }

    fn log(&mut self, at: Picos, kind: CommandKind, bank: u16, row: u32, seq: Option<u64>) {
        if let Some(c) = &mut self.metrics.commands {
            c.push(Command { at, kind, bank, row, seq });
        }
    }

    fn next_event(&self) -> Option<Picos> {
        let now = self.now;
        let mut next = Picos::MAX;
        let mut consider = |t: Picos| {
            if t > now && t < next {
                next = t;
            }
        };
        if let Some(Reverse((t, ..))) = self.completions.peek() {
            consider(*t);
        }
        if let Some(t) = self.next_epoch {
            consider(t);
        }
        for q in &self.pending {
            if let Some(h) = q.front() {
                consider(h.ready_at);
            }
        }
        for b in 0..self.n_banks {
            let bank = &self.banks[b];
            if bank.queue.is_empty() && bank.refreshes.is_empty() {
                continue;
            }
            consider(bank.busy_until);
            consider(self.act_ready(b));
            consider(bank.wake);
        }
        (next != Picos::MAX).then_some(next)
    }

    fn finish(mut self) -> SimMetrics {
        self.metrics.end_time = self.now;
        if matches!(self.mech, Mechanism::BlockHammer(_)) {
            self.metrics.rhli_epochs.push(split_rows(&self.rhli_peak, self.n_banks));
        }
        let threads = self.metrics.threads.len();
        self.metrics.max_rhli = (0..threads)
            .map(|t| self.metrics.rhli_epochs.iter().flat_map(|e| e[t].iter().copied()).fold(0.0, f64::max))
            .collect();
        if let Some((row, count)) = self.oracle.worst() {
            self.metrics.max_window_count = count;
            self.metrics.max_window_row = Some(row);
        }
        self.metrics.top_rows = self.oracle.top(self.opts.top_rows).into_iter().map(Into::into).collect();
        self.metrics.max_weighted_disturbance = self.disturbance.as_ref().map(|d| d.worst().0);
        self.metrics.max_victim_exposure = self.exposure.worst();
        self.metrics.timing_violations = self.auditor.violations().to_vec();
        self.metrics.finish();
        self.metrics
    }
}

/// Exact ACT count of `row` in the current and previous epochs, which is
/// what the active filter has seen.
fn lifetime_count(shadow: &BTreeMap<RowAddr, Shadow>, epoch_len: Picos, row: RowAddr, now: Picos) -> u32 {
    let e = now / epoch_len;
    match shadow.get(&row) {
        Some(s) if s.epoch == e => s.cur + s.prev,
        Some(s) if s.epoch + 1 == e => s.cur,
        _ => 0,
    }
}

fn record_episode(m: &mut SimMetrics, since: Picos, false_positive: bool, now: Picos) {
    let d = now - since;
    m.blocked_delays.push(d);
    if false_positive {
        m.false_positive_delays.push(d);
    }
}

fn split_rows(flat: &[f64], banks: usize) -> Vec<Vec<f64>> {
    flat.chunks(banks).map(<[f64]>::to_vec).collect()
}
