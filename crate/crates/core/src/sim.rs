//! Slot-level simulator.
//!
//! Transmission times are drawn from `Xoshiro256**` seeded through SplitMix64
//! (`seed_from_u64`); a uniform is `(next_u64 >> 11) · 2⁻⁵³` and `T(l)` is taken by
//! inverse CDF over the finite support in ascending order.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::baselines::{maf_select, periodic_decide, BaselineSpec, MafLength, PeriodicQueue};
use crate::error::{invalid, Error, Result};
use crate::index::GammaTable;
use crate::model::{Action, SourceConfig, SystemState};
use crate::multi::{net_gain_policy_step, MultiConfig, MultiPolicy};
use crate::tifl::TiflPolicy;
use crate::tvfl::TvflPolicy;

pub struct SimRng(Xoshiro256StarStar);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: u64,
    pub seed: u64,
    /// Leading fraction of slots excluded from averages.
    pub warmup_fraction: f64,
    pub record_events: bool,
    pub record_trace: bool,
    /// AoI at slot 0 (default 1); the channel starts idle and the last delivered length is 1.
    pub initial_delta: Option<u64>,
    /// Number of batches for the batch-means standard error.
    pub batches: usize,
}

impl SimOptions {
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            warmup_fraction: 0.01,
            record_events: false,
            record_trace: false,
            initial_delta: None,
            batches: 32,
        }
    }

    fn warmup(&self) -> u64 {
        ((self.horizon as f64 * self.warmup_fraction).floor() as u64).min(self.horizon.saturating_sub(1))
    }
}

/// One transmission; the delivered AoI is `deliver − generated + pos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub source: usize,
    pub send: u64,
    pub deliver: u64,
    pub len: usize,
    pub pos: usize,
    /// Slot at which the buffer window was taken (the send slot unless queued).
    pub generated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub horizon: u64,
    pub seed: u64,
    /// Average per-slot error summed over sources, after warm-up.
    pub time_avg_error: f64,
    pub per_source: Vec<f64>,
    /// `time_avg_error / M`.
    pub normalized_error: f64,
    /// Batch-means standard error of `time_avg_error`.
    pub std_error: f64,
    /// Slot counts per AoI, last bin collecting `δ ≥ delta_bound`; summed over sources.
    pub aoi_histogram: Vec<u64>,
    /// Busy fraction (single source) or mean `Σ l / N` (many sources), after warm-up.
    pub channel_utilization: f64,
    pub averaged_slots: u64,
    pub events: Option<Vec<Event>>,
    /// Per-slot error summed over sources, over the full horizon.
    pub trace: Option<Vec<f64>>,
}

/// Streaming accumulator shared by both simulators.
struct Accum {
    warmup: u64,
    horizon: u64,
    batches: Vec<f64>,
    batch_size: u64,
    sum: f64,
    per_source: Vec<f64>,
    busy: f64,
    hist: Vec<u64>,
    trace: Option<Vec<f64>>,
}

impl Accum {
    fn new(opts: &SimOptions, sources: usize, bound: usize) -> Self {
        let warmup = opts.warmup();
        let n = (opts.horizon - warmup).max(1);
        let count = (opts.batches.max(1) as u64).min(n);
        Self {
            warmup,
            horizon: opts.horizon,
            batches: vec![0.0; count as usize],
            batch_size: n / count,
            sum: 0.0,
            per_source: vec![0.0; sources],
            busy: 0.0,
            hist: vec![0; bound + 1],
            trace: opts.record_trace.then(|| Vec::with_capacity(opts.horizon as usize)),
        }
    }

    fn record_aoi(&mut self, delta: u64) {
        let bin = (delta as usize).min(self.hist.len() - 1);
        self.hist[bin] += 1;
    }

    fn record(&mut self, t: u64, costs: &[f64], busy: f64) {
        let total: f64 = costs.iter().sum();
        if let Some(tr) = self.trace.as_mut() {
            tr.push(total);
        }
        if t < self.warmup {
            return;
        }
        self.sum += total;
        for (acc, c) in self.per_source.iter_mut().zip(costs) {
            *acc += c;
        }
        self.busy += busy;
        let k = (((t - self.warmup) / self.batch_size) as usize).min(self.batches.len() - 1);
        self.batches[k] += total;
    }

    fn finish(self, opts: &SimOptions, events: Option<Vec<Event>>) -> SimResult {
        let n = (self.horizon - self.warmup) as f64;
        let m = self.per_source.len() as f64;
        let count = self.batches.len();
        let mean = self.sum / n;
        let std_error = if count > 1 {
            let last = n - (count as f64 - 1.0) * self.batch_size as f64;
            let means: Vec<f64> = self
                .batches
                .iter()
                .enumerate()
                .map(|(k, s)| s / if k + 1 == count { last } else { self.batch_size as f64 })
                .collect();
            let bm = means.iter().sum::<f64>() / count as f64;
            let var = means.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (count as f64 - 1.0);
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        SimResult {
            horizon: self.horizon,
            seed: opts.seed,
            time_avg_error: mean,
            per_source: self.per_source.iter().map(|s| s / n).collect(),
            normalized_error: mean / m,
            std_error,
            aoi_histogram: self.hist,
            channel_utilization: self.busy / n,
            averaged_slots: self.horizon - self.warmup,
            events,
            trace: self.trace,
        }
    }
}

/// Single-source policy to simulate.
#[derive(Debug, Clone, Copy)]
pub enum SinglePolicy<'a> {
    Tifl { policy: &'a TiflPolicy, gamma: &'a GammaTable },
    Tvfl(&'a TvflPolicy),
    Baseline(BaselineSpec),
}

enum Scheduler<'a> {
    Tifl(&'a TiflPolicy, &'a GammaTable),
    Tvfl { policy: &'a TvflPolicy, pending: Option<(u64, Action)> },
    ZeroWait(usize),
    Periodic(PeriodicQueue),
}

impl Scheduler<'_> {
    /// Called once per slot; `idle` tells whether the channel is free. Returns the
    /// action to start now and the slot its buffer window was taken.
    fn step(&mut self, t: u64, state: SystemState, idle: bool) -> Option<(Action, u64)> {
        match self {
            Scheduler::Periodic(q) => periodic_decide(t, q, idle),
            _ if !idle => None,
            Scheduler::ZeroWait(l) => Some((Action::new(0, *l, 0), t)),
            Scheduler::Tifl(p, g) => p.decide(state, g).map(|a| (a, t)),
            Scheduler::Tvfl { policy, pending } => {
                let (due, a) = *pending.get_or_insert_with(|| {
                    let a = policy.decide(state);
                    (t + a.wait, a)
                });
                (t >= due).then(|| {
                    *pending = None;
                    (a, t)
                })
            }
        }
    }
}

pub fn simulate_single(policy: &SinglePolicy, cfg: &SourceConfig, opts: &SimOptions) -> Result<SimResult> {
    if opts.horizon == 0 {
        return Err(invalid("horizon must be at least one slot"));
    }
    let buffer = cfg.buffer();
    let check = |l: usize| {
        if l == 0 || l > buffer {
            Err(Error::LengthOutOfRange { len: l, max: buffer })
        } else {
            Ok(())
        }
    };
    let mut sched = match *policy {
        SinglePolicy::Tifl { policy, gamma } => Scheduler::Tifl(policy, gamma),
        SinglePolicy::Tvfl(p) => Scheduler::Tvfl { policy: p, pending: None },
        SinglePolicy::Baseline(BaselineSpec::ZeroWait { len }) => {
            check(len)?;
            Scheduler::ZeroWait(len)
        }
        SinglePolicy::Baseline(BaselineSpec::Periodic { period, len }) => {
            check(len)?;
            Scheduler::Periodic(PeriodicQueue::new(period, len))
        }
        SinglePolicy::Baseline(BaselineSpec::Maf(_)) => {
            return Err(invalid("maximum-age-first needs several sources"));
        }
    };

    let mut rng = SimRng::new(opts.seed);
    let mut acc = Accum::new(opts, 1, cfg.delta_bound());
    let mut events = opts.record_events.then(Vec::new);

    let mut flight: Option<Event> = None;
    let mut state = SystemState::new(opts.initial_delta.unwrap_or(1), 1);
    for t in 0..opts.horizon {
        match flight {
            Some(f) if f.deliver == t => {
                state = SystemState::new(t - f.generated + f.pos as u64, f.len);
                if let Some(ev) = events.as_mut() {
                    ev.push(f);
                }
                flight = None;
            }
            _ if t > 0 => state.delta += 1,
            _ => {}
        }
        let cost = cfg.table.lookup(state.delta, state.d);
        acc.record_aoi(state.delta);
        if let Some((a, generated)) = sched.step(t, state, flight.is_none()) {
            let slots = cfg.trans.at(a.len).sample(rng.uniform());
            flight = Some(Event { source: 0, send: t, deliver: t + slots, len: a.len, pos: a.pos, generated });
        }
        acc.record(t, &[cost], if flight.is_some() { 1.0 } else { 0.0 });
    }
    Ok(acc.finish(opts, events))
}

/// Multi-source policy to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiKind {
    NetGain,
    Maf(MafLength),
    /// Each source follows its own relaxed optimum at `λ*`; the channel limit is not enforced.
    RelaxedLowerBound,
}

pub fn simulate_multi(kind: &MultiKind, cfg: &MultiConfig, policy: Option<&MultiPolicy>, opts: &SimOptions) -> Result<SimResult> {
    if opts.horizon == 0 {
        return Err(invalid("horizon must be at least one slot"));
    }
    let needs_policy = matches!(kind, MultiKind::NetGain | MultiKind::RelaxedLowerBound);
    let policy = match (needs_policy, policy) {
        (true, None) => return Err(invalid("this policy needs solved per-source tables")),
        (_, p) => p,
    };
    let m = cfg.sources.len();
    let bound = cfg.sources.iter().map(|t| t.delta_bound()).max().unwrap_or(1);
    let mut acc = Accum::new(opts, m, bound);
    let mut events = opts.record_events.then(Vec::new);
    let mut states = vec![SystemState::new(opts.initial_delta.unwrap_or(1), 1); m];
    let mut costs = vec![0.0; m];
    let maf_lens: Vec<usize> = match kind {
        MultiKind::Maf(MafLength::Fixed(l)) => {
            if let Some(t) = cfg.sources.iter().find(|t| *l == 0 || *l > t.max_len()) {
                return Err(Error::LengthOutOfRange { len: *l, max: t.max_len() });
            }
            vec![*l; m]
        }
        MultiKind::Maf(MafLength::Buffer) => cfg.sources.iter().map(|t| t.max_len()).collect(),
        _ => Vec::new(),
    };
    let mut actions = vec![Action::new(0, 0, 0); m];
    for t in 0..opts.horizon {
        for j in 0..m {
            costs[j] = cfg.sources[j].lookup(states[j].delta, states[j].d);
            acc.record_aoi(states[j].delta);
        }
        match kind {
            MultiKind::NetGain => {
                actions = net_gain_policy_step(policy.expect("checked"), &states, cfg.channels);
            }
            MultiKind::RelaxedLowerBound => {
                let p = policy.expect("checked");
                for j in 0..m {
                    actions[j] = p.relaxed_action(j, states[j]);
                }
            }
            MultiKind::Maf(_) => {
                let deltas: Vec<u64> = states.iter().map(|s| s.delta).collect();
                actions.iter_mut().for_each(|a| *a = Action::new(0, 0, 0));
                for j in maf_select(&deltas, cfg.channels, &maf_lens) {
                    actions[j] = Action::new(0, maf_lens[j], 0);
                }
            }
        }
        let used: usize = actions.iter().map(|a| a.len).sum();
        if *kind != MultiKind::RelaxedLowerBound && used > cfg.channels {
            return Err(Error::ConstraintViolation { slot: t, used, capacity: cfg.channels });
        }
        acc.record(t, &costs, used as f64 / cfg.channels as f64);
        for j in 0..m {
            let a = actions[j];
            if a.len > 0 {
                states[j] = SystemState::new(1 + a.pos as u64, a.len);
                if let Some(ev) = events.as_mut() {
                    ev.push(Event { source: j, send: t, deliver: t + 1, len: a.len, pos: a.pos, generated: t });
                }
            } else {
                states[j].delta += 1;
            }
        }
    }
    Ok(acc.finish(opts, events))
}

/// Rebuild the AoI of one source at slots `0..horizon` from its delivered events;
/// slots before the first delivery take `initial + t`.
pub fn replay_aoi(events: &[Event], source: usize, horizon: u64, initial: u64) -> Vec<u64> {
    let mut delivered: Vec<&Event> = events.iter().filter(|e| e.source == source).collect();
    delivered.sort_by_key(|e| e.deliver);
    let mut out = Vec::with_capacity(horizon as usize);
    let mut k = 0;
    let mut current: Option<&Event> = None;
    for t in 0..horizon {
        while k < delivered.len() && delivered[k].deliver <= t {
            current = Some(delivered[k]);
            k += 1;
        }
        out.push(match current {
            Some(e) => t - e.generated + e.pos as u64,
            None => initial + t,
        });
    }
    out
}
