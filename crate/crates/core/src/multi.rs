//! Many sources sharing `N` channel units with one-slot delivery.
//!
//! The channel constraint is relaxed with a price `λ` per unit of feature length. Each
//! source then solves its own average-cost MDP (relative value iteration); the price is
//! tuned by dual subgradient steps, and per-slot decisions pick feature lengths by a
//! multiple-choice knapsack over the resulting net gains.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::errmodel::{load_csv, InferenceErrorTable};
use crate::error::{invalid, Error, Result};
use crate::model::{Action, SystemState};
use crate::par::Exec;

pub const RVI_TOL: f64 = 1e-8;
pub const RVI_MAX_SWEEPS: usize = 1_000_000;
/// Weight of the Bellman update in `h ← (1 − ω) h + ω T h`; keeps periodic chains converging.
pub const RVI_DAMPING: f64 = 0.5;

/// Relative values, best offsets and net gains of one source at price `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceValueTables {
    pub lambda: f64,
    /// Long-run average of `err + λ l` under the optimal per-source policy.
    pub p_bar: f64,
    pub delta_bound: usize,
    #[serde(rename = "B")]
    pub max_len: usize,
    /// `h[(δ - 1) * B + d - 1]`, anchored at `h(1, 1) = 0`.
    pub h: Vec<f64>,
    /// `b_hat[l]` for `l ∈ 0..=B`; entry 0 is unused and zero.
    pub b_hat: Vec<usize>,
    /// `alpha[((δ - 1) * B + d - 1) * (B + 1) + l]`.
    pub alpha: Vec<f64>,
    pub sweeps: usize,
}

impl SourceValueTables {
    #[inline]
    fn idx(&self, delta: u64, d: usize) -> usize {
        ((delta as usize).clamp(1, self.delta_bound) - 1) * self.max_len + d - 1
    }

    /// `h(δ, d)` with `δ` clamped into `1..=delta_bound`.
    pub fn h_at(&self, delta: u64, d: usize) -> f64 {
        self.h[self.idx(delta, d)]
    }

    /// Stored net gain at the table's own `λ`.
    pub fn alpha_at(&self, delta: u64, d: usize, len: usize) -> f64 {
        self.alpha[self.idx(delta, d) * (self.max_len + 1) + len]
    }

    pub fn gains(&self, delta: u64, d: usize) -> &[f64] {
        let base = self.idx(delta, d) * (self.max_len + 1);
        &self.alpha[base..base + self.max_len + 1]
    }
}

#[inline]
fn idx(bound: usize, b: usize, delta: usize, d: usize) -> usize {
    (delta.min(bound) - 1) * b + d - 1
}

/// `argmin_{b ≤ B − l} h(b + 1, l)`, ties to the smallest `b`.
pub fn best_position(h: &[f64], delta_bound: usize, max_len: usize, len: usize) -> usize {
    let mut best = 0;
    for pos in 1..=max_len - len {
        if h[idx(delta_bound, max_len, pos + 1, len)] < h[idx(delta_bound, max_len, best + 1, len)] {
            best = pos;
        }
    }
    best
}

/// `α(δ, d, l) = h(δ + 1, d) − h(b̂(l) + 1, l) − λ l`, and zero for `l = 0`.
pub fn net_gain(tables: &SourceValueTables, lambda: f64, delta: u64, d: usize, len: usize) -> f64 {
    if len == 0 {
        return 0.0;
    }
    tables.h_at(delta + 1, d) - tables.h_at(tables.b_hat[len] as u64 + 1, len) - lambda * len as f64
}

/// Relative value iteration for one source at price `λ`, optionally warm-started.
pub fn rvi_source(table: &InferenceErrorTable, lambda: f64, warm: Option<&[f64]>) -> Result<SourceValueTables> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("price must be finite and non-negative, got {lambda}")));
    }
    let (bound, b) = (table.delta_bound(), table.max_len());
    if bound < b + 1 {
        return Err(invalid(format!("delta_bound={bound} must exceed B={b}")));
    }
    let n = bound * b;
    let anchor = idx(bound, b, 1, 1);
    let cost: Vec<f64> = (0..n).map(|i| table.lookup((i / b + 1) as u64, i % b + 1)).collect();
    let idle_next: Vec<usize> = (0..n).map(|i| idx(bound, b, i / b + 2, i % b + 1)).collect();
    let mut h = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![0.0; n],
    };
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    for sweep in 1..=RVI_MAX_SWEEPS {
        let send = best_send(&h, bound, b, lambda);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let th = cost[i] + h[idle_next[i]].min(send);
            let v = (1.0 - RVI_DAMPING) * h[i] + RVI_DAMPING * th;
            lo = lo.min(v - h[i]);
            hi = hi.max(v - h[i]);
            next[i] = v;
        }
        let shift = next[anchor];
        for v in next.iter_mut() {
            *v -= shift;
        }
        std::mem::swap(&mut h, &mut next);
        span = hi - lo;
        if span <= RVI_TOL {
            let p_bar = shift / RVI_DAMPING;
            return Ok(finish(h, p_bar, lambda, bound, b, sweep));
        }
    }
    Err(Error::NonConvergence { what: "relative value iteration", iterations: RVI_MAX_SWEEPS, residual: span })
}

/// `min_{l ≥ 1, b} λ l + h(b + 1, l)`: the transmit branch is the same for every state.
fn best_send(h: &[f64], bound: usize, b: usize, lambda: f64) -> f64 {
    let mut best = f64::INFINITY;
    for l in 1..=b {
        for pos in 0..=b - l {
            best = best.min(lambda * l as f64 + h[idx(bound, b, pos + 1, l)]);
        }
    }
    best
}

fn finish(h: Vec<f64>, p_bar: f64, lambda: f64, bound: usize, b: usize, sweeps: usize) -> SourceValueTables {
    let mut b_hat = vec![0; b + 1];
    for (l, slot) in b_hat.iter_mut().enumerate().skip(1) {
        *slot = best_position(&h, bound, b, l);
    }
    let mut tables = SourceValueTables {
        lambda,
        p_bar,
        delta_bound: bound,
        max_len: b,
        h,
        b_hat,
        alpha: Vec::new(),
        sweeps,
    };
    let mut alpha = Vec::with_capacity(bound * b * (b + 1));
    for delta in 1..=bound as u64 {
        for d in 1..=b {
            for l in 0..=b {
                alpha.push(net_gain(&tables, lambda, delta, d, l));
            }
        }
    }
    tables.alpha = alpha;
    tables
}

/// `max_s |h(s) + p̄ − min(err(s) + h(idle), err(s) + min_send)|`.
pub fn rvi_residual(tables: &SourceValueTables, table: &InferenceErrorTable) -> f64 {
    let (bound, b) = (tables.delta_bound, tables.max_len);
    let send = best_send(&tables.h, bound, b, tables.lambda);
    let mut worst = 0.0f64;
    for delta in 1..=bound {
        for d in 1..=b {
            let th = table.lookup(delta as u64, d) + tables.h[idx(bound, b, delta + 1, d)].min(send);
            worst = worst.max((tables.h[idx(bound, b, delta, d)] + tables.p_bar - th).abs());
        }
    }
    worst
}

/// Per-source length choices, the optimal gain, and the channel units used.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackChoice {
    pub lens: Vec<usize>,
    pub value: f64,
    pub used: usize,
}

/// Multiple-choice knapsack: each source `j` picks `l_j ∈ 0..gains[j].len()` with
/// `Σ l_j ≤ capacity`, maximising `Σ gains[j][l_j]`. Ties: fewer units, then the
/// lexicographically smallest assignment. Sums are accumulated from the last source.
pub fn knapsack_select(gains: &[Vec<f64>], capacity: usize) -> KnapsackChoice {
    let m = gains.len();
    let width = capacity + 1;
    let mut table = vec![(0.0f64, 0usize); (m + 1) * width];
    for j in (0..m).rev() {
        for c in 0..=capacity {
            let mut best: Option<(f64, usize)> = None;
            for (l, &g) in gains[j].iter().enumerate().take(c + 1) {
                let (v, u) = table[(j + 1) * width + c - l];
                let cand = (g + v, l + u);
                if best.is_none_or(|b| better(cand, b)) {
                    best = Some(cand);
                }
            }
            table[j * width + c] = best.unwrap_or((f64::NEG_INFINITY, 0));
        }
    }
    let mut lens = Vec::with_capacity(m);
    let mut c = capacity;
    for j in 0..m {
        let target = table[j * width + c];
        let l = (0..gains[j].len().min(c + 1))
            .find(|&l| {
                let (v, u) = table[(j + 1) * width + c - l];
                gains[j][l] + v == target.0 && l + u == target.1
            })
            .expect("reconstruction follows the table");
        lens.push(l);
        c -= l;
    }
    let (value, used) = table[capacity];
    KnapsackChoice { lens, value, used }
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn default_min_iters() -> usize {
    1
}
fn default_max_iters() -> usize {
    1_000_000
}
fn default_resolve_eps() -> f64 {
    1e-4
}

/// Step rule `λ ← max(λ + (β / k)(Σ l − N), 0)`, stopped once `|Δλ| ≤ θ` and `k ≥ min_iters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualParams {
    pub beta: f64,
    pub theta: f64,
    #[serde(default)]
    pub lambda0: f64,
    #[serde(default = "default_min_iters")]
    pub min_iters: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Re-solve the per-source tables when `λ` has moved this far since the last solve.
    #[serde(default = "default_resolve_eps")]
    pub resolve_eps: f64,
}

impl Default for DualParams {
    fn default() -> Self {
        Self {
            beta: 1e-4,
            theta: 1e-7,
            lambda0: 0.0,
            min_iters: default_min_iters(),
            max_iters: default_max_iters(),
            resolve_eps: default_resolve_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiConfig {
    pub channels: usize,
    pub sources: Vec<InferenceErrorTable>,
    pub dual: DualParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceEntry {
    #[serde(rename = "B")]
    buffer: usize,
    table: String,
    delta_bound: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigFile {
    #[serde(rename = "N")]
    channels: usize,
    sources: Vec<SourceEntry>,
    #[serde(default)]
    dual: DualParams,
}

impl MultiConfig {
    pub fn new(channels: usize, sources: Vec<InferenceErrorTable>, dual: DualParams) -> Result<Self> {
        if channels == 0 || sources.is_empty() {
            return Err(invalid("need N >= 1 and at least one source"));
        }
        for (j, t) in sources.iter().enumerate() {
            if t.delta_bound() < t.max_len() + 1 {
                return Err(invalid(format!(
                    "source {j}: delta_bound={} must exceed B={}",
                    t.delta_bound(),
                    t.max_len()
                )));
            }
        }
        if !(dual.beta > 0.0 && dual.theta >= 0.0 && dual.lambda0 >= 0.0 && dual.resolve_eps >= 0.0) {
            return Err(invalid("dual parameters must be beta > 0 and theta, lambda0, resolve_eps >= 0"));
        }
        Ok(Self { channels, sources, dual })
    }

    /// Reads the JSON config; table paths are relative to the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: ConfigFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut sources = Vec::with_capacity(file.sources.len());
        for (j, s) in file.sources.iter().enumerate() {
            let table = load_csv(dir.join(&s.table))?;
            if table.delta_bound() != s.delta_bound {
                return Err(invalid(format!(
                    "source {j}: table {} has delta_bound={}, config says {}",
                    s.table,
                    table.delta_bound(),
                    s.delta_bound
                )));
            }
            sources.push(table.truncate_lengths(s.buffer)?);
        }
        Self::new(file.channels, sources, file.dual)
    }

    /// Writes `config.json` plus one table CSV per source into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (j, t) in self.sources.iter().enumerate() {
            let name = format!("source{j}.csv");
            crate::errmodel::save_csv(t, dir.join(&name))?;
            entries.push(SourceEntry { buffer: t.max_len(), table: name, delta_bound: t.delta_bound() });
        }
        let file = ConfigFile { channels: self.channels, sources: entries, dual: self.dual.clone() };
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(&file)?)?;
        Ok(path)
    }

    pub fn total_buffer(&self) -> usize {
        self.sources.iter().map(InferenceErrorTable::max_len).sum()
    }
}

/// Dual price and per-source tables at that price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPolicy {
    pub lambda_star: f64,
    pub sources: Vec<SourceValueTables>,
    pub iterations: usize,
}

impl MultiPolicy {
    /// Relaxed choice of one source: `argmax_l α(δ, d, l)`, ties to the smallest `l`.
    pub fn relaxed_action(&self, j: usize, state: SystemState) -> Action {
        let t = &self.sources[j];
        let gains = t.gains(state.delta, state.d);
        let mut l = 0;
        for (k, &g) in gains.iter().enumerate() {
            if g > gains[l] {
                l = k;
            }
        }
        Action::new(0, l, if l == 0 { 0 } else { t.b_hat[l] })
    }
}

fn solve_all(cfg: &MultiConfig, lambda: f64, warm: Option<&[SourceValueTables]>, exec: Exec) -> Result<Vec<SourceValueTables>> {
    let idx: Vec<usize> = (0..cfg.sources.len()).collect();
    exec.map(&idx, |&j| rvi_source(&cfg.sources[j], lambda, warm.map(|w| w[j].h.as_slice())))
        .into_iter()
        .collect()
}

/// Dual subgradient ascent driven by simulated per-source states.
pub fn dual_ascent(cfg: &MultiConfig, exec: Exec) -> Result<MultiPolicy> {
    let p = &cfg.dual;
    let m = cfg.sources.len();
    let mut lambda = p.lambda0;
    let mut tables = solve_all(cfg, lambda, None, exec)?;
    let mut solved_at = lambda;
    let mut states = vec![SystemState::new(1, 1); m];
    let mut last = vec![Action::new(0, 0, 0); m];
    let mut k = 0;
    loop {
        k += 1;
        if k > p.max_iters {
            return Err(Error::NonConvergence { what: "dual ascent", iterations: p.max_iters, residual: f64::NAN });
        }
        let mut used = 0usize;
        for j in 0..m {
            let s = &mut states[j];
            if last[j].len > 0 {
                *s = SystemState::new(1 + last[j].pos as u64, last[j].len);
            } else {
                s.delta += 1;
            }
            let t = &tables[j];
            let mut best = (0usize, 0.0f64);
            for l in 1..=t.max_len {
                let g = net_gain(t, lambda, s.delta, s.d, l);
                if g > best.1 {
                    best = (l, g);
                }
            }
            let l = best.0;
            last[j] = Action::new(0, l, if l == 0 { 0 } else { t.b_hat[l] });
            used += l;
        }
        let step = p.beta * (used as f64 - cfg.channels as f64) / k as f64;
        let next = (lambda + step).max(0.0);
        let moved = (next - lambda).abs();
        lambda = next;
        if moved <= p.theta && k >= p.min_iters {
            break;
        }
        if (lambda - solved_at).abs() > p.resolve_eps {
            tables = solve_all(cfg, lambda, Some(&tables), exec)?;
            solved_at = lambda;
        }
    }
    let sources = if lambda == solved_at { tables } else { solve_all(cfg, lambda, Some(&tables), exec)? };
    Ok(MultiPolicy { lambda_star: lambda, sources, iterations: k })
}

pub fn solve_multi(cfg: &MultiConfig) -> Result<MultiPolicy> {
    dual_ascent(cfg, Exec::default())
}

/// One slot of the Net Gain policy: knapsack over the stored gains at `λ*`.
pub fn net_gain_policy_step(policy: &MultiPolicy, states: &[SystemState], capacity: usize) -> Vec<Action> {
    let gains: Vec<Vec<f64>> = policy
        .sources
        .iter()
        .zip(states)
        .map(|(t, s)| t.gains(s.delta, s.d).to_vec())
        .collect();
    let choice = knapsack_select(&gains, capacity);
    choice
        .lens
        .iter()
        .zip(&policy.sources)
        .map(|(&l, t)| Action::new(0, l, if l == 0 { 0 } else { t.b_hat[l] }))
        .collect()
}

/// Average error of the relaxed per-source policies at `λ*` (price terms excluded).
pub fn lower_bound_eval(cfg: &MultiConfig, policy: &MultiPolicy, horizon: u64, seed: u64) -> Result<crate::sim::SimResult> {
    let opts = crate::sim::SimOptions::new(horizon, seed);
    crate::sim::simulate_multi(&crate::sim::MultiKind::RelaxedLowerBound, cfg, Some(policy), &opts)
}
