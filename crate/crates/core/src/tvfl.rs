//! Single source, time-variant feature length: an average-cost semi-Markov decision
//! problem over delivery epochs, solved by policy iteration.
//!
//! The decision state is `(δ, d)`: AoI at delivery and the delivered length. An action
//! `(Z, l, b)` waits `Z` slots, then sends `l` samples at offset `b`. The next state is
//! `(T(l) + b, l)`, which depends on the action only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{first_crossing, ColumnPrefix, GammaTable, TieRule};
use crate::model::{Action, SourceConfig, SystemState};
use crate::par::Exec;

const MAX_ROUNDS: usize = 1000;
const SWEEP_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100_000;
const REFERENCE: (u64, usize) = (1, 1);

/// Stationary action maps over `δ ∈ 1..=delta_bound`, `d ∈ 1..=B`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMaps {
    delta_bound: usize,
    max_len: usize,
    actions: Vec<Action>,
}

impl PolicyMaps {
    pub fn uniform(delta_bound: usize, max_len: usize, action: Action) -> Self {
        Self { delta_bound, max_len, actions: vec![action; delta_bound * max_len] }
    }

    /// Zero wait, `l = 1`, `b = 0` everywhere.
    pub fn zero_wait(cfg: &SourceConfig) -> Self {
        Self::uniform(cfg.delta_bound(), cfg.buffer(), Action::new(0, 1, 0))
    }

    pub fn delta_bound(&self) -> usize {
        self.delta_bound
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    #[inline]
    fn idx(&self, delta: u64, d: usize) -> usize {
        let delta = (delta as usize).clamp(1, self.delta_bound);
        (delta - 1) * self.max_len + (d - 1)
    }

    #[inline]
    fn state_of(&self, i: usize) -> (u64, usize) {
        ((i / self.max_len + 1) as u64, i % self.max_len + 1)
    }

    /// Action at `(δ, d)`; `δ` is clamped into `1..=delta_bound`.
    pub fn action(&self, delta: u64, d: usize) -> Action {
        self.actions[self.idx(delta, d)]
    }

    pub fn set(&mut self, delta: u64, d: usize, action: Action) {
        let i = self.idx(delta, d);
        self.actions[i] = action;
    }
}

/// Average error of a policy and its relative values, `h(1, 1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub p_bar: f64,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMethod {
    /// Exact linear solve of the evaluation equations on the recurrent support.
    #[default]
    Direct,
    /// Jacobi sweeps with `p̄` refreshed before each sweep, stopped at max change `1e-8`.
    Sweep,
}

/// Precomputed quantities shared by evaluation and improvement.
pub struct Model<'a> {
    cfg: &'a SourceConfig,
    gamma: GammaTable,
    prefix: Vec<ColumnPrefix>,
    mean_t: Vec<f64>,
}

impl<'a> Model<'a> {
    pub fn new(cfg: &'a SourceConfig) -> Result<Self> {
        let gamma = GammaTable::build(&cfg.table, &cfg.trans)?;
        Ok(Self::with_gamma(cfg, gamma))
    }

    pub fn with_gamma(cfg: &'a SourceConfig, gamma: GammaTable) -> Self {
        let b = cfg.buffer();
        Self {
            cfg,
            gamma,
            prefix: (1..=b).map(|d| ColumnPrefix::new(&cfg.table, d)).collect(),
            mean_t: (1..=b).map(|l| cfg.trans.at(l).mean()).collect(),
        }
    }

    pub fn gamma(&self) -> &GammaTable {
        &self.gamma
    }

    fn bound(&self) -> u64 {
        self.cfg.delta_bound() as u64
    }

    /// `E Σ_{k < Z + T(l)} err(δ + k, d)`.
    pub fn cycle_cost(&self, delta: u64, d: usize, len: usize, wait: u64) -> f64 {
        let col = &self.prefix[d - 1];
        let mut acc = 0.0;
        for &(t, p) in self.cfg.trans.at(len).points() {
            acc += p * col.range(delta, wait + t);
        }
        acc
    }

    /// `E[Z + T(l)]`.
    pub fn cycle_length(&self, len: usize, wait: u64) -> f64 {
        wait as f64 + self.mean_t[len - 1]
    }

    /// `E h(T(l) + b, l)`.
    fn next_value(&self, maps: &PolicyMaps, h: &[f64], len: usize, pos: usize) -> f64 {
        let mut acc = 0.0;
        for &(t, p) in self.cfg.trans.at(len).points() {
            acc += p * h[maps.idx((t + pos as u64).min(self.bound()), len)];
        }
        acc
    }

    fn successors(&self, maps: &PolicyMaps, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let a = maps.actions[i];
        let bound = self.bound();
        let b = maps.max_len;
        self.cfg.trans.at(a.len).points().iter().map(move |&(t, p)| {
            let delta = (t + a.pos as u64).min(bound) as usize;
            ((delta - 1) * b + (a.len - 1), p)
        })
    }

    /// `c(s) − p̄ τ(s)` for the action stored at state `i`.
    fn reward(&self, maps: &PolicyMaps, i: usize, p_bar: f64) -> f64 {
        let (delta, d) = maps.state_of(i);
        let a = maps.actions[i];
        self.cycle_cost(delta, d, a.len, a.wait) - p_bar * self.cycle_length(a.len, a.wait)
    }
}

/// `Z_l(δ, d)`: first `τ ≥ 0` with `γ_l(δ + τ, d) ≥ p̄`, capped at saturation.
pub fn wait_threshold(delta: u64, d: usize, len: usize, p_bar: f64, gamma: &GammaTable) -> u64 {
    first_crossing(gamma, len, d, delta, p_bar, TieRule::Transmit)
}

/// States reachable after one delivery, plus the reference, in index order.
fn support(model: &Model, maps: &PolicyMaps) -> Vec<usize> {
    let mut mark = vec![false; maps.actions.len()];
    mark[maps.idx(REFERENCE.0, REFERENCE.1)] = true;
    for i in 0..maps.actions.len() {
        for (j, _) in model.successors(maps, i) {
            mark[j] = true;
        }
    }
    (0..mark.len()).filter(|&i| mark[i]).collect()
}

/// Closed recurrent classes of the embedded chain restricted to `nodes` (closed under successors).
fn closed_classes(model: &Model, maps: &PolicyMaps, nodes: &[usize]) -> Vec<Vec<usize>> {
    let n = maps.actions.len();
    let reach = |from: usize| {
        let mut seen = vec![false; n];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(i) = stack.pop() {
            for (j, _) in model.successors(maps, i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let reach_sets: Vec<(usize, Vec<bool>)> = nodes.iter().map(|&i| (i, reach(i))).collect();
    let lookup = |i: usize| &reach_sets[nodes.binary_search(&i).expect("closed node set")].1;
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    for (i, ri) in &reach_sets {
        if assigned[*i] {
            continue;
        }
        let recurrent = nodes.iter().all(|&j| !ri[j] || lookup(j)[*i]);
        if recurrent {
            let class: Vec<usize> = nodes.iter().copied().filter(|&j| ri[j]).collect();
            for &j in &class {
                assigned[j] = true;
            }
            classes.push(class);
        }
    }
    classes
}

/// Solve `h(k) = c(k) − p̄ τ(k) + E h(next)` on `nodes` with `h(anchor) = 0`.
fn solve_on(model: &Model, maps: &PolicyMaps, nodes: &[usize], anchor: usize) -> Result<(f64, Vec<(usize, f64)>)> {
    let m = nodes.len();
    let var = |i: usize| nodes.binary_search(&i).expect("node in support");
    let anchor_var = var(anchor);
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (row, &i) in nodes.iter().enumerate() {
        let act = maps.actions[i];
        let (delta, d) = maps.state_of(i);
        rhs[row] = model.cycle_cost(delta, d, act.len, act.wait);
        if row != anchor_var {
            a[(row, row)] += 1.0;
        }
        a[(row, anchor_var)] += model.cycle_length(act.len, act.wait);
        for (j, p) in model.successors(maps, i) {
            let col = var(j);
            if col != anchor_var {
                a[(row, col)] -= p;
            }
        }
    }
    let sol = a.lu().solve(&rhs).ok_or(Error::Multichain { classes: 0 })?;
    let p_bar = sol[anchor_var];
    let h = nodes
        .iter()
        .enumerate()
        .map(|(k, &i)| (i, if k == anchor_var { 0.0 } else { sol[k] }))
        .collect();
    Ok((p_bar, h))
}

/// Average error and relative values of a stationary policy (reference state `(1, 1)`).
pub fn policy_evaluate(maps: &PolicyMaps, cfg: &SourceConfig) -> Result<Evaluation> {
    let model = Model::new(cfg)?;
    evaluate(&model, maps, EvalMethod::Direct)
}

pub fn evaluate(model: &Model, maps: &PolicyMaps, method: EvalMethod) -> Result<Evaluation> {
    match method {
        EvalMethod::Direct => evaluate_direct(model, maps),
        EvalMethod::Sweep => evaluate_sweep(model, maps),
    }
}

fn evaluate_direct(model: &Model, maps: &PolicyMaps) -> Result<Evaluation> {
    let nodes = support(model, maps);
    let classes = closed_classes(model, maps, &nodes);
    if classes.len() != 1 {
        return Err(Error::Multichain { classes: classes.len() });
    }
    let anchor = maps.idx(REFERENCE.0, REFERENCE.1);
    let (p_bar, solved) = solve_on(model, maps, &nodes, anchor)?;
    let mut h = vec![0.0; maps.actions.len()];
    for &(i, v) in &solved {
        h[i] = v;
    }
    let mut known = vec![false; h.len()];
    for &i in &nodes {
        known[i] = true;
    }
    for i in 0..h.len() {
        if !known[i] {
            let a = maps.actions[i];
            h[i] = model.reward(maps, i, p_bar) + model.next_value(maps, &h, a.len, a.pos);
        }
    }
    Ok(Evaluation { p_bar, h })
}

fn evaluate_sweep(model: &Model, maps: &PolicyMaps) -> Result<Evaluation> {
    let n = maps.actions.len();
    let anchor = maps.idx(REFERENCE.0, REFERENCE.1);
    let costs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (delta, d) = maps.state_of(i);
            let a = maps.actions[i];
            (model.cycle_cost(delta, d, a.len, a.wait), model.cycle_length(a.len, a.wait))
        })
        .collect();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let ra = maps.actions[anchor];
        let p_bar = (costs[anchor].0 + model.next_value(maps, &h, ra.len, ra.pos)) / costs[anchor].1;
        change = 0.0;
        for i in 0..n {
            let a = maps.actions[i];
            next[i] = costs[i].0 - p_bar * costs[i].1 + model.next_value(maps, &h, a.len, a.pos);
            change = f64::max(change, (next[i] - h[i]).abs());
        }
        std::mem::swap(&mut h, &mut next);
        if change <= SWEEP_TOL {
            return Ok(Evaluation { p_bar, h });
        }
    }
    Err(Error::NonConvergence { what: "policy evaluation sweeps", iterations: MAX_SWEEPS, residual: change })
}

/// Best offset per length: `b̂(l) = argmin_b E h(T(l) + b, l)` and that minimum.
fn best_offsets(model: &Model, maps: &PolicyMaps, h: &[f64]) -> Vec<Vec<f64>> {
    let b = maps.max_len;
    (1..=b)
        .map(|l| (0..=b - l).map(|pos| model.next_value(maps, h, l, pos)).collect())
        .collect()
}

fn tolerance(model: &Model, h: &[f64]) -> f64 {
    let hmax = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cmax = model.cfg.table.max().abs() * model.bound() as f64;
    1e-12 * (1.0 + hmax + cmax)
}

/// Index of the minimum; values within `tol` of it tie, and ties keep `incumbent`
/// when it is among them, else the first.
fn pick(values: &[f64], incumbent: Option<usize>, tol: f64) -> usize {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if let Some(k) = incumbent {
        if k < values.len() && values[k] <= min + tol {
            return k;
        }
    }
    values.iter().position(|&v| v <= min + tol).expect("non-empty")
}

/// One improvement step; `current` supplies the incumbent actions for tie-breaking.
pub fn policy_improve(eval: &Evaluation, model: &Model, current: &PolicyMaps, exec: Exec) -> PolicyMaps {
    let offsets = best_offsets(model, current, &eval.h);
    let tol = tolerance(model, &eval.h);
    let b = current.max_len;
    let actions = exec.map_range(current.actions.len(), |i| {
        let (delta, d) = current.state_of(i);
        let inc = current.actions[i];
        let mut waits = Vec::with_capacity(b);
        let mut vals = Vec::with_capacity(b);
        for l in 1..=b {
            let z = wait_threshold(delta, d, l, eval.p_bar, &model.gamma);
            let tail = offsets[l - 1].iter().copied().fold(f64::INFINITY, f64::min);
            waits.push(z);
            vals.push(model.cycle_cost(delta, d, l, z) - eval.p_bar * model.cycle_length(l, z) + tail);
        }
        let l = pick(&vals, Some(inc.len - 1), tol) + 1;
        let inc_pos = (inc.len == l).then_some(inc.pos);
        let pos = pick(&offsets[l - 1], inc_pos, tol);
        Action::new(waits[l - 1], l, pos)
    });
    PolicyMaps { delta_bound: current.delta_bound, max_len: b, actions }
}

/// Redirect every closed class but the cheapest into the cheapest one.
fn repair_multichain(model: &Model, maps: &mut PolicyMaps, p_bar: f64) -> Result<bool> {
    let nodes = support(model, maps);
    let classes = closed_classes(model, maps, &nodes);
    if classes.len() <= 1 {
        return Ok(false);
    }
    let mut gains = Vec::with_capacity(classes.len());
    for class in &classes {
        gains.push(solve_on(model, maps, class, class[0])?.0);
    }
    let best = pick(&gains, None, 0.0);
    let target = maps.actions[classes[best][0]];
    for (k, class) in classes.iter().enumerate() {
        if k == best {
            continue;
        }
        for &i in class {
            let (delta, d) = maps.state_of(i);
            let wait = wait_threshold(delta, d, target.len, p_bar, &model.gamma);
            maps.actions[i] = Action::new(wait, target.len, target.pos);
        }
    }
    Ok(true)
}

/// Converged policy with its average error `p̄` and relative values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvflPolicy {
    pub delta_bound: usize,
    #[serde(rename = "B")]
    pub max_len: usize,
    pub p_bar: f64,
    /// Matrices indexed `[δ - 1][d - 1]`.
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "Z")]
    pub wait: Vec<Vec<u64>>,
    #[serde(rename = "l")]
    pub len: Vec<Vec<usize>>,
    #[serde(rename = "b")]
    pub pos: Vec<Vec<usize>>,
    pub iterations: usize,
    pub p_bar_history: Vec<f64>,
}

impl TvflPolicy {
    fn from_parts(maps: &PolicyMaps, eval: &Evaluation, iterations: usize, history: Vec<f64>) -> Self {
        let (bound, b) = (maps.delta_bound, maps.max_len);
        let mat = |f: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
            (0..bound).map(|r| (0..b).map(|c| f(r * b + c)).collect()).collect()
        };
        Self {
            delta_bound: bound,
            max_len: b,
            p_bar: eval.p_bar,
            h: mat(&|i| eval.h[i]),
            wait: (0..bound).map(|r| (0..b).map(|c| maps.actions[r * b + c].wait).collect()).collect(),
            len: (0..bound).map(|r| (0..b).map(|c| maps.actions[r * b + c].len).collect()).collect(),
            pos: (0..bound).map(|r| (0..b).map(|c| maps.actions[r * b + c].pos).collect()).collect(),
            iterations,
            p_bar_history: history,
        }
    }

    /// Action at `(δ, d)`, with `δ` clamped into `1..=delta_bound`.
    pub fn decide(&self, state: SystemState) -> Action {
        let r = (state.delta as usize).clamp(1, self.delta_bound) - 1;
        let c = state.d - 1;
        Action::new(self.wait[r][c], self.len[r][c], self.pos[r][c])
    }

    pub fn maps(&self) -> PolicyMaps {
        let mut m = PolicyMaps::uniform(self.delta_bound, self.max_len, Action::new(0, 1, 0));
        for r in 0..self.delta_bound {
            for c in 0..self.max_len {
                m.actions[r * self.max_len + c] = Action::new(self.wait[r][c], self.len[r][c], self.pos[r][c]);
            }
        }
        m
    }

    pub fn h_at(&self, delta: u64, d: usize) -> f64 {
        self.h[(delta as usize).clamp(1, self.delta_bound) - 1][d - 1]
    }
}

pub fn tvfl_decide(state: SystemState, policy: &TvflPolicy) -> Action {
    policy.decide(state)
}

pub fn solve_tvfl(cfg: &SourceConfig) -> Result<TvflPolicy> {
    solve_tvfl_with(cfg, Exec::default())
}

pub fn solve_tvfl_with(cfg: &SourceConfig, exec: Exec) -> Result<TvflPolicy> {
    let gamma = GammaTable::build_with(&cfg.table, &cfg.trans, exec)?;
    let model = Model::with_gamma(cfg, gamma);
    let mut maps = PolicyMaps::zero_wait(cfg);
    let mut history = Vec::new();
    for round in 1..=MAX_ROUNDS {
        let eval = evaluate(&model, &maps, EvalMethod::Direct)?;
        history.push(eval.p_bar);
        let mut next = policy_improve(&eval, &model, &maps, exec);
        repair_multichain(&model, &mut next, eval.p_bar)?;
        if next == maps {
            return Ok(TvflPolicy::from_parts(&maps, &eval, round, history));
        }
        maps = next;
    }
    Err(Error::NonConvergence { what: "policy iteration", iterations: MAX_ROUNDS, residual: f64::NAN })
}

/// `max_s |h(s) − min_l { C(s, l, Z_l) − p̄ E[Z_l + T(l)] + min_b E h(T(l) + b, l) }|`.
pub fn bellman_residual(policy: &TvflPolicy, cfg: &SourceConfig) -> Result<f64> {
    let model = Model::new(cfg)?;
    let maps = policy.maps();
    let h: Vec<f64> = policy.h.iter().flatten().copied().collect();
    let offsets = best_offsets(&model, &maps, &h);
    let mut worst = 0.0f64;
    for (i, &hv) in h.iter().enumerate() {
        let (delta, d) = maps.state_of(i);
        let best = (1..=cfg.buffer())
            .map(|l| {
                let z = wait_threshold(delta, d, l, policy.p_bar, &model.gamma);
                let tail = offsets[l - 1].iter().copied().fold(f64::INFINITY, f64::min);
                model.cycle_cost(delta, d, l, z) - policy.p_bar * model.cycle_length(l, z) + tail
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((hv - best).abs());
    }
    Ok(worst)
}

/// Brute-force version of the un-decomposed Bellman operator: min over all
/// `Z ≤ z_max`, `l`, `b` jointly. Returns the largest deviation from `h`.
pub fn joint_bellman_residual(policy: &TvflPolicy, cfg: &SourceConfig, z_max: u64) -> Result<f64> {
    let model = Model::new(cfg)?;
    let maps = policy.maps();
    let h: Vec<f64> = policy.h.iter().flatten().copied().collect();
    let mut worst = 0.0f64;
    for (i, &hv) in h.iter().enumerate() {
        let (delta, d) = maps.state_of(i);
        let mut best = f64::INFINITY;
        for (l, pos) in cfg.legal_windows() {
            let tail = model.next_value(&maps, &h, l, pos);
            for z in 0..=z_max {
                let v = model.cycle_cost(delta, d, l, z) - policy.p_bar * model.cycle_length(l, z) + tail;
                best = best.min(v);
            }
        }
        worst = worst.max((hv - best).abs());
    }
    Ok(worst)
}
