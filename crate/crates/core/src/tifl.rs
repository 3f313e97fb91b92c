//! Single source, time-invariant feature length: every transmission uses the same
//! `(l, b)`, and the sending time follows a threshold on the index `γ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{crosses, first_crossing, ColumnPrefix, GammaTable, TieRule};
use crate::model::{Action, SourceConfig, SystemState};
use crate::par::Exec;

const ROOT_TOL: f64 = 1e-9;
const BRACKET_TOL: f64 = 1e-12;
const POLISH_STEPS: usize = 100;

/// Expected cost and length of one inter-delivery cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStats {
    pub cost: f64,
    pub length: f64,
}

impl CycleStats {
    /// `cost − β·length`, whose root is the long-run average of the threshold policy.
    pub fn balance(&self, beta: f64) -> f64 {
        self.cost - beta * self.length
    }
}

pub fn cycle_stats(beta: f64, pos: usize, len: usize, cfg: &SourceConfig, gamma: &GammaTable) -> CycleStats {
    cycle_stats_tie(beta, pos, len, cfg, gamma, TieRule::Transmit)
}

/// [`cycle_stats`] with an explicit rule for `γ == β`.
pub fn cycle_stats_tie(
    beta: f64,
    pos: usize,
    len: usize,
    cfg: &SourceConfig,
    gamma: &GammaTable,
    tie: TieRule,
) -> CycleStats {
    let prefix = ColumnPrefix::new(&cfg.table, len);
    stats_with(beta, pos, len, cfg, gamma, &prefix, tie)
}

fn stats_with(
    beta: f64,
    pos: usize,
    len: usize,
    cfg: &SourceConfig,
    gamma: &GammaTable,
    prefix: &ColumnPrefix,
    tie: TieRule,
) -> CycleStats {
    let dist = cfg.trans.at(len);
    let mean_t = dist.mean();
    let mut cost = 0.0;
    let mut length = 0.0;
    for &(t0, p0) in dist.points() {
        let start = t0 + pos as u64;
        let wait = first_crossing(gamma, len, len, start, beta, tie);
        let mut c = 0.0;
        for &(t, p) in dist.points() {
            c += p * prefix.range(start, wait + t);
        }
        cost += p0 * c;
        length += p0 * (wait as f64 + mean_t);
    }
    CycleStats { cost, length }
}

/// Root `β_{b,l}` of the cycle balance, by bisection on `[min err, max err]`.
pub fn solve_beta(pos: usize, len: usize, cfg: &SourceConfig, gamma: &GammaTable) -> Result<f64> {
    solve_beta_tie(pos, len, cfg, gamma, TieRule::Transmit)
}

pub fn solve_beta_tie(pos: usize, len: usize, cfg: &SourceConfig, gamma: &GammaTable, tie: TieRule) -> Result<f64> {
    if len == 0 || len > cfg.buffer() || pos + len > cfg.buffer() {
        return Err(Error::LengthOutOfRange { len: len + pos, max: cfg.buffer() });
    }
    let prefix = ColumnPrefix::new(&cfg.table, len);
    let f = |beta: f64| stats_with(beta, pos, len, cfg, gamma, &prefix, tie);
    let (mut lo, mut hi) = (cfg.table.min(), cfg.table.max());
    let f_lo = f(lo).balance(lo);
    if f_lo.abs() <= ROOT_TOL {
        return Ok(lo);
    }
    let f_hi = f(hi).balance(hi);
    if f_hi.abs() <= ROOT_TOL {
        return Ok(hi);
    }
    if f_lo < 0.0 || f_hi > 0.0 {
        return Err(Error::NoSignChange { lo, hi, f_lo, f_hi });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let stats = f(mid);
        let value = stats.balance(mid);
        if value.abs() <= ROOT_TOL || hi - lo <= BRACKET_TOL {
            return Ok(polish(stats.cost / stats.length, &f));
        }
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Ratio steps `β ← cost(β) / length(β)` from a bracketed estimate until the threshold
/// policy at `β` averages `β` itself.
fn polish(mut beta: f64, f: &impl Fn(f64) -> CycleStats) -> f64 {
    for _ in 0..POLISH_STEPS {
        let s = f(beta);
        let next = s.cost / s.length;
        if next >= beta - 1e-15 * beta.abs() {
            return next.min(beta);
        }
        beta = next;
    }
    beta
}

/// Optimal fixed `(l*, b*)`, its average error, and `β` for every legal window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiflPolicy {
    pub l_star: usize,
    pub b_star: usize,
    pub beta_star: f64,
    /// `beta_grid[b][l - 1]`; `None` where `l + b > B`.
    pub beta_grid: Vec<Vec<Option<f64>>>,
}

pub fn solve_tifl(cfg: &SourceConfig) -> Result<TiflPolicy> {
    let gamma = GammaTable::build(&cfg.table, &cfg.trans)?;
    solve_tifl_with(cfg, &gamma, Exec::default())
}

pub fn solve_tifl_with(cfg: &SourceConfig, gamma: &GammaTable, exec: Exec) -> Result<TiflPolicy> {
    let windows = cfg.legal_windows();
    let betas = exec.map(&windows, |&(l, b)| solve_beta(b, l, cfg, gamma));
    let buffer = cfg.buffer();
    let mut grid = vec![vec![None; buffer]; buffer];
    let mut best: Option<(usize, usize, f64)> = None;
    for (&(l, b), beta) in windows.iter().zip(betas) {
        let beta = beta?;
        grid[b][l - 1] = Some(beta);
        let better = match best {
            None => true,
            Some((_, _, cur)) => beta < cur - 1e-12 * cur.abs().max(1.0),
        };
        if better {
            best = Some((l, b, beta));
        }
    }
    let (l_star, b_star, beta_star) = best.expect("at least one legal window");
    Ok(TiflPolicy { l_star, b_star, beta_star, beta_grid: grid })
}

impl TiflPolicy {
    pub fn beta(&self, pos: usize, len: usize) -> Option<f64> {
        self.beta_grid.get(pos).and_then(|row| row.get(len.checked_sub(1)?).copied().flatten())
    }

    /// Transmit `(l*, b*)` once `γ_{l*}(δ, d)` reaches `β*` (or the AoI saturates).
    pub fn decide(&self, state: SystemState, gamma: &GammaTable) -> Option<Action> {
        let hit = crosses(gamma.get(self.l_star, state.delta, state.d), self.beta_star, TieRule::Transmit)
            || state.delta >= gamma.delta_bound() as u64;
        hit.then_some(Action::new(0, self.l_star, self.b_star))
    }
}

pub fn tifl_decide(state: SystemState, policy: &TiflPolicy, gamma: &GammaTable) -> Option<Action> {
    policy.decide(state, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errmodel::{synthetic_table, SyntheticKind};
    use crate::model::TransmissionModel;

    fn linear(b: usize, bound: usize, alpha: f64) -> (SourceConfig, GammaTable) {
        let t = synthetic_table(&SyntheticKind::Linear(1.0), b, bound).unwrap();
        let cfg = SourceConfig::new(t, TransmissionModel::deterministic(alpha, b).unwrap()).unwrap();
        let g = GammaTable::build(&cfg.table, &cfg.trans).unwrap();
        (cfg, g)
    }

    #[test]
    fn hand_cycles() {
        let (cfg, g) = linear(1, 10, 1.0);
        assert_eq!(cycle_stats(1.0, 0, 1, &cfg, &g), CycleStats { cost: 1.0, length: 1.0 });
        let (cfg, g) = linear(1, 10, 2.0);
        assert_eq!(cycle_stats(2.5, 0, 1, &cfg, &g), CycleStats { cost: 5.0, length: 2.0 });
    }

    #[test]
    fn roots_on_linear_tables() {
        let (cfg, g) = linear(1, 10, 1.0);
        assert_eq!(solve_beta(0, 1, &cfg, &g).unwrap(), 1.0);
        let (cfg, g) = linear(1, 10, 2.0);
        assert_eq!(solve_beta(0, 1, &cfg, &g).unwrap(), 2.5);
    }

    #[test]
    fn constant_table() {
        let t = synthetic_table(&SyntheticKind::Constant(0.3), 3, 12).unwrap();
        let cfg = SourceConfig::new(t, TransmissionModel::deterministic(0.7, 3).unwrap()).unwrap();
        let g = GammaTable::build(&cfg.table, &cfg.trans).unwrap();
        let c = cycle_stats(0.2, 1, 2, &cfg, &g);
        assert!((c.cost - 0.6).abs() < 1e-15 && c.length == 2.0);
        let p = solve_tifl(&cfg).unwrap();
        assert_eq!((p.l_star, p.b_star, p.beta_star), (1, 0, 0.3));
        assert!(p.decide(SystemState::new(1, 1), &g).is_some());
    }

    #[test]
    fn monotone_table_prefers_newest() {
        let (cfg, _) = linear(3, 12, 0.5);
        let p = solve_tifl(&cfg).unwrap();
        assert_eq!(p.b_star, 0);
        assert_eq!(p.beta(p.b_star, p.l_star), Some(p.beta_star));
        assert_eq!(p.beta(2, 2), None);
    }

    #[test]
    fn threshold_decisions() {
        let (cfg, g) = linear(1, 10, 1.0);
        let p = solve_tifl(&cfg).unwrap();
        assert_eq!(p.decide(SystemState::new(1, 1), &g), Some(Action::new(0, 1, 0)));

        let t = synthetic_table(&SyntheticKind::Custom(vec![vec![5.0], vec![1.0], vec![10.0]]), 1, 3).unwrap();
        let cfg = SourceConfig::new(t, TransmissionModel::deterministic(1.0, 1).unwrap()).unwrap();
        let g = GammaTable::build(&cfg.table, &cfg.trans).unwrap();
        let high = TiflPolicy { l_star: 1, b_star: 0, beta_star: 3.5, beta_grid: vec![vec![Some(3.5)]] };
        assert_eq!(high.decide(SystemState::new(0, 1), &g), None);
        assert_eq!(high.decide(SystemState::new(1, 1), &g), None);
        assert!(high.decide(SystemState::new(2, 1), &g).is_some());
    }

    #[test]
    fn serializes_contract_fields() {
        let (cfg, _) = linear(2, 10, 0.5);
        let p = solve_tifl(&cfg).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        for key in ["l_star", "b_star", "beta_star", "beta_grid"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: TiflPolicy = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
