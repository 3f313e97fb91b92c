//! The index `γ_l(δ, d)`: the smallest running mean of expected future error when a
//! length-`l` feature is sent `j` slots from now, minimised over horizons `τ`.

use crate::errmodel::InferenceErrorTable;
use crate::error::{Error, Result};
use crate::model::{SlotDistribution, TransmissionModel};
use crate::par::Exec;

fn check_len(len: usize, max: usize) -> Result<()> {
    if len == 0 || len > max {
        Err(Error::LengthOutOfRange { len, max })
    } else {
        Ok(())
    }
}

/// `Σ_t P[T=t] err(x + t, d)`, summed in ascending `t`.
#[inline]
fn expected_err(table: &InferenceErrorTable, dist: &SlotDistribution, x: u64, d: usize) -> f64 {
    let mut acc = 0.0;
    for &(t, p) in dist.points() {
        acc += p * table.lookup(x + t, d);
    }
    acc
}

fn saturation(table: &InferenceErrorTable, dist: &SlotDistribution, d: usize) -> f64 {
    expected_err(table, dist, table.delta_bound() as u64, d)
}

/// Direct evaluation of `γ_l(δ, d)`: running means for `τ = 1..=delta_bound` plus the
/// saturation value that the mean approaches as `τ → ∞` under clamping.
pub fn gamma(table: &InferenceErrorTable, trans: &TransmissionModel, len: usize, delta: u64, d: usize) -> Result<f64> {
    check_len(len, table.max_len())?;
    check_len(d, table.max_len())?;
    let dist = trans.dist(len)?;
    let mut best = f64::INFINITY;
    let mut sum = 0.0;
    for tau in 1..=table.delta_bound() as u64 {
        sum += expected_err(table, dist, delta + tau - 1, d);
        best = lower(best, sum / tau as f64);
    }
    Ok(lower(best, saturation(table, dist, d)))
}

/// Running minimum that keeps the earlier candidate unless the new one is lower by more
/// than [`TIE_REL_TOL`]; averaging a flat stretch must not drift below its first term.
#[inline]
fn lower(best: f64, cand: f64) -> f64 {
    if best == f64::INFINITY || cand < best - TIE_REL_TOL * best.abs() {
        cand
    } else {
        best
    }
}

/// `γ` for every `(l, d)` and `δ ∈ 0..=delta_bound`. Larger `δ` clamp to `delta_bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    max_len: usize,
    delta_bound: usize,
    values: Vec<f64>,
}

impl GammaTable {
    pub fn build(table: &InferenceErrorTable, trans: &TransmissionModel) -> Result<Self> {
        Self::build_with(table, trans, Exec::default())
    }

    pub fn build_with(table: &InferenceErrorTable, trans: &TransmissionModel, exec: Exec) -> Result<Self> {
        let b = table.max_len();
        if trans.max_len() < b {
            return Err(Error::LengthOutOfRange { len: b, max: trans.max_len() });
        }
        let rows = exec.map_range(b * b, |k| gamma_row(table, trans.at(k / b + 1), k % b + 1));
        Ok(Self { max_len: b, delta_bound: table.delta_bound(), values: rows.concat() })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn delta_bound(&self) -> usize {
        self.delta_bound
    }

    #[inline]
    pub fn get(&self, len: usize, delta: u64, d: usize) -> f64 {
        debug_assert!(len >= 1 && len <= self.max_len && d >= 1 && d <= self.max_len);
        let delta = (delta as usize).min(self.delta_bound);
        let row = (len - 1) * self.max_len + (d - 1);
        self.values[row * (self.delta_bound + 1) + delta]
    }
}

/// Same arithmetic as [`gamma`] for all `δ` at once, sharing the per-offset expectations.
fn gamma_row(table: &InferenceErrorTable, dist: &SlotDistribution, d: usize) -> Vec<f64> {
    let bound = table.delta_bound();
    let terms: Vec<f64> = (0..2 * bound as u64)
        .map(|x| expected_err(table, dist, x, d))
        .collect();
    let sat = saturation(table, dist, d);
    (0..=bound)
        .map(|delta| {
            let mut best = f64::INFINITY;
            let mut sum = 0.0;
            for tau in 1..=bound {
                sum += terms[delta + tau - 1];
                best = lower(best, sum / tau as f64);
            }
            lower(best, sat)
        })
        .collect()
}

/// How a threshold test treats `γ == β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    #[default]
    Transmit,
    Wait,
}

/// Relative slack under which `γ` and `β` count as equal; running means of a flat
/// column can land an ulp below the value itself.
pub const TIE_REL_TOL: f64 = 1e-12;

/// Threshold test `γ ≥ β` (or `γ > β` under [`TieRule::Wait`]) with ties taken within
/// [`TIE_REL_TOL`].
#[inline]
pub fn crosses(g: f64, beta: f64, tie: TieRule) -> bool {
    let slack = TIE_REL_TOL * beta.abs();
    match tie {
        TieRule::Transmit => g >= beta - slack,
        TieRule::Wait => g > beta + slack,
    }
}

/// Smallest `τ ≥ 0` with `γ_l(δ + τ, d) ≥ β`, or the wait that reaches `delta_bound`
/// when the threshold is never met before saturation.
pub fn first_crossing(gamma: &GammaTable, len: usize, d: usize, delta: u64, beta: f64, tie: TieRule) -> u64 {
    let bound = gamma.delta_bound() as u64;
    let mut tau = 0;
    loop {
        let x = delta + tau;
        if crosses(gamma.get(len, x, d), beta, tie) || x >= bound {
            return tau;
        }
        tau += 1;
    }
}

/// Prefix sums of one clamped table column, continued linearly past saturation.
#[derive(Debug, Clone)]
pub(crate) struct ColumnPrefix {
    prefix: Vec<f64>,
    sat: f64,
}

impl ColumnPrefix {
    pub fn new(table: &InferenceErrorTable, d: usize) -> Self {
        let bound = table.delta_bound();
        let mut prefix = Vec::with_capacity(bound + 2);
        prefix.push(0.0);
        let mut acc = 0.0;
        for x in 0..=bound {
            acc += table.lookup(x as u64, d);
            prefix.push(acc);
        }
        Self { prefix, sat: table.lookup(bound as u64, d) }
    }

    /// `Σ_{x < n} err(x, d)`.
    #[inline]
    fn upto(&self, n: u64) -> f64 {
        let cap = (self.prefix.len() - 1) as u64;
        if n <= cap {
            self.prefix[n as usize]
        } else {
            self.prefix[cap as usize] + (n - cap) as f64 * self.sat
        }
    }

    /// `Σ_{k < n} err(start + k, d)`.
    #[inline]
    pub fn range(&self, start: u64, n: u64) -> f64 {
        self.upto(start + n) - self.upto(start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errmodel::{jakes_error_table, synthetic_table, JakesParams, SyntheticKind};

    fn three_level() -> InferenceErrorTable {
        synthetic_table(&SyntheticKind::Custom(vec![vec![5.0], vec![1.0], vec![10.0]]), 1, 3).unwrap()
    }

    #[test]
    fn constant_table_is_flat() {
        let t = synthetic_table(&SyntheticKind::Constant(0.7), 3, 12).unwrap();
        let m = TransmissionModel::deterministic(0.5, 3).unwrap();
        let g = GammaTable::build(&t, &m).unwrap();
        for l in 1..=3 {
            for d in 1..=3 {
                for delta in 0..15 {
                    assert_eq!(g.get(l, delta, d), 0.7);
                }
            }
        }
    }

    #[test]
    fn three_level_enumeration() {
        let t = three_level();
        let m = TransmissionModel::deterministic(1.0, 1).unwrap();
        // running means 5, 3, 16/3 and saturation 10
        assert_eq!(gamma(&t, &m, 1, 0, 1).unwrap(), 3.0);
        // δ=1: terms err(2), err(3), err(4) = 1, 10, 10
        assert_eq!(gamma(&t, &m, 1, 1, 1).unwrap(), 1.0);
        assert_eq!(gamma(&t, &m, 1, 2, 1).unwrap(), 10.0);
        assert!(matches!(gamma(&t, &m, 2, 0, 1), Err(Error::LengthOutOfRange { .. })));
    }

    #[test]
    fn table_equals_direct() {
        let p = JakesParams::new(1.0, 100.0, 1e-3, 1e-6).unwrap();
        let t = jakes_error_table(&p, 4, 20).unwrap();
        let spec: crate::model::TransmissionSpec =
            r#"table:{"1":[[1,0.5],[2,0.5]],"2":[[1,0.2],[3,0.8]],"3":[[2,1.0]],"4":[[2,0.3],[4,0.7]]}"#
                .parse()
                .unwrap();
        let m = spec.build(4).unwrap();
        let par = GammaTable::build_with(&t, &m, Exec::Parallel).unwrap();
        let seq = GammaTable::build_with(&t, &m, Exec::Sequential).unwrap();
        assert_eq!(par, seq);
        for l in 1..=4 {
            for d in 1..=4 {
                for delta in 0..=25u64 {
                    assert_eq!(par.get(l, delta, d), gamma(&t, &m, l, delta, d).unwrap());
                }
            }
        }
        assert!(par.values.iter().all(|v| v.is_finite() && *v <= t.max()));
    }

    #[test]
    fn monotone_reduces_to_first_term() {
        let t = synthetic_table(&SyntheticKind::Linear(0.5), 2, 15).unwrap();
        let m = TransmissionModel::deterministic(1.5, 2).unwrap();
        let g = GammaTable::build(&t, &m).unwrap();
        for l in 1..=2 {
            for d in 1..=2 {
                for delta in 0..=15u64 {
                    let first = expected_err(&t, m.at(l), delta, d);
                    assert_eq!(g.get(l, delta, d), first);
                }
            }
        }
    }

    #[test]
    fn prefix_ranges() {
        let t = three_level();
        let c = ColumnPrefix::new(&t, 1);
        assert_eq!(c.range(1, 2), 6.0);
        assert_eq!(c.range(2, 4), 31.0);
        assert_eq!(c.range(5, 3), 30.0);
        assert_eq!(c.range(0, 0), 0.0);
    }
}
