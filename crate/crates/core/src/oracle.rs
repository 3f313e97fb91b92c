//! Brute-force validators: exhaustive stationary-policy search for one source,
//! exhaustive knapsack, and L-conditional entropies of small discrete joints.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Action, SourceConfig, SystemState};
use crate::par::Exec;

const MAX_POLICIES: u128 = 10_000_000;
const MAX_ASSIGNMENTS: u128 = 1_000_000;
const CHUNK: usize = 4096;

/// Best stationary policy found by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub p_bar: f64,
    /// Decision states in enumeration order with the chosen action.
    pub policy: Vec<(SystemState, Action)>,
    pub policies: u64,
    /// Whether some action on the optimal cycle waits exactly `z_max`.
    pub wait_cap_binding: bool,
}

struct Transition {
    cost: f64,
    length: f64,
    next: usize,
}

/// Enumerate every map from decision states `(δ, d)` to `(Z ≤ z_max, l, b)` for a
/// deterministic-`T` source, follow the embedded chain from `(T(1), 1)` into its cycle
/// and take the least cycle average.
pub fn exhaustive_single_source(cfg: &SourceConfig, z_max: u64, exec: Exec) -> Result<ExhaustiveResult> {
    if !cfg.trans.is_deterministic() {
        return Err(invalid("exhaustive search needs deterministic transmission times"));
    }
    let windows = cfg.legal_windows();
    let slots = |l: usize| cfg.trans.at(l).min();
    let mut states = vec![SystemState::new(slots(1), 1)];
    for &(l, b) in &windows {
        let s = SystemState::new(slots(l) + b as u64, l);
        if !states.contains(&s) {
            states.push(s);
        }
    }
    let actions: Vec<Action> = windows
        .iter()
        .flat_map(|&(l, b)| (0..=z_max).map(move |z| Action::new(z, l, b)))
        .collect();
    let radix = actions.len();
    let total = (radix as u128).checked_pow(states.len() as u32).unwrap_or(u128::MAX);
    if total > MAX_POLICIES {
        return Err(Error::TooLarge(format!("{total} stationary policies")));
    }
    let total = total as u64;

    let trans: Vec<Vec<Transition>> = states
        .iter()
        .map(|s| {
            actions
                .iter()
                .map(|a| {
                    let t = slots(a.len);
                    let n = a.wait + t;
                    let cost = (0..n).map(|k| cfg.table.lookup(s.delta + k, s.d)).sum();
                    let target = SystemState::new(t + a.pos as u64, a.len);
                    let next = states.iter().position(|x| *x == target).expect("closed state set");
                    Transition { cost, length: n as f64, next }
                })
                .collect()
        })
        .collect();

    let n_states = states.len();
    let eval = |index: u64, digits: &mut Vec<usize>, seen: &mut Vec<usize>| -> f64 {
        let mut x = index;
        for d in digits.iter_mut() {
            *d = (x % radix as u64) as usize;
            x /= radix as u64;
        }
        seen.iter_mut().for_each(|v| *v = usize::MAX);
        let mut s = 0;
        let mut step = 0;
        while seen[s] == usize::MAX {
            seen[s] = step;
            step += 1;
            s = trans[s][digits[s]].next;
        }
        let (mut cost, mut length) = (0.0, 0.0);
        let start = s;
        loop {
            let tr = &trans[s][digits[s]];
            cost += tr.cost;
            length += tr.length;
            s = tr.next;
            if s == start {
                break;
            }
        }
        cost / length
    };

    let chunks = total.div_ceil(CHUNK as u64) as usize;
    let best_per_chunk = exec.map_range(chunks, |c| {
        let mut digits = vec![0; n_states];
        let mut seen = vec![usize::MAX; n_states];
        let lo = c as u64 * CHUNK as u64;
        let hi = (lo + CHUNK as u64).min(total);
        let mut best = (f64::INFINITY, lo);
        for i in lo..hi {
            let v = eval(i, &mut digits, &mut seen);
            if v < best.0 {
                best = (v, i);
            }
        }
        best
    });
    let (p_bar, index) = best_per_chunk
        .into_iter()
        .fold((f64::INFINITY, 0), |acc, b| if b.0 < acc.0 { b } else { acc });

    let mut x = index;
    let mut digits = vec![0; n_states];
    for d in digits.iter_mut() {
        *d = (x % radix as u64) as usize;
        x /= radix as u64;
    }
    let mut on_cycle = vec![false; n_states];
    let mut s = 0;
    let mut visited = vec![false; n_states];
    while !visited[s] {
        visited[s] = true;
        s = trans[s][digits[s]].next;
    }
    let start = s;
    loop {
        on_cycle[s] = true;
        s = trans[s][digits[s]].next;
        if s == start {
            break;
        }
    }
    let wait_cap_binding = (0..n_states).any(|k| on_cycle[k] && actions[digits[k]].wait == z_max);
    Ok(ExhaustiveResult {
        p_bar,
        policy: states.iter().zip(&digits).map(|(s, &d)| (*s, actions[d])).collect(),
        policies: total,
        wait_cap_binding,
    })
}

/// Every assignment `l_j ∈ 0..gains[j].len()` with `Σ l_j ≤ capacity`, in lexicographic
/// order. Keeps the larger value, then fewer units; sums are right folds.
pub fn exhaustive_knapsack(gains: &[Vec<f64>], capacity: usize) -> Result<(Vec<usize>, f64, usize)> {
    let count = gains.iter().try_fold(1u128, |acc, g| acc.checked_mul(g.len() as u128));
    match count {
        Some(c) if c <= MAX_ASSIGNMENTS => {}
        _ => return Err(Error::TooLarge("knapsack enumeration above 1e6 assignments".into())),
    }
    let m = gains.len();
    let mut cur = vec![0usize; m];
    let mut best: Option<(Vec<usize>, f64, usize)> = None;
    loop {
        let used: usize = cur.iter().sum();
        if used <= capacity {
            let value = cur.iter().zip(gains).rev().fold(0.0, |acc, (&l, g)| g[l] + acc);
            let better = match &best {
                None => true,
                Some((_, v, u)) => value > *v || (value == *v && used < *u),
            };
            if better {
                best = Some((cur.clone(), value, used));
            }
        }
        let mut j = m;
        loop {
            if j == 0 {
                return Ok(best.expect("the all-idle assignment is feasible"));
            }
            j -= 1;
            cur[j] += 1;
            if cur[j] < gains[j].len() {
                break;
            }
            cur[j] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Squared error; the Bayes action is the conditional mean.
    Quadratic,
    /// Log loss in nats; the Bayes action is the conditional pmf.
    Log,
}

/// Joint pmf of a target `Y` and observations `V_0, V_{-1}, …, V_{-(horizon-1)}`.
///
/// `pmf[y · nv^horizon + code]` where `code = Σ_k v_{-k} · nv^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    pub y_values: Vec<f64>,
    pub nv: usize,
    pub horizon: usize,
    pub pmf: Vec<f64>,
    pub loss: Loss,
}

impl DiscreteJoint {
    pub fn new(y_values: Vec<f64>, nv: usize, horizon: usize, pmf: Vec<f64>, loss: Loss) -> Result<Self> {
        let size = nv.checked_pow(horizon as u32).and_then(|c| c.checked_mul(y_values.len()));
        if nv == 0 || y_values.is_empty() || size != Some(pmf.len()) {
            return Err(invalid("pmf size must be |Y| * nv^horizon"));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("pmf entries must be finite and non-negative"));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("pmf sums to {total}")));
        }
        Ok(Self { y_values, nv, horizon, pmf, loss })
    }

    fn cells(&self) -> usize {
        self.pmf.len() / self.y_values.len()
    }

    /// `P(Y = y, X = x)` for the feature `x = (v_{-δ}, …, v_{-δ-l+1})`, indexed `[x][y]`.
    fn feature_joint(&self, delta: usize, len: usize) -> Vec<Vec<f64>> {
        let ny = self.y_values.len();
        let nx = self.nv.pow(len as u32);
        let shift = self.nv.pow(delta as u32);
        let mut out = vec![vec![0.0; ny]; nx];
        for (y, row) in self.pmf.chunks(self.cells()).enumerate() {
            for (code, &p) in row.iter().enumerate() {
                let x = (code / shift) % nx;
                out[x][y] += p;
            }
        }
        out
    }
}

/// Minimum expected loss of one conditional pmf (unnormalised weights `w`).
fn bayes_risk(y_values: &[f64], w: &[f64], loss: Loss) -> f64 {
    let mass: f64 = w.iter().sum();
    if mass <= 0.0 {
        return 0.0;
    }
    match loss {
        Loss::Quadratic => {
            let mean = w.iter().zip(y_values).map(|(p, y)| p * y).sum::<f64>() / mass;
            w.iter().zip(y_values).map(|(p, y)| p * (y - mean) * (y - mean)).sum()
        }
        Loss::Log => w
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * (p / mass).ln())
            .sum(),
    }
}

/// `H_L(Y)`.
pub fn l_entropy(joint: &DiscreteJoint) -> f64 {
    let marginal: Vec<f64> = joint.pmf.chunks(joint.cells()).map(|r| r.iter().sum()).collect();
    bayes_risk(&joint.y_values, &marginal, joint.loss)
}

/// `H_L(Y | X)` with `X = (V_{-δ}, …, V_{-δ-l+1})`; `l = 0` gives `H_L(Y)`.
pub fn l_conditional_entropy(joint: &DiscreteJoint, delta: usize, len: usize) -> Result<f64> {
    if delta + len > joint.horizon {
        return Err(invalid(format!("delta + l = {} exceeds horizon {}", delta + len, joint.horizon)));
    }
    Ok(joint
        .feature_joint(delta, len)
        .iter()
        .map(|w| bayes_risk(&joint.y_values, w, joint.loss))
        .sum())
}
