//! Comparison policies: zero wait, periodic generation into a FIFO queue, and
//! maximum-age-first selection for many sources.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::model::Action;

/// Length used by maximum-age-first: a fixed `l`, or each source's full buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MafLength {
    Fixed(usize),
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineSpec {
    ZeroWait { len: usize },
    Periodic { period: u64, len: usize },
    Maf(MafLength),
}

impl FromStr for BaselineSpec {
    type Err = Error;

    /// `zero-wait:l=1`, `periodic:tp=4,l=1`, `maf:l=3` or `maf:l=B`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').ok_or_else(|| invalid(format!("bad baseline {s:?}")))?;
        let mut len: Option<&str> = None;
        let mut period: Option<&str> = None;
        for kv in args.split(',') {
            match kv.split_once('=') {
                Some(("l", v)) => len = Some(v),
                Some(("tp", v)) => period = Some(v),
                _ => return Err(invalid(format!("bad baseline argument {kv:?} in {s:?}"))),
            }
        }
        let num = |v: Option<&str>, what: &str| -> Result<u64> {
            let v = v.ok_or_else(|| invalid(format!("{s:?} needs {what}=")))?;
            match v.parse::<u64>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(invalid(format!("{what} must be a positive integer in {s:?}"))),
            }
        };
        match kind {
            "zero-wait" => Ok(Self::ZeroWait { len: num(len, "l")? as usize }),
            "periodic" => Ok(Self::Periodic { period: num(period, "tp")?, len: num(len, "l")? as usize }),
            "maf" if len == Some("B") => Ok(Self::Maf(MafLength::Buffer)),
            "maf" => Ok(Self::Maf(MafLength::Fixed(num(len, "l")? as usize))),
            _ => Err(invalid(format!("unknown baseline {kind:?}"))),
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroWait { len } => write!(f, "zero-wait:l={len}"),
            Self::Periodic { period, len } => write!(f, "periodic:tp={period},l={len}"),
            Self::Maf(MafLength::Fixed(l)) => write!(f, "maf:l={l}"),
            Self::Maf(MafLength::Buffer) => write!(f, "maf:l=B"),
        }
    }
}

/// Send the newest `len` samples as soon as the channel is idle.
pub fn zero_wait_decide(len: usize) -> Action {
    Action::new(0, len, 0)
}

/// Features generated every `period` slots wait in an unbounded FIFO for the channel.
#[derive(Debug, Clone)]
pub struct PeriodicQueue {
    period: u64,
    len: usize,
    queue: VecDeque<u64>,
}

impl PeriodicQueue {
    pub fn new(period: u64, len: usize) -> Self {
        Self { period, len, queue: VecDeque::new() }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }
}

/// Enqueue the feature generated at `t` (every `period` slots); when the channel is
/// idle, pop the oldest one. Returns the action and the generation slot.
pub fn periodic_decide(t: u64, queue: &mut PeriodicQueue, idle: bool) -> Option<(Action, u64)> {
    if t.is_multiple_of(queue.period) {
        queue.queue.push_back(t);
    }
    if !idle {
        return None;
    }
    queue.queue.pop_front().map(|g| (Action::new(0, queue.len, 0), g))
}

/// Sources in descending AoI (ties to the smaller index), admitted while the next one
/// still fits in the remaining capacity.
pub fn maf_select(deltas: &[u64], capacity: usize, lens: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[b].cmp(&deltas[a]).then(a.cmp(&b)));
    let mut left = capacity;
    let mut chosen = Vec::new();
    for j in order {
        if lens[j] > left {
            break;
        }
        left -= lens[j];
        chosen.push(j);
    }
    chosen
}

/// The `min(⌊N / l⌋, M)` oldest sources, each sending `(l, b = 0)`.
pub fn maf_decide(deltas: &[u64], capacity: usize, len: usize) -> Vec<usize> {
    maf_select(deltas, capacity, &vec![len; deltas.len()])
}
