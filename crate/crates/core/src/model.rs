//! States, actions and transmission-time models.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::errmodel::InferenceErrorTable;
use crate::error::{invalid, Error, Result};

/// AoI `delta` (slots) together with the length `d` of the last delivered feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState {
    pub delta: u64,
    pub d: usize,
}

impl SystemState {
    pub const fn new(delta: u64, d: usize) -> Self {
        Self { delta, d }
    }
}

/// One slot without a delivery. Saturation is left to the table lookups.
pub fn aoi_step(state: SystemState) -> SystemState {
    SystemState { delta: state.delta + 1, d: state.d }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Single,
    Multi,
}

/// AoI right after a delivery: `T + b` for a single source, `1 + b` with one-slot delivery.
pub fn aoi_after_delivery(mode: Mode, slots: u64, pos: usize) -> u64 {
    match mode {
        Mode::Single => slots + pos as u64,
        Mode::Multi => 1 + pos as u64,
    }
}

/// Wait `wait` slots, then send the `len` samples whose freshest one sits `pos` slots back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub wait: u64,
    pub len: usize,
    pub pos: usize,
}

impl Action {
    pub const fn new(wait: u64, len: usize, pos: usize) -> Self {
        Self { wait, len, pos }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionViolation {
    ZeroLength,
    LengthExceedsBuffer { len: usize, buffer: usize },
    WindowExceedsBuffer { len: usize, pos: usize, buffer: usize },
    WaitInMulti { wait: u64 },
}

impl fmt::Display for ActionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroLength => write!(f, "single-source actions need l >= 1"),
            Self::LengthExceedsBuffer { len, buffer } => write!(f, "l={len} exceeds B={buffer}"),
            Self::WindowExceedsBuffer { len, pos, buffer } => {
                write!(f, "l+b={} exceeds B={buffer}", len + pos)
            }
            Self::WaitInMulti { wait } => write!(f, "multi-source actions cannot wait (Z={wait})"),
        }
    }
}

impl std::error::Error for ActionViolation {}

pub fn validate_action(a: &Action, buffer: usize, mode: Mode) -> std::result::Result<(), ActionViolation> {
    if mode == Mode::Single && a.len == 0 {
        return Err(ActionViolation::ZeroLength);
    }
    if mode == Mode::Multi && a.wait != 0 {
        return Err(ActionViolation::WaitInMulti { wait: a.wait });
    }
    if a.len > buffer {
        return Err(ActionViolation::LengthExceedsBuffer { len: a.len, buffer });
    }
    if a.len + a.pos > buffer {
        return Err(ActionViolation::WindowExceedsBuffer { len: a.len, pos: a.pos, buffer });
    }
    Ok(())
}

/// Finite distribution over transmission times in slots, support sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDistribution {
    points: Vec<(u64, f64)>,
}

impl SlotDistribution {
    pub fn new(mut points: Vec<(u64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Transmission("empty support".into()));
        }
        points.sort_by_key(|&(t, _)| t);
        let mut total = 0.0;
        for (i, &(t, p)) in points.iter().enumerate() {
            if t == 0 {
                return Err(Error::Transmission("support points must be >= 1".into()));
            }
            if i > 0 && points[i - 1].0 == t {
                return Err(Error::Transmission(format!("duplicate support point {t}")));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Transmission(format!("bad probability {p} at t={t}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Transmission(format!("probabilities sum to {total}")));
        }
        points.retain(|&(_, p)| p > 0.0);
        Ok(Self { points })
    }

    pub fn deterministic(t: u64) -> Result<Self> {
        Self::new(vec![(t, 1.0)])
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().map(|&(t, p)| t as f64 * p).sum()
    }

    pub fn min(&self) -> u64 {
        self.points[0].0
    }

    pub fn max(&self) -> u64 {
        self.points[self.points.len() - 1].0
    }

    pub fn is_deterministic(&self) -> bool {
        self.points.len() == 1
    }

    /// Inverse-CDF draw for `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> u64 {
        let mut acc = 0.0;
        for &(t, p) in &self.points {
            acc += p;
            if u < acc {
                return t;
            }
        }
        self.max()
    }
}

/// Per-length transmission-time distributions for lengths `1..=max_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionModel {
    per_length: Vec<SlotDistribution>,
}

impl TransmissionModel {
    /// `T(l) = ceil(alpha * l)`, never below one slot.
    pub fn deterministic(alpha: f64, max_len: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Transmission(format!("alpha must be positive, got {alpha}")));
        }
        let per_length = (1..=max_len)
            .map(|l| {
                let t = (alpha * l as f64 - 1e-12).ceil().max(1.0) as u64;
                SlotDistribution::deterministic(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_distributions(per_length)
    }

    pub fn from_distributions(per_length: Vec<SlotDistribution>) -> Result<Self> {
        if per_length.is_empty() {
            return Err(Error::Transmission("no lengths".into()));
        }
        Ok(Self { per_length })
    }

    pub fn max_len(&self) -> usize {
        self.per_length.len()
    }

    pub fn dist(&self, len: usize) -> Result<&SlotDistribution> {
        if len == 0 || len > self.per_length.len() {
            return Err(Error::LengthOutOfRange { len, max: self.per_length.len() });
        }
        Ok(&self.per_length[len - 1])
    }

    pub(crate) fn at(&self, len: usize) -> &SlotDistribution {
        &self.per_length[len - 1]
    }

    pub fn mean(&self, len: usize) -> Result<f64> {
        Ok(self.dist(len)?.mean())
    }

    pub fn max_support(&self) -> u64 {
        self.per_length.iter().map(SlotDistribution::max).max().unwrap_or(1)
    }

    pub fn is_deterministic(&self) -> bool {
        self.per_length.iter().all(SlotDistribution::is_deterministic)
    }

    /// Keep lengths `1..=max_len` only.
    pub fn truncated(&self, max_len: usize) -> Result<Self> {
        if max_len == 0 || max_len > self.per_length.len() {
            return Err(Error::LengthOutOfRange { len: max_len, max: self.per_length.len() });
        }
        Self::from_distributions(self.per_length[..max_len].to_vec())
    }
}

/// Text form of a transmission model: `det:alpha=0.2` or `table:{"1":[[1,0.5],[3,0.5]]}`.
#[derive(Debug, Clone, PartialEq)]
pub enum TransmissionSpec {
    Deterministic { alpha: f64 },
    Table(BTreeMap<usize, Vec<(u64, f64)>>),
}

impl TransmissionSpec {
    pub fn build(&self, max_len: usize) -> Result<TransmissionModel> {
        match self {
            Self::Deterministic { alpha } => TransmissionModel::deterministic(*alpha, max_len),
            Self::Table(map) => {
                let per_length = (1..=max_len)
                    .map(|l| {
                        let pts = map
                            .get(&l)
                            .ok_or_else(|| Error::Transmission(format!("no distribution for l={l}")))?;
                        SlotDistribution::new(pts.clone())
                    })
                    .collect::<Result<Vec<_>>>()?;
                TransmissionModel::from_distributions(per_length)
            }
        }
    }
}

impl FromStr for TransmissionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("det:") {
            let v = rest
                .strip_prefix("alpha=")
                .ok_or_else(|| Error::Transmission(format!("expected det:alpha=<float>, got {s:?}")))?;
            let alpha: f64 = v
                .parse()
                .map_err(|_| Error::Transmission(format!("bad alpha {v:?}")))?;
            return Ok(Self::Deterministic { alpha });
        }
        if let Some(rest) = s.strip_prefix("table:") {
            let raw: BTreeMap<String, Vec<(u64, f64)>> = serde_json::from_str(rest)
                .map_err(|e| Error::Transmission(format!("bad table json: {e}")))?;
            let mut map = BTreeMap::new();
            for (k, v) in raw {
                let l: usize = k
                    .parse()
                    .map_err(|_| Error::Transmission(format!("bad length key {k:?}")))?;
                map.insert(l, v);
            }
            return Ok(Self::Table(map));
        }
        Err(Error::Transmission(format!("unknown transmission spec {s:?}")))
    }
}

impl fmt::Display for TransmissionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Deterministic { alpha } => write!(f, "det:alpha={alpha}"),
            Self::Table(map) => {
                let raw: BTreeMap<String, &Vec<(u64, f64)>> =
                    map.iter().map(|(k, v)| (k.to_string(), v)).collect();
                write!(f, "table:{}", serde_json::to_string(&raw).map_err(|_| fmt::Error)?)
            }
        }
    }
}

/// A single source: error table, transmission model and the AoI truncation it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub table: InferenceErrorTable,
    pub trans: TransmissionModel,
}

impl SourceConfig {
    /// Lengths are taken from the table; the transmission model may cover more.
    pub fn new(table: InferenceErrorTable, trans: TransmissionModel) -> Result<Self> {
        let b = table.max_len();
        if trans.max_len() < b {
            return Err(invalid(format!(
                "transmission model covers l<={} but the table has B={b}",
                trans.max_len()
            )));
        }
        let trans = trans.truncated(b)?;
        let need = b as u64 + trans.max_support();
        if (table.delta_bound() as u64) < need {
            return Err(invalid(format!(
                "delta_bound={} must be at least B + max transmission time = {need}",
                table.delta_bound()
            )));
        }
        Ok(Self { table, trans })
    }

    pub fn buffer(&self) -> usize {
        self.table.max_len()
    }

    pub fn delta_bound(&self) -> usize {
        self.table.delta_bound()
    }

    /// Legal `(l, b)` pairs in canonical order: `l` ascending, then `b` ascending.
    pub fn legal_windows(&self) -> Vec<(usize, usize)> {
        let b = self.buffer();
        (1..=b).flat_map(|l| (0..=b - l).map(move |p| (l, p))).collect()
    }
}
