//! Seeded instance generators for tests, verification and sweeps.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::errmodel::{jakes_error_table, synthetic_table, InferenceErrorTable, JakesParams, SyntheticKind};
use crate::error::Result;
use crate::model::{SlotDistribution, SourceConfig, TransmissionModel};
use crate::multi::{DualParams, MultiConfig};
use crate::oracle::{DiscreteJoint, Loss};

pub const PAPER_VELOCITY: f64 = 15.0;
pub const PAPER_CARRIER_HZ: f64 = 2e9;
pub const PAPER_SAMPLE_PERIOD: f64 = 1e-3;
pub const PAPER_NOISE_VAR: f64 = 1e-6;
pub const PAPER_BUFFER: usize = 10;
pub const PAPER_DELTA_BOUND: usize = 60;

/// `(velocity m/s, variance)` of the three source types in the multi-source setup.
pub const SOURCE_TYPES: [(f64, f64); 3] = [(15.0, 0.5), (20.0, 0.1), (25.0, 1.0)];

pub fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Uniform random table whose last row holds the overall maximum in every column,
/// so that the error never drops once the AoI saturates.
pub fn random_table<R: Rng>(rng: &mut R, max_len: usize, delta_bound: usize) -> InferenceErrorTable {
    let mut rows: Vec<Vec<f64>> = (0..delta_bound)
        .map(|_| (0..max_len).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let top = rows.iter().flatten().cloned().fold(0.0, f64::max);
    rows.push(vec![top; max_len]);
    InferenceErrorTable::from_rows(&rows).expect("valid random table")
}

/// Random table non-decreasing in the AoI.
pub fn monotone_table<R: Rng>(rng: &mut R, max_len: usize, delta_bound: usize) -> InferenceErrorTable {
    let mut acc: Vec<f64> = (0..max_len).map(|_| rng.gen::<f64>()).collect();
    let mut rows = vec![acc.clone()];
    for _ in 0..delta_bound {
        for a in acc.iter_mut() {
            *a += rng.gen::<f64>();
        }
        rows.push(acc.clone());
    }
    InferenceErrorTable::from_rows(&rows).expect("valid monotone table")
}

/// `B ∈ {1, 2}`, deterministic `T(l) = ⌈αl⌉` and `δ_bound ≤ 8`.
pub fn small_deterministic<R: Rng>(rng: &mut R) -> SourceConfig {
    let b = rng.gen_range(1..=2);
    let alpha = [0.5, 1.0, 1.5, 2.0][rng.gen_range(0..4)];
    let trans = TransmissionModel::deterministic(alpha, b).expect("positive alpha");
    let lo = b + trans.max_support() as usize;
    let bound = rng.gen_range(lo.max(3)..=8);
    SourceConfig::new(random_table(rng, b, bound), trans).expect("consistent instance")
}

/// Random slot distribution on `1..=max_t` with two or three support points when
/// `max_t ≥ 2`.
pub fn random_distribution<R: Rng>(rng: &mut R, max_t: u64) -> SlotDistribution {
    let mut support: Vec<u64> = (1..=max_t).collect();
    let k = rng.gen_range(support.len().min(2)..=support.len().min(3));
    let mut points = Vec::with_capacity(k);
    let mut weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let sum_head: f64 = weights[..k - 1].iter().sum();
    weights[k - 1] = 1.0 - sum_head;
    for w in weights {
        let t = support.remove(rng.gen_range(0..support.len()));
        points.push((t, w));
    }
    SlotDistribution::new(points).expect("normalised weights")
}

/// `B ≤ 3`, random or deterministic `T`, `δ_bound` between 8 and 16.
pub fn small_instance<R: Rng>(rng: &mut R, deterministic: bool) -> SourceConfig {
    let b = rng.gen_range(1..=3);
    let trans = if deterministic {
        TransmissionModel::deterministic([0.5, 1.0, 1.5][rng.gen_range(0..3)], b).expect("positive alpha")
    } else {
        TransmissionModel::from_distributions((0..b).map(|_| random_distribution(rng, 3)).collect())
            .expect("one distribution per length")
    };
    let lo = (b + trans.max_support() as usize).max(8);
    let bound = rng.gen_range(lo..=16);
    SourceConfig::new(random_table(rng, b, bound), trans).expect("consistent instance")
}

/// Joint of `Y` and `horizon` observations with alphabet sizes 2 or 3 and random mass.
pub fn random_joint<R: Rng>(rng: &mut R, loss: Loss) -> DiscreteJoint {
    let ny = rng.gen_range(2..=3);
    let nv = rng.gen_range(2..=3);
    let horizon = 3;
    let cells = ny * nv * nv * nv;
    let mut pmf: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>().powi(2)).collect();
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    let y_values: Vec<f64> = (0..ny).map(|k| k as f64 + rng.gen::<f64>() * 0.5).collect();
    DiscreteJoint::new(y_values, nv, horizon, pmf, loss).expect("normalised pmf")
}

pub fn paper_jakes_params(variance: f64, velocity: f64) -> Result<JakesParams> {
    JakesParams::from_velocity(variance, velocity, PAPER_CARRIER_HZ, PAPER_SAMPLE_PERIOD, PAPER_NOISE_VAR)
}

/// Single-source Jakes table with unit variance at 15 m/s.
pub fn paper_single_table(max_len: usize, delta_bound: usize) -> Result<InferenceErrorTable> {
    jakes_error_table(&paper_jakes_params(1.0, PAPER_VELOCITY)?, max_len, delta_bound)
}

pub fn paper_source_type_table(kind: usize, max_len: usize, delta_bound: usize) -> Result<InferenceErrorTable> {
    let (v, var) = SOURCE_TYPES[kind];
    jakes_error_table(&paper_jakes_params(var, v)?, max_len, delta_bound)
}

/// `M = 3r` sources cycling through the three types, `N = 10r` channels, step `10⁻⁴ / r`.
pub fn paper_multi_config(scale: usize, max_len: usize, delta_bound: usize) -> Result<MultiConfig> {
    let types: Vec<InferenceErrorTable> = (0..3)
        .map(|k| paper_source_type_table(k, max_len, delta_bound))
        .collect::<Result<_>>()?;
    let sources = (0..3 * scale).map(|j| types[j % 3].clone()).collect();
    let dual = DualParams { beta: 1e-4 / scale as f64, ..DualParams::default() };
    MultiConfig::new(10 * scale, sources, dual)
}

/// `M` sources cycling through the three types on `channels` channels.
pub fn paper_sources_config(sources: usize, channels: usize, max_len: usize, delta_bound: usize) -> Result<MultiConfig> {
    let types: Vec<InferenceErrorTable> = (0..3)
        .map(|k| paper_source_type_table(k, max_len, delta_bound))
        .collect::<Result<_>>()?;
    MultiConfig::new(channels, (0..sources).map(|j| types[j % 3].clone()).collect(), DualParams::default())
}

/// `err(δ) = δ` for all lengths.
pub fn linear_table(max_len: usize, delta_bound: usize) -> InferenceErrorTable {
    synthetic_table(&SyntheticKind::Linear(1.0), max_len, delta_bound).expect("valid sizes")
}
