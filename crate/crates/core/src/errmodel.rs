//! Inference-error tables `err(δ, l)`: Jakes-channel MMSE, synthetic fixtures and CSV I/O.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const MIN_NOISE_VAR: f64 = 1e-12;

/// Dense table over `δ ∈ 0..=delta_bound` and `l ∈ 1..=max_len`, clamped beyond `delta_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceErrorTable {
    max_len: usize,
    delta_bound: usize,
    values: Vec<f64>,
}

impl InferenceErrorTable {
    /// `rows[δ][l - 1]` for `δ = 0..=delta_bound`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(invalid("table needs rows for delta = 0 and at least delta = 1"));
        }
        let max_len = rows[0].len();
        if max_len == 0 {
            return Err(invalid("table needs at least one length column"));
        }
        let mut values = Vec::with_capacity(rows.len() * max_len);
        for (delta, row) in rows.iter().enumerate() {
            if row.len() != max_len {
                return Err(invalid(format!(
                    "row delta={delta} has {} columns, expected {max_len}",
                    row.len()
                )));
            }
            if let Some(l) = row.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite entry at delta={delta}, l={}", l + 1)));
            }
            values.extend_from_slice(row);
        }
        Ok(Self { max_len, delta_bound: rows.len() - 1, values })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn delta_bound(&self) -> usize {
        self.delta_bound
    }

    /// `err(δ, l)` with `δ` clamped at `delta_bound`.
    #[inline]
    pub fn lookup(&self, delta: u64, len: usize) -> f64 {
        assert!(len >= 1 && len <= self.max_len, "length {len} outside 1..={}", self.max_len);
        let delta = (delta as usize).min(self.delta_bound);
        self.values[delta * self.max_len + len - 1]
    }

    pub fn row(&self, delta: usize) -> &[f64] {
        let delta = delta.min(self.delta_bound);
        &self.values[delta * self.max_len..(delta + 1) * self.max_len]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..=self.delta_bound).map(|d| self.row(d).to_vec()).collect()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Keep length columns `1..=max_len`.
    pub fn truncate_lengths(&self, max_len: usize) -> Result<Self> {
        if max_len == 0 || max_len > self.max_len {
            return Err(Error::LengthOutOfRange { len: max_len, max: self.max_len });
        }
        let rows: Vec<Vec<f64>> = (0..=self.delta_bound)
            .map(|d| self.row(d)[..max_len].to_vec())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn is_nonincreasing_in_length(&self, tol: f64) -> bool {
        (0..=self.delta_bound).all(|d| self.row(d).windows(2).all(|w| w[1] <= w[0] + tol))
    }

    pub fn is_nondecreasing_in_aoi(&self) -> bool {
        (1..=self.delta_bound).all(|d| {
            let (prev, cur) = (self.row(d - 1), self.row(d));
            prev.iter().zip(cur).all(|(a, b)| b >= a)
        })
    }
}

/// Clarke/Jakes fading parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JakesParams {
    /// Prior variance `b = r(0)`.
    pub variance: f64,
    pub doppler_hz: f64,
    pub sample_period: f64,
    /// White noise added to every observed sample, floored at [`MIN_NOISE_VAR`].
    pub noise_var: f64,
}

impl JakesParams {
    pub fn new(variance: f64, doppler_hz: f64, sample_period: f64, noise_var: f64) -> Result<Self> {
        let p = Self { variance, doppler_hz, sample_period, noise_var };
        p.validate()?;
        Ok(p)
    }

    /// Doppler from velocity (m/s) and carrier frequency (Hz): `f_d = v f_c / c`.
    pub fn from_velocity(
        variance: f64,
        velocity: f64,
        carrier_hz: f64,
        sample_period: f64,
        noise_var: f64,
    ) -> Result<Self> {
        Self::new(variance, velocity * carrier_hz / SPEED_OF_LIGHT, sample_period, noise_var)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.variance, self.doppler_hz, self.sample_period, self.noise_var]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("Jakes parameters must be finite"));
        }
        if self.variance <= 0.0 {
            return Err(invalid(format!("variance must be positive, got {}", self.variance)));
        }
        if self.doppler_hz < 0.0 || self.sample_period <= 0.0 {
            return Err(invalid("need doppler >= 0 and sample period > 0"));
        }
        if self.noise_var < MIN_NOISE_VAR {
            return Err(invalid(format!(
                "noise variance {} below the floor {MIN_NOISE_VAR:e}",
                self.noise_var
            )));
        }
        Ok(())
    }

    /// Normalized Doppler `f_d T_s`.
    pub fn normalized_doppler(&self) -> f64 {
        self.doppler_hz * self.sample_period
    }
}

/// `r(k) = b J0(2π f_d T_s |k|)`. J0 comes from `libm` (absolute error far below 1e-7).
pub fn jakes_autocorr(p: &JakesParams, lag: i64) -> f64 {
    p.variance * libm::j0(2.0 * PI * p.normalized_doppler() * lag.unsigned_abs() as f64)
}

/// Linear-MMSE error of predicting the clean sample `δ` slots past the freshest of `l`
/// noisy observations, for every `δ ∈ 0..=delta_bound` and `l ∈ 1..=max_len`.
///
/// One Cholesky factor of the `max_len × max_len` covariance serves every length:
/// leading blocks of the factor are the factors of the leading blocks, so the
/// whitened cross-covariance of length `l` is a prefix of the full one.
pub fn jakes_error_table(p: &JakesParams, max_len: usize, delta_bound: usize) -> Result<InferenceErrorTable> {
    p.validate()?;
    if max_len == 0 || delta_bound == 0 {
        return Err(invalid("need B >= 1 and delta_bound >= 1"));
    }
    let r: Vec<f64> = (0..(delta_bound + max_len) as i64).map(|k| jakes_autocorr(p, k)).collect();
    let cov = DMatrix::from_fn(max_len, max_len, |i, j| {
        r[i.abs_diff(j)] + if i == j { p.noise_var } else { 0.0 }
    });
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let len = (1..=max_len)
                .find(|&l| cov.view((0, 0), (l, l)).into_owned().cholesky().is_none())
                .unwrap_or(max_len);
            return Err(Error::Factorization { delta: 0, len });
        }
    };
    let lower = chol.l();
    let mut rows = Vec::with_capacity(delta_bound + 1);
    for delta in 0..=delta_bound {
        let c = DVector::from_fn(max_len, |i, _| r[delta + i]);
        let w = lower
            .solve_lower_triangular(&c)
            .ok_or(Error::Factorization { delta, len: max_len })?;
        let mut explained = 0.0;
        let row: Vec<f64> = w
            .iter()
            .map(|wi| {
                explained += wi * wi;
                (r[0] - explained).max(0.0)
            })
            .collect();
        rows.push(row);
    }
    InferenceErrorTable::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    Constant(f64),
    /// `err(δ, l) = slope · δ`.
    Linear(f64),
    /// Rows for `δ = 1..=delta_bound`; row 0 repeats row 1.
    Custom(Vec<Vec<f64>>),
}

pub fn synthetic_table(kind: &SyntheticKind, max_len: usize, delta_bound: usize) -> Result<InferenceErrorTable> {
    if max_len == 0 || delta_bound == 0 {
        return Err(invalid("need B >= 1 and delta_bound >= 1"));
    }
    let rows: Vec<Vec<f64>> = match kind {
        SyntheticKind::Constant(c) => vec![vec![*c; max_len]; delta_bound + 1],
        SyntheticKind::Linear(slope) => (0..=delta_bound).map(|d| vec![slope * d as f64; max_len]).collect(),
        SyntheticKind::Custom(m) => {
            if m.len() != delta_bound {
                return Err(invalid(format!("custom matrix has {} rows, expected {delta_bound}", m.len())));
            }
            if let Some(bad) = m.iter().position(|row| row.len() != max_len) {
                return Err(invalid(format!(
                    "custom row delta={} has {} columns, expected {max_len}",
                    bad + 1,
                    m[bad].len()
                )));
            }
            std::iter::once(m[0].clone()).chain(m.iter().cloned()).collect()
        }
    };
    InferenceErrorTable::from_rows(&rows)
}

/// C-style `%.17g`: shortest of fixed/scientific with 17 significant digits, trailing zeros trimmed.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..17).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp).max(0) as usize;
    trim_fraction(&format!("{x:.decimals$}")).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(table: &InferenceErrorTable, mut out: W) -> Result<()> {
    let header: Vec<String> = (1..=table.max_len()).map(|l| format!("l={l}")).collect();
    writeln!(out, "delta,{}", header.join(","))?;
    for delta in 0..=table.delta_bound() {
        let cells: Vec<String> = table.row(delta).iter().map(|&v| format_g17(v)).collect();
        writeln!(out, "{delta},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn save_csv(table: &InferenceErrorTable, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(table, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<InferenceErrorTable> {
    read_csv(BufReader::new(File::open(path)?))
}

/// Parses the table format. Comment lines (`#`) may precede the header and may carry
/// `delta_bound=<n>` / `B=<n>` metadata, which is then enforced.
pub fn read_csv<R: BufRead>(input: R) -> Result<InferenceErrorTable> {
    let err = |line: usize, column: usize, msg: String| Error::Table { line, column, msg };
    let mut expect_bound: Option<usize> = None;
    let mut expect_len: Option<usize> = None;
    let mut header: Option<usize> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut last_line = 0;

    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if header.is_some() {
                return Err(err(lineno, 1, "comment after header".into()));
            }
            for token in comment.split(|c: char| c.is_whitespace() || c == ',') {
                if let Some((k, v)) = token.split_once('=') {
                    let parsed = || {
                        v.parse::<usize>()
                            .map_err(|_| err(lineno, 1, format!("bad metadata value {v:?} for {k}")))
                    };
                    match k {
                        "delta_bound" => expect_bound = Some(parsed()?),
                        "B" => expect_len = Some(parsed()?),
                        _ => {}
                    }
                }
            }
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let Some(width) = header else {
            if cells[0] != "delta" {
                return Err(err(lineno, 1, format!("expected header starting with 'delta', got {:?}", cells[0])));
            }
            if cells.len() < 2 {
                return Err(err(lineno, 2, "header has no length columns".into()));
            }
            for (i, c) in cells.iter().enumerate().skip(1) {
                if *c != format!("l={i}") {
                    return Err(err(lineno, i + 1, format!("expected 'l={i}', got {c:?}")));
                }
            }
            header = Some(cells.len() - 1);
            continue;
        };
        if cells.len() != width + 1 {
            return Err(err(lineno, cells.len().min(width + 1), format!(
                "ragged row: {} cells, expected {}",
                cells.len(),
                width + 1
            )));
        }
        let delta: usize = cells[0]
            .parse()
            .map_err(|_| err(lineno, 1, format!("non-numeric delta {:?}", cells[0])))?;
        if delta != rows.len() {
            return Err(err(lineno, 1, format!("delta rows must be contiguous from 0; expected {}, got {delta}", rows.len())));
        }
        let mut row = Vec::with_capacity(width);
        for (i, c) in cells.iter().enumerate().skip(1) {
            let v: f64 = c
                .parse()
                .map_err(|_| err(lineno, i + 1, format!("non-numeric cell {c:?}")))?;
            if !v.is_finite() {
                return Err(err(lineno, i + 1, format!("non-finite cell {c:?}")));
            }
            row.push(v);
        }
        rows.push(row);
    }

    let Some(width) = header else {
        return Err(err(last_line.max(1), 1, "missing header".into()));
    };
    if rows.len() < 2 {
        return Err(err(last_line, 1, format!("need rows for delta 0 and 1, found {}", rows.len())));
    }
    if let Some(b) = expect_bound {
        if rows.len() != b + 1 {
            return Err(err(last_line, 1, format!(
                "metadata declares delta_bound={b} but rows cover 0..={}",
                rows.len() - 1
            )));
        }
    }
    if let Some(b) = expect_len {
        if width != b {
            return Err(err(1, 1, format!("metadata declares B={b} but header has {width} lengths")));
        }
    }
    InferenceErrorTable::from_rows(&rows)
}
