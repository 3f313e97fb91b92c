use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use aoi_coopt::baselines::{BaselineSpec, MafLength};
use aoi_coopt::errmodel::load_csv;
use aoi_coopt::instances;
use aoi_coopt::multi::{solve_multi, MultiConfig};
use aoi_coopt::sim::{simulate_multi, simulate_single, SimOptions, SimResult};
use aoi_coopt::tifl::solve_tifl;
use aoi_coopt::tvfl::solve_tvfl;
use aoi_coopt::{GammaTable, InferenceErrorTable, SourceConfig, TransmissionModel};
use clap::{Args, ValueEnum};
use rayon::prelude::*;

use crate::output::Sink;
use crate::policies::{split_policies, MultiChoice, SingleChoice};

pub const HEADER: &str = "policy,param,horizon,seed,avg_error,normalized_error,utilization";

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Param {
    Alpha,
    Buffer,
    Sources,
    Scale,
}

#[derive(Args)]
pub struct SweepArgs {
    param: Param,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    /// Number of points; integer parameters default to every value in the range.
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated policies. Defaults to `tifl,tvfl,zero-wait:l=1,periodic:tp=4,l=1`
    /// for `alpha`/`buffer` and `netgain,lowerbound,maf:l=1,maf:l=B` otherwise.
    #[arg(long)]
    policies: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    /// Scale α of `T(l) = ⌈αl⌉` when it is not the swept parameter.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Buffer size when it is not the swept parameter.
    #[arg(long = "B", default_value_t = 10)]
    buffer: usize,
    #[arg(long = "delta-bound", default_value_t = 60)]
    delta_bound: usize,
    /// Channels for the `sources` sweep.
    #[arg(long, default_value_t = 10)]
    channels: usize,
    /// Error table for single-source sweeps; the Jakes table is used when absent.
    #[arg(long)]
    table: Option<PathBuf>,
}

struct Row {
    policy: String,
    param: String,
    result: SimResult,
}

fn points(a: &SweepArgs) -> Result<Vec<f64>> {
    if !(a.from.is_finite() && a.to.is_finite() && a.from <= a.to) {
        bail!("need finite --from <= --to");
    }
    if a.param == Param::Alpha {
        let steps = a.steps.unwrap_or(20);
        if a.from <= 0.0 || steps == 0 {
            bail!("alpha sweep needs --from > 0 and --steps >= 1");
        }
        if steps == 1 {
            return Ok(vec![a.from]);
        }
        return Ok((0..steps)
            .map(|k| {
                let x = a.from + (a.to - a.from) * k as f64 / (steps - 1) as f64;
                (x * 1e12).round() / 1e12
            })
            .collect());
    }
    if a.from < 1.0 || a.from.fract() != 0.0 || a.to.fract() != 0.0 {
        bail!("integer sweep needs whole --from >= 1 and --to");
    }
    let (lo, hi) = (a.from as usize, a.to as usize);
    let mut v: Vec<f64> = match a.steps {
        None => (lo..=hi).map(|x| x as f64).collect(),
        Some(0) => bail!("--steps must be >= 1"),
        Some(1) => vec![lo as f64],
        Some(s) => (0..s)
            .map(|k| (lo as f64 + (hi - lo) as f64 * k as f64 / (s - 1) as f64).round())
            .collect(),
    };
    v.dedup();
    Ok(v)
}

fn base_table(a: &SweepArgs, max_len: usize) -> Result<InferenceErrorTable> {
    match &a.table {
        Some(p) => {
            let t = load_csv(p).with_context(|| format!("loading {}", p.display()))?;
            if t.max_len() < max_len {
                bail!("table {} has {} lengths, sweep needs {max_len}", p.display(), t.max_len());
            }
            Ok(t.truncate_lengths(max_len)?)
        }
        None => Ok(instances::paper_single_table(max_len, a.delta_bound)?),
    }
}

fn check_len(spec: &str, len: usize, buffer: usize) -> Result<()> {
    if len > buffer {
        bail!("{spec} needs l={len} but the smallest sweep point has B={buffer}");
    }
    Ok(())
}

fn single_point(
    cfg: &SourceConfig,
    choices: &[(String, SingleChoice)],
    param: &str,
    opts: &SimOptions,
) -> Result<Vec<Row>> {
    let gamma = GammaTable::build(&cfg.table, &cfg.trans)?;
    let need = |c: SingleChoice| choices.iter().any(|(_, x)| *x == c);
    let tifl = need(SingleChoice::Tifl).then(|| solve_tifl(cfg)).transpose()?;
    let tvfl = need(SingleChoice::Tvfl).then(|| solve_tvfl(cfg)).transpose()?;
    choices
        .iter()
        .map(|(name, c)| {
            let policy = c.policy(tifl.as_ref(), tvfl.as_ref(), &gamma);
            let result = simulate_single(&policy, cfg, opts)?;
            Ok(Row { policy: name.clone(), param: param.to_string(), result })
        })
        .collect()
}

fn multi_point(cfg: &MultiConfig, choices: &[(String, MultiChoice)], param: &str, opts: &SimOptions) -> Result<Vec<Row>> {
    let policy = choices.iter().any(|(_, c)| c.needs_policy()).then(|| solve_multi(cfg)).transpose()?;
    choices
        .iter()
        .map(|(name, c)| {
            let result = simulate_multi(&c.kind(), cfg, policy.as_ref(), opts)?;
            Ok(Row { policy: name.clone(), param: param.to_string(), result })
        })
        .collect()
}

pub fn run(a: &SweepArgs, seed: u64, sink: &Sink) -> Result<ExitCode> {
    if let Some(p) = &a.table {
        if !p.is_file() {
            bail!("no such file: {}", p.display());
        }
    }
    let values = points(a)?;
    let single = matches!(a.param, Param::Alpha | Param::Buffer);
    let default = if single { "tifl,tvfl,zero-wait:l=1,periodic:tp=4,l=1" } else { "netgain,lowerbound,maf:l=1,maf:l=B" };
    let names = split_policies(a.policies.as_deref().unwrap_or(default))?;
    let opts = SimOptions::new(a.horizon, seed);
    let min_buffer = if a.param == Param::Buffer { values[0] as usize } else { a.buffer };

    let rows: Vec<Vec<Row>> = if single {
        let choices: Vec<(String, SingleChoice)> = names
            .iter()
            .map(|n| Ok((n.clone(), n.parse::<SingleChoice>()?)))
            .collect::<Result<_>>()?;
        for (n, c) in &choices {
            if let SingleChoice::Baseline(BaselineSpec::ZeroWait { len } | BaselineSpec::Periodic { len, .. }) = c {
                check_len(n, *len, min_buffer)?;
            }
        }
        let max_len = if a.param == Param::Buffer { *values.last().unwrap() as usize } else { a.buffer };
        let table = base_table(a, max_len)?;
        values
            .par_iter()
            .map(|&x| {
                let (alpha, b) = match a.param {
                    Param::Alpha => (x, a.buffer),
                    _ => (a.alpha, x as usize),
                };
                let t = table.truncate_lengths(b)?;
                let cfg = SourceConfig::new(t, TransmissionModel::deterministic(alpha, b)?)?;
                single_point(&cfg, &choices, &format!("{x}"), &opts)
            })
            .collect::<Result<_>>()?
    } else {
        let choices: Vec<(String, MultiChoice)> = names
            .iter()
            .map(|n| Ok((n.clone(), n.parse::<MultiChoice>()?)))
            .collect::<Result<_>>()?;
        for (n, c) in &choices {
            if let MultiChoice::Maf(MafLength::Fixed(len)) = c {
                check_len(n, *len, a.buffer)?;
            }
        }
        values
            .par_iter()
            .map(|&x| {
                let cfg = match a.param {
                    Param::Sources => instances::paper_sources_config(x as usize, a.channels, a.buffer, a.delta_bound)?,
                    _ => instances::paper_multi_config(x as usize, a.buffer, a.delta_bound)?,
                };
                multi_point(&cfg, &choices, &format!("{x}"), &opts)
            })
            .collect::<Result<_>>()?
    };

    let mut csv = format!("{HEADER}\n");
    for r in rows.iter().flatten() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&r.policy),
            r.param,
            r.result.horizon,
            r.result.seed,
            r.result.time_avg_error,
            r.result.normalized_error,
            r.result.channel_utilization
        ));
    }
    sink.write(csv.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
