//! `aoi-coopt` command-line front end.

mod output;
mod policies;
mod sweep;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use aoi_coopt::errmodel::{jakes_error_table, load_csv, synthetic_table, write_csv, JakesParams, SyntheticKind};
use aoi_coopt::multi::{solve_multi, MultiConfig, MultiPolicy};
use aoi_coopt::sim::{simulate_multi, simulate_single, SimOptions, SimResult};
use aoi_coopt::tifl::{solve_tifl, TiflPolicy};
use aoi_coopt::tvfl::{solve_tvfl, TvflPolicy};
use aoi_coopt::{GammaTable, InferenceErrorTable, SourceConfig, TransmissionSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

use output::Sink;
use policies::{MultiChoice, SingleChoice};

#[derive(Parser)]
#[command(name = "aoi-coopt", version, about = "Feature-length selection and transmission scheduling under AoI")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file, or `-` for standard output.
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an inference-error table as CSV.
    Errgen(ErrgenArgs),
    /// Solve for a policy and write it as JSON.
    Solve(SolveArgs),
    /// Simulate one policy and write a one-row results CSV.
    Simulate(SimulateArgs),
    /// Solve and simulate over a parameter range.
    Sweep(sweep::SweepArgs),
    /// Run the oracle cross-checks and invariant suites.
    Verify(verify::VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TableKind {
    Jakes,
    Constant,
    Linear,
}

#[derive(Args)]
struct ErrgenArgs {
    kind: TableKind,
    /// Channel variance.
    #[arg(long = "b", default_value_t = 1.0)]
    variance: f64,
    /// Velocity in m/s.
    #[arg(long = "v", default_value_t = 15.0)]
    velocity: f64,
    /// Carrier frequency in Hz.
    #[arg(long = "fc", default_value_t = 2e9)]
    carrier: f64,
    /// Sampling period in seconds.
    #[arg(long = "ts", default_value_t = 1e-3)]
    sample_period: f64,
    /// Observation noise variance.
    #[arg(long = "sigma2", default_value_t = 1e-6)]
    noise: f64,
    /// Doppler frequency in Hz; overrides `--v` and `--fc`.
    #[arg(long = "fd")]
    doppler: Option<f64>,
    /// Maximum feature length.
    #[arg(long = "B", default_value_t = 10)]
    buffer: usize,
    #[arg(long = "delta-bound", default_value_t = 50)]
    delta_bound: usize,
    /// Value of a constant table.
    #[arg(long = "c", default_value_t = 1.0)]
    constant: f64,
    /// Slope of a linear table.
    #[arg(long, default_value_t = 1.0)]
    slope: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Tifl,
    Tvfl,
    Multi,
}

#[derive(Args)]
struct SourceArgs {
    /// Error table CSV.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Transmission model, `det:alpha=<a>` or `table:{json}`.
    #[arg(long, default_value = "det:alpha=0.2")]
    trans: TransmissionSpec,
    /// Truncate the table to this many lengths.
    #[arg(long = "B")]
    buffer: Option<usize>,
    /// Multi-source JSON config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    solver: Solver,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// `tifl`, `tvfl`, `zero-wait:l=..`, `periodic:tp=..,l=..`, `netgain`, `lowerbound` or `maf:l=..`.
    #[arg(long)]
    policy: String,
    /// Previously solved policy JSON; solved on the fly when absent.
    #[arg(long)]
    policy_file: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    /// Write the delivery log as CSV to this path.
    #[arg(long)]
    events: Option<PathBuf>,
}

impl SourceArgs {
    fn single(&self) -> Result<SourceConfig> {
        let path = self.table.as_ref().context("--table is required")?;
        let mut table = load_csv(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(b) = self.buffer {
            table = table.truncate_lengths(b)?;
        }
        let trans = self.trans.build(table.max_len())?;
        Ok(SourceConfig::new(table, trans)?)
    }

    fn multi(&self) -> Result<MultiConfig> {
        let path = self.config.as_ref().context("--config is required")?;
        MultiConfig::load(path).with_context(|| format!("loading {}", path.display()))
    }

    fn check_paths(&self) -> Result<()> {
        for p in [&self.table, &self.config].into_iter().flatten() {
            if !p.is_file() {
                bail!("no such file: {}", p.display());
            }
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_pool() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_pool() -> Result<()> {
    if let Ok(v) = std::env::var("AOI_COOPT_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("AOI_COOPT_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<aoi_coopt::Error>() {
        Some(aoi_coopt::Error::NonConvergence { .. })
        | Some(aoi_coopt::Error::NoSignChange { .. })
        | Some(aoi_coopt::Error::Multichain { .. }) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let Format::Csv = cli.format;
    let sink = Sink::new(cli.out.as_deref())?;
    match cli.cmd {
        Command::Errgen(a) => errgen(&a, &sink),
        Command::Solve(a) => solve(&a, &sink),
        Command::Simulate(a) => simulate(&a, cli.seed, &sink),
        Command::Sweep(a) => sweep::run(&a, cli.seed, &sink),
        Command::Verify(a) => verify::run(&a, cli.seed, &sink),
    }
}

fn build_table(a: &ErrgenArgs) -> Result<InferenceErrorTable> {
    let kind = match a.kind {
        TableKind::Jakes => {
            let p = match a.doppler {
                Some(fd) => JakesParams::new(a.variance, fd, a.sample_period, a.noise)?,
                None => JakesParams::from_velocity(a.variance, a.velocity, a.carrier, a.sample_period, a.noise)?,
            };
            return Ok(jakes_error_table(&p, a.buffer, a.delta_bound)?);
        }
        TableKind::Constant => SyntheticKind::Constant(a.constant),
        TableKind::Linear => SyntheticKind::Linear(a.slope),
    };
    Ok(synthetic_table(&kind, a.buffer, a.delta_bound)?)
}

fn errgen(a: &ErrgenArgs, sink: &Sink) -> Result<ExitCode> {
    let table = build_table(a)?;
    let mut buf = Vec::new();
    write_csv(&table, &mut buf)?;
    sink.write(&buf)?;
    sink.info(&format!(
        "rows={} lengths={} min={} max={} nonincreasing_in_l={} nondecreasing_in_aoi={}",
        table.delta_bound() + 1,
        table.max_len(),
        table.min(),
        table.max(),
        table.is_nonincreasing_in_length(1e-12),
        table.is_nondecreasing_in_aoi()
    ));
    Ok(ExitCode::SUCCESS)
}

fn solve(a: &SolveArgs, sink: &Sink) -> Result<ExitCode> {
    a.source.check_paths()?;
    let (json, summary) = match a.solver {
        Solver::Tifl => {
            let p = solve_tifl(&a.source.single()?)?;
            let s = format!("beta_star={} l_star={} b_star={}", p.beta_star, p.l_star, p.b_star);
            (serde_json::to_string_pretty(&p)?, s)
        }
        Solver::Tvfl => {
            let p = solve_tvfl(&a.source.single()?)?;
            let s = format!("p_bar={} iterations={}", p.p_bar, p.iterations);
            (serde_json::to_string_pretty(&p)?, s)
        }
        Solver::Multi => {
            let p = solve_multi(&a.source.multi()?)?;
            let s = format!("lambda_star={} iterations={}", p.lambda_star, p.iterations);
            (serde_json::to_string_pretty(&p)?, s)
        }
    };
    if sink.requested() {
        sink.write(json.as_bytes())?;
        sink.info(&summary);
    } else {
        println!("{summary}");
    }
    Ok(ExitCode::SUCCESS)
}

fn read_policy<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<T>> {
    path.as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .transpose()
}

fn simulate(a: &SimulateArgs, seed: u64, sink: &Sink) -> Result<ExitCode> {
    a.source.check_paths()?;
    if let Some(p) = &a.policy_file {
        if !p.is_file() {
            bail!("no such file: {}", p.display());
        }
    }
    let mut opts = SimOptions::new(a.horizon, seed);
    opts.record_events = a.events.is_some();
    let result: SimResult = if let Ok(choice) = a.policy.parse::<SingleChoice>() {
        let cfg = a.source.single()?;
        let tifl: Option<TiflPolicy> = match choice {
            SingleChoice::Tifl => Some(match read_policy(&a.policy_file)? {
                Some(p) => p,
                None => solve_tifl(&cfg)?,
            }),
            _ => None,
        };
        let tvfl: Option<TvflPolicy> = match choice {
            SingleChoice::Tvfl => Some(match read_policy(&a.policy_file)? {
                Some(p) => p,
                None => solve_tvfl(&cfg)?,
            }),
            _ => None,
        };
        let gamma = GammaTable::build(&cfg.table, &cfg.trans)?;
        let policy = choice.policy(tifl.as_ref(), tvfl.as_ref(), &gamma);
        simulate_single(&policy, &cfg, &opts)?
    } else {
        let choice: MultiChoice = a.policy.parse()?;
        let cfg = a.source.multi()?;
        let policy: Option<MultiPolicy> = match (choice.needs_policy(), read_policy(&a.policy_file)?) {
            (true, Some(p)) => Some(p),
            (true, None) => Some(solve_multi(&cfg)?),
            (false, _) => None,
        };
        simulate_multi(&choice.kind(), &cfg, policy.as_ref(), &opts)?
    };
    if let (Some(path), Some(events)) = (&a.events, &result.events) {
        let mut text = String::from("source,send,deliver,len,pos,generated\n");
        for e in events {
            text.push_str(&format!("{},{},{},{},{},{}\n", e.source, e.send, e.deliver, e.len, e.pos, e.generated));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut csv = String::from("policy,horizon,seed,avg_error,normalized_error,std_error,utilization\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        sweep::csv_field(&a.policy),
        result.horizon,
        result.seed,
        result.time_avg_error,
        result.normalized_error,
        result.std_error,
        result.channel_utilization
    ));
    sink.write(csv.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}
