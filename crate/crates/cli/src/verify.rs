use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use aoi_coopt::errmodel::load_csv;
use aoi_coopt::instances::{self, rng};
use aoi_coopt::multi::knapsack_select;
use aoi_coopt::oracle::{exhaustive_knapsack, exhaustive_single_source, l_conditional_entropy, l_entropy, Loss};
use aoi_coopt::tifl::solve_tifl;
use aoi_coopt::tvfl::{bellman_residual, solve_tvfl};
use aoi_coopt::{Exec, SourceConfig, TransmissionSpec};
use clap::Args;
use rand::Rng;

use crate::output::Sink;

const ORACLE_REL_TOL: f64 = 1e-6;
const ORDER_TOL: f64 = 1e-9;
const BELLMAN_TOL: f64 = 1e-6;
const ENTROPY_TOL: f64 = 1e-12;

#[derive(Args)]
pub struct VerifyArgs {
    /// Check that conditioning on longer feature windows never raises the entropy.
    #[arg(long)]
    entropy: bool,
    /// Check a table file and the solvers on it.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value = "det:alpha=0.2")]
    trans: TransmissionSpec,
    #[arg(long, default_value_t = 20)]
    trials: u64,
}

struct Check {
    name: &'static str,
    trials: u64,
    worst: f64,
    tol: f64,
    failures: Vec<String>,
}

impl Check {
    fn new(name: &'static str, tol: f64) -> Self {
        Self { name, trials: 0, worst: 0.0, tol, failures: Vec::new() }
    }

    /// Records a residual that must stay at or below the tolerance.
    fn record(&mut self, label: impl FnOnce() -> String, residual: f64) {
        self.trials += 1;
        if residual.is_nan() || residual > self.worst {
            self.worst = residual;
        }
        if residual.is_nan() || residual > self.tol {
            self.failures.push(format!("{}: residual {residual:e}", label()));
        }
    }

    fn fail(&mut self, label: String, err: impl std::fmt::Display) {
        self.trials += 1;
        self.worst = f64::NAN;
        self.failures.push(format!("{label}: {err}"));
    }
}

fn battery(trials: u64, seed: u64) -> Vec<Check> {
    let mut oracle = Check::new("oracle", ORACLE_REL_TOL);
    let mut order = Check::new("tvfl_le_tifl", ORDER_TOL);
    let mut bellman = Check::new("bellman_residual", BELLMAN_TOL);
    let mut knapsack = Check::new("knapsack", 0.0);
    for k in 0..trials {
        let s = seed.wrapping_add(k);
        let cfg = instances::small_deterministic(&mut rng(s));
        let z = cfg.delta_bound() as u64;
        match (exhaustive_single_source(&cfg, z, Exec::Parallel), solve_tvfl(&cfg), solve_tifl(&cfg)) {
            (Ok(o), Ok(tv), Ok(ti)) => {
                oracle.record(|| format!("seed {s}"), (tv.p_bar - o.p_bar).abs() / o.p_bar.abs().max(f64::MIN_POSITIVE));
                order.record(|| format!("seed {s} det"), (o.p_bar - ti.beta_star).max(0.0));
            }
            (o, tv, ti) => {
                let e = o.err().map(|e| e.to_string()).or(tv.err().map(|e| e.to_string()));
                oracle.fail(format!("seed {s}"), e.or(ti.err().map(|e| e.to_string())).unwrap_or_default());
            }
        }

        let cfg = instances::small_instance(&mut rng(s), false);
        match (solve_tvfl(&cfg), solve_tifl(&cfg)) {
            (Ok(tv), Ok(ti)) => {
                order.record(|| format!("seed {s}"), (tv.p_bar - ti.beta_star).max(0.0));
                match bellman_residual(&tv, &cfg) {
                    Ok(r) => bellman.record(|| format!("seed {s}"), r),
                    Err(e) => bellman.fail(format!("seed {s}"), e),
                }
            }
            (Err(e), _) | (_, Err(e)) => order.fail(format!("seed {s}"), e),
        }

        let mut r = rng(s);
        let m = r.gen_range(1..=5);
        let gains: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let b = r.gen_range(1..=4);
                std::iter::once(0.0).chain((0..b).map(|_| r.gen_range(-4..8) as f64 * 0.5)).collect()
            })
            .collect();
        let cap = r.gen_range(0..=8);
        let dp = knapsack_select(&gains, cap);
        match exhaustive_knapsack(&gains, cap) {
            Ok((lens, value, used)) => {
                let same = dp.lens == lens && dp.value == value && dp.used == used;
                knapsack.record(|| format!("seed {s}"), if same { 0.0 } else { (dp.value - value).abs().max(1.0) });
            }
            Err(e) => knapsack.fail(format!("seed {s}"), e),
        }
    }
    vec![oracle, order, bellman, knapsack]
}

fn entropy(trials: u64, seed: u64) -> Check {
    let mut c = Check::new("entropy", ENTROPY_TOL);
    for k in 0..trials {
        let s = seed.wrapping_add(k);
        let loss = if k % 2 == 0 { Loss::Quadratic } else { Loss::Log };
        let j = instances::random_joint(&mut rng(s), loss);
        let h = l_entropy(&j);
        let mut worst = f64::NEG_INFINITY;
        for delta in 0..j.horizon {
            let mut prev = h;
            for l in 1..=j.horizon - delta {
                match l_conditional_entropy(&j, delta, l) {
                    Ok(cur) => {
                        worst = worst.max(cur - prev).max(cur - h);
                        prev = cur;
                    }
                    Err(e) => {
                        c.fail(format!("seed {s}"), e);
                        worst = f64::NAN;
                    }
                }
            }
        }
        if !worst.is_nan() {
            c.record(|| format!("seed {s}"), worst.max(0.0));
        }
    }
    c
}

fn table(path: &PathBuf, spec: &TransmissionSpec) -> Vec<Check> {
    let mut load = Check::new("table_load", 0.0);
    let t = match load_csv(path) {
        Ok(t) => {
            load.record(String::new, 0.0);
            t
        }
        Err(e) => {
            load.fail(path.display().to_string(), e);
            return vec![load];
        }
    };
    let mut order = Check::new("tvfl_le_tifl", ORDER_TOL);
    let mut bellman = Check::new("bellman_residual", BELLMAN_TOL);
    let cfg = spec.build(t.max_len()).and_then(|trans| SourceConfig::new(t, trans));
    match cfg.and_then(|cfg| Ok((solve_tvfl(&cfg)?, solve_tifl(&cfg)?, cfg))) {
        Ok((tv, ti, cfg)) => {
            order.record(String::new, (tv.p_bar - ti.beta_star).max(0.0));
            match bellman_residual(&tv, &cfg) {
                Ok(r) => bellman.record(String::new, r),
                Err(e) => bellman.fail(String::new(), e),
            }
        }
        Err(e) => order.fail(path.display().to_string(), e),
    }
    vec![load, order, bellman]
}

pub fn run(a: &VerifyArgs, seed: u64, sink: &Sink) -> Result<ExitCode> {
    let mut checks = Vec::new();
    if a.entropy {
        checks.push(entropy(a.trials, seed));
    }
    if let Some(p) = &a.table {
        checks.extend(table(p, &a.trans));
    }
    if checks.is_empty() {
        checks = battery(a.trials, seed);
    }
    let mut csv = String::from("check,status,trials,worst_residual,tolerance\n");
    let mut ok = true;
    for c in &checks {
        let pass = c.failures.is_empty();
        ok &= pass;
        csv.push_str(&format!(
            "{},{},{},{:e},{:e}\n",
            c.name,
            if pass { "pass" } else { "fail" },
            c.trials,
            c.worst,
            c.tol
        ));
        for f in &c.failures {
            eprintln!("{}: {f}", c.name);
        }
    }
    sink.write(csv.as_bytes())?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
