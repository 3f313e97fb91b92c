use aoi_coopt::index::GammaTable;
use aoi_coopt::instances::{self, rng};
use aoi_coopt::model::{SourceConfig, TransmissionModel};
use aoi_coopt::multi::dual_ascent;
use aoi_coopt::oracle::exhaustive_single_source;
use aoi_coopt::tifl::solve_tifl_with;
use aoi_coopt::tvfl::solve_tvfl_with;
use aoi_coopt::Exec;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn jakes(buffer: usize, alpha: f64) -> SourceConfig {
    let table = instances::paper_single_table(buffer, instances::PAPER_DELTA_BOUND).unwrap();
    SourceConfig::new(table, TransmissionModel::deterministic(alpha, buffer).unwrap()).unwrap()
}

fn gamma_table(c: &mut Criterion) {
    let cfg = jakes(10, 0.3);
    let mut g = c.benchmark_group("gamma_table");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| GammaTable::build_with(&cfg.table, &cfg.trans, black_box(exec)).unwrap()));
    }
    g.finish();
}

fn single_source(c: &mut Criterion) {
    let cfg = jakes(10, 0.3);
    let gamma = GammaTable::build(&cfg.table, &cfg.trans).unwrap();
    let mut g = c.benchmark_group("single_source");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("tifl", name), &exec, |b, &e| b.iter(|| solve_tifl_with(&cfg, &gamma, e).unwrap()));
        g.bench_with_input(BenchmarkId::new("tvfl", name), &exec, |b, &e| b.iter(|| solve_tvfl_with(&cfg, e).unwrap()));
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let cfg = instances::small_deterministic(&mut rng(3));
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| exhaustive_single_source(&cfg, cfg.delta_bound() as u64, exec).unwrap()));
    }
    g.finish();
}

fn multi(c: &mut Criterion) {
    let cfg = instances::paper_multi_config(2, 10, 40).unwrap();
    let mut g = c.benchmark_group("dual_ascent");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| dual_ascent(&cfg, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, gamma_table, single_source, oracle, multi);
criterion_main!(benches);
