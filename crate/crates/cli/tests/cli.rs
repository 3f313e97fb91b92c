use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aoi-coopt"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line:?}"))
        .parse()
        .unwrap()
}

fn jakes(dir: &Path) {
    let o = run(
        dir,
        &[
            "errgen", "jakes", "--b", "1", "--v", "15", "--fc", "2e9", "--ts", "1e-3", "--sigma2", "1e-6", "--B", "10",
            "--delta-bound", "50", "--out", "t.csv",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn errgen_shapes_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    jakes(dir.path());
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 52);
    assert_eq!(rows[0].split(',').count(), 11);

    let o = run(dir.path(), &["errgen", "constant", "--c", "2.5", "--B", "3", "--delta-bound", "5", "--out", "-"]);
    assert!(o.status.success());
    for line in stdout(&o).lines().filter(|l| !l.starts_with('#')).skip(1) {
        assert!(line.split(',').skip(1).all(|v| v == "2.5"), "{line}");
    }

    let o = run(dir.path(), &["errgen", "jakes", "--sigma2", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["errgen", "jakes", "--out", "missing/dir/t.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_and_simulate_single_source() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    jakes(d);
    let ti = run(d, &["solve", "tifl", "--table", "t.csv", "--trans", "det:alpha=0.2", "--out", "ti.json"]);
    assert!(ti.status.success());
    let tv = run(d, &["solve", "tvfl", "--table", "t.csv", "--trans", "det:alpha=0.2", "--out", "tv.json"]);
    assert!(tv.status.success());
    let beta = field(stdout(&ti).trim(), "beta_star");
    let p_bar = field(stdout(&tv).trim(), "p_bar");
    assert!(p_bar <= beta + 1e-12);
    let policy: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ti.json")).unwrap()).unwrap();
    for key in ["l_star", "b_star", "beta_star", "beta_grid"] {
        assert!(policy.get(key).is_some(), "{key}");
    }

    let sim = run(
        d,
        &["simulate", "--policy", "tvfl", "--policy-file", "tv.json", "--table", "t.csv", "--horizon", "5000", "--events", "ev.csv"],
    );
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let out = stdout(&sim);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "tvfl");
    assert!((row[3].parse::<f64>().unwrap() - p_bar).abs() < 1e-9);
    assert!(std::fs::read_to_string(d.join("ev.csv")).unwrap().starts_with("source,send,deliver"));

    let o = run(d, &["solve", "tifl", "--table", "absent.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_multi_prints_a_price() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["errgen", "linear", "--slope", "0.1", "--B", "2", "--delta-bound", "10", "--out", "s.csv"]).status.success());
    let cfg = r#"{"N": 1, "sources": [{"B": 2, "table": "s.csv", "delta_bound": 10}, {"B": 1, "table": "s.csv", "delta_bound": 10}],
                 "dual": {"beta": 0.01, "theta": 0.0001, "lambda0": 0}}"#;
    std::fs::write(d.join("m.json"), cfg).unwrap();
    let o = run(d, &["solve", "multi", "--config", "m.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(field(stdout(&o).trim(), "lambda_star") >= 0.0);
    let o = run(d, &["simulate", "--policy", "maf:l=1", "--config", "m.json", "--horizon", "1000"]);
    assert!(o.status.success());
}

#[test]
fn sweep_alpha_shape_and_stdout_identity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "sweep", "alpha", "--from", "0.05", "--to", "1.0", "--steps", "20", "--policies",
        "tifl,tvfl,zero-wait:l=1,periodic:tp=4,l=1", "--B", "4", "--delta-bound", "30", "--horizon", "3000", "--seed", "5",
    ];
    let mut to_file = args.to_vec();
    to_file.extend(["--out", "a.csv"]);
    assert!(run(d, &to_file).status.success());
    let file = std::fs::read(d.join("a.csv")).unwrap();
    let mut to_stdout = args.to_vec();
    to_stdout.extend(["--out", "-"]);
    let piped = run(d, &to_stdout);
    assert_eq!(piped.stdout, file);

    let text = String::from_utf8(file).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("policy,param,horizon,seed,avg_error,normalized_error,utilization"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 80);
    assert!(rows[0].starts_with("tifl,0.05,3000,5,"));
    assert!(rows[79].starts_with("\"periodic:tp=4,l=1\",1,"));

    let threads = bin().current_dir(d).env("AOI_COOPT_THREADS", "1").args(&to_stdout).output().unwrap();
    assert_eq!(threads.stdout, piped.stdout);
}

#[test]
fn sweep_buffer_curves() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "buffer", "--from", "1", "--to", "6", "--delta-bound", "40", "--horizon", "5000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let series = |name: &str| -> Vec<f64> {
        text.lines()
            .filter(|l| l.starts_with(&format!("{name},")))
            .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
            .collect()
    };
    for name in ["tifl", "tvfl"] {
        let s = series(name);
        assert_eq!(s.len(), 6);
        assert!(s.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{name}: {s:?}");
    }
    let zw = series("zero-wait:l=1");
    assert!(zw.windows(2).all(|w| w[0] == w[1]));

    let bad = run(dir.path(), &["sweep", "buffer", "--from", "2", "--to", "4", "--policies", "zero-wait:l=3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_scale_gap_is_non_negative() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["sweep", "scale", "--from", "1", "--to", "2", "--policies", "netgain,lowerbound", "--delta-bound", "30", "--horizon", "4000"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<String>> =
        stdout(&o).lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 4);
    for pair in rows.chunks(2) {
        let (ng, lb): (f64, f64) = (pair[0][4].parse().unwrap(), pair[1][4].parse().unwrap());
        assert_eq!((pair[0][0].as_str(), pair[1][0].as_str()), ("netgain", "lowerbound"));
        assert!(ng >= lb, "{ng} < {lb}");
    }
}

#[test]
fn verify_suites_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["verify", "--trials", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().skip(1).filter(|l| l.contains(",pass,")).count(), 4);

    let o = run(d, &["verify", "--entropy", "--trials", "50"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("entropy,pass,50,"));

    std::fs::write(d.join("bad.csv"), "delta,l=1\n0,1\n1,NaN\n2,3\n").unwrap();
    let o = run(d, &["verify", "--table", "bad.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));

    assert_eq!(run(d, &["verify", "--format", "json"]).status.code(), Some(2));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(2));
}
