use aoi_coopt::errmodel::{jakes_autocorr, jakes_error_table, load_csv, save_csv, JakesParams};
use aoi_coopt::instances;
use aoi_coopt::Error;

#[test]
fn paper_table_shape_and_order() {
    let t = instances::paper_single_table(10, 50).unwrap();
    assert_eq!((t.max_len(), t.delta_bound()), (10, 50));
    assert!(t.is_nonincreasing_in_length(1e-12));
    let p = instances::paper_jakes_params(1.0, 15.0).unwrap();
    assert!((p.normalized_doppler() - 0.1000692).abs() < 1e-6);
    assert_eq!(jakes_autocorr(&p, 0), 1.0);
    assert_eq!(jakes_autocorr(&p, 7), jakes_autocorr(&p, -7));
}

#[test]
fn fast_fading_approaches_prior_variance() {
    let p = JakesParams::new(2.0, 400.0, 1e-3, 1e-6).unwrap();
    let t = jakes_error_table(&p, 3, 300).unwrap();
    for l in 1..=3 {
        assert!((t.lookup(300, l) - 2.0).abs() < 1e-2 * 2.0);
    }
}

#[test]
fn files_round_trip_and_reject_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let t = instances::paper_source_type_table(1, 4, 20).unwrap();
    let path = dir.path().join("t.csv");
    save_csv(&t, &path).unwrap();
    assert_eq!(load_csv(&path).unwrap(), t);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "delta,l=1,l=2\n0,0.1,0.2\n1,NaN,0.3\n2,0.4,0.5\n").unwrap();
    assert!(matches!(load_csv(&bad), Err(Error::Table { line: 3, .. })));

    let short = dir.path().join("short.csv");
    std::fs::write(&short, "# delta_bound=5\ndelta,l=1\n0,1\n1,2\n2,3\n").unwrap();
    assert!(matches!(load_csv(&short), Err(Error::Table { .. })));
    assert!(load_csv(dir.path().join("missing.csv")).is_err());
}
