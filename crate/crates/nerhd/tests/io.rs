use std::path::{Path, PathBuf};

use nerhd::io::{self, IoError};
use nerhd_core::predict::PredictorSet;
use nerhd_core::sim::{MetricsTable, PredictorMetrics, RmseMetrics};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_fixture_pair_reads() {
    let ds = io::read_unit_csv(&fixture("units.csv"), &fixture("areas.csv")).unwrap();
    assert_eq!(ds.areas.len(), 2);
    assert_eq!(ds.p, 1);
    assert_eq!(ds.units.len(), 4);
    assert!(ds.units.iter().all(|u| u.k == 1.0));
    assert!(ds.areas.iter().all(|a| a.h == 1.0 && a.sample_size == 2));
    assert_eq!(ds.areas[0].pop_size, 120);
}

#[test]
fn multiplier_columns_are_read() {
    let dir = tempfile::tempdir().unwrap();
    let u = write(dir.path(), "u.csv", "area_id,y,x1,k\na,1,2,0.5\na,2,3,\nb,3,4,2\n");
    let a = write(dir.path(), "a.csv", "area_id,N,Xbar1,h\na,10,2.5,3\nb,5,4,\n");
    let ds = io::read_unit_csv(&u, &a).unwrap();
    let k: Vec<f64> = ds.units.iter().map(|u| u.k).collect();
    assert_eq!(k, vec![0.5, 1.0, 2.0]);
    assert_eq!(ds.areas[0].h, 3.0);
    assert_eq!(ds.areas[1].h, 1.0);
}

#[test]
fn non_numeric_response_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let u = write(dir.path(), "u.csv", "area_id,y,x1\na,1,2\na,oops,3\nb,3,4\n");
    let a = write(dir.path(), "a.csv", "area_id,N,Xbar1\na,10,2.5\nb,5,4\n");
    match io::read_unit_csv(&u, &a) {
        Err(IoError::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("oops"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn validation_failures_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let u = write(dir.path(), "u.csv", "area_id,y,x1,k\na,1,2,0\na,2,3,1\nb,3,4,1\nc,1,1,1\n");
    let a = write(dir.path(), "a.csv", "area_id,N,Xbar1\na,10,2.5\nb,5,4\n");
    match io::read_unit_csv(&u, &a) {
        Err(IoError::Invalid(v)) => {
            let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            assert!(text.iter().any(|t| t.contains("unit 0") && t.contains("k")), "{text:?}");
            assert!(text.iter().any(|t| t.contains("area c")), "{text:?}");
        }
        other => panic!("expected validation errors, got {other:?}"),
    }
}

#[test]
fn mismatched_mean_columns_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let u = write(dir.path(), "u.csv", "area_id,y,x1,x2\na,1,2,3\nb,3,4,5\n");
    let a = write(dir.path(), "a.csv", "area_id,N,Xbar1\na,10,2.5\nb,5,4\n");
    assert!(matches!(io::read_unit_csv(&u, &a), Err(IoError::Parse { line: 1, .. })));
}

#[test]
fn dataset_and_population_round_trip() {
    use nerhd_core::sim::{generate_population, ScenarioConfig, ScenarioKind};
    let cfg = ScenarioConfig { kind: ScenarioKind::SBeta0, m: 4, pop_size: 20, sample_size: 5, replicates: 1, seed: 3 };
    let pop = generate_population(&cfg, 0).unwrap().population;
    let dir = tempfile::tempdir().unwrap();
    let pp = dir.path().join("pop.csv");
    io::write_population(std::fs::File::create(&pp).unwrap(), &pop).unwrap();
    let back = io::read_population_csv(&pp).unwrap();
    assert_eq!(back.m(), 4);
    for (a, b) in pop.areas().iter().zip(back.areas()) {
        assert_eq!(a.id, b.id);
        for (x, y) in a.y.iter().zip(&b.y) {
            assert!((x - y).abs() <= 1e-14 * x.abs());
        }
    }

    let mut rng = nerhd_core::rng::rng_for(3, 0, 0);
    let ds = pop.draw_sample(5, &mut rng).unwrap().to_dataset();
    let (u, a) = (dir.path().join("u.csv"), dir.path().join("a.csv"));
    io::write_dataset(std::fs::File::create(&u).unwrap(), std::fs::File::create(&a).unwrap(), &ds).unwrap();
    let back = io::read_unit_csv(&u, &a).unwrap();
    assert_eq!(back.units.len(), ds.units.len());
    assert_eq!(back.areas.len(), 4);
}

fn rounded(v: f64) -> f64 {
    io::fmt_num(v).parse().unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1e-3..1e-3f64, (-300i32..300).prop_map(|e| 1.234_567_890_123_456_7 * 10f64.powi(e))]
}

fn predictor_set(m: usize) -> impl Strategy<Value = PredictorSet> {
    (
        prop::collection::vec(finite(), m * 9),
        any::<bool>(),
    )
        .prop_map(move |(v, with_mle)| {
            let col = |k: usize| v[k * m..(k + 1) * m].to_vec();
            PredictorSet {
                area_ids: (0..m).map(|i| format!("area {i}")).collect(),
                direct: col(0),
                eblup_bhf: col(1),
                ebp: col(2),
                ebp_mle: with_mle.then(|| col(3)),
                ebp_finite: col(4),
                mq_synth: col(5),
                mqcd: col(6),
                b_bhf: col(7),
                b_gee: col(8),
                b_mle: with_mle.then(|| col(8)),
            }
        })
}

fn round_set(s: &PredictorSet) -> PredictorSet {
    let r = |v: &Vec<f64>| v.iter().map(|x| rounded(*x)).collect::<Vec<_>>();
    PredictorSet {
        area_ids: s.area_ids.clone(),
        direct: r(&s.direct),
        eblup_bhf: r(&s.eblup_bhf),
        ebp: r(&s.ebp),
        ebp_mle: s.ebp_mle.as_ref().map(r),
        ebp_finite: r(&s.ebp_finite),
        mq_synth: r(&s.mq_synth),
        mqcd: r(&s.mqcd),
        b_bhf: r(&s.b_bhf),
        b_gee: r(&s.b_gee),
        b_mle: s.b_mle.as_ref().map(r),
    }
}

fn metrics_table() -> impl Strategy<Value = MetricsTable> {
    let m = 3;
    (prop::collection::vec(finite(), 30), any::<bool>(), 0usize..1000, 0usize..10).prop_map(move |(v, eff, t, f)| {
        let seg = |k: usize| v[k * m..(k + 1) * m].to_vec();
        MetricsTable {
            predictors: vec![
                PredictorMetrics {
                    name: "eblup".into(),
                    median_arb: v[27],
                    median_rrmse: v[28],
                    median_eff: eff.then_some(v[29]),
                    arb: seg(0),
                    rrmse: seg(1),
                    rmse: seg(2),
                },
                PredictorMetrics {
                    name: "ebp".into(),
                    median_arb: v[0],
                    median_rrmse: v[1],
                    median_eff: None,
                    arb: seg(3),
                    rrmse: seg(4),
                    rmse: seg(5),
                },
            ],
            rmse_estimators: vec![RmseMetrics {
                name: "bootstrap".into(),
                median_rb: v[2],
                median_rrmse: v[3],
                median_coverage: v[4],
                rb: seg(6),
                rrmse: seg(7),
                coverage: seg(8),
            }],
            replicates: t,
            failed: f,
        }
    })
}

fn round_metrics(t: &MetricsTable) -> MetricsTable {
    let r = |v: &Vec<f64>| v.iter().map(|x| rounded(*x)).collect::<Vec<_>>();
    MetricsTable {
        predictors: t
            .predictors
            .iter()
            .map(|p| PredictorMetrics {
                name: p.name.clone(),
                median_arb: rounded(p.median_arb),
                median_rrmse: rounded(p.median_rrmse),
                median_eff: p.median_eff.map(rounded),
                arb: r(&p.arb),
                rrmse: r(&p.rrmse),
                rmse: r(&p.rmse),
            })
            .collect(),
        rmse_estimators: t
            .rmse_estimators
            .iter()
            .map(|e| RmseMetrics {
                name: e.name.clone(),
                median_rb: rounded(e.median_rb),
                median_rrmse: rounded(e.median_rrmse),
                median_coverage: rounded(e.median_coverage),
                rb: r(&e.rb),
                rrmse: r(&e.rrmse),
                coverage: r(&e.coverage),
            })
            .collect(),
        replicates: t.replicates,
        failed: t.failed,
    }
}

proptest! {
    #[test]
    fn predictions_round_trip_at_fifteen_digits(set in (1usize..6).prop_flat_map(predictor_set)) {
        let mut buf = Vec::new();
        io::write_predictions(&mut buf, &set).unwrap();
        let back = io::read_predictions(buf.as_slice()).unwrap();
        prop_assert_eq!(back, round_set(&set));
    }

    #[test]
    fn metrics_round_trip_at_fifteen_digits(table in metrics_table()) {
        let mut buf = Vec::new();
        io::write_metrics(&mut buf, &table).unwrap();
        let back = io::read_metrics(buf.as_slice()).unwrap();
        prop_assert_eq!(back, round_metrics(&table));
    }

    #[test]
    fn rounding_keeps_fifteen_digits(v in finite()) {
        let r = rounded(v);
        prop_assert!((r - v).abs() <= 5e-15 * v.abs());
        prop_assert_eq!(rounded(r), r);
    }
}
