use lobqr_core::baselines::{repetitive_predict, ArModel};
use lobqr_core::combine::{combination_mse, combine_with_mode, CombineMode};
use lobqr_core::eval::{coverage, MetricReport, MetricRow};
use lobqr_core::ingest::{chronological_split, make_windows, normalize, read_stream, write_stream, SplitSpec};
use lobqr_core::labeling::{label_stream, ReturnSeries, Side};
use lobqr_core::model::{predict, train, ModelConfig};
use lobqr_core::synthgen::{generate, GenConfig};
use lobqr_core::Network64;

#[test]
fn small_stream_end_to_end() {
    let (window, k) = (10, 20);
    let snaps = generate(&GenConfig { n_events: 6_000, seed: 21, signal_horizon: k, ..GenConfig::default() }).unwrap();

    let mut csv = Vec::new();
    write_stream(&mut csv, &snaps).unwrap();
    let parsed = read_stream(&csv[..], 0.01).unwrap();
    assert_eq!(parsed.snapshots, snaps);

    let norm = normalize(&parsed.snapshots, 300, 1e-8).unwrap();
    let windows = make_windows(&norm, window).unwrap();
    let series = ReturnSeries::new(&snaps, k);
    let labeled = label_stream(&snaps, &series, &windows);
    assert_eq!(labeled.samples.len() + labeled.skipped, windows.len());
    let samples = labeled.samples;
    assert!(samples.windows(2).all(|w| w[0].end_ts_ns < w[1].end_ts_ns));

    let split = chronological_split(samples.len(), &SplitSpec::default(), window + k).unwrap();
    assert!(split.train.end + window + k <= split.validation.start);
    let (tr, va, te) = (&samples[split.train], &samples[split.validation], &samples[split.test]);

    let cfg = ModelConfig {
        window,
        horizon: k,
        channels: 2,
        branch_hidden: 6,
        head_hidden: 4,
        max_epochs: 3,
        patience: 2,
        train_stride: 2,
        seed: 5,
        ..ModelConfig::default()
    };
    let mut net = Network64::build(&cfg).unwrap();
    let outcome = train(&mut net, tr, va).unwrap();
    assert!(!outcome.history.is_empty());
    assert!(outcome.history.iter().all(|r| r.train_loss.is_finite() && r.validation_loss.is_finite()));

    let mut again = Network64::build(&cfg).unwrap();
    train(&mut again, tr, va).unwrap();
    assert_eq!(again, net, "training is deterministic per seed");

    let val_fan = predict(&net, va).unwrap();
    let test_fan = predict(&net, te).unwrap();
    assert_eq!(test_fan.len(), te.len());
    let sorted = test_fan.rearranged();
    assert_eq!(sorted.monotone_fraction(), 1.0);

    let targets = |s: &[lobqr_core::labeling::LabeledSample<'_>]| -> [Vec<f64>; 2] {
        Side::BOTH.map(|d| s.iter().map(|x| x.target.side(d)).collect())
    };
    let (vt, tt) = (targets(va), targets(te));
    let pos = |s: &[lobqr_core::labeling::LabeledSample<'_>]| -> Vec<usize> { s.iter().map(|x| x.end_index()).collect() };
    let (weights, combined) = combine_with_mode(
        CombineMode::Static,
        &val_fan.rearranged(),
        [&vt[0], &vt[1]],
        &pos(va),
        &sorted,
        [&tt[0], &tt[1]],
        &pos(te),
        k,
    )
    .unwrap();
    weights.validate().unwrap();
    let vsorted = val_fan.rearranged();
    for side in Side::BOTH {
        let w = weights.side(side);
        let fitted = combination_mse(vsorted.side(side), &vt[side.index()], w);
        for q in 0..w.len() {
            let mut e = vec![0.0; w.len()];
            e[q] = 1.0;
            assert!(fitted <= combination_mse(vsorted.side(side), &vt[side.index()], &e));
        }
    }

    let rep = repetitive_predict(te);
    let ar = ArModel::fit(tr, 3).unwrap().predict(te);
    let mut report = MetricReport::default();
    for side in Side::BOTH {
        let s = side.index();
        for (name, pred) in [("repetitive", &rep[s]), ("ar", &ar[s]), ("deeplob_qr_c", &combined[s])] {
            let row = MetricRow::score(k, name, side, pred, &rep[s], &tt[s]).unwrap();
            assert!(row.raw.mse >= row.raw.mae * row.raw.mae * (1.0 - 1e-12));
            report.metrics.push(row);
        }
    }
    let cal = coverage(&sorted, [&tt[0], &tt[1]]).unwrap();
    for side in Side::BOTH {
        let c = &cal.side(side).per_tau;
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }
    let doc: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(doc["k20"]["metrics"]["repetitive"]["long"]["normalized_mae"], 1.0);
    assert!(doc.get("trend").is_none());
}
