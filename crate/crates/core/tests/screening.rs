use molham::encoders::EncoderConfig;
use molham::oracle::{bundled_corpus, label_molecule, Dataset};
use molham::screening::{bench_pipelines, classify_by_gap, default_thresholds, write_rows_csv, ScreenError};
use molham::training::{Model, ModelConfig};
use proptest::prelude::*;

#[test]
fn default_thresholds_are_the_published_grid() {
    let th = default_thresholds();
    assert_eq!(th, vec![0.26, 0.28, 0.30, 0.32, 0.34, 0.36]);
    assert!(th.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn hand_fixture_confusion_counts() {
    let pred = [0.20, 0.29, 0.31, 0.35, 0.27, 0.40];
    let truth = [0.25, 0.31, 0.28, 0.36, 0.33, 0.27];
    let rows = classify_by_gap(&pred, &truth, &[0.30]).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    // pred > 0.30: {2, 3, 5}; truth > 0.30: {1, 3, 4}
    assert_eq!((r.tp, r.fp, r.tn, r.fn_), (1, 2, 1, 2));
    assert_eq!(r.accuracy, 2.0 / 6.0);
    assert_eq!(r.recall, 1.0 / 3.0);
    assert_eq!(r.precision, 1.0 / 3.0);

    let rows = classify_by_gap(&pred, &truth, &[0.26, 0.34]).unwrap();
    // at 0.26: pred positives {1,2,3,4,5}, truth positives {1,2,3,4,5}
    assert_eq!((rows[0].tp, rows[0].fp, rows[0].tn, rows[0].fn_), (5, 0, 1, 0));
    assert_eq!(rows[0].accuracy, 1.0);
    // at 0.34: pred {3, 5}, truth {3}
    assert_eq!((rows[1].tp, rows[1].fp, rows[1].tn, rows[1].fn_), (1, 1, 4, 0));
    assert_eq!(rows[1].precision, 0.5);
    assert_eq!(rows[1].recall, 1.0);
}

#[test]
fn boundaries_and_errors() {
    let gaps = [0.5, 1.0, 2.0];
    for r in classify_by_gap(&gaps, &gaps, &default_thresholds()).unwrap() {
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.recall, 1.0);
    }
    let r = &classify_by_gap(&gaps, &gaps, &[0.1]).unwrap()[0];
    assert_eq!((r.tp, r.recall, r.accuracy), (3, 1.0, 1.0));
    // nothing positive: ratios with empty denominators are 0
    let r = &classify_by_gap(&gaps, &gaps, &[5.0]).unwrap()[0];
    assert_eq!((r.tn, r.recall, r.precision, r.accuracy), (3, 0.0, 0.0, 1.0));
    // a gap equal to the threshold is negative
    let r = &classify_by_gap(&[0.3], &[0.3], &[0.3]).unwrap()[0];
    assert_eq!(r.tn, 1);

    assert!(matches!(classify_by_gap(&gaps, &gaps, &[]), Err(ScreenError::EmptyThresholds)));
    assert!(matches!(
        classify_by_gap(&gaps, &gaps[..2], &[0.3]),
        Err(ScreenError::LengthMismatch { pred: 3, truth: 2 })
    ));
}

#[test]
fn csv_uses_plain_column_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("screen.csv");
    let rows = classify_by_gap(&[0.1, 0.5], &[0.2, 0.4], &[0.3]).unwrap();
    write_rows_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "threshold_ev,tp,fp,tn,fn,accuracy,recall,precision");
    assert_eq!(lines.next().unwrap(), "0.3,1,0,1,0,1,1,1");
}

proptest! {
    #[test]
    fn counts_are_exhaustive_and_monotone(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40),
        mut th in prop::collection::vec(0.0f64..1.0, 1..10),
    ) {
        th.sort_by(f64::total_cmp);
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let rows = classify_by_gap(&pred, &truth, &th).unwrap();
        for r in &rows {
            prop_assert_eq!(r.tp + r.fp + r.tn + r.fn_, pred.len());
            prop_assert!((0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.recall));
        }
        // raising the threshold never adds positives
        for w in rows.windows(2) {
            prop_assert!(w[1].tp + w[1].fp <= w[0].tp + w[0].fp);
            prop_assert!(w[1].tp + w[1].fn_ <= w[0].tp + w[0].fn_);
        }
    }
}

#[test]
fn bench_reports_every_path_without_embedding_in_the_smiles_path() {
    let corpus = bundled_corpus();
    let records: Vec<_> = corpus
        .iter()
        .enumerate()
        .filter_map(|(i, s)| label_molecule(i, s, 0).ok())
        .take(5)
        .collect();
    let ds = Dataset::new(records);
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            d: 8,
            ..EncoderConfig::default()
        },
        ..ModelConfig::default()
    };
    let model = Model::new(&cfg, 1);
    let t = bench_pipelines(&model, &ds, 3).unwrap();
    assert_eq!(t.repeat, 3);
    assert_eq!(t.molecules, 5);
    assert_eq!(t.smiles_only_embed_calls, 0);
    for p in [&t.smiles_only, &t.geometry, &t.reference] {
        assert_eq!(p.samples.len(), 3);
        let mut s = p.samples.clone();
        s.sort_by(f64::total_cmp);
        assert_eq!(p.median, s[1]);
        assert!(p.median > 0.0);
    }
}
