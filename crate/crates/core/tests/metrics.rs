use hieralign::dataio::{generate_synthetic, split_frames, Frame};
use hieralign::hierarchy::SeriesRef;
use hieralign::metrics::{
    dollar_weights, report_metrics, rmsse, rmsse_with, score_hierarchy, wrmsse, ScaleConvention, WeightTable,
};
use hieralign::Error;
use proptest::prelude::*;

#[test]
fn rmsse_fixture() {
    let v = rmsse(&[0.0, 2.0, 0.0, 2.0, 0.0, 2.0], &[2.0, 0.0], &[0.0, 0.0]).unwrap();
    assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn constant_history_has_no_scale() {
    assert!(matches!(rmsse(&[3.0, 3.0, 3.0], &[1.0], &[2.0]), Err(Error::UndefinedScale)));
    assert!(matches!(
        rmsse_with(&[0.0, 0.0, 0.0, 5.0], &[1.0], &[2.0], ScaleConvention::FromFirstNonZero),
        Err(Error::UndefinedScale)
    ));
    assert!(rmsse_with(&[0.0, 0.0, 0.0, 5.0], &[1.0], &[2.0], ScaleConvention::Full).is_ok());
}

#[test]
fn report_metric_signs() {
    let m = report_metrics(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
    assert_eq!((m.mean_error, m.mae, m.rmse), (0.0, 1.0, 1.0));
    let over = report_metrics(&[1.0, 2.0], &[2.0, 3.0]).unwrap();
    assert_eq!(over.mean_error, 1.0);
    let under = report_metrics(&[1.0, 2.0], &[0.5, 1.0]).unwrap();
    assert!(under.mean_error < 0.0);
}

#[test]
fn wrmsse_fixture_and_mismatch() {
    let refs: Vec<SeriesRef> = ["a", "b", "c"]
        .iter()
        .map(|id| SeriesRef {
            level: 1,
            id: id.to_string(),
        })
        .collect();
    let w = WeightTable {
        series: refs.clone(),
        weights: vec![0.5, 0.25, 0.25],
        num_levels: 1,
    };
    let scores: Vec<(SeriesRef, f64)> = refs.iter().cloned().zip([0.4, 0.8, 1.2]).collect();
    assert!((wrmsse(&scores, &w).unwrap() - 0.7).abs() < 1e-12);
    assert!(wrmsse(&scores[..2], &w).is_err());
}

#[test]
fn synthetic_weights_are_level_balanced() {
    let ds = generate_synthetic(2, 15, 3, 200, 0.6).unwrap();
    let w = dollar_weights(&ds, &ds.hierarchy, 28).unwrap();
    let l = ds.hierarchy.num_levels() as f64;
    assert!((w.total() - 1.0).abs() < 1e-9);
    for s in w.level_sums() {
        assert!((s - 1.0 / l).abs() < 1e-9);
    }
    assert!(w.weights.iter().all(|&x| x >= 0.0));
}

#[test]
fn perfect_forecast_scores_zero_everywhere() {
    let ds = generate_synthetic(5, 10, 2, 200, 0.4).unwrap();
    let (train, actual) = split_frames(&ds, Frame::Validation).unwrap();
    let w = dollar_weights(&train, &train.hierarchy, 28).unwrap();
    let r = score_hierarchy(
        &train.hierarchy,
        &train.sales,
        &actual,
        &actual,
        &w,
        ScaleConvention::FromFirstNonZero,
        3,
    )
    .unwrap();
    assert_eq!(r.wrmsse, 0.0);
    assert_eq!(r.levels.len(), 12);
    assert!(r.levels.iter().all(|l| l.wrmsse == 0.0));
    assert!(!r.levels[0].nodes.is_empty());
    assert!(r.levels[11].nodes.is_empty());
}

proptest! {
    #[test]
    fn rmsse_is_scale_invariant(
        train in prop::collection::vec(0.0f64..20.0, 10),
        actual in prop::collection::vec(0.0f64..20.0, 4),
        forecast in prop::collection::vec(0.0f64..20.0, 4),
        c in 0.01f64..100.0,
    ) {
        let base = rmsse_with(&train, &actual, &forecast, ScaleConvention::Full);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let s = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let scaled = rmsse_with(&s(&train), &s(&actual), &s(&forecast), ScaleConvention::Full).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-10 * base.max(1.0));
    }

    #[test]
    fn wrmsse_is_linear(r in prop::collection::vec(0.0f64..3.0, 4), k in 0.0f64..5.0) {
        let refs: Vec<SeriesRef> = (0..4).map(|i| SeriesRef { level: 1 + i / 2, id: i.to_string() }).collect();
        let w = WeightTable { series: refs.clone(), weights: vec![0.2, 0.3, 0.1, 0.4], num_levels: 2 };
        let a: Vec<(SeriesRef, f64)> = refs.iter().cloned().zip(r.iter().copied()).collect();
        let b: Vec<(SeriesRef, f64)> = refs.iter().cloned().zip(r.iter().map(|x| x * k)).collect();
        let wa = wrmsse(&a, &w).unwrap();
        prop_assert!((wrmsse(&b, &w).unwrap() - k * wa).abs() < 1e-12);
    }
}
