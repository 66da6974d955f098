use proptest::prelude::*;
use voxelgate_core::metrics::{
    confusion_counts, dice, tversky_index, tversky_loss, CaseMetrics, ConfusionCounts, MetricsReport, TverskyWeights,
    DEFAULT_SMOOTH,
};
use voxelgate_core::{Error, LabelVolume};

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u32..10_000, 0u32..10_000, 0u32..10_000).prop_map(|(a, b, c)| ConfusionCounts::new(a as f64, b as f64, c as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn symmetric_tversky_is_dice(c in counts()) {
        let w = TverskyWeights::new(0.5, 0.5).unwrap();
        prop_assert_eq!(tversky_index(c, w, DEFAULT_SMOOTH), dice(c, DEFAULT_SMOOTH));
    }

    #[test]
    fn loss_is_one_minus_index(c in counts()) {
        let w = TverskyWeights::default();
        prop_assert_eq!(tversky_loss(c, w, DEFAULT_SMOOTH), 1.0 - tversky_index(c, w, DEFAULT_SMOOTH));
    }

    #[test]
    fn scores_lie_in_unit_interval(c in counts()) {
        let w = TverskyWeights::default();
        for v in [dice(c, DEFAULT_SMOOTH), tversky_index(c, w, DEFAULT_SMOOTH)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn more_errors_never_raise_the_index(c in counts(), extra in 1u32..500) {
        let w = TverskyWeights::default();
        let base = tversky_index(c, w, DEFAULT_SMOOTH);
        let more_fn = ConfusionCounts::new(c.tp, c.fn_ + extra as f64, c.fp);
        let more_fp = ConfusionCounts::new(c.tp, c.fn_, c.fp + extra as f64);
        prop_assert!(tversky_index(more_fn, w, DEFAULT_SMOOTH) <= base);
        prop_assert!(tversky_index(more_fp, w, DEFAULT_SMOOTH) <= base);
        let more_tp = ConfusionCounts::new(c.tp + extra as f64, c.fn_, c.fp);
        prop_assert!(tversky_index(more_tp, w, DEFAULT_SMOOTH) >= base);
    }

    #[test]
    fn missed_voxels_cost_more_than_false_alarms(tp in 1u32..5000, a in 0u32..5000, b in 0u32..5000) {
        prop_assume!(a != b);
        let w = TverskyWeights::default();
        let (hi, lo) = (a.max(b) as f64, a.min(b) as f64);
        let fn_heavy = ConfusionCounts::new(tp as f64, hi, lo);
        let fp_heavy = ConfusionCounts::new(tp as f64, lo, hi);
        prop_assert!(tversky_loss(fn_heavy, w, DEFAULT_SMOOTH) > tversky_loss(fp_heavy, w, DEFAULT_SMOOTH));
    }
}

#[test]
fn reported_pairs_are_complements() {
    for (ti, tl) in [(0.9562, 0.0438), (0.9864, 0.0136)] {
        // a count triple realizing the index exactly, pushed through the loss
        let tp = ti * 1e6;
        let c = ConfusionCounts::new(tp, (tp / ti - tp) / 0.7, 0.0);
        let w = TverskyWeights::default();
        assert!((tversky_index(c, w, 0.0) - ti).abs() < 1e-9);
        assert!((tversky_loss(c, w, 0.0) - tl).abs() < 1e-4);
    }
}

#[test]
fn spot_values() {
    let w = TverskyWeights::default();
    assert_eq!(dice(ConfusionCounts::new(0.0, 0.0, 0.0), 1e-6), 1.0);
    assert!((dice(ConfusionCounts::new(50.0, 50.0, 0.0), 0.0) - 2.0 / 3.0).abs() < 1e-15);
    assert!((tversky_index(ConfusionCounts::new(50.0, 50.0, 0.0), w, 0.0) - 50.0 / 85.0).abs() < 1e-15);
    assert!((tversky_index(ConfusionCounts::new(50.0, 0.0, 50.0), w, 0.0) - 50.0 / 65.0).abs() < 1e-15);
}

#[test]
fn counts_and_report_from_volumes() {
    let truth = LabelVolume::new([1, 2, 3], vec![0, 1, 1, 2, 3, 3]).unwrap();
    let pred = LabelVolume::new([1, 2, 3], vec![0, 1, 2, 2, 3, 0]).unwrap();
    let c = confusion_counts(&pred, &truth, 1).unwrap();
    assert_eq!((c.tp, c.fn_, c.fp), (1.0, 1.0, 0.0));
    let m = CaseMetrics::compute("a", &truth, &truth, TverskyWeights::default(), DEFAULT_SMOOTH).unwrap();
    assert_eq!(m.mean_dice(), 1.0);
    let report = MetricsReport::from_cases(&[m], TverskyWeights::default(), DEFAULT_SMOOTH).unwrap();
    assert_eq!(report.mean_dice, 1.0);
    assert_eq!(report.mean_tversky_loss, 0.0);
    assert_eq!(
        MetricsReport::from_cases(&[], TverskyWeights::default(), DEFAULT_SMOOTH),
        Err(Error::EmptyDataset)
    );
    let bad = LabelVolume::new([1, 2, 3], vec![0, 1, 1, 2, 3, 7]).unwrap();
    assert_eq!(confusion_counts(&bad, &truth, 1), Err(Error::LabelOutOfRange(7)));
}
