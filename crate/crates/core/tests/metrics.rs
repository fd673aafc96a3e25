use proptest::prelude::*;
use spine3d::metrics::{class_metrics, confusion, iou_dice, macro_avg_sensitivity, ConfusionMatrix, Metric};
use spine3d::tensor::{Shape, Tensor};

fn labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

fn value(m: Metric) -> f64 {
    m.value().expect("defined")
}

#[test]
fn three_class_hand_matrix() {
    // Rows: truth, columns: prediction.
    let m = ConfusionMatrix::new(labels(3), vec![vec![10, 2, 1], vec![3, 7, 0], vec![0, 4, 8]]).unwrap();
    let c1 = class_metrics(&m, 1).unwrap();
    assert!((value(c1.sensitivity) - 7.0 / 10.0).abs() < 1e-12);
    assert!((value(c1.specificity) - 19.0 / 25.0).abs() < 1e-12);
    assert!((value(c1.precision) - 7.0 / 13.0).abs() < 1e-12);
    assert!((value(c1.npv) - 19.0 / 22.0).abs() < 1e-12);
    assert!((value(c1.accuracy) - 26.0 / 35.0).abs() < 1e-12);
    let macro_sens = (10.0 / 13.0 + 7.0 / 10.0 + 8.0 / 12.0) / 3.0;
    assert!((macro_avg_sensitivity(&m).unwrap() - macro_sens).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dice_is_a_function_of_iou(bits_a in prop::collection::vec(any::<bool>(), 64), bits_b in prop::collection::vec(any::<bool>(), 64), noise in 0.0f64..0.49) {
        let map = |bits: &[bool]| {
            Tensor::new(Shape::hwc(8, 8, 1), bits.iter().map(|&b| if b { 1.0 - noise } else { noise }).collect()).unwrap()
        };
        let (iou, dice) = iou_dice(&map(&bits_a), &map(&bits_b), 0.5).unwrap();
        prop_assert!(iou <= dice + 1e-15);
        prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_every_sample_once(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let m = confusion(&pred, &truth, labels(4)).unwrap();
        prop_assert_eq!(m.total(), pairs.len() as u64);
    }

    #[test]
    fn metrics_ignore_sample_order(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..100), seed in any::<u64>()) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let m = confusion(&pred, &truth, labels(3)).unwrap();
        let mut shuffled = pairs.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let (p2, t2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let m2 = confusion(&p2, &t2, labels(3)).unwrap();
        prop_assert_eq!(&m, &m2);
        for c in 0..3 {
            prop_assert_eq!(class_metrics(&m, c).unwrap(), class_metrics(&m2, c).unwrap());
        }
    }

    #[test]
    fn binary_accuracy_is_shared(tp in 0u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 1u64..50) {
        let m = ConfusionMatrix::from_counts(vec![vec![tp, fn_], vec![fp, tn]]).unwrap();
        let a = class_metrics(&m, 0).unwrap().accuracy;
        let b = class_metrics(&m, 1).unwrap().accuracy;
        prop_assert_eq!(a, b);
        prop_assert!((value(a) - (tp + tn) as f64 / (tp + fn_ + fp + tn) as f64).abs() < 1e-12);
    }
}
