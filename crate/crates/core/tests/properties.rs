//! Property tests for metrics, feature scaling, and dataset augmentation.

use proptest::prelude::*;

use c4vqc::data::{augment_rotations, scale_features_with, AngleRange, ClassNames, Dataset, LabeledImage};
use c4vqc::metrics::{classify, compute_metrics};
use c4vqc::symmetry::rotate_flat;

fn signs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { -1.0 }), len)
}

fn image(side: usize) -> impl Strategy<Value = LabeledImage> {
    (prop::collection::vec(0.0..=255.0f64, side * side), prop::bool::ANY)
        .prop_map(move |(p, pos)| LabeledImage::new(side, 1, p, if pos { 1 } else { -1 }).unwrap())
}

proptest! {
    #[test]
    fn metric_identities(pair in (1usize..60).prop_flat_map(|n| (signs(n), signs(n)))) {
        let (preds, labels) = pair;
        let m = compute_metrics(&preds, &labels).unwrap();
        let n = preds.len();
        let count = |p: f64, y: f64| preds.iter().zip(&labels).filter(|(a, b)| **a == p && **b == y).count();
        let (tp, fp, tn, fn_) = (count(1.0, 1.0), count(1.0, -1.0), count(-1.0, -1.0), count(-1.0, 1.0));
        prop_assert_eq!((m.tp, m.fp, m.tn, m.fn_), (tp, fp, tn, fn_));
        prop_assert_eq!(m.count(), n);
        let agree = preds.iter().zip(&labels).filter(|(a, b)| a == b).count();
        prop_assert!((m.accuracy - agree as f64 / n as f64).abs() < 1e-15);
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // F1 as 2tp / (2tp + fp + fn), independent of precision and recall.
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        prop_assert!((m.f1 - f1).abs() < 1e-12);
        prop_assert_eq!(m.undefined, tp + fp == 0 || tp + fn_ == 0);
    }

    #[test]
    fn classify_outputs_signs(v in prop::collection::vec(-2.0..2.0f64, 0..40)) {
        let c = classify(&v);
        for (x, s) in v.iter().zip(&c) {
            prop_assert_eq!(*s, if *x >= 0.0 { 1.0 } else { -1.0 });
        }
        prop_assert_eq!(classify(&c), c);
    }

    #[test]
    fn scaling_commutes_with_rotation(img in (2usize..7).prop_flat_map(image), t in 0usize..4, lo in -4.0..0.0f64, hi in 0.5..4.0f64) {
        let range = AngleRange { lo, hi };
        let a = scale_features_with(&img.rotated(t), &range);
        let b = rotate_flat(&scale_features_with(&img, &range), img.side, t).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rotation_augmentation_is_closed(imgs in prop::collection::vec(image(3), 1..6)) {
        let d = Dataset {
            items: imgs,
            class_names: ClassNames { positive: "a".into(), negative: "b".into() },
        };
        let aug = augment_rotations(&d);
        prop_assert!(aug.len() >= d.len() && aug.len() <= 4 * d.len());
        for x in &aug.items {
            let r = x.rotated(1);
            prop_assert!(aug.items.iter().any(|y| y.pixels == r.pixels && y.label == r.label));
        }
        for x in &d.items {
            prop_assert!(aug.items.iter().any(|y| y.pixels == x.pixels));
        }
    }
}
