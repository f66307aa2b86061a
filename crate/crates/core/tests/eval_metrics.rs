mod common;

use std::collections::HashMap;

use mbsense::channel::{generate_dataset, SimConfig, Split};
use mbsense::eval::{
    argmax, average_accuracy, confusion_from_predictions, confusion_matrix, export_latents, ConfusionMatrix,
};
use mbsense::fusion::{build_model, ModelDims, ModelSpec, Variant};
use mbsense::seed::rng;
use mbsense::train::prepare;
use proptest::prelude::*;
use rand::Rng;

fn column_sums(cm: &ConfusionMatrix) -> Vec<f64> {
    let n = cm.n_classes();
    (0..n).map(|j| (0..n).map(|i| cm.get(i, j)).sum()).collect()
}

#[test]
fn perfect_classifier_gives_identity() {
    let truth: Vec<usize> = (0..40).map(|i| i % 8).collect();
    let cm = confusion_from_predictions(&truth, &truth, 8, None).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            assert_eq!(cm.get(i, j), if i == j { 1.0 } else { 0.0 });
        }
    }
    assert_eq!(average_accuracy(&cm), 1.0);
}

#[test]
fn constant_classifier_fills_first_row() {
    let truth: Vec<usize> = (0..40).map(|i| i % 8).collect();
    let cm = confusion_from_predictions(&vec![0; 40], &truth, 8, None).unwrap();
    assert!((0..8).all(|j| cm.get(0, j) == 1.0));
    assert!((1..8).all(|i| (0..8).all(|j| cm.get(i, j) == 0.0)));
    assert_eq!(average_accuracy(&cm), 0.125);
}

#[test]
fn uniform_matrix_of_eight_classes_scores_one_eighth() {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for j in 0..8 {
        for i in 0..8 {
            pred.push(i);
            truth.push(j);
        }
    }
    let cm = confusion_from_predictions(&pred, &truth, 8, None).unwrap();
    assert!(cm.values.iter().flatten().all(|&v| v == 0.125));
    assert_eq!(average_accuracy(&cm), 0.125);
}

#[test]
fn matches_tally_oracle_on_random_predictions() {
    let mut r = rng(2024);
    let n = 8;
    let pred: Vec<usize> = (0..1000).map(|_| r.random_range(0..n)).collect();
    let truth: Vec<usize> = (0..1000).map(|_| r.random_range(0..n)).collect();
    let cm = confusion_from_predictions(&pred, &truth, n, None).unwrap();
    let mut pairs: HashMap<(usize, usize), u32> = HashMap::new();
    let mut per_truth: HashMap<usize, u32> = HashMap::new();
    for k in 0..1000 {
        *pairs.entry((pred[k], truth[k])).or_default() += 1;
        *per_truth.entry(truth[k]).or_default() += 1;
    }
    for i in 0..n {
        for j in 0..n {
            let want = f64::from(*pairs.get(&(i, j)).unwrap_or(&0)) / f64::from(per_truth[&j]);
            assert_eq!(cm.get(i, j), want);
        }
    }
    for (j, s) in column_sums(&cm).into_iter().enumerate() {
        assert!((s - 1.0).abs() < 1e-9, "column {j} sums to {s}");
    }
    let diag: f64 = (0..n).map(|j| cm.get(j, j)).sum::<f64>() / n as f64;
    assert_eq!(average_accuracy(&cm), diag);
}

#[test]
fn empty_class_column_is_flagged_and_excluded() {
    let cm = confusion_from_predictions(&[0, 1, 1], &[0, 1, 0], 3, None).unwrap();
    assert_eq!(cm.undefined_classes(), vec![2]);
    assert!((0..3).all(|i| cm.get(i, 2) == 0.0));
    assert_eq!(average_accuracy(&cm), 0.75);
    assert!(average_accuracy(&confusion_from_predictions(&[], &[], 2, None).unwrap()).is_nan());
}

#[test]
fn rejects_bad_input() {
    assert!(confusion_from_predictions(&[0], &[0, 1], 2, None).is_err());
    assert!(confusion_from_predictions(&[2], &[0], 2, None).is_err());
    assert!(confusion_from_predictions(&[0], &[0], 2, Some(vec!["a".into()])).is_err());
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[0.2f64, 0.5, 0.5, 0.1]), 1);
    assert_eq!(argmax(&[1.0f32; 5]), 0);
    assert_eq!(argmax(&[f64::NAN, 0.0, -1.0]), 1);
}

#[test]
fn csv_and_sidecar_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cm = confusion_from_predictions(&[0, 1, 1, 0], &[0, 1, 0, 0], 2, Some(vec!["sit".into(), "stand".into()]))
        .unwrap();
    cm.write(dir.path(), "confusion").unwrap();
    let csv = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "predicted\\true,sit,stand");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("sit,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("confusion.json")).unwrap()).unwrap();
    assert_eq!(json["support"], serde_json::json!([3, 1]));
    let acc = json["average_accuracy"].as_f64().unwrap();
    assert!((acc - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn columns_are_stochastic(
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..300),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = confusion_from_predictions(&pred, &truth, 6, None).unwrap();
        for (j, s) in column_sums(&cm).into_iter().enumerate() {
            if cm.is_defined(j) {
                prop_assert!((s - 1.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }
        prop_assert!(cm.values.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn accuracy_is_invariant_under_relabeling(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200),
        perm in Just((0usize..5).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let a = average_accuracy(&confusion_from_predictions(&pred, &truth, 5, None).unwrap());
        let pp: Vec<usize> = pred.iter().map(|&i| perm[i]).collect();
        let pt: Vec<usize> = truth.iter().map(|&j| perm[j]).collect();
        let cm = confusion_from_predictions(&pp, &pt, 5, None).unwrap();
        let b = average_accuracy(&cm);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn argmax_ignores_increasing_transforms(
        logits in prop::collection::vec(-20.0f64..20.0, 1..16),
        scale in 0.01f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let k = argmax(&logits);
        let affine: Vec<f64> = logits.iter().map(|u| scale * u + shift).collect();
        let cubed: Vec<f64> = logits.iter().map(|u| u.powi(3)).collect();
        let expd: Vec<f64> = logits.iter().map(|u| u.exp()).collect();
        prop_assert_eq!(argmax(&affine), k);
        prop_assert_eq!(argmax(&cubed), k);
        prop_assert_eq!(argmax(&expd), k);
    }
}

#[test]
fn model_confusion_matrix_and_latent_export() {
    let setup = SimConfig::default().build_setup(8).unwrap();
    let ds = generate_dataset(&setup, 3, 1.0, 5, Split::Test).unwrap();
    let stats = mbsense::calib::fit_calib_stats(&ds).unwrap();
    let data = prepare(&ds, &stats).unwrap();
    let spec = ModelSpec::new(Variant::GranularityMatching, ModelDims::default());
    let mut model = build_model::<f32>(&spec, 1).unwrap();

    let cm = confusion_matrix(&mut model, &data).unwrap();
    assert_eq!(cm.n_classes(), 8);
    assert_eq!(cm.support, vec![3; 8]);
    for s in column_sums(&cm) {
        assert!((s - 1.0).abs() < 1e-9);
    }

    let t1 = export_latents(&mut model, &data).unwrap();
    let t2 = export_latents(&mut model, &data).unwrap();
    assert_eq!(t1.rows.len(), 24);
    let csv = t1.to_csv();
    assert_eq!(csv, t2.to_csv());
    for line in csv.lines() {
        assert_eq!(line.split(',').count(), 25);
    }
    assert!(csv.lines().next().unwrap().ends_with("f23,label"));
}
