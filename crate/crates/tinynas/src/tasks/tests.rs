use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ── generators ───────────────────────────────────────────────────────

#[test]
fn spectrogram_task_is_bit_reproducible() {
    let spec = SpectrogramSpec::new(4, 10, [49, 10, 1], 99);
    let a = gen_synthetic_spectrogram_task(&spec).unwrap();
    let b = gen_synthetic_spectrogram_task(&spec).unwrap();
    assert_eq!(io::encode_classification(&a), io::encode_classification(&b));
}

#[test]
fn nearest_template_oracle_exceeds_ninety_percent() {
    let spec = SpectrogramSpec::new(4, 20, [49, 10, 1], 5);
    let task = gen_synthetic_spectrogram_task(&spec).unwrap();
    assert!(nearest_template_accuracy(&task) > 0.9);
}

#[test]
fn zero_jitter_two_classes_are_perfectly_separable() {
    let mut spec = SpectrogramSpec::new(2, 10, [8, 6, 1], 1);
    spec.jitter = 0.0;
    let task = gen_synthetic_spectrogram_task(&spec).unwrap();
    assert_eq!(nearest_template_accuracy(&task), 1.0);
}

#[test]
fn degenerate_specs_are_rejected() {
    assert!(matches!(
        gen_synthetic_spectrogram_task(&SpectrogramSpec::new(1, 10, [8, 6, 1], 0)),
        Err(TaskError::TooFew { .. })
    ));
    assert!(matches!(
        gen_synthetic_spectrogram_task(&SpectrogramSpec::new(4, 10, [2, 6, 1], 0)),
        Err(TaskError::DegenerateShape(_))
    ));
}

#[test]
fn ad_task_defaults_to_four_ids_with_clean_training_split() {
    let task = gen_synthetic_ad_task(&AdSpec::new(4, 7)).unwrap();
    assert_eq!(task.num_machine_ids, 4);
    assert_eq!(task.train.num_classes, 4);
    // training split is normal-only by construction; every test flag is
    // explicit and both kinds are present
    assert!(task.test.is_anomalous.iter().any(|&a| a));
    assert!(task.test.is_anomalous.iter().any(|&a| !a));
    assert_eq!(task.train.len(), 4 * 40);
}

#[test]
fn zero_perturbation_makes_anomalies_undetectable() {
    let mut spec = AdSpec::new(4, 11);
    spec.perturbation = 0.0;
    spec.test_normal_per_id = 50;
    spec.test_anomalous_per_id = 50;
    let task = gen_synthetic_ad_task(&spec).unwrap();
    // an arbitrary fixed scorer: mean feature energy per sample
    let scores: Vec<f64> = (0..task.test.len())
        .map(|i| task.test.features_of(i).iter().sum::<f64>())
        .collect();
    let auc = auc_roc(&scores, &task.test.is_anomalous).unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc}");
}

// ── accuracy ─────────────────────────────────────────────────────────

#[test]
fn constant_logits_on_balanced_classes_score_one_over_k() {
    // all-equal rows tie-break to class 0, which is a quarter of a
    // balanced 4-class set
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let logits = vec![0.0; 40 * 4];
    assert_eq!(accuracy_from_logits(&logits, &labels, 4), 0.25);
}

#[test]
fn perfect_logits_score_one() {
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let mut logits = vec![0.0; 12 * 3];
    for (i, &l) in labels.iter().enumerate() {
        logits[i * 3 + l] = 5.0;
    }
    assert_eq!(accuracy_from_logits(&logits, &labels, 3), 1.0);
}

#[test]
fn accuracy_matches_hand_count_on_random_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes = 5;
    let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..classes)).collect();
    let logits: Vec<f64> = (0..20 * classes).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut hand = 0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let mut best = 0;
        for k in 1..classes {
            if row[k] > row[best] {
                best = k;
            }
        }
        if best == label {
            hand += 1;
        }
    }
    assert_eq!(
        accuracy_from_logits(&logits, &labels, classes),
        hand as f64 / 20.0
    );
}

// ── anomaly scores ───────────────────────────────────────────────────

#[test]
fn confident_correct_classifier_scores_minus_one() {
    // a huge logit on the true id drives softmax probability to 1
    let logits = vec![200.0, 0.0, 0.0, 0.0];
    let scores = scores_from_logits(&logits, &[0], 4).unwrap();
    assert!((scores[0] + 1.0).abs() < 1e-12);
}

#[test]
fn uniform_classifier_scores_minus_quarter() {
    let logits = vec![0.3; 8]; // two samples, four ids, identical logits
    let scores = scores_from_logits(&logits, &[1, 3], 4).unwrap();
    for s in scores {
        assert!((s + 0.25).abs() < 1e-12);
    }
}

#[test]
fn scores_match_direct_softmax_and_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let classes = 4;
    let n = 10;
    let logits: Vec<f64> = (0..n * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let scores = scores_from_logits(&logits, &ids, classes).unwrap();
    for i in 0..n {
        let row = &logits[i * classes..(i + 1) * classes];
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        let expected = -(row[ids[i]].exp() / denom);
        assert!((scores[i] - expected).abs() < 1e-6);
    }
    // adding a constant to all logits changes nothing
    let shifted: Vec<f64> = logits.iter().map(|v| v + 13.7).collect();
    let scores2 = scores_from_logits(&shifted, &ids, classes).unwrap();
    for (a, b) in scores.iter().zip(&scores2) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn unknown_machine_id_is_rejected() {
    assert!(matches!(
        scores_from_logits(&[0.0; 4], &[4], 4),
        Err(TaskError::UnknownMachineId { id: 4, classes: 4 })
    ));
}

// ── AUC ──────────────────────────────────────────────────────────────

#[test]
fn perfectly_separated_scores_give_auc_one() {
    let scores = [0.1, 0.2, 0.8, 0.9];
    let flags = [false, false, true, true];
    assert_eq!(auc_roc(&scores, &flags).unwrap(), 1.0);
}

#[test]
fn all_equal_scores_give_half() {
    let scores = [0.5; 6];
    let flags = [true, false, true, false, true, false];
    assert_eq!(auc_roc(&scores, &flags).unwrap(), 0.5);
}

#[test]
fn single_class_input_is_an_error() {
    assert!(matches!(
        auc_roc(&[0.1, 0.2], &[true, true]),
        Err(TaskError::SingleClass)
    ));
}

#[test]
fn rank_based_auc_equals_all_pairs_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = 50;
        // quantized scores so ties actually occur
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(-1.0..1.0f64) * 8.0).round() / 8.0)
            .collect();
        let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let n_pos = flags.iter().filter(|&&a| a).count();
        if n_pos == 0 || n_pos == n {
            continue;
        }
        let exact = auc_roc(&scores, &flags).unwrap();
        let ranked = auc_midrank(&scores, &flags, n_pos, n - n_pos);
        assert!((exact - ranked).abs() < 1e-9, "{exact} vs {ranked}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn auc_invariant_under_increasing_transform(
        raw in proptest::collection::vec((-50i32..50, any::<bool>()), 4..40)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 10.0).collect();
        let flags: Vec<bool> = raw.iter().map(|(_, a)| *a).collect();
        prop_assume!(flags.iter().any(|&a| a) && flags.iter().any(|&a| !a));
        let base = auc_roc(&scores, &flags).unwrap();
        // strictly increasing transforms preserve order, hence AUC
        let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0 * s).collect();
        let transformed = auc_roc(&warped, &flags).unwrap();
        prop_assert!((base - transformed).abs() < 1e-12);
        // negation flips it
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let flipped = auc_roc(&negated, &flags).unwrap();
        prop_assert!((base - (1.0 - flipped)).abs() < 1e-12);
    }
}

// ── containers ───────────────────────────────────────────────────────

#[test]
fn classification_container_round_trips() {
    let task = gen_synthetic_spectrogram_task(&SpectrogramSpec::new(3, 6, [9, 5, 1], 21)).unwrap();
    let bytes = io::encode_classification(&task);
    let back = io::decode_classification(&bytes).unwrap();
    assert_eq!(back.train, task.train);
    assert_eq!(back.test, task.test);
    assert_eq!(back.templates, task.templates);
    assert!(io::decode_classification(&bytes[..bytes.len() - 1]).is_err());
    assert!(io::decode_anomaly(&bytes).is_err());
}

#[test]
fn anomaly_container_round_trips() {
    let task = gen_synthetic_ad_task(&AdSpec::new(3, 31)).unwrap();
    let bytes = io::encode_anomaly(&task);
    let back = io::decode_anomaly(&bytes).unwrap();
    assert_eq!(back.train, task.train);
    assert_eq!(back.test, task.test);
    assert_eq!(back.num_machine_ids, task.num_machine_ids);
}

#[test]
fn scores_csv_has_expected_layout() {
    let csv = io::scores_to_csv(&[-0.9, -0.1], &[false, true]);
    assert_eq!(csv, "sample_id,score,is_anomalous\n0,-0.9,0\n1,-0.1,1\n");
}
