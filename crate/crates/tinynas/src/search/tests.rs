use super::*;
use crate::resources::{discrete_resources, expected_resources, min_selection};
use crate::supernet::{materialize, parse_backbone_config, SupernetModel};
use crate::tasks::{gen_synthetic_spectrogram_task, SpectrogramSpec};
use crate::tensor::{grad_check, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One width decision between a narrow and a wide stem.
const TWO_WIDTH_BACKBONE: &str = r#"{
  "input_shape": [8, 6, 1],
  "layers": [
    {"kind": "Conv2D", "kernel": [3, 3], "stride": 2, "channels": {"options": [4, 8]}}
  ],
  "head": {"classes": 2, "pool": "global"}
}"#;

fn two_class_task(seed: u64) -> crate::tasks::ClassificationTask {
    gen_synthetic_spectrogram_task(&SpectrogramSpec::new(2, 20, [8, 6, 1], seed)).unwrap()
}

// ── relax_decisions ──────────────────────────────────────────────────

#[test]
fn cold_softmax_saturates_to_one_hot() {
    let mut tape = Tape::new();
    let alpha = tape.leaf(vec![10.0, 0.0, 0.0], vec![3], true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = relax_decisions(&mut tape, &[alpha], 0.1, false, &mut rng).unwrap();
    let v = tape.values(z[0]);
    assert!((v[0] - 1.0).abs() < 1e-4);
    assert!(v[1] < 1e-4 && v[2] < 1e-4);
}

#[test]
fn uniform_logits_give_uniform_weights() {
    let mut tape = Tape::new();
    let alpha = tape.leaf(vec![0.7; 4], vec![4], true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = relax_decisions(&mut tape, &[alpha], 2.0, false, &mut rng).unwrap();
    for &v in tape.values(z[0]) {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn relaxation_gradients_match_finite_differences() {
    // d(sum z_k^2)/d alpha, with and without Gumbel noise baked in
    for gumbel in [false, true] {
        let mut tape = Tape::new();
        let alpha = tape.leaf(vec![0.4, -0.3, 0.8], vec![3], true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = relax_decisions(&mut tape, &[alpha], 0.7, gumbel, &mut rng).unwrap();
        let sq = tape.mul(z[0], z[0]).unwrap();
        let loss = tape.sum(sq).unwrap();
        let report = grad_check(&mut tape, loss, &[alpha], 1e-3, 1e-4).unwrap();
        assert!(report.passed, "gumbel={gumbel}: {}", report.max_rel_err);
    }
}

#[test]
fn rows_sum_to_one() {
    let mut tape = Tape::new();
    let alpha = tape.leaf(vec![3.0, -1.0, 0.2, 0.9], vec![4], true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = relax_decisions(&mut tape, &[alpha], 1.3, true, &mut rng).unwrap();
    let sum: f64 = tape.values(z[0]).iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

// ── total_objective ──────────────────────────────────────────────────

fn toy_expected(tape: &mut Tape, size: f64, mem: f64, ops: f64) -> ExpectedHandles {
    ExpectedHandles {
        param_bytes: tape.leaf(vec![size], vec![1], true).unwrap(),
        working_bytes: tape.leaf(vec![mem], vec![1], true).unwrap(),
        ops: tape.leaf(vec![ops], vec![1], true).unwrap(),
    }
}

struct ExpectedHandles {
    param_bytes: crate::tensor::TensorId,
    working_bytes: crate::tensor::TensorId,
    ops: crate::tensor::TensorId,
}

impl ExpectedHandles {
    fn as_expected(&self) -> crate::resources::ExpectedResources {
        crate::resources::ExpectedResources {
            param_bytes: self.param_bytes,
            ops: self.ops,
            working_bytes: self.working_bytes,
        }
    }
}

fn raw_budget(flash: Option<u64>, sram: Option<u64>, ops: Option<u64>) -> Budget {
    // zero overheads so the numbers in tests are the effective limits
    Budget {
        flash_bytes: flash,
        sram_bytes: sram,
        max_ops: ops,
        interpreter_sram_overhead: 0,
        interpreter_flash_overhead: 0,
        persistent_buffer_bytes: 0,
        metadata_flash_overhead: 0,
    }
}

#[test]
fn objective_equals_task_loss_inside_budget() {
    let mut tape = Tape::new();
    let loss = tape.leaf(vec![0.37], vec![1], true).unwrap();
    let handles = toy_expected(&mut tape, 900.0, 800.0, 700.0);
    let budget = raw_budget(Some(1000), Some(1000), Some(1000));
    let obj = total_objective(&mut tape, loss, &handles.as_expected(), &budget, 1.0, 1.0, 1.0)
        .unwrap();
    assert_eq!(tape.scalar_value(obj), 0.37);
}

#[test]
fn hinge_arithmetic_at_twice_the_budget() {
    let mut tape = Tape::new();
    let loss = tape.leaf(vec![0.0], vec![1], true).unwrap();
    let handles = toy_expected(&mut tape, 0.0, 0.0, 2000.0);
    let budget = raw_budget(None, None, Some(1000));
    let obj = total_objective(&mut tape, loss, &handles.as_expected(), &budget, 0.0, 0.0, 1.0)
        .unwrap();
    assert!((tape.scalar_value(obj) - 1.0).abs() < 1e-12);
}

#[test]
fn missing_budget_with_nonzero_lambda_is_an_error() {
    let mut tape = Tape::new();
    let loss = tape.leaf(vec![0.0], vec![1], true).unwrap();
    let handles = toy_expected(&mut tape, 1.0, 1.0, 1.0);
    let budget = raw_budget(None, None, None);
    assert!(matches!(
        total_objective(&mut tape, loss, &handles.as_expected(), &budget, 0.0, 0.0, 1.0),
        Err(SearchError::MissingBudget { resource: "ops" })
    ));
}

#[test]
fn penalty_gradients_match_finite_differences_away_from_kinks() {
    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let mut tape = Tape::new();
    // strictly over budget so the hinge is active and smooth locally
    let z = vec![tape.leaf(vec![0.3, 0.7], vec![2], true).unwrap()];
    let expected = expected_resources(&mut tape, &sn, &z, 8, 8).unwrap();
    let zero = tape.scalar(0.0).unwrap();
    let budget = raw_budget(Some(50), Some(60), Some(600));
    let obj =
        total_objective(&mut tape, zero, &expected, &budget, 1.0, 1.0, 1.0).unwrap();
    assert!(tape.scalar_value(obj) > 0.0, "fixture must sit above budget");
    let report = grad_check(&mut tape, obj, &z, 1e-5, 1e-4).unwrap();
    assert!(report.passed, "max rel err {}", report.max_rel_err);
}

// ── discretize ───────────────────────────────────────────────────────

#[test]
fn discretize_takes_argmax_with_low_tie_and_shift_invariance() {
    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let pick = |row: Vec<f64>| discretize(&sn, &[row]).option_index("L0.width");
    assert_eq!(pick(vec![0.2, 5.0]), 1);
    // exact tie chooses the narrower option
    assert_eq!(pick(vec![1.5, 1.5]), 0);
    // adding a constant to the row changes nothing
    assert_eq!(pick(vec![0.2, 5.0].iter().map(|v| v + 100.0).collect()), 1);
    assert_eq!(pick(vec![-3.0, -3.0].iter().map(|v| v + 7.0).collect()), 0);
}

// ── train_search ─────────────────────────────────────────────────────

#[test]
fn zero_epochs_change_nothing() {
    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let task = two_class_task(1);
    let mut model = SupernetModel::init(sn, 3);
    let before: Vec<Vec<f64>> = model.params.iter().map(|p| p.values.clone()).collect();
    let config = SearchConfig { epochs: 0, ..SearchConfig::default() };
    let run = train_search(&mut model, &task, &config).unwrap();
    let after: Vec<Vec<f64>> = model.params.iter().map(|p| p.values.clone()).collect();
    assert_eq!(before, after);
    assert_eq!(run.alphas, vec![vec![0.0, 0.0]]);
    assert!(run.history.is_empty());
}

#[test]
fn search_is_bit_deterministic_per_seed() {
    let task = two_class_task(2);
    let run = |seed: u64| {
        let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
        let mut model = SupernetModel::init(sn, seed);
        let config = SearchConfig { epochs: 4, seed, ..SearchConfig::default() };
        train_search(&mut model, &task, &config).unwrap().alphas
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn huge_ops_penalty_selects_the_narrow_width() {
    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let task = two_class_task(3);

    // oracle: both discrete options solve the task equally well
    let probe_model = SupernetModel::init(sn.clone(), 40);
    let ft = FinetuneConfig { epochs: 40, seed: 0, quant_bits: None, ..FinetuneConfig::default() };
    let mut accs = Vec::new();
    let mut op_counts = Vec::new();
    for k in 0..2 {
        let mut sel = min_selection(&sn);
        sel.choices.insert("L0.width".into(), k);
        let (_, outcome) =
            materialize_and_finetune(&probe_model, &sel, &task.train, &task.test, &ft).unwrap();
        accs.push(outcome.accuracy);
        op_counts.push(discrete_resources(&sn, &sel, 8, 8).unwrap().total_ops);
    }
    assert!((accs[0] - accs[1]).abs() < 0.05, "options should tie: {accs:?}");
    assert!(op_counts[0] < op_counts[1]);

    // budget admits only the narrow option; a huge penalty must dominate
    let budget = raw_budget(None, None, Some(op_counts[0] + 1));
    let config = SearchConfig {
        epochs: 10,
        lambda_ops: 1e6,
        budget,
        seed: 5,
        ..SearchConfig::default()
    };
    let mut model = SupernetModel::init(sn.clone(), 41);
    let run = train_search(&mut model, &task, &config).unwrap();
    let selection = discretize(&sn, &run.alphas);
    assert_eq!(selection.option_index("L0.width"), 0, "alphas {:?}", run.alphas);
}

#[test]
fn unpenalized_expected_resources_stay_between_the_extremes() {
    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let task = two_class_task(4);
    let narrow = discrete_resources(&sn, &discretize(&sn, &[vec![1.0, 0.0]]), 8, 8).unwrap();
    let wide = discrete_resources(&sn, &discretize(&sn, &[vec![0.0, 1.0]]), 8, 8).unwrap();
    let mut model = SupernetModel::init(sn, 42);
    let config = SearchConfig { epochs: 5, seed: 6, ..SearchConfig::default() };
    let run = train_search(&mut model, &task, &config).unwrap();
    for log in &run.history {
        assert!(log.expected_ops >= narrow.total_ops as f64 - 1e-9);
        assert!(log.expected_ops <= wide.total_ops as f64 + 1e-9);
        assert!(log.expected_param_bytes >= narrow.param_bytes as f64 - 1e-9);
        assert!(log.expected_param_bytes <= wide.param_bytes as f64 + 1e-9);
    }
}

// ── finetune ─────────────────────────────────────────────────────────

#[test]
fn linearly_separable_task_trains_past_ninety_five_percent() {
    let task = two_class_task(5);

    // logistic-regression oracle on raw pixels reaches perfect accuracy
    let elems = task.train.sample_elems();
    let mut w = vec![0.0f64; elems];
    let mut b = 0.0f64;
    for _ in 0..300 {
        let mut gw = vec![0.0f64; elems];
        let mut gb = 0.0;
        for i in 0..task.train.len() {
            let x = task.train.features_of(i);
            let y = task.train.labels[i] as f64;
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            for (g, &xv) in gw.iter_mut().zip(x) {
                *g += (p - y) * xv;
            }
            gb += p - y;
        }
        let n = task.train.len() as f64;
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= 0.5 * g / n;
        }
        b -= 0.5 * gb / n;
    }
    let oracle_acc = (0..task.test.len())
        .filter(|&i| {
            let x = task.test.features_of(i);
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) as usize == task.test.labels[i]
        })
        .count() as f64
        / task.test.len() as f64;
    assert_eq!(oracle_acc, 1.0, "the generator must stay linearly separable");

    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let model = SupernetModel::init(sn.clone(), 43);
    let sel = crate::resources::max_selection(&sn);
    let ft = FinetuneConfig { epochs: 30, ..FinetuneConfig::default() };
    let (_, outcome) =
        materialize_and_finetune(&model, &sel, &task.train, &task.test, &ft).unwrap();
    assert!(outcome.accuracy > 0.95, "accuracy {}", outcome.accuracy);
}

#[test]
fn refinetuning_a_converged_network_barely_moves_accuracy() {
    let task = two_class_task(6);
    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let model = SupernetModel::init(sn.clone(), 44);
    let sel = crate::resources::max_selection(&sn);
    let mut net = materialize(&model, &sel).unwrap();
    let ft = FinetuneConfig { epochs: 30, ..FinetuneConfig::default() };
    let first = finetune(&mut net, &task.train, &task.test, &ft).unwrap();
    let again = finetune(&mut net, &task.train, &task.test, &ft).unwrap();
    assert!(
        (first.accuracy - again.accuracy).abs() < 0.01,
        "{} vs {}",
        first.accuracy,
        again.accuracy
    );
}

#[test]
fn quantized_and_unquantized_finetune_agree_on_easy_tasks() {
    let task = two_class_task(7);
    let sn = parse_backbone_config(TWO_WIDTH_BACKBONE).unwrap();
    let model = SupernetModel::init(sn.clone(), 45);
    let sel = crate::resources::max_selection(&sn);
    let accuracy_with = |quant_bits: Option<u8>| {
        let ft = FinetuneConfig { epochs: 30, quant_bits, ..FinetuneConfig::default() };
        materialize_and_finetune(&model, &sel, &task.train, &task.test, &ft)
            .unwrap()
            .1
            .accuracy
    };
    let plain = accuracy_with(None);
    let quantized = accuracy_with(Some(8));
    assert!((plain - quantized).abs() < 0.02, "{plain} vs {quantized}");
}

#[test]
fn config_validation_rejects_bad_schedules() {
    let bad_lr = SearchConfig { lr_start: 0.001, lr_end: 0.01, ..SearchConfig::default() };
    assert!(matches!(bad_lr.validate(), Err(SearchError::BadConfig(_))));
    let bad_tau = SearchConfig { tau_start: 0.1, tau_end: 0.5, ..SearchConfig::default() };
    assert!(matches!(bad_tau.validate(), Err(SearchError::BadConfig(_))));
    let bad_lambda = SearchConfig { lambda_ops: -1.0, ..SearchConfig::default() };
    assert!(matches!(bad_lambda.validate(), Err(SearchError::BadConfig(_))));
}
