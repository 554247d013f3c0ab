//! The search and training loops.

use super::*;
use crate::resources::{
    check_budget, discrete_resources, expected_resources, ExpectedResources,
};
use crate::supernet::{
    materialize, ArchSelection, DiscreteNet, QuantConfig, QuantState, Supernet, SupernetModel,
};
use crate::tasks::{evaluate_accuracy, ClassificationTask, LabeledDataset};
use crate::tensor::{Tape, TensorId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relax every decision into a weight row `z = softmax((alpha + g) / tau)`
/// with optional Gumbel noise `g`; rows sum to one and are differentiable
/// with respect to the alpha leaves.
pub fn relax_decisions(
    tape: &mut Tape,
    alpha_leaves: &[TensorId],
    tau: f64,
    gumbel_noise: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TensorId>> {
    assert!(tau > 0.0, "temperature must be positive");
    let mut z = Vec::with_capacity(alpha_leaves.len());
    for &alpha in alpha_leaves {
        let k = tape.shape(alpha).elem_count();
        let pre = if gumbel_noise {
            let noise: Vec<f64> = (0..k)
                .map(|_| {
                    let u: f64 = rng.random_range(1e-12..1.0);
                    -(-u.ln()).ln()
                })
                .collect();
            let g = tape.constant(noise, vec![k])?;
            tape.add(alpha, g)?
        } else {
            alpha
        };
        let scaled = tape.scalar_mul(pre, 1.0 / tau)?;
        z.push(tape.softmax(scaled)?);
    }
    Ok(z)
}

/// Task loss plus normalized hinge penalties:
/// `loss + sum_r lambda_r * max(0, R_r / B_r - 1)`.
///
/// Each penalty is exactly zero while its expected resource sits within
/// budget. A positive lambda whose budget limit is absent (or consumed
/// entirely by overheads) is an error.
pub fn total_objective(
    tape: &mut Tape,
    task_loss: TensorId,
    expected: &ExpectedResources,
    budget: &Budget,
    lambda_size: f64,
    lambda_mem: f64,
    lambda_ops: f64,
) -> Result<TensorId> {
    let mut objective = task_loss;
    let terms: [(f64, TensorId, Option<i64>, &'static str); 3] = [
        (lambda_size, expected.param_bytes, budget.effective_flash(), "size"),
        (lambda_mem, expected.working_bytes, budget.effective_sram(), "mem"),
        (
            lambda_ops,
            expected.ops,
            budget.max_ops.map(|b| b.min(i64::MAX as u64) as i64),
            "ops",
        ),
    ];
    for (lambda, resource, limit, name) in terms {
        if lambda == 0.0 {
            continue;
        }
        let limit = match limit {
            Some(b) if b > 0 => b as f64,
            _ => return Err(SearchError::MissingBudget { resource: name }),
        };
        let ratio = tape.scalar_mul(resource, 1.0 / limit)?;
        let excess = tape.add_scalar(ratio, -1.0)?;
        let hinge = tape.max_scalar(excess, 0.0)?;
        let penalty = tape.scalar_mul(hinge, lambda)?;
        objective = tape.add(objective, penalty)?;
    }
    Ok(objective)
}

/// Per-decision argmax; exact ties resolve to the lower-resource option
/// (the earlier index: widths ascend and skip precedes block).
pub fn discretize(supernet: &Supernet, alphas: &[Vec<f64>]) -> ArchSelection {
    ArchSelection::new(
        supernet
            .decisions
            .iter()
            .zip(alphas)
            .map(|(d, row)| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = k;
                    }
                }
                (d.id.clone(), best)
            })
            .collect(),
    )
}

fn cosine_lr(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total <= 1 {
        return lr_start;
    }
    let t = step as f64 / (total - 1) as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}

fn gather_batch(ds: &LabeledDataset, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let elems = ds.sample_elems();
    let mut x = Vec::with_capacity(indices.len() * elems);
    let mut y = Vec::with_capacity(indices.len());
    for &i in indices {
        x.extend_from_slice(ds.features_of(i));
        y.push(ds.labels[i]);
    }
    (x, y)
}

/// Joint gradient descent on network parameters and decision logits.
///
/// Weight decay applies to the network parameters only. Deterministic
/// given the seed; mutates `model` in place and returns the trained
/// decision logits plus per-epoch telemetry.
pub struct SearchRun {
    pub alphas: Vec<Vec<f64>>,
    pub history: Vec<EpochLog>,
}

pub fn train_search(
    model: &mut SupernetModel,
    task: &ClassificationTask,
    config: &SearchConfig,
) -> Result<SearchRun> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut alphas: Vec<Vec<f64>> = model
        .supernet
        .decisions
        .iter()
        .map(|d| d.logits.clone())
        .collect();
    let mut history = Vec::with_capacity(config.epochs);
    let n = task.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let has_budget = [
        config.budget.effective_flash(),
        config.budget.effective_sram(),
        config.budget.max_ops.map(|b| b as i64),
    ]
    .iter()
    .any(Option::is_some);

    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let anneal = if config.epochs <= 1 {
            0.0
        } else {
            epoch as f64 / (config.epochs - 1) as f64
        };
        let tau = config.tau_start * (config.tau_end / config.tau_start).powf(anneal);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut sum_objective = 0.0;
        let mut sum_task_loss = 0.0;
        let mut last_expected = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = gather_batch(&task.train, chunk);
            let lr = cosine_lr(step, total_steps, config.lr_start, config.lr_end);
            step += 1;

            let mut tape = Tape::new();
            let alpha_leaves: Vec<TensorId> = alphas
                .iter()
                .map(|a| tape.leaf(a.clone(), vec![a.len()], true))
                .collect::<std::result::Result<_, _>>()?;
            let z = relax_decisions(&mut tape, &alpha_leaves, tau, config.gumbel_noise, &mut rng)?;
            let non_finite = |_| SearchError::NonFiniteLoss { epoch, step };
            let fw = model.forward(&mut tape, &x, chunk.len(), &z).map_err(|e| match e {
                crate::supernet::SupernetError::Tensor {
                    source: crate::tensor::TensorError::NonFinite { .. },
                    ..
                } => SearchError::NonFiniteLoss { epoch, step },
                other => SearchError::Supernet(other),
            })?;
            let task_loss = tape
                .softmax_cross_entropy(fw.logits, &y)
                .map_err(non_finite)?;
            let expected =
                expected_resources(&mut tape, &model.supernet, &z, config.weight_bits, config.activation_bits)?;
            let objective = total_objective(
                &mut tape,
                task_loss,
                &expected,
                &config.budget,
                config.lambda_size,
                config.lambda_mem,
                config.lambda_ops,
            )?;
            tape.backward(objective)?;

            sum_objective += tape.scalar_value(objective);
            sum_task_loss += tape.scalar_value(task_loss);
            last_expected = (
                tape.scalar_value(expected.ops),
                tape.scalar_value(expected.param_bytes),
                tape.scalar_value(expected.working_bytes),
            );

            for (param, &leaf) in model.params.iter_mut().zip(&fw.param_leaves) {
                if let Some(grad) = tape.grad(leaf) {
                    for (p, g) in param.values.iter_mut().zip(grad) {
                        *p -= lr * (g + config.weight_decay * *p);
                    }
                }
            }
            for (alpha, &leaf) in alphas.iter_mut().zip(&alpha_leaves) {
                if let Some(grad) = tape.grad(leaf) {
                    for (a, g) in alpha.iter_mut().zip(grad) {
                        *a -= lr * g;
                    }
                }
            }
        }

        let argmax_feasible = if has_budget {
            let selection = discretize(&model.supernet, &alphas);
            let report = discrete_resources(
                &model.supernet,
                &selection,
                config.weight_bits,
                config.activation_bits,
            )?;
            Some(check_budget(&report, &config.budget).passed)
        } else {
            None
        };
        history.push(EpochLog {
            epoch,
            tau,
            mean_objective: sum_objective / steps_per_epoch as f64,
            mean_task_loss: sum_task_loss / steps_per_epoch as f64,
            expected_ops: last_expected.0,
            expected_param_bytes: last_expected.1,
            expected_working_bytes: last_expected.2,
            argmax_feasible,
        });
    }

    Ok(SearchRun { alphas, history })
}

/// Initialize, search, discretize and report in one call.
pub fn search_once(
    supernet: Supernet,
    task: &ClassificationTask,
    config: &SearchConfig,
) -> Result<(SearchResult, SupernetModel)> {
    let mut model = SupernetModel::init(supernet, config.seed);
    let probe = task.train.len().min(config.batch_size.max(1));
    let (x, _) = gather_batch(&task.train, &(0..probe).collect::<Vec<_>>());
    model.normalize_init(&x, probe)?;
    let run = train_search(&mut model, task, config)?;
    let selection = discretize(&model.supernet, &run.alphas);
    let report = discrete_resources(
        &model.supernet,
        &selection,
        config.weight_bits,
        config.activation_bits,
    )?;
    let budget_check = check_budget(&report, &config.budget);
    Ok((
        SearchResult {
            selection,
            report,
            budget_check,
            history: run.history,
            seed: config.seed,
        },
        model,
    ))
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub accuracy: f64,
    pub final_train_loss: f64,
    /// Learned quantizer state when fake quantization was on; evaluation
    /// already used it.
    pub quant: Option<QuantState>,
}

/// Standard training of a materialized network, with fake quantization
/// emulating deployment unless disabled. Returns held-out accuracy.
pub fn finetune(
    net: &mut DiscreteNet,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if config.batch_size == 0 {
        return Err(SearchError::BadConfig("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = train.len();
    let mut quant = match config.quant_bits {
        Some(bits) => {
            let probe = n.min(config.batch_size);
            let (x, _) = gather_batch(train, &(0..probe).collect::<Vec<_>>());
            Some(QuantState::init(net, QuantConfig { bits }, &x, probe)?)
        }
        None => None,
    };

    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let mut step = 0usize;
    let mut final_train_loss = f64::NAN;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = gather_batch(train, chunk);
            let lr = cosine_lr(step, total_steps, config.lr_start, config.lr_end);
            step += 1;

            let mut tape = Tape::new();
            let fw = net.forward(&mut tape, &x, chunk.len(), quant.as_ref())?;
            let loss = tape.softmax_cross_entropy(fw.logits, &y).map_err(|e| match e {
                crate::tensor::TensorError::NonFinite { .. } => {
                    SearchError::NonFiniteLoss { epoch, step }
                }
                other => SearchError::Tensor(other),
            })?;
            tape.backward(loss)?;
            epoch_loss += tape.scalar_value(loss);

            for (param, &leaf) in net.param_slots_mut().into_iter().zip(&fw.param_leaves) {
                if let Some(grad) = tape.grad(leaf) {
                    for (p, g) in param.values.iter_mut().zip(grad) {
                        *p -= lr * (g + config.weight_decay * *p);
                    }
                }
            }
            if let Some(q) = quant.as_mut() {
                // quantizer ranges learn without weight decay and at a
                // reduced rate: their gradients sum over every clamped
                // element, so full-rate steps thrash the grid
                for (value, &leaf) in q.values.iter_mut().zip(&fw.range_leaves) {
                    if let Some(grad) = tape.grad(leaf) {
                        *value -= 0.01 * lr * grad[0];
                    }
                }
                q.clamp_valid();
            }
        }
        final_train_loss = epoch_loss / steps_per_epoch as f64;
    }

    let accuracy = evaluate_accuracy(net, test, quant.as_ref())?;
    Ok(FinetuneOutcome { accuracy, final_train_loss, quant })
}

/// Materialize a selection and finetune it in one call.
pub fn materialize_and_finetune(
    model: &SupernetModel,
    selection: &ArchSelection,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &FinetuneConfig,
) -> Result<(DiscreteNet, FinetuneOutcome)> {
    let mut net = materialize(model, selection)?;
    let outcome = finetune(&mut net, train, test, config)?;
    Ok((net, outcome))
}
