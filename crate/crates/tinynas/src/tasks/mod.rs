//! Desk-scale synthetic tasks and evaluation metrics.
//!
//! Real audio pipelines are out of reach for a test suite, so the
//! generators fabricate band-patterned "spectrograms": each class (or
//! machine ID) owns a disjoint set of rows, samples are the class template
//! plus Gaussian jitter. A nearest-template classifier bounds achievable
//! accuracy analytically, which keeps the end-to-end checks honest.
//!
//! Everything is bit-reproducible from the seed.

pub mod io;

use crate::supernet::{DiscreteNet, QuantState};
use crate::tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("degenerate shape {0:?}: every dimension must be positive and fit the class count")]
    DegenerateShape([usize; 3]),
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("machine id {id} out of range for {classes} ids")]
    UnknownMachineId { id: usize, classes: usize },
    #[error("network error: {0}")]
    Net(#[from] crate::supernet::SupernetError),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, TaskError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A batch of feature tensors with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `[h, w, c]` per sample; features are `[n, h, w, c]` row-major.
    pub shape: [usize; 3],
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_elems(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn features_of(&self, index: usize) -> &[f64] {
        let n = self.sample_elems();
        &self.features[index * n..(index + 1) * n]
    }
}

/// A classification task bundle with the generating templates exposed for
/// oracle-style checks.
#[derive(Debug, Clone)]
pub struct ClassificationTask {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub templates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectrogramSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub shape: [usize; 3],
    /// Per-element Gaussian jitter sigma.
    pub jitter: f64,
    pub seed: u64,
}

impl SpectrogramSpec {
    pub fn new(num_classes: usize, samples_per_class: usize, shape: [usize; 3], seed: u64) -> Self {
        SpectrogramSpec {
            num_classes,
            samples_per_class,
            test_per_class: samples_per_class.div_ceil(4),
            shape,
            jitter: 0.25,
            seed,
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Class template: horizontal stripes of thickness `class + 1` separated
/// by single blank rows. Classes therefore differ in stripe thickness and
/// overall energy — translation-invariant statistics a pooled convolutional
/// classifier can read — while staying far apart in Euclidean distance for
/// the nearest-template oracle.
fn class_template(class: usize, _num_classes: usize, shape: [usize; 3]) -> Vec<f64> {
    let [h, w, c] = shape;
    let period = class + 2;
    let mut t = vec![0.0; h * w * c];
    for r in 0..h {
        if r % period != period - 1 {
            for i in 0..w * c {
                t[r * w * c + i] = 1.0;
            }
        }
    }
    t
}

/// Synthetic stand-in for a keyword-spotting spectrogram task.
pub fn gen_synthetic_spectrogram_task(spec: &SpectrogramSpec) -> Result<ClassificationTask> {
    if spec.num_classes < 2 {
        return Err(TaskError::TooFew { what: "classes", need: 2, got: spec.num_classes });
    }
    // the widest stripe period must fit the height
    if spec.shape.iter().any(|&d| d == 0) || spec.shape[0] < spec.num_classes + 1 {
        return Err(TaskError::DegenerateShape(spec.shape));
    }
    let templates: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|c| class_template(c, spec.num_classes, spec.shape))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gen_split = |per_class: usize, split: Split| {
        let n = per_class * spec.num_classes;
        let elems: usize = spec.shape.iter().product();
        let mut features = Vec::with_capacity(n * elems);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % spec.num_classes;
            labels.push(class);
            features.extend(
                templates[class]
                    .iter()
                    .map(|&t| t + spec.jitter * standard_normal(&mut rng)),
            );
        }
        LabeledDataset {
            shape: spec.shape,
            features,
            labels,
            num_classes: spec.num_classes,
            split,
        }
    };
    let train = gen_split(spec.samples_per_class, Split::Train);
    let test = gen_split(spec.test_per_class, Split::Test);
    Ok(ClassificationTask { train, test, templates })
}

/// Test split of an anomaly-detection task: features tagged with their
/// machine ID and whether the sample is anomalous. The training split of
/// the owning task contains normal samples only.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyEvalSet {
    pub shape: [usize; 3],
    pub features: Vec<f64>,
    pub machine_ids: Vec<usize>,
    pub is_anomalous: Vec<bool>,
}

impl AnomalyEvalSet {
    pub fn len(&self) -> usize {
        self.machine_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.machine_ids.is_empty()
    }

    pub fn features_of(&self, index: usize) -> &[f64] {
        let n: usize = self.shape.iter().product();
        &self.features[index * n..(index + 1) * n]
    }
}

#[derive(Debug, Clone)]
pub struct AnomalyTask {
    /// Normal samples only, labeled by machine ID.
    pub train: LabeledDataset,
    pub test: AnomalyEvalSet,
    pub num_machine_ids: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AdSpec {
    pub num_machine_ids: usize,
    pub train_per_id: usize,
    pub test_normal_per_id: usize,
    pub test_anomalous_per_id: usize,
    /// Amplitude of the defect stripe added to anomalous samples; zero
    /// makes anomalies statistically indistinguishable from normals.
    pub perturbation: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl AdSpec {
    /// Defaults: four machine IDs, 32x32x1 features.
    pub fn new(num_machine_ids: usize, seed: u64) -> Self {
        AdSpec {
            num_machine_ids,
            train_per_id: 40,
            test_normal_per_id: 25,
            test_anomalous_per_id: 25,
            perturbation: 1.0,
            jitter: 0.25,
            seed,
        }
    }
}

pub const AD_SHAPE: [usize; 3] = [32, 32, 1];

/// Self-supervised anomaly-detection task: machine-ID templates for
/// training, plus a test split where anomalies carry an extra defect
/// stripe never seen in training.
pub fn gen_synthetic_ad_task(spec: &AdSpec) -> Result<AnomalyTask> {
    if spec.num_machine_ids < 2 {
        return Err(TaskError::TooFew { what: "machine ids", need: 2, got: spec.num_machine_ids });
    }
    let shape = AD_SHAPE;
    let [h, w, c] = shape;
    let elems = h * w * c;
    let templates: Vec<Vec<f64>> = (0..spec.num_machine_ids)
        .map(|id| class_template(id, spec.num_machine_ids, shape))
        .collect();
    // vertical defect stripe, orthogonal to the horizontal ID bands
    let mut defect = vec![0.0; elems];
    for r in 0..h {
        for col in 0..w {
            if col % 4 == 1 {
                for ch in 0..c {
                    defect[(r * w + col) * c + ch] = 1.0;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sample = |rng: &mut ChaCha8Rng, id: usize, anomalous: bool| -> Vec<f64> {
        templates[id]
            .iter()
            .zip(&defect)
            .map(|(&t, &d)| {
                t + if anomalous { spec.perturbation * d } else { 0.0 }
                    + spec.jitter * standard_normal(rng)
            })
            .collect()
    };

    let n_train = spec.train_per_id * spec.num_machine_ids;
    let mut train_features = Vec::with_capacity(n_train * elems);
    let mut train_labels = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let id = i % spec.num_machine_ids;
        train_labels.push(id);
        train_features.extend(sample(&mut rng, id, false));
    }

    let n_test = (spec.test_normal_per_id + spec.test_anomalous_per_id) * spec.num_machine_ids;
    let mut test_features = Vec::with_capacity(n_test * elems);
    let mut machine_ids = Vec::with_capacity(n_test);
    let mut is_anomalous = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let id = i % spec.num_machine_ids;
        let anomalous = (i / spec.num_machine_ids) % 2 == 1;
        machine_ids.push(id);
        is_anomalous.push(anomalous);
        test_features.extend(sample(&mut rng, id, anomalous));
    }

    Ok(AnomalyTask {
        train: LabeledDataset {
            shape,
            features: train_features,
            labels: train_labels,
            num_classes: spec.num_machine_ids,
            split: Split::Train,
        },
        test: AnomalyEvalSet { shape, features: test_features, machine_ids, is_anomalous },
        num_machine_ids: spec.num_machine_ids,
    })
}

// ── metrics ──────────────────────────────────────────────────────────

/// Batched logits for a whole dataset.
pub fn batch_logits(
    net: &DiscreteNet,
    features: &[f64],
    n: usize,
    shape: [usize; 3],
    quant: Option<&QuantState>,
) -> Result<Vec<f64>> {
    let elems: usize = shape.iter().product();
    let mut logits = Vec::with_capacity(n * net.num_classes);
    let chunk = 64;
    let mut i = 0;
    while i < n {
        let b = chunk.min(n - i);
        let mut tape = Tape::new();
        let fw = net.forward(&mut tape, &features[i * elems..(i + b) * elems], b, quant)?;
        logits.extend_from_slice(tape.values(fw.logits));
        i += b;
    }
    Ok(logits)
}

/// Row-wise argmax with ties broken toward the lowest class index.
pub fn argmax_class(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax-match fraction over pre-computed logit rows.
pub fn accuracy_from_logits(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &label)| argmax_class(&logits[i * classes..(i + 1) * classes]) == label)
        .count();
    correct as f64 / labels.len() as f64
}

/// Fraction of test samples whose argmax matches the label.
pub fn evaluate_accuracy(
    net: &DiscreteNet,
    dataset: &LabeledDataset,
    quant: Option<&QuantState>,
) -> Result<f64> {
    let logits = batch_logits(net, &dataset.features, dataset.len(), dataset.shape, quant)?;
    Ok(accuracy_from_logits(&logits, &dataset.labels, net.num_classes))
}

/// Negated softmax probability of each sample's true machine ID, from
/// pre-computed logit rows.
pub fn scores_from_logits(
    logits: &[f64],
    machine_ids: &[usize],
    classes: usize,
) -> Result<Vec<f64>> {
    for &id in machine_ids {
        if id >= classes {
            return Err(TaskError::UnknownMachineId { id, classes });
        }
    }
    Ok(machine_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let row = &logits[i * classes..(i + 1) * classes];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
            -((row[id] - m).exp() / denom)
        })
        .collect())
}

/// Anomaly score per test sample: the negated softmax probability the
/// machine-ID classifier assigns to the sample's true ID. Higher means
/// more anomalous.
pub fn anomaly_scores(
    net: &DiscreteNet,
    eval: &AnomalyEvalSet,
    quant: Option<&QuantState>,
) -> Result<Vec<f64>> {
    let logits = batch_logits(net, &eval.features, eval.len(), eval.shape, quant)?;
    scores_from_logits(&logits, &eval.machine_ids, net.num_classes)
}

/// Area under the ROC curve by the Mann-Whitney statistic:
/// `P(score_anomalous > score_normal) + 0.5 * P(tie)`.
///
/// Exact all-pairs counting up to 10^4 samples, midrank computation above.
pub fn auc_roc(scores: &[f64], is_anomalous: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), is_anomalous.len());
    let n_pos = is_anomalous.iter().filter(|&&a| a).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TaskError::SingleClass);
    }
    if scores.len() <= 10_000 {
        let mut favorable = 0.0f64;
        for (i, &a) in is_anomalous.iter().enumerate() {
            if !a {
                continue;
            }
            for (j, &b) in is_anomalous.iter().enumerate() {
                if b {
                    continue;
                }
                favorable += match scores[i].partial_cmp(&scores[j]) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Equal) => 0.5,
                    _ => 0.0,
                };
            }
        }
        Ok(favorable / (n_pos as f64 * n_neg as f64))
    } else {
        Ok(auc_midrank(scores, is_anomalous, n_pos, n_neg))
    }
}

/// Rank-based Mann-Whitney U with midranks for ties; equal to the
/// all-pairs count, in O(n log n).
pub(crate) fn auc_midrank(scores: &[f64], is_anomalous: &[bool], n_pos: usize, n_neg: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(is_anomalous)
        .filter(|(_, &a)| a)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Nearest-template classification accuracy: the analytic oracle bounding
/// what a trained classifier should reach on the synthetic tasks.
pub fn nearest_template_accuracy(task: &ClassificationTask) -> f64 {
    let ds = &task.test;
    let correct = (0..ds.len())
        .filter(|&i| {
            let x = ds.features_of(i);
            let mut best = (f64::INFINITY, 0);
            for (c, t) in task.templates.iter().enumerate() {
                let d2: f64 = x.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    best = (d2, c);
                }
            }
            best.1 == ds.labels[i]
        })
        .count();
    correct as f64 / ds.len() as f64
}

#[cfg(test)]
mod tests;
