//! SGD with momentum under Conveyance or cross-entropy, plus evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BagDataset, LabeledDataset};
use crate::error::{arg_err, Error, Result};
use crate::loss::{loss_and_grad, LossParams};
use crate::lse::lse;
use crate::model::{argmax, Architecture, ModelParams};
use crate::par::{map_indexed, Execution};
use crate::qmatrix::{q_mil, PlausibilityMatrix, MIL_NEGATIVE, MIL_POSITIVE};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy, computed directly from the softmax.
    CrossEntropy,
    Conveyance { alpha: f64, beta: f64 },
}

impl LossKind {
    pub fn conveyance(params: LossParams) -> Self {
        LossKind::Conveyance {
            alpha: params.alpha,
            beta: params.beta,
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossKind::CrossEntropy => "ce".into(),
            LossKind::Conveyance { alpha, beta } => format!("conveyance(a={alpha},b={beta})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the initial rate to 0 over the run, per epoch.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 200,
            batch_size: 128,
            seed: 0,
            loss: LossKind::CrossEntropy,
            lr_schedule: LrSchedule::Cosine,
            architecture: Architecture::Linear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return arg_err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return arg_err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return arg_err("epochs and batch size must be positive");
        }
        if let Architecture::Mlp1 { hidden: 0 } = self.architecture {
            return arg_err("hidden width must be positive");
        }
        if let LossKind::Conveyance { alpha, beta } = self.loss {
            LossParams::new(alpha, beta)?;
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Mean probability masses on the target, the plausible set and its complement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MassSummary {
    pub p_t: f64,
    pub p_s: f64,
    pub p_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Mean training loss per epoch.
    pub train_curve: Vec<f64>,
    pub clean_test_accuracy: f64,
    /// `confusion[true][predicted]` on clean labels.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub mean_mass: MassSummary,
    /// Excluded from serialized reports so they stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    /// Trace of the row-normalized confusion matrix, divided by the number
    /// of classes that appear, so 1 means a perfectly diagonal result.
    pub fn diagonal_mass(&self) -> f64 {
        let mut trace = 0.0;
        let mut rows = 0usize;
        for (i, row) in self.confusion_matrix.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total > 0 {
                trace += row[i] as f64 / total as f64;
                rows += 1;
            }
        }
        if rows == 0 {
            0.0
        } else {
            trace / rows as f64
        }
    }

    /// Recall per true class; NaN for classes without test samples.
    pub fn per_class_recall(&self) -> Vec<f64> {
        self.confusion_matrix
            .iter()
            .enumerate()
            .map(|(i, row)| row[i] as f64 / row.iter().sum::<u64>() as f64)
            .collect()
    }

    /// Fraction of predictions landing in column `class`.
    pub fn prediction_share(&self, class: usize) -> f64 {
        let total: u64 = self.confusion_matrix.iter().flatten().sum();
        let col: u64 = self.confusion_matrix.iter().map(|r| r[class]).sum();
        col as f64 / total.max(1) as f64
    }
}

enum Objective {
    CrossEntropy,
    Conveyance { params: LossParams, masks: Vec<Vec<bool>> },
}

impl Objective {
    fn new(loss: LossKind, q: &PlausibilityMatrix) -> Result<Self> {
        Ok(match loss {
            LossKind::CrossEntropy => Objective::CrossEntropy,
            LossKind::Conveyance { alpha, beta } => Objective::Conveyance {
                params: LossParams::new(alpha, beta)?,
                masks: (0..q.class_count()).map(|t| q.plausible_mask(t)).collect(),
            },
        })
    }

    /// Overwrites `grad` with `dl/dz` and returns `l`.
    fn eval(&self, z: &[f64], t: usize, grad: &mut [f64]) -> f64 {
        match self {
            Objective::CrossEntropy => {
                let norm = lse(z);
                for (g, &v) in grad.iter_mut().zip(z) {
                    *g = (v - norm).exp();
                }
                grad[t] -= 1.0;
                norm - z[t]
            }
            Objective::Conveyance { params, masks } => {
                loss_and_grad(z, &masks[t], t, params, grad)
            }
        }
    }
}

/// Trains from scratch and evaluates on the training set's clean labels.
pub fn train(
    data: &LabeledDataset,
    q: &PlausibilityMatrix,
    cfg: &TrainConfig,
) -> Result<(ModelParams, ExperimentReport)> {
    train_and_evaluate(data, data, q, cfg)
}

/// Trains on `train_set` (noisy labels when present) and evaluates on the
/// clean labels of `test_set`.
///
/// The run is sequential and fully determined by `cfg.seed`: initialization
/// and shuffling use separate ChaCha8 streams.
pub fn train_and_evaluate(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    q: &PlausibilityMatrix,
    cfg: &TrainConfig,
) -> Result<(ModelParams, ExperimentReport)> {
    let start = Instant::now();
    let (model, curve) = fit(train_set, q, cfg, |_, _| {})?;
    let mut report = evaluate(&model, test_set, q)?;
    report.train_curve = curve;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// The training loop. `on_step` sees the model after every update.
pub fn fit<F>(
    data: &LabeledDataset,
    q: &PlausibilityMatrix,
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<(ModelParams, Vec<f64>)>
where
    F: FnMut(usize, &ModelParams),
{
    cfg.validate()?;
    if data.is_empty() {
        return arg_err("cannot train on an empty dataset");
    }
    let c = data.class_count();
    if q.class_count() != c {
        return arg_err(format!("Q has {} classes, dataset has {c}", q.class_count()));
    }
    let objective = Objective::new(cfg.loss, q)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(0);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let mut model = ModelParams::init(cfg.architecture, data.dim(), c, &mut init_rng);
    let mut velocity = model.zeros_like();
    let mut grads = model.zeros_like();
    let mut ws = model.workspace();
    let labels = data.training_labels();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| {
                g.weights.iter_mut().for_each(|v| *v = 0.0);
                g.bias.iter_mut().for_each(|v| *v = 0.0);
            });
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = data.feature(i);
                model.forward_into(x, &mut ws);
                let l = objective.eval(&ws.logits, labels[i], &mut ws.dlogits);
                batch_loss += l;
                model.backward(x, &mut ws, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for ((layer, v), g) in model.layers_mut().iter_mut().zip(&mut velocity).zip(&grads) {
                sgd_update(&mut layer.weights, &mut v.weights, &g.weights, scale, lr, cfg.momentum);
                sgd_update(&mut layer.bias, &mut v.bias, &g.bias, scale, lr, cfg.momentum);
            }
            on_step(step, &model);
            step += 1;
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step,
                loss: f64::NAN,
            });
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok((model, curve))
}

fn sgd_update(params: &mut [f64], velocity: &mut [f64], grad: &[f64], scale: f64, lr: f64, momentum: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g * scale;
        *p -= lr * *v;
    }
}

/// Accuracy and confusion against clean labels, and mean probability masses
/// with `t` the clean label and `S` the plausible set `q` assigns to it.
pub fn evaluate(model: &ModelParams, data: &LabeledDataset, q: &PlausibilityMatrix) -> Result<ExperimentReport> {
    let c = data.class_count();
    if model.class_count() != c || model.input_dim() != data.dim() {
        return arg_err(format!(
            "model maps {} -> {} but dataset is {} -> {c}",
            model.input_dim(),
            model.class_count(),
            data.dim()
        ));
    }
    if q.class_count() != c {
        return arg_err(format!("Q has {} classes, dataset has {c}", q.class_count()));
    }
    let masks: Vec<Vec<bool>> = (0..c).map(|t| q.plausible_mask(t)).collect();
    let labels = data.clean_labels();
    let per_sample = map_indexed(Execution::default(), data.len(), |i| {
        let z = model.logits(data.feature(i));
        let t = labels[i];
        let norm = lse(&z);
        let (mut p_s, mut p_n) = (0.0, 0.0);
        for (k, &v) in z.iter().enumerate() {
            let p = (v - norm).exp();
            if masks[t][k] {
                p_s += p;
            } else {
                p_n += p;
            }
        }
        (argmax(&z), (z[t] - norm).exp(), p_s, p_n)
    });
    let mut confusion = vec![vec![0u64; c]; c];
    let mut mass = MassSummary::default();
    let mut correct = 0usize;
    for (i, &(pred, p_t, p_s, p_n)) in per_sample.iter().enumerate() {
        confusion[labels[i]][pred] += 1;
        correct += usize::from(pred == labels[i]);
        mass.p_t += p_t;
        mass.p_s += p_s;
        mass.p_n += p_n;
    }
    let n = data.len().max(1) as f64;
    mass.p_t /= n;
    mass.p_s /= n;
    mass.p_n /= n;
    Ok(ExperimentReport {
        train_curve: Vec::new(),
        clean_test_accuracy: correct as f64 / n,
        confusion_matrix: confusion,
        mean_mass: mass,
        wall_time_secs: 0.0,
    })
}

/// Instance-level MIL result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilReport {
    /// Confusion and accuracy against hidden instance truth.
    pub report: ExperimentReport,
    pub instance_accuracy: f64,
    /// Recall of truly negative instances inside negative bags.
    pub negative_recall_in_negative_bags: f64,
    /// Recall of truly negative instances inside positive bags.
    pub negative_recall_in_positive_bags: f64,
    pub positive_recall: f64,
}

/// Trains an instance classifier on inherited bag labels and scores it
/// against the hidden instance truth of the same bags. Conveyance runs use
/// the MIL plausibility matrix.
pub fn train_mil_instances(bags: &BagDataset, cfg: &TrainConfig) -> Result<MilReport> {
    let start = Instant::now();
    let mut features = Vec::with_capacity(bags.instance_count() * bags.dim);
    let mut inherited = Vec::with_capacity(bags.instance_count());
    let mut truth = Vec::with_capacity(bags.instance_count());
    let mut origin = Vec::with_capacity(bags.instance_count());
    for bag in &bags.bags {
        features.extend_from_slice(&bag.features);
        inherited.extend(std::iter::repeat_n(bag.label, bag.len()));
        truth.extend_from_slice(&bag.instance_truth);
        origin.extend(std::iter::repeat_n(bag.label, bag.len()));
    }
    let data = LabeledDataset::new(features, bags.dim, truth, Some(inherited), 2)?;
    let q = q_mil();
    let (model, curve) = fit(&data, &q, cfg, |_, _| {})?;
    let mut report = evaluate(&model, &data, &q)?;
    report.train_curve = curve;

    let preds = map_indexed(Execution::default(), data.len(), |i| model.predict(data.feature(i)));
    let truth = data.clean_labels();
    let recall = |select: &dyn Fn(usize) -> bool| {
        let (mut hit, mut total) = (0usize, 0usize);
        for i in (0..data.len()).filter(|&i| select(i)) {
            total += 1;
            hit += usize::from(preds[i] == truth[i]);
        }
        hit as f64 / total.max(1) as f64
    };
    let neg_in_neg = recall(&|i| truth[i] == MIL_NEGATIVE && origin[i] == MIL_NEGATIVE);
    let neg_in_pos = recall(&|i| truth[i] == MIL_NEGATIVE && origin[i] == MIL_POSITIVE);
    let pos = recall(&|i| truth[i] == MIL_POSITIVE);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(MilReport {
        instance_accuracy: report.clean_test_accuracy,
        report,
        negative_recall_in_negative_bags: neg_in_neg,
        negative_recall_in_positive_bags: neg_in_pos,
        positive_recall: pos,
    })
}
