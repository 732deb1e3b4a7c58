//! Fine-tuning loop: batch-size-one micro-batches, summed gradient
//! accumulation, Adam with two parameter groups on warmup/half-cosine
//! schedules, an optional frozen-encoder phase and early stopping on the
//! validation metric.

mod loss;
mod metrics;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ProteinRecord, Split};
use crate::error::{Error, Result};
use crate::model::{archive, expected_shapes, group_of, tokenize, Depth, Encoder, ModelConfig, ModelWeights, ParamGroup, TaskKind};
use crate::rng::Rng;

pub use loss::{bce_with_logits, sigmoid, softmax_ce};
pub use metrics::f_max;
pub use optim::{adam_step, lr_schedule, AdamHyper, AdamState};

/// Samples averaged per entry of [`EpochReport::loss_windows`].
pub const LOSS_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Micro-batches (of one sample) summed per optimizer step.
    pub accumulation: usize,
    pub freeze_encoder_epochs: usize,
    pub adam: AdamHyper,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

/// Defaults train the 4-layer toy encoder from scratch on the synthetic
/// motif task; see [`TrainConfig::reference`] for large pretrained encoders.
impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 3e-4,
            lr_head: 1e-3,
            warmup_steps: 50,
            total_steps: 8000,
            accumulation: 8,
            freeze_encoder_epochs: 1,
            adam: AdamHyper::default(),
            max_epochs: 25,
            patience: 6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Finetuning settings for a pretrained encoder: tiny encoder rate,
    /// 500 warm-up steps and 64 accumulated samples per step.
    pub fn reference() -> Self {
        Self {
            lr_encoder: 5e-6,
            lr_head: 3e-5,
            warmup_steps: 500,
            total_steps: 20000,
            accumulation: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr_encoder > 0.0 && self.lr_head > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.warmup_steps >= self.total_steps {
            return bad("warmup_steps must be below total_steps");
        }
        if self.accumulation == 0 {
            return bad("accumulation must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad("Adam betas must be in [0, 1) and eps positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Higher is better.
    Accuracy,
    /// Lower is better.
    Loss,
}

impl MetricKind {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Multiclass => MetricKind::Accuracy,
            TaskKind::Multilabel => MetricKind::Loss,
        }
    }

    fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            MetricKind::Accuracy => candidate > best,
            MetricKind::Loss => candidate < best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Multiclass tasks only.
    pub accuracy: Option<f64>,
    /// Multilabel tasks only.
    pub f_max: Option<f64>,
    pub n: usize,
}

impl Evaluation {
    pub fn metric(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Accuracy => self.accuracy.unwrap_or(f64::NAN),
            MetricKind::Loss => self.loss,
        }
    }
}

/// Sidecar metadata stored next to a checkpoint's weight archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub metric: f64,
    pub metric_kind: MetricKind,
    /// Class ids in logit order.
    pub classes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        s.into()
    }

    /// Writes the weight archive at `path` and the sidecar at `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.meta.metric.is_finite() {
            return Err(Error::NonFinite("checkpoint metric".into()));
        }
        crate::io::write_atomic(path, &archive::save_weights(&self.config, &self.weights)?)?;
        let meta = serde_json::to_vec_pretty(&self.meta)?;
        crate::io::write_atomic(&Self::sidecar_path(path), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (config, weights) = archive::load_weights(&bytes)?;
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.classes.len() != config.n_classes {
            return Err(Error::Config(format!(
                "sidecar lists {} classes but the model has {}",
                meta.classes.len(),
                config.n_classes
            )));
        }
        Ok(Self { config, weights, meta })
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::new(self.config.clone(), self.weights.clone())
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.meta
            .classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::Input(format!("unknown class id {class:?}; known: {}", self.meta.classes.join(", "))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub frozen: bool,
    pub train_loss: f64,
    pub valid: Evaluation,
    pub optimizer_steps: u64,
    /// Mean training loss over consecutive windows of [`LOSS_WINDOW`] samples.
    pub loss_windows: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochReport>,
}

/// A tokenized training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    MultiHot(Vec<f64>),
}

impl Target {
    pub fn loss(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Target::Class(c) => softmax_ce(logits, *c),
            Target::MultiHot(y) => bce_with_logits(logits, y),
        }
    }
}

pub fn make_samples(records: &[&ProteinRecord], classes: &[String], task: TaskKind) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            let idx: Vec<usize> = r
                .labels
                .iter()
                .map(|l| {
                    classes
                        .iter()
                        .position(|c| c == l)
                        .ok_or_else(|| Error::Input(format!("{}: label {l:?} not in class vocabulary", r.id)))
                })
                .collect::<Result<_>>()?;
            let target = match task {
                TaskKind::Multiclass => {
                    if idx.len() != 1 {
                        return Err(Error::Input(format!(
                            "{}: multiclass task needs exactly one label, found {}",
                            r.id,
                            idx.len()
                        )));
                    }
                    Target::Class(idx[0])
                }
                TaskKind::Multilabel => {
                    let mut y = vec![0.0; classes.len()];
                    for i in idx {
                        y[i] = 1.0;
                    }
                    Target::MultiHot(y)
                }
            };
            Ok(Sample {
                tokens: tokenize(&r.sequence)?,
                target,
            })
        })
        .collect()
}

/// Validation loss plus accuracy or F_max, depending on the target kind.
pub fn evaluate(encoder: &Encoder, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for s in samples {
        let logits = encoder.forward(&s.tokens)?.logits;
        loss += s.target.loss(&logits).0;
        match &s.target {
            Target::Class(c) => {
                if argmax(&logits) == *c {
                    correct += 1;
                }
            }
            Target::MultiHot(y) => {
                scores.push(logits.iter().map(|&z| sigmoid(z)).collect());
                truth.push(y.iter().map(|&v| v > 0.5).collect());
            }
        }
    }
    let n = samples.len();
    let multiclass = matches!(samples[0].target, Target::Class(_));
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok(Evaluation {
        loss,
        accuracy: multiclass.then(|| correct as f64 / n as f64),
        f_max: (!multiclass).then(|| f_max(&scores, &truth)),
        n,
    })
}

/// First index of the largest value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Summed-gradient accumulator and per-tensor Adam state.
pub struct Optimizer {
    groups: Vec<ParamGroup>,
    states: Vec<AdamState>,
    grads: ModelWeights,
    scratch: ModelWeights,
    pending: usize,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: &ModelConfig) -> Self {
        let shapes = expected_shapes(cfg);
        Self {
            groups: shapes.iter().map(|(n, _)| group_of(n)).collect(),
            states: shapes
                .iter()
                .map(|(_, s)| AdamState::new(s.iter().product()))
                .collect(),
            grads: ModelWeights::zeros(cfg),
            scratch: ModelWeights::zeros(cfg),
            pending: 0,
            steps: 0,
        }
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// The summed gradient of the micro-batches since the last step.
    pub fn accumulated(&self) -> &ModelWeights {
        &self.grads
    }

    /// Runs one micro-batch and adds its parameter gradient to the sum.
    /// Returns the sample loss.
    pub fn accumulate(&mut self, encoder: &Encoder, sample: &Sample, depth: Depth, dropout: Option<&mut Rng>) -> Result<f64> {
        let e = encoder.embed(&sample.tokens)?;
        let mut cache = encoder.forward_embedding(&e, dropout)?;
        cache.tokens = Some(sample.tokens.clone());
        let (loss, d_logits) = sample.target.loss(&cache.logits);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        self.scratch.clear();
        encoder.backward(&cache, &d_logits, depth, Some(&mut self.scratch));
        self.add_gradient_from_scratch();
        Ok(loss)
    }

    /// Adds an externally computed gradient to the sum, as one micro-batch.
    pub fn accumulate_gradient(&mut self, grad: &ModelWeights) -> Result<()> {
        for (dst, src) in self.scratch.tensors_mut().into_iter().zip(grad.tensors()) {
            if dst.shape() != src.shape() {
                return Err(Error::Dimension {
                    op: "accumulate_gradient",
                    left: dst.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        self.add_gradient_from_scratch();
        Ok(())
    }

    fn add_gradient_from_scratch(&mut self) {
        for (acc, g) in self.grads.tensors_mut().into_iter().zip(self.scratch.tensors()) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        self.pending += 1;
    }

    /// Applies one Adam step with the scheduled rates and clears the sum.
    /// Encoder tensors are left untouched when `freeze_encoder` is set.
    pub fn step(&mut self, encoder: &mut Encoder, tc: &TrainConfig, freeze_encoder: bool) -> Result<()> {
        let lr_enc = lr_schedule(self.steps, tc.lr_encoder, tc.warmup_steps, tc.total_steps);
        let lr_head = lr_schedule(self.steps, tc.lr_head, tc.warmup_steps, tc.total_steps);
        let params = encoder.weights_mut().tensors_mut();
        for (((p, g), state), group) in params
            .into_iter()
            .zip(self.grads.tensors())
            .zip(self.states.iter_mut())
            .zip(&self.groups)
        {
            let rate = match group {
                ParamGroup::Encoder if freeze_encoder => continue,
                ParamGroup::Encoder => lr_enc,
                ParamGroup::Head => lr_head,
            };
            adam_step(p.data_mut(), g.data(), state, rate, tc.adam)?;
        }
        self.grads.clear();
        self.pending = 0;
        self.steps += 1;
        Ok(())
    }
}

/// Splits a dataset into training and validation records. Records without a
/// split count as training data; without any validation records a seeded 10%
/// of the training records is held out.
pub fn train_valid_split(dataset: &Dataset, seed: u64) -> Result<(Vec<&ProteinRecord>, Vec<&ProteinRecord>)> {
    let any_split = dataset.records.iter().any(|r| r.split.is_some());
    let mut train: Vec<&ProteinRecord> = dataset
        .records
        .iter()
        .filter(|r| !any_split || r.split == Some(Split::Train))
        .collect();
    let mut valid = dataset.split(Split::Valid);
    if valid.is_empty() {
        let n_valid = ((train.len() as f64 * 0.1).round() as usize).max(1);
        if train.len() <= n_valid {
            return Err(Error::Empty("too few training records to hold out a validation split".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::new(seed).child(0x0076_616c_6964).shuffle(&mut order);
        let mut held = vec![false; train.len()];
        for &i in &order[..n_valid] {
            held[i] = true;
        }
        valid = train.iter().zip(&held).filter(|(_, &h)| h).map(|(r, _)| *r).collect();
        train = train.iter().zip(&held).filter(|(_, &h)| !h).map(|(r, _)| *r).collect();
    }
    if train.is_empty() {
        return Err(Error::Empty("training split is empty".into()));
    }
    Ok((train, valid))
}

/// Trains a freshly initialised model; see [`train_from`].
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport, &Encoder),
) -> Result<TrainOutcome> {
    let classes = dataset.class_vocabulary();
    if classes.len() != model_config.n_classes {
        return Err(Error::Config(format!(
            "model has {} classes but the data has {} ({})",
            model_config.n_classes,
            classes.len(),
            classes.join(", ")
        )));
    }
    train_from(initial_encoder(model_config, tc)?, dataset, &classes, tc, on_epoch)
}

/// The freshly initialized encoder [`train`] starts from.
pub fn initial_encoder(model_config: &ModelConfig, tc: &TrainConfig) -> Result<Encoder> {
    let weights = ModelWeights::init(model_config, &mut Rng::new(tc.seed).child(1))?;
    Encoder::new(model_config.clone(), weights)
}

/// Fine-tunes `encoder` and returns the checkpoint with the best validation
/// metric. `on_epoch` sees each epoch's report and the current model.
pub fn train_from(
    mut encoder: Encoder,
    dataset: &Dataset,
    classes: &[String],
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport, &Encoder),
) -> Result<TrainOutcome> {
    tc.validate()?;
    let task = encoder.config().task_kind;
    let kind = MetricKind::for_task(task);
    let (train_recs, valid_recs) = train_valid_split(dataset, tc.seed)?;
    let train_set = make_samples(&train_recs, classes, task)?;
    let valid_set = make_samples(&valid_recs, classes, task)?;

    let root = Rng::new(tc.seed);
    let mut order_rng = root.child(2);
    let mut dropout_rng = root.child(3);
    let mut opt = Optimizer::new(encoder.config());
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stale = 0;

    for epoch in 1..=tc.max_epochs {
        let frozen = epoch <= tc.freeze_encoder_epochs;
        let depth = if frozen { Depth::ClassifierOnly } else { Depth::Full };
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut windows = Vec::new();
        let mut window = 0.0;
        for (k, &i) in order.iter().enumerate() {
            let loss = opt.accumulate(&encoder, &train_set[i], depth, Some(&mut dropout_rng))?;
            total += loss;
            window += loss;
            if (k + 1) % LOSS_WINDOW == 0 {
                windows.push(window / LOSS_WINDOW as f64);
                window = 0.0;
            }
            if opt.pending() == tc.accumulation {
                opt.step(&mut encoder, tc, frozen)?;
            }
        }
        if opt.pending() > 0 {
            opt.step(&mut encoder, tc, frozen)?;
        }
        if !encoder.weights().is_finite() {
            return Err(Error::NonFinite(format!("weights after epoch {epoch}")));
        }
        let valid = evaluate(&encoder, &valid_set)?;
        let metric = valid.metric(kind);
        let report = EpochReport {
            epoch,
            frozen,
            train_loss: total / train_set.len() as f64,
            valid,
            optimizer_steps: opt.steps(),
            loss_windows: windows,
        };
        log::info!("epoch {epoch}: train loss {:.4}, validation {kind:?} {metric:.4}", report.train_loss);
        on_epoch(&report, &encoder);
        history.push(report);

        if best.as_ref().is_none_or(|b| kind.improves(metric, b.meta.metric)) {
            best = Some(Checkpoint {
                config: encoder.config().clone(),
                weights: encoder.weights().clone(),
                meta: CheckpointMeta {
                    epoch,
                    metric,
                    metric_kind: kind,
                    classes: classes.to_vec(),
                },
            });
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        history,
    })
}
