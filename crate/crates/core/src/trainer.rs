//! Mini-batch training of classification heads.
//!
//! Defaults follow the usual transformer fine-tuning recipe: 5 epochs, batch
//! size 32, Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8), learning rate decayed
//! linearly to zero, no weight decay and a global gradient norm cap of 1.0.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{filter_hateful, Corpus};
use crate::features::{EmbeddingTable, Encoded, EncoderConfig, FeatureError};
use crate::metrics::{score_labels, MetricsError, Scope};
use crate::model::{
    objective, predict, Head, Inference, ModeFlags, ModelError, ModelFile, TrainingMode,
};
use crate::schema::{Label, TaskId, TaskSchema};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyCorpus,
    #[error("example {id}: {source}")]
    Example {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch} (lr {lr:e}, grad norm {grad_norm})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        lr: f64,
        grad_norm: f64,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Default learning rate for dense embedding inputs.
pub const EMBEDDING_LEARNING_RATE: f64 = 5e-5;
/// Default learning rate for hashed sparse features.
pub const HASHED_LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks the encoder default.
    pub learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden_width: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: None,
            weight_decay: 0.0,
            max_grad_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden_width: None,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail("learning_rate must be > 0");
            }
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return fail("max_grad_norm must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon.is_nan()
            || self.epsilon <= 0.0
        {
            return fail("Adam betas must lie in [0, 1) and epsilon be > 0");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be >= 0");
        }
        if self.hidden_width == Some(0) {
            return fail("hidden_width must be >= 1");
        }
        Ok(())
    }

    pub fn learning_rate_for(&self, encoder: &EncoderConfig) -> f64 {
        self.learning_rate.unwrap_or(match encoder {
            EncoderConfig::Hashed(_) => HASHED_LEARNING_RATE,
            EncoderConfig::Embeddings { .. } => EMBEDDING_LEARNING_RATE,
        })
    }
}

/// `lr0 * (1 - step / total)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearSchedule {
    pub base: f64,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn at(&self, step: usize) -> f64 {
        self.base * (1.0 - step as f64 / self.total_steps as f64)
    }
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if self.weight_decay != 0.0 {
                *p -= lr * self.weight_decay * *p;
            }
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One encoded, labelled training example.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub input: Encoded,
    pub gold: crate::schema::GoldLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskScores {
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_total: f64,
    /// Mean joint loss over the examples that carried one.
    pub mean_joint: Option<f64>,
    pub mean_tasks: BTreeMap<TaskId, f64>,
    pub final_lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<BTreeMap<TaskId, TaskScores>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRun {
    pub mode: ModeFlags,
    pub config: TrainConfig,
    pub learning_rate: f64,
    pub examples: usize,
    pub steps: usize,
    pub fingerprint: String,
    pub epochs: Vec<EpochLog>,
}

/// Held-out data scored after every epoch.
pub struct DevSet<'a> {
    pub corpus: &'a Corpus,
    pub inputs: Vec<Encoded>,
    pub scope: Scope,
}

/// Optimizes a freshly initialized head on `examples`.
///
/// Returns the head and the per-epoch log; the fingerprint field of the log
/// is left empty for the caller to fill.
pub fn fit(
    examples: &[TrainExample],
    schema: &TaskSchema,
    mode: ModeFlags,
    input_width: usize,
    config: &TrainConfig,
    learning_rate: f64,
    dev: Option<&DevSet<'_>>,
) -> Result<(Head, TrainRun), TrainError> {
    config.validate()?;
    mode.mode.check_schema(schema)?;
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = Head::init(schema.len(), input_width, config.hidden_width, &mut rng);
    let mut adam = Adam::new(
        head.param_count(),
        config.beta1,
        config.beta2,
        config.epsilon,
        config.weight_decay,
    );
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let schedule = LinearSchedule {
        base: learning_rate,
        total_steps: config.epochs * steps_per_epoch,
    };

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grad = vec![0.0; head.param_count()];
    let mut step = 0;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        let mut sum_joint = (0.0, 0usize);
        let mut sum_tasks: BTreeMap<TaskId, (f64, usize)> = BTreeMap::new();
        let mut lr = schedule.at(step);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let ex = &examples[i];
                let wrap = |source| TrainError::Example {
                    id: ex.id.clone(),
                    source,
                };
                let (z, cache) = head.forward_cached(&ex.input).map_err(wrap)?;
                let loss = objective(mode.mode, &z, &ex.gold, schema).map_err(wrap)?;
                head.backward(&ex.input, &cache, &loss.grad, &mut grad);
                batch_loss += loss.total;
                if let Some(j) = loss.joint {
                    sum_joint.0 += j;
                    sum_joint.1 += 1;
                }
                for (t, l) in loss.tasks {
                    let e = sum_tasks.entry(t).or_default();
                    e.0 += l;
                    e.1 += 1;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            lr = schedule.at(step);
            let grad_norm = clip_grad_norm(&mut grad, config.max_grad_norm);
            if !batch_loss.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    lr,
                    grad_norm,
                });
            }
            adam.step(head.params_mut(), &grad, lr);
            sum_total += batch_loss;
            step += 1;
        }
        let dev_scores = dev.map(|d| evaluate(&head, schema, d)).transpose()?;
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_total: sum_total / examples.len() as f64,
            mean_joint: (sum_joint.1 > 0).then(|| sum_joint.0 / sum_joint.1 as f64),
            mean_tasks: sum_tasks
                .into_iter()
                .map(|(t, (s, n))| (t, s / n as f64))
                .collect(),
            final_lr: lr,
            dev: dev_scores,
        });
    }
    let run = TrainRun {
        mode,
        config: config.clone(),
        learning_rate,
        examples: examples.len(),
        steps: step,
        fingerprint: String::new(),
        epochs: log,
    };
    Ok((head, run))
}

/// Macro/weighted F1 per task of `head` on a dev set, direct inference.
pub fn evaluate(
    head: &Head,
    schema: &TaskSchema,
    dev: &DevSet<'_>,
) -> Result<BTreeMap<TaskId, TaskScores>, TrainError> {
    let mut predicted = HashMap::with_capacity(dev.inputs.len());
    for (ex, x) in dev.corpus.examples.iter().zip(&dev.inputs) {
        let p = predict(head, x, schema, Inference::Direct)?;
        predicted.insert(ex.id.clone(), p.labels);
    }
    let report = score_labels(dev.corpus, &predicted, schema, dev.scope)?;
    Ok(report
        .tasks
        .into_iter()
        .map(|(t, r)| {
            (
                t,
                TaskScores {
                    macro_f1: r.macro_f1,
                    weighted_f1: r.weighted_f1,
                },
            )
        })
        .collect())
}

/// Narrows a corpus to what `mode` trains on and returns the matching schema.
///
/// Single-task B/C models train on hateful posts carrying that task's label
/// unless `padded` keeps the `NONE` rows.
pub fn prepare(
    corpus: &Corpus,
    mode: TrainingMode,
    padded: bool,
) -> Result<(Corpus, TaskSchema), TrainError> {
    match mode {
        TrainingMode::Single { task: TaskId::A } => {
            Ok((corpus.clone(), TaskSchema::single_task(TaskId::A, false)))
        }
        TrainingMode::Single { task } => {
            let mut narrowed = if padded {
                corpus.clone()
            } else {
                filter_hateful(corpus)
            };
            narrowed
                .examples
                .retain(|e| matches!(e.gold.get(task), Some(l) if padded || l != Label::NONE));
            Ok((narrowed, TaskSchema::single_task(task, padded)))
        }
        TrainingMode::Joint | TrainingMode::Multitask => {
            if !corpus.schema.is_chain() {
                return Err(TrainError::Config(
                    "joint modes need a corpus with task A".into(),
                ));
            }
            Ok((corpus.clone(), corpus.schema.clone()))
        }
    }
}

pub fn encode_corpus(
    corpus: &Corpus,
    encoder: &EncoderConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<Vec<Encoded>, FeatureError> {
    if let EncoderConfig::Hashed(c) = encoder {
        c.validate()?;
    }
    corpus
        .examples
        .iter()
        .map(|e| encoder.encode(&e.id, &e.text, embeddings))
        .collect()
}

/// A trained model together with its run log.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ModelFile,
    pub run: TrainRun,
}

/// Encodes `corpus`, trains a head under `mode` and packages the model file.
///
/// `corpus` must already be narrowed with [`prepare`]; `schema` is the one
/// `prepare` returned.
pub fn train(
    corpus: &Corpus,
    schema: &TaskSchema,
    mode: ModeFlags,
    encoder: &EncoderConfig,
    embeddings: Option<&EmbeddingTable>,
    config: &TrainConfig,
    dev: Option<(&Corpus, Scope)>,
) -> Result<Trained, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let inputs = encode_corpus(corpus, encoder, embeddings)?;
    let examples: Vec<TrainExample> = corpus
        .examples
        .iter()
        .zip(inputs)
        .map(|(e, input)| TrainExample {
            id: e.id.clone(),
            input,
            gold: e.gold,
        })
        .collect();
    let dev_set = dev
        .map(|(c, scope)| -> Result<DevSet<'_>, TrainError> {
            Ok(DevSet {
                corpus: c,
                inputs: encode_corpus(c, encoder, embeddings)?,
                scope,
            })
        })
        .transpose()?;
    let lr = config.learning_rate_for(encoder);
    let (head, mut run) = fit(
        &examples,
        schema,
        mode,
        encoder.width(),
        config,
        lr,
        dev_set.as_ref(),
    )?;
    run.fingerprint = corpus.fingerprint();
    Ok(Trained {
        model: ModelFile::new(schema.clone(), encoder.clone(), mode, head),
        run,
    })
}
