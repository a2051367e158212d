//! Joint training loop and evaluation.
//!
//! Every step consumes one NER batch and one POS batch. An epoch lasts as
//! many steps as the larger task has batches; the smaller task's loader
//! restarts with a fresh shuffle whenever it runs out. Dropout masks are
//! drawn from a stream derived from `(seed, step, task)`, so the masks one
//! task sees do not depend on whether the other task's forward pass ran.

use std::fmt::Write as _;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::TensorError;
use crate::checkpoint::Checkpoint;
use crate::config::{Objective, Selection, SelectionMetric, TrainConfig};
use crate::corpus::{build_vocab, load_task, make_batches, mix_seed, Batch, CorpusError, LabeledCorpus, Split, TagSet, Task, TaskData, Vocabulary};
use crate::encoder::EncoderError;
use crate::heads::LossError;
use crate::metrics::{span_f1, token_accuracy, EvalReport, MetricsError, SpanMode};
use crate::model::{ModelError, MtlModel};
use crate::optim::{clip_grad_norm, AdamW};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no {task} {split} data for subsets {subsets}")]
    MissingSplit { task: Task, split: Split, subsets: String },
    #[error("tagset mismatch: {0}")]
    TagsetMismatch(String),
    #[error("training diverged at epoch {epoch}, step {step}: l_ner={l_ner}, l_pos={l_pos} ({detail})")]
    Diverged {
        epoch: usize,
        step: u64,
        l_ner: f64,
        l_pos: f64,
        detail: String,
    },
}

/// Loss values of one step, as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub l_ner: f64,
    pub l_pos: f64,
    pub l_combined: f64,
}

/// Training and dev corpora with the tables shared by both tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub vocab: Vocabulary,
    pub ner_tagset: TagSet,
    pub pos_tagset: TagSet,
    pub ner_train: LabeledCorpus,
    pub pos_train: LabeledCorpus,
    pub ner_dev: LabeledCorpus,
    pub pos_dev: LabeledCorpus,
}

fn required(data: &TaskData, keys: &[String], split: Split) -> Result<LabeledCorpus, TrainError> {
    data.select(keys, split)?
        .filter(|c| !c.sentences.is_empty())
        .ok_or_else(|| TrainError::MissingSplit {
            task: data.task,
            split,
            subsets: keys.join(","),
        })
}

impl TrainingData {
    /// Selects the configured subsets of already loaded task data.
    pub fn from_tasks(config: &TrainConfig, ner: &TaskData, pos: &TaskData) -> Result<Self, TrainError> {
        let mut parts = Vec::new();
        for data in [ner, pos] {
            let keys = config.data.subsets.resolve(data.subsets());
            let dev_keys = match &config.data.target_subset {
                Some(t) => vec![t.clone()],
                None => keys.clone(),
            };
            parts.push((required(data, &keys, Split::Train)?, required(data, &dev_keys, Split::Dev)?));
        }
        let (pos_train, pos_dev) = parts.pop().unwrap();
        let (ner_train, ner_dev) = parts.pop().unwrap();
        let vocab = build_vocab(&[&ner_train, &pos_train], config.data.min_count);
        Ok(TrainingData {
            vocab,
            ner_tagset: ner.tagset.clone(),
            pos_tagset: pos.tagset.clone(),
            ner_train,
            pos_train,
            ner_dev,
            pos_dev,
        })
    }

    /// Reads the train and dev splits under `root`. Test files are not opened.
    pub fn load(config: &TrainConfig, root: &Path) -> Result<Self, TrainError> {
        let splits = [Split::Train, Split::Dev];
        let ner = load_task(root, Task::Ner, &splits)?;
        let pos = load_task(root, Task::Pos, &splits)?;
        Self::from_tasks(config, &ner, &pos)
    }
}

fn non_finite(e: &ModelError) -> Option<&'static str> {
    match e {
        ModelError::Tensor(TensorError::NonFinite(what)) | ModelError::Encoder(EncoderError::Tensor(TensorError::NonFinite(what))) => Some(what),
        _ => None,
    }
}

fn as_dyn(r: &mut Option<ChaCha8Rng>) -> Option<&mut dyn RngCore> {
    r.as_mut().map(|r| r as &mut dyn RngCore)
}

/// Model, optimizer and step counter of one run.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    pub config: TrainConfig,
    pub model: MtlModel<T>,
    pub optimizer: AdamW<T>,
    pub global_step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: &TrainConfig, vocab_size: usize, ner_tags: usize, pos_tags: usize) -> Result<Self, TrainError> {
        config.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let model = MtlModel::init(&config.model_config(vocab_size, ner_tags, pos_tags), config.training.seed)?;
        let optimizer = AdamW::new(config.optimizer(), &model.parameters());
        Ok(Trainer {
            config: config.clone(),
            model,
            optimizer,
            global_step: 0,
        })
    }

    fn dropout_rng(&self, task: Task) -> Option<ChaCha8Rng> {
        (self.config.model.dropout > 0.0).then(|| {
            let t = match task {
                Task::Ner => 0,
                Task::Pos => 1,
            };
            ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.training.seed, self.global_step, t]))
        })
    }

    fn diverged(&self, l_ner: f64, l_pos: f64, detail: String) -> TrainError {
        TrainError::Diverged {
            epoch: 0,
            step: self.global_step,
            l_ner,
            l_pos,
            detail,
        }
    }

    /// Zeroes gradients, runs both forward passes and backpropagates the
    /// objective. Parameters are left unchanged.
    pub fn compute_gradients(&mut self, ner: &Batch, pos: &Batch) -> Result<StepLosses, TrainError> {
        self.model.zero_grad();
        let mut rng_ner = self.dropout_rng(Task::Ner);
        let mut rng_pos = self.dropout_rng(Task::Pos);
        let forward = |task, batch, rng| match self.model.task_loss(task, batch, rng) {
            Err(e) => Err(match non_finite(&e) {
                Some(what) => self.diverged(f64::NAN, f64::NAN, format!("non-finite {what} in {task} forward pass")),
                None => e.into(),
            }),
            Ok(l) => Ok(l),
        };
        let l_ner = forward(Task::Ner, ner, as_dyn(&mut rng_ner))?;
        let l_pos = forward(Task::Pos, pos, as_dyn(&mut rng_pos))?;
        let (v_ner, v_pos) = (l_ner.item().map_err(ModelError::from)?.as_f64(), l_pos.item().map_err(ModelError::from)?.as_f64());
        let combined = match self.config.training.objective {
            Objective::Joint => match self.config.loss().combine(&l_ner, &l_pos) {
                Ok(c) => c,
                Err(LossError::InvalidLoss { task, value }) => {
                    return Err(self.diverged(v_ner, v_pos, format!("{task} loss is {value}")))
                }
                Err(e) => return Err(TrainError::Config(e.to_string())),
            },
            Objective::Single(Task::Ner) => l_ner,
            Objective::Single(Task::Pos) => l_pos,
        };
        let v = combined.item().map_err(ModelError::from)?.as_f64();
        if !v.is_finite() {
            return Err(self.diverged(v_ner, v_pos, format!("objective is {v}")));
        }
        combined.backward().map_err(ModelError::from)?;
        let bad_grad = self
            .model
            .parameters()
            .into_iter()
            .find(|p| p.tensor.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())));
        if let Some(p) = bad_grad {
            return Err(self.diverged(v_ner, v_pos, format!("non-finite gradient in {}", p.name)));
        }
        Ok(StepLosses {
            l_ner: v_ner,
            l_pos: v_pos,
            l_combined: v,
        })
    }

    /// One optimizer update on a pair of batches.
    pub fn train_step(&mut self, ner: &Batch, pos: &Batch) -> Result<StepLosses, TrainError> {
        let losses = self.compute_gradients(ner, pos)?;
        let params = self.model.parameters();
        if let Some(max) = self.config.training.clip_norm {
            clip_grad_norm(&params, max);
        }
        self.optimizer.update(&params);
        self.global_step += 1;
        Ok(losses)
    }
}

/// One row of the epoch log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Global step count at the end of the epoch.
    pub step: u64,
    pub l_ner: f64,
    pub l_pos: f64,
    pub l_combined: f64,
    pub dev_ner_f1: f64,
    pub dev_pos_acc: f64,
}

impl EpochRecord {
    pub fn selection_value(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::DevNerF1 => self.dev_ner_f1,
            SelectionMetric::DevPosAcc => self.dev_pos_acc,
            SelectionMetric::DevMean => 0.5 * (self.dev_ner_f1 + self.dev_pos_acc),
        }
    }
}

pub const EPOCH_LOG_COLUMNS: [&str; 7] = ["epoch", "step", "l_ner", "l_pos", "l_combined", "dev_ner_f1", "dev_pos_acc"];

/// CSV with [`EPOCH_LOG_COLUMNS`] as header; floats in shortest round-trip form.
pub fn epoch_log_csv(records: &[EpochRecord]) -> String {
    let mut out = EPOCH_LOG_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.step, r.l_ner, r.l_pos, r.l_combined, r.dev_ner_f1, r.dev_pos_acc
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch of the best dev selection value.
    pub best_epoch: usize,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub selection: Selection,
}

impl TrainOutcome {
    pub fn selected(&self) -> &Checkpoint {
        match self.selection {
            Selection::Best => &self.best,
            Selection::Last => &self.last,
        }
    }

    pub fn selected_epoch(&self) -> usize {
        match self.selection {
            Selection::Best => self.best_epoch,
            Selection::Last => self.records.len(),
        }
    }
}

/// Cycling, reshuffling batch source for one task.
struct Loader<'a> {
    corpus: &'a LabeledCorpus,
    vocab: &'a Vocabulary,
    batch_size: usize,
    max_len: usize,
    seed: u64,
    epoch: usize,
    cycle: usize,
    batches: Vec<Batch>,
}

impl<'a> Loader<'a> {
    fn new(corpus: &'a LabeledCorpus, vocab: &'a Vocabulary, config: &TrainConfig, task: Task) -> Self {
        Loader {
            corpus,
            vocab,
            batch_size: config.training.batch_size,
            max_len: config.model.max_seq_len,
            seed: mix_seed(&[config.training.seed, 0x5348_5546, task as u64]),
            epoch: usize::MAX,
            cycle: 0,
            batches: Vec::new(),
        }
    }

    fn batches_per_pass(&self) -> usize {
        self.corpus.sentences.len().div_ceil(self.batch_size)
    }

    fn get(&mut self, epoch: usize, step_in_epoch: usize) -> &Batch {
        let n = self.batches_per_pass();
        let cycle = step_in_epoch / n;
        if epoch != self.epoch || cycle != self.cycle || self.batches.is_empty() {
            let seed = mix_seed(&[self.seed, epoch as u64, cycle as u64]);
            self.batches = make_batches(self.corpus, self.vocab, self.batch_size, self.max_len, Some(seed));
            self.epoch = epoch;
            self.cycle = cycle;
        }
        &self.batches[step_in_epoch % n]
    }
}

/// Trains from scratch, evaluating on dev after every epoch. `on_epoch` sees
/// each log row as soon as it exists.
pub fn train<T: Real>(
    config: &TrainConfig,
    data: &TrainingData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    if data.ner_train.task != Task::Ner || data.pos_train.task != Task::Pos {
        return Err(TrainError::TagsetMismatch("training corpora are not NER and POS".into()));
    }
    let mut trainer = Trainer::<T>::new(config, data.vocab.len(), data.ner_tagset.len(), data.pos_tagset.len())?;
    let mut ner_loader = Loader::new(&data.ner_train, &data.vocab, config, Task::Ner);
    let mut pos_loader = Loader::new(&data.pos_train, &data.vocab, config, Task::Pos);
    let steps = ner_loader.batches_per_pass().max(pos_loader.batches_per_pass());
    let metric = config.training.selection_metric;

    let mut records = Vec::with_capacity(config.training.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    for epoch in 1..=config.training.epochs {
        let mut sums = [0.0f64; 3];
        for i in 0..steps {
            let ner = ner_loader.get(epoch, i);
            let pos = pos_loader.get(epoch, i);
            let l = trainer.train_step(ner, pos).map_err(|e| match e {
                TrainError::Diverged { step, l_ner, l_pos, detail, .. } => TrainError::Diverged {
                    epoch,
                    step,
                    l_ner,
                    l_pos,
                    detail,
                },
                other => other,
            })?;
            sums[0] += l.l_ner;
            sums[1] += l.l_pos;
            sums[2] += l.l_combined;
        }
        let dev = evaluate(&trainer.model, &data.vocab, &data.ner_tagset, &data.pos_tagset, &data.ner_dev, &data.pos_dev)?;
        let record = EpochRecord {
            epoch,
            step: trainer.global_step,
            l_ner: sums[0] / steps as f64,
            l_pos: sums[1] / steps as f64,
            l_combined: sums[2] / steps as f64,
            dev_ner_f1: dev.ner.value,
            dev_pos_acc: dev.pos.value,
        };
        log::info!(
            "epoch {epoch}: l_ner={:.4} l_pos={:.4} dev_ner_f1={:.4} dev_pos_acc={:.4}",
            record.l_ner,
            record.l_pos,
            record.dev_ner_f1,
            record.dev_pos_acc
        );
        on_epoch(&record);
        records.push(record);
        let value = record.selection_value(metric);
        if best.as_ref().is_none_or(|(b, _, _)| value > *b) {
            best = Some((value, epoch, capture(&trainer, data, epoch)));
        }
    }
    let last = capture(&trainer, data, config.training.epochs);
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        records,
        best_epoch,
        best,
        last,
        selection: config.training.selection,
    })
}

fn capture<T: Real>(trainer: &Trainer<T>, data: &TrainingData, epoch: usize) -> Checkpoint {
    Checkpoint::capture(
        &trainer.model,
        &trainer.optimizer,
        &trainer.config,
        &data.vocab,
        &data.ner_tagset,
        &data.pos_tagset,
        epoch as u64,
        trainer.global_step,
    )
}

/// Predicted tag strings for every sentence of `corpus`, in corpus order.
/// Tokens beyond the model's maximum length get the first tag.
pub fn predict_tags<T: Real>(
    model: &MtlModel<T>,
    task: Task,
    vocab: &Vocabulary,
    tagset: &TagSet,
    corpus: &LabeledCorpus,
) -> Result<Vec<Vec<String>>, TrainError> {
    let max_len = model.config.encoder.max_seq_len;
    let mut out = vec![Vec::new(); corpus.sentences.len()];
    for batch in make_batches(corpus, vocab, 32, max_len, None) {
        let ids = model.predict(task, &batch.tokens)?;
        for (row, &si) in ids.into_iter().zip(&batch.sentence_indices) {
            let mut tags: Vec<String> = row.into_iter().map(|i| tagset.tag(i).to_string()).collect();
            tags.resize(corpus.sentences[si].len(), tagset.tag(0).to_string());
            out[si] = tags;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub ner: EvalReport,
    pub pos: EvalReport,
}

/// NER span F1 (lenient spans) and POS token accuracy.
pub fn evaluate<T: Real>(
    model: &MtlModel<T>,
    vocab: &Vocabulary,
    ner_tagset: &TagSet,
    pos_tagset: &TagSet,
    ner: &LabeledCorpus,
    pos: &LabeledCorpus,
) -> Result<Evaluation, TrainError> {
    for (c, tagset, task) in [(ner, ner_tagset, Task::Ner), (pos, pos_tagset, Task::Pos)] {
        if c.task != task || tagset.task != task {
            return Err(TrainError::TagsetMismatch(format!(
                "expected {task} data, got a {} corpus with a {} tagset",
                c.task, tagset.task
            )));
        }
        if tagset.len() != model.head(task).num_tags() {
            return Err(TrainError::TagsetMismatch(format!(
                "{task} tagset has {} tags, model head has {}",
                tagset.len(),
                model.head(task).num_tags()
            )));
        }
    }
    let gold = |c: &LabeledCorpus| c.sentences.iter().map(|s| s.tags.clone()).collect::<Vec<_>>();
    let ner_pred = predict_tags(model, Task::Ner, vocab, ner_tagset, ner)?;
    let pos_pred = predict_tags(model, Task::Pos, vocab, pos_tagset, pos)?;
    Ok(Evaluation {
        ner: span_f1(&gold(ner), &ner_pred, SpanMode::Lenient)?,
        pos: token_accuracy(&gold(pos), &pos_pred)?,
    })
}
