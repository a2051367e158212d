//! The multitask model: two encoders, fusion, and one head per task.
//!
//! Everything below the heads is shared by both tasks (hard parameter
//! sharing); only the two linear heads are task-specific.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{Parameter, Tensor, TensorError};
use crate::corpus::{mix_seed, Batch, Task};
use crate::encoder::{Encoder, EncoderConfig, EncoderError, TokenBatch};
use crate::fusion::{fuse, FusionMode};
use crate::heads::{argmax_rows, TaskHead};
use crate::layers::{LayerNorm, Linear};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Configuration of `head_a`; `head_b` copies it except for `hidden_dim_b`.
    pub encoder: EncoderConfig,
    /// Hidden size of `head_b` when it differs from `head_a`. Requires `projection`.
    pub hidden_dim_b: Option<usize>,
    /// Linear map of `head_b`'s states into `head_a`'s width before fusion.
    pub projection: bool,
    pub fusion: FusionMode,
    /// Layer norm on the fused representation.
    pub post_fusion_norm: bool,
    pub ner_tags: usize,
    pub pos_tags: usize,
}

impl ModelConfig {
    pub fn encoder_b(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: self.hidden_dim_b.unwrap_or(self.encoder.hidden_dim),
            ..self.encoder.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        self.encoder_b().validate()?;
        if self.encoder_b().hidden_dim != self.encoder.hidden_dim && !self.projection {
            return Err(ModelError::Config(
                "head_b hidden size differs from head_a; enable projection".into(),
            ));
        }
        if self.ner_tags == 0 || self.pos_tags == 0 {
            return Err(ModelError::Config("both tasks need at least one tag".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MtlModel<T: Real> {
    pub config: ModelConfig,
    pub encoder_a: Encoder<T>,
    pub encoder_b: Encoder<T>,
    pub projection: Option<Linear<T>>,
    pub fusion_norm: Option<LayerNorm<T>>,
    pub ner_head: TaskHead<T>,
    pub pos_head: TaskHead<T>,
}

impl<T: Real> MtlModel<T> {
    /// Deterministic in `seed`; the two encoders get distinct derived seeds.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let encoder_a = Encoder::init("head_a", &config.encoder, mix_seed(&[seed, 1]))?;
        let encoder_b = Encoder::init("head_b", &config.encoder_b(), mix_seed(&[seed, 2]))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3]));
        let d = config.encoder.hidden_dim;
        let projection = if config.projection {
            Some(Linear::init("projection_b", config.encoder_b().hidden_dim, d, &mut rng)?)
        } else {
            None
        };
        let fusion_norm = if config.post_fusion_norm {
            Some(LayerNorm::init("fusion_norm", d)?)
        } else {
            None
        };
        Ok(MtlModel {
            config: config.clone(),
            encoder_a,
            encoder_b,
            projection,
            fusion_norm,
            ner_head: TaskHead::init(Task::Ner, d, config.ner_tags, &mut rng)?,
            pos_head: TaskHead::init(Task::Pos, d, config.pos_tags, &mut rng)?,
        })
    }

    /// All trainable parameters in a fixed order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out = self.encoder_a.parameters();
        out.extend(self.encoder_b.parameters());
        if let Some(p) = &self.projection {
            out.extend(p.parameters());
        }
        if let Some(n) = &self.fusion_norm {
            out.extend(n.parameters());
        }
        out.extend(self.ner_head.parameters());
        out.extend(self.pos_head.parameters());
        out
    }

    pub fn head(&self, task: Task) -> &TaskHead<T> {
        match task {
            Task::Ner => &self.ner_head,
            Task::Pos => &self.pos_head,
        }
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.tensor.zero_grad();
        }
    }

    /// Fused representation `[batch, seq, d]` shared by both heads.
    pub fn shared(&self, tokens: &TokenBatch, mut dropout_rng: Option<&mut dyn RngCore>) -> Result<Tensor<T>, ModelError> {
        let h_a = self.encoder_a.encode(tokens, dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
        let mut h_b = self.encoder_b.encode(tokens, dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
        if let Some(p) = &self.projection {
            h_b = p.forward(&h_b)?;
        }
        let mut shared = fuse(&h_a, &h_b, self.config.fusion)?;
        if let Some(n) = &self.fusion_norm {
            shared = n.forward(&shared)?;
        }
        Ok(shared)
    }

    pub fn logits(&self, task: Task, tokens: &TokenBatch, dropout_rng: Option<&mut dyn RngCore>) -> Result<Tensor<T>, ModelError> {
        Ok(self.head(task).classify(&self.shared(tokens, dropout_rng)?)?)
    }

    /// Mean cross-entropy of one task over the non-pad positions of `batch`.
    pub fn task_loss(&self, task: Task, batch: &Batch, dropout_rng: Option<&mut dyn RngCore>) -> Result<Tensor<T>, ModelError> {
        let logits = self.logits(task, &batch.tokens, dropout_rng)?;
        let c = self.head(task).num_tags();
        Ok(logits.reshape(&[batch.tokens.batch * batch.tokens.seq, c])?.cross_entropy(&batch.tag_ids)?)
    }

    /// Greedy tag ids for each row's real (non-pad) positions.
    pub fn predict(&self, task: Task, tokens: &TokenBatch) -> Result<Vec<Vec<usize>>, ModelError> {
        let logits = self.logits(task, tokens, None)?;
        let ids = argmax_rows(&logits.data(), self.head(task).num_tags());
        Ok((0..tokens.batch)
            .map(|b| {
                (0..tokens.seq)
                    .filter(|&t| !tokens.pad[b * tokens.seq + t])
                    .map(|t| ids[b * tokens.seq + t])
                    .collect()
            })
            .collect())
    }
}
