//! Small transformer encoder producing per-token hidden states.
//!
//! Two independently initialized instances (`head_a`, `head_b`) read the same
//! word-level token ids, so their outputs are position-aligned and can be
//! fused pointwise.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{Parameter, Tensor, TensorError};
use crate::layers::{normal_init, LayerNorm, Linear};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("batch layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 2,
            max_seq_len: 128,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.vocab_size == 0 || self.max_seq_len == 0 || self.hidden_dim == 0 {
            return fail("vocab_size, max_seq_len and hidden_dim must be positive");
        }
        if self.num_layers == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return fail("num_layers, num_heads and ffn_dim must be positive");
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return fail("hidden_dim must be divisible by num_heads");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// Token ids of a padded batch, row-major `[batch, seq]`. `pad[i]` marks
/// padding positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq: usize,
    pub ids: Vec<usize>,
    pub pad: Vec<bool>,
}

impl TokenBatch {
    /// Builds a batch from unpadded sentences, padding with id 0.
    pub fn from_sentences(sentences: &[Vec<usize>]) -> Self {
        let batch = sentences.len();
        let seq = sentences.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = vec![0; batch * seq];
        let mut pad = vec![true; batch * seq];
        for (b, s) in sentences.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                ids[b * seq + t] = id;
                pad[b * seq + t] = false;
            }
        }
        TokenBatch { batch, seq, ids, pad }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionWeights<T: Real> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderBlock<T: Real> {
    pub attention: AttentionWeights<T>,
    pub attn_norm: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ffn_norm: LayerNorm<T>,
}

#[derive(Debug, Clone)]
pub struct Encoder<T: Real> {
    pub name: String,
    pub config: EncoderConfig,
    pub token_embedding: Parameter<T>,
    pub position_embedding: Parameter<T>,
    pub embed_norm: LayerNorm<T>,
    pub blocks: Vec<EncoderBlock<T>>,
}

impl<T: Real> Encoder<T> {
    /// Random initialization: N(0, 0.02²) for embeddings and weight
    /// matrices, zero biases, unit layer-norm gains. Deterministic in `seed`.
    pub fn init(name: &str, config: &EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let token_embedding = normal_init(format!("{name}.token_embedding"), &[config.vocab_size, d], &mut rng)?;
        let position_embedding =
            normal_init(format!("{name}.position_embedding"), &[config.max_seq_len, d], &mut rng)?;
        let embed_norm = LayerNorm::init(&format!("{name}.embed_norm"), d)?;
        let mut blocks = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let p = format!("{name}.block{l}");
            blocks.push(EncoderBlock {
                attention: AttentionWeights {
                    query: Linear::init(&format!("{p}.attn.wq"), d, d, &mut rng)?,
                    key: Linear::init(&format!("{p}.attn.wk"), d, d, &mut rng)?,
                    value: Linear::init(&format!("{p}.attn.wv"), d, d, &mut rng)?,
                    output: Linear::init(&format!("{p}.attn.wo"), d, d, &mut rng)?,
                },
                attn_norm: LayerNorm::init(&format!("{p}.attn_norm"), d)?,
                ffn_in: Linear::init(&format!("{p}.ffn.w1"), d, config.ffn_dim, &mut rng)?,
                ffn_out: Linear::init(&format!("{p}.ffn.w2"), config.ffn_dim, d, &mut rng)?,
                ffn_norm: LayerNorm::init(&format!("{p}.ffn_norm"), d)?,
            });
        }
        Ok(Encoder {
            name: name.to_string(),
            config: config.clone(),
            token_embedding,
            position_embedding,
            embed_norm,
            blocks,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        out.extend(self.embed_norm.parameters());
        for b in &self.blocks {
            let a = &b.attention;
            for lin in [&a.query, &a.key, &a.value, &a.output] {
                out.extend(lin.parameters());
            }
            out.extend(b.attn_norm.parameters());
            out.extend(b.ffn_in.parameters());
            out.extend(b.ffn_out.parameters());
            out.extend(b.ffn_norm.parameters());
        }
        out
    }

    /// Hidden states `[batch, seq, d]`. Padding positions never influence
    /// real positions: they are excluded as attention keys. Dropout runs only
    /// when `dropout_rng` is given.
    pub fn encode(&self, tokens: &TokenBatch, mut dropout_rng: Option<&mut dyn RngCore>) -> Result<Tensor<T>, EncoderError> {
        let (batch, seq) = (tokens.batch, tokens.seq);
        let d = self.config.hidden_dim;
        if tokens.ids.len() != batch * seq || tokens.pad.len() != batch * seq || batch == 0 || seq == 0 {
            return Err(EncoderError::Layout(format!(
                "{} ids and {} pad flags for batch {batch} x seq {seq}",
                tokens.ids.len(),
                tokens.pad.len()
            )));
        }
        if seq > self.config.max_seq_len {
            return Err(EncoderError::SequenceTooLong {
                len: seq,
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = tokens.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(EncoderError::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let x = self
            .token_embedding
            .tensor
            .embedding(&tokens.ids)?
            .add(&self.position_embedding.tensor.embedding(&positions)?)?;
        let x = self.embed_norm.forward(&x)?;
        let mut x = maybe_dropout(&x, self.config.dropout_rate, &mut dropout_rng)?;

        let heads = self.config.num_heads;
        let keep = key_mask(&tokens.pad, batch, heads, seq);
        for block in &self.blocks {
            let attn = self.attention(block, &x, &keep, batch, seq)?;
            let attn = maybe_dropout(&attn, self.config.dropout_rate, &mut dropout_rng)?;
            x = block.attn_norm.forward(&x.add(&attn)?)?;
            let ff = block.ffn_out.forward(&block.ffn_in.forward(&x)?.gelu())?;
            let ff = maybe_dropout(&ff, self.config.dropout_rate, &mut dropout_rng)?;
            x = block.ffn_norm.forward(&x.add(&ff)?)?;
        }
        Ok(x.reshape(&[batch, seq, d])?)
    }

    /// Multi-head scaled dot-product self-attention over `x: [batch*seq, d]`.
    fn attention(
        &self,
        block: &EncoderBlock<T>,
        x: &Tensor<T>,
        keep: &[bool],
        batch: usize,
        seq: usize,
    ) -> Result<Tensor<T>, TensorError> {
        let heads = self.config.num_heads;
        let hd = self.config.head_dim();
        let d = self.config.hidden_dim;
        // [batch*seq, d] -> [batch*heads, seq, hd]
        let split = |t: Tensor<T>| -> Result<Tensor<T>, TensorError> {
            t.reshape(&[batch, seq, heads, hd])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[batch * heads, seq, hd])
        };
        let a = &block.attention;
        let q = split(a.query.forward(x)?)?;
        let k = split(a.key.forward(x)?)?;
        let v = split(a.value.forward(x)?)?;
        let scores = q
            .batch_matmul(&k.permute(&[0, 2, 1])?)?
            .scale(T::lit(1.0 / (hd as f64).sqrt()));
        let probs = scores.masked_softmax(Some(keep))?;
        let ctx = probs
            .batch_matmul(&v)?
            .reshape(&[batch, heads, seq, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * seq, d])?;
        a.output.forward(&ctx)
    }

    /// Attention probabilities of the first block, `[batch*heads, seq, seq]`,
    /// computed without dropout. Exposed for inspection and tests.
    pub fn first_block_attention(&self, tokens: &TokenBatch) -> Result<Vec<T>, EncoderError> {
        let (batch, seq) = (tokens.batch, tokens.seq);
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let x = self
            .token_embedding
            .tensor
            .embedding(&tokens.ids)?
            .add(&self.position_embedding.tensor.embedding(&positions)?)?;
        let x = self.embed_norm.forward(&x)?;
        let block = &self.blocks[0];
        let heads = self.config.num_heads;
        let hd = self.config.head_dim();
        let split = |t: Tensor<T>| -> Result<Tensor<T>, TensorError> {
            t.reshape(&[batch, seq, heads, hd])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[batch * heads, seq, hd])
        };
        let q = split(block.attention.query.forward(&x)?)?;
        let k = split(block.attention.key.forward(&x)?)?;
        let scores = q
            .batch_matmul(&k.permute(&[0, 2, 1])?)?
            .scale(T::lit(1.0 / (hd as f64).sqrt()));
        let keep = key_mask(&tokens.pad, batch, heads, seq);
        Ok(scores.masked_softmax(Some(&keep))?.to_vec())
    }
}

fn maybe_dropout<T: Real>(x: &Tensor<T>, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Result<Tensor<T>, TensorError> {
    match rng {
        Some(rng) if rate > 0.0 => x.dropout(rate, &mut **rng),
        _ => Ok(x.clone()),
    }
}

/// `keep[(b*heads + h), i, j] = !pad[b, j]`.
fn key_mask(pad: &[bool], batch: usize, heads: usize, seq: usize) -> Vec<bool> {
    let mut keep = Vec::with_capacity(batch * heads * seq * seq);
    for b in 0..batch {
        for _ in 0..heads {
            for _ in 0..seq {
                keep.extend((0..seq).map(|j| !pad[b * seq + j]));
            }
        }
    }
    keep
}
