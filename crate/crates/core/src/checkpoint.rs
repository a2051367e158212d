//! Binary checkpoint format.
//!
//! All integers are little-endian; strings are a `u64` byte length followed
//! by UTF-8; float arrays are a `u64` count followed by `f64` values.
//!
//! ```text
//! magic "MTLF" | u32 version
//! u64 n_params, then per parameter: name | u64 rank | u64 dims.. | f64 array
//! u64 optimizer step | u64 n_moments, then per parameter: m array | v array
//! config text | u64 vocab min_count | u64 n_tokens | tokens..
//! NER tags (u64 count | strings) | POS tags (u64 count | strings)
//! u64 epoch | u64 rng seed | u64 rng global step
//! ```
//!
//! Values are always stored as `f64`, whatever the model's scalar type.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};
use crate::corpus::{CorpusError, TagSet, Task, Vocabulary};
use crate::model::{ModelError, MtlModel};
use crate::optim::AdamW;
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"MTLF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("bad checkpoint header")]
    BadHeader,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("{0} trailing bytes after checkpoint")]
    Trailing(usize),
    #[error("checkpoint string is not UTF-8")]
    Utf8,
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint tables: {0}")]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<NamedArray>,
    pub optimizer_step: u64,
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
    pub config_text: String,
    pub vocab_min_count: u64,
    pub vocab: Vec<String>,
    pub ner_tags: Vec<String>,
    pub pos_tags: Vec<String>,
    /// Number of completed epochs.
    pub epoch: u64,
    pub rng_seed: u64,
    pub rng_step: u64,
}

/// A model restored from a checkpoint together with its tables.
#[derive(Debug, Clone)]
pub struct Restored<T: Real> {
    pub model: MtlModel<T>,
    pub optimizer: AdamW<T>,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub ner_tagset: TagSet,
    pub pos_tagset: TagSet,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn capture<T: Real>(
        model: &MtlModel<T>,
        optimizer: &AdamW<T>,
        config: &TrainConfig,
        vocab: &Vocabulary,
        ner_tagset: &TagSet,
        pos_tagset: &TagSet,
        epoch: u64,
        rng_step: u64,
    ) -> Self {
        let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        Checkpoint {
            params: model
                .parameters()
                .iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    data: to64(&p.tensor.data()),
                })
                .collect(),
            optimizer_step: optimizer.step,
            moments: optimizer.moments.iter().map(|(m, v)| (to64(m), to64(v))).collect(),
            config_text: config.to_text(),
            vocab_min_count: vocab.min_count as u64,
            vocab: vocab.tokens().to_vec(),
            ner_tags: ner_tagset.tags.clone(),
            pos_tags: pos_tagset.tags.clone(),
            epoch,
            rng_seed: config.training.seed,
            rng_step,
        }
    }

    /// Rebuilds the model, optimizer and tables.
    pub fn restore<T: Real>(&self) -> Result<Restored<T>, CheckpointError> {
        let config = TrainConfig::parse(&self.config_text)?;
        let vocab = Vocabulary::from_tokens(self.vocab.clone(), self.vocab_min_count as usize)?;
        let ner_tagset = TagSet::new(Task::Ner, self.ner_tags.clone())?;
        let pos_tagset = TagSet::new(Task::Pos, self.pos_tags.clone())?;
        let model_config = config.model_config(vocab.len(), ner_tagset.len(), pos_tagset.len());
        let model = MtlModel::<T>::init(&model_config, config.training.seed)?;
        let params = model.parameters();
        if params.len() != self.params.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{} stored parameters, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, stored) in params.iter().zip(&self.params) {
            if p.name != stored.name || p.tensor.shape() != stored.shape.as_slice() {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter {} {:?} vs stored {} {:?}",
                    p.name,
                    p.tensor.shape(),
                    stored.name,
                    stored.shape
                )));
            }
            let mut data = p.tensor.data_mut();
            for (d, &s) in data.iter_mut().zip(&stored.data) {
                *d = T::lit(s);
            }
        }
        if self.moments.len() != params.len()
            || self.moments.iter().zip(&params).any(|((m, v), p)| m.len() != p.tensor.len() || v.len() != p.tensor.len())
        {
            return Err(CheckpointError::Mismatch("optimizer moments".into()));
        }
        let mut optimizer = AdamW::new(config.optimizer(), &params);
        optimizer.step = self.optimizer_step;
        optimizer.moments = self
            .moments
            .iter()
            .map(|(m, v)| (m.iter().map(|&x| T::lit(x)).collect(), v.iter().map(|&x| T::lit(x)).collect()))
            .collect();
        drop(params);
        Ok(Restored {
            model,
            optimizer,
            config,
            vocab,
            ner_tagset,
            pos_tagset,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u64(self.params.len() as u64);
        for p in &self.params {
            w.string(&p.name);
            w.u64(p.shape.len() as u64);
            for &d in &p.shape {
                w.u64(d as u64);
            }
            w.floats(&p.data);
        }
        w.u64(self.optimizer_step);
        w.u64(self.moments.len() as u64);
        for (m, v) in &self.moments {
            w.floats(m);
            w.floats(v);
        }
        w.string(&self.config_text);
        w.u64(self.vocab_min_count);
        w.strings(&self.vocab);
        w.strings(&self.ner_tags);
        w.strings(&self.pos_tags);
        w.u64(self.epoch);
        w.u64(self.rng_seed);
        w.u64(self.rng_step);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadHeader);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut r = Reader { bytes, pos: 8 };
        let n = r.count()?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.count()?;
            let shape = (0..rank).map(|_| r.count()).collect::<Result<Vec<_>, _>>()?;
            let data = r.floats()?;
            if shape.iter().product::<usize>() != data.len() {
                return Err(CheckpointError::Mismatch(format!("parameter {name} shape vs data length")));
            }
            params.push(NamedArray { name, shape, data });
        }
        let optimizer_step = r.u64()?;
        let n = r.count()?;
        let mut moments = Vec::with_capacity(n);
        for _ in 0..n {
            moments.push((r.floats()?, r.floats()?));
        }
        let checkpoint = Checkpoint {
            params,
            optimizer_step,
            moments,
            config_text: r.string()?,
            vocab_min_count: r.u64()?,
            vocab: r.strings()?,
            ner_tags: r.strings()?,
            pos_tags: r.strings()?,
            epoch: r.u64()?,
            rng_seed: r.u64()?,
            rng_step: r.u64()?,
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }
        Ok(checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn strings(&mut self, items: &[String]) {
        self.u64(items.len() as u64);
        for s in items {
            self.string(s);
        }
    }

    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A length that must fit in the remaining input.
    fn count(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(CheckpointError::Truncated);
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.count()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Utf8)
    }

    fn strings(&mut self) -> Result<Vec<String>, CheckpointError> {
        let n = self.count()?;
        (0..n).map(|_| self.string()).collect()
    }

    fn floats(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.count()?;
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn sample() -> (Checkpoint, MtlModel<f64>) {
        let mut config = TrainConfig::preset(Preset::Desk);
        config.model.hidden_dim = 8;
        config.model.num_heads = 2;
        config.model.num_layers = 1;
        config.model.ffn_dim = 8;
        config.model.max_seq_len = 8;
        config.training.seed = 5;
        let vocab = Vocabulary::from_tokens(vec!["<pad>".into(), "<unk>".into(), "a".into()], 1).unwrap();
        let ner = TagSet::new(Task::Ner, vec!["O".into(), "B-PER".into(), "I-PER".into()]).unwrap();
        let pos = TagSet::new(Task::Pos, vec!["N".into(), "V".into()]).unwrap();
        let model = MtlModel::<f64>::init(&config.model_config(3, 3, 2), 5).unwrap();
        let mut opt = AdamW::new(config.optimizer(), &model.parameters());
        opt.step = 3;
        opt.moments[0].0[0] = 0.25;
        (Checkpoint::capture(&model, &opt, &config, &vocab, &ner, &pos, 2, 17), model)
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let (ck, _) = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn restore_reproduces_parameters() {
        let (ck, model) = sample();
        let r = ck.restore::<f64>().unwrap();
        for (a, b) in model.parameters().iter().zip(r.model.parameters()) {
            assert_eq!(*a.tensor.data(), *b.tensor.data());
        }
        assert_eq!(r.optimizer.step, 3);
        assert_eq!(r.optimizer.moments[0].0[0], 0.25);
        assert_eq!(Checkpoint::capture(&r.model, &r.optimizer, &r.config, &r.vocab, &r.ner_tagset, &r.pos_tagset, 2, 17), ck);
    }

    #[test]
    fn corrupt_inputs() {
        let (ck, _) = sample();
        let mut bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadHeader));
        assert_eq!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated));
        bytes.push(0);
        assert_eq!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Trailing(1)));
        bytes[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string(), "bad checkpoint header");
        let mut v2 = ck.to_bytes();
        v2[4] = 2;
        assert_eq!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version(2)));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (mut ck, _) = sample();
        ck.params[0].shape = vec![1, ck.params[0].data.len()];
        assert!(matches!(ck.restore::<f64>(), Err(CheckpointError::Mismatch(_))));
    }
}
