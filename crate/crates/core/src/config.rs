//! Run configuration: an INI-style file of `key = value` lines grouped under
//! `[model]`, `[training]` and `[data]`, plus presets and overrides.
//!
//! `preset` is applied first wherever it appears; every other key then
//! overrides the preset value. Unknown sections and keys are errors.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Task;
use crate::encoder::EncoderConfig;
use crate::fusion::FusionMode;
use crate::heads::{LossCombiner, LossStrategy};
use crate::model::ModelConfig;
use crate::optim::AdamWConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("unknown config section `[{0}]`")]
    UnknownSection(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Reference hyperparameters: batch 4, lr 3e-5, 50 epochs.
    Paper,
    /// Laptop-scale: batch 4, lr 3e-4, 30 epochs.
    Desk,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset `{other}` (expected paper or desk)")),
        }
    }
}

/// Which training objective is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Both task losses through the configured combiner.
    Joint,
    /// One task's loss alone.
    Single(Task),
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Joint => "joint",
            Objective::Single(Task::Ner) => "ner_only",
            Objective::Single(Task::Pos) => "pos_only",
        }
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Objective::Joint),
            "ner_only" => Ok(Objective::Single(Task::Ner)),
            "pos_only" => Ok(Objective::Single(Task::Pos)),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    DevNerF1,
    DevPosAcc,
    /// Mean of dev NER F1 and dev POS accuracy.
    DevMean,
}

impl SelectionMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMetric::DevNerF1 => "dev_ner_f1",
            SelectionMetric::DevPosAcc => "dev_pos_acc",
            SelectionMetric::DevMean => "dev_mean",
        }
    }
}

impl FromStr for SelectionMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dev_ner_f1" => Ok(SelectionMetric::DevNerF1),
            "dev_pos_acc" => Ok(SelectionMetric::DevPosAcc),
            "dev_mean" => Ok(SelectionMetric::DevMean),
            other => Err(format!("unknown selection metric `{other}`")),
        }
    }
}

/// Which checkpoint a run reports as its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Highest selection metric on dev.
    Best,
    /// Final epoch.
    Last,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Best => "best",
            Selection::Last => "last",
        }
    }
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "best" => Ok(Selection::Best),
            "last" => Ok(Selection::Last),
            other => Err(format!("unknown selection `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubsetSpec {
    /// Every subset found under the data root.
    All,
    Keys(Vec<String>),
}

impl SubsetSpec {
    pub fn resolve(&self, available: impl IntoIterator<Item = String>) -> Vec<String> {
        match self {
            SubsetSpec::All => available.into_iter().collect(),
            SubsetSpec::Keys(k) => k.clone(),
        }
    }
}

impl std::fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubsetSpec::All => f.write_str("all"),
            SubsetSpec::Keys(k) => f.write_str(&k.join(",")),
        }
    }
}

impl FromStr for SubsetSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(SubsetSpec::All);
        }
        let keys: Vec<String> = s.split(',').map(|k| k.trim().to_string()).collect();
        if keys.iter().any(String::is_empty) {
            return Err(format!("empty subset key in `{s}`"));
        }
        Ok(SubsetSpec::Keys(keys))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub fusion: FusionMode,
    pub post_fusion_norm: bool,
    pub hidden_dim_b: Option<usize>,
    pub projection: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            max_seq_len: 128,
            dropout: 0.1,
            fusion: FusionMode::Multiplicative,
            post_fusion_norm: false,
            hidden_dim_b: None,
            projection: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub preset: Preset,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub objective: Objective,
    pub loss: LossStrategy,
    pub alpha: f64,
    pub beta: f64,
    pub selection_metric: SelectionMetric,
    pub selection: Selection,
}

impl TrainingSection {
    pub fn for_preset(preset: Preset) -> Self {
        let (learning_rate, epochs) = match preset {
            Preset::Paper => (3e-5, 50),
            Preset::Desk => (3e-4, 30),
        };
        TrainingSection {
            preset,
            batch_size: 4,
            learning_rate,
            epochs,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
            seed: 0,
            objective: Objective::Joint,
            loss: LossStrategy::Weighted,
            alpha: 0.5,
            beta: 0.5,
            selection_metric: SelectionMetric::DevMean,
            selection: Selection::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub root: String,
    pub subsets: SubsetSpec,
    /// Subset whose dev split drives model selection; all training subsets
    /// when unset.
    pub target_subset: Option<String>,
    pub min_count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: "data".into(),
            subsets: SubsetSpec::All,
            target_subset: None,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    pub data: DataSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset(Preset::Paper)
    }
}

/// Every recognised key, in the order used for serialization.
pub const KEYS: &[&str] = &[
    "model.hidden_dim",
    "model.num_layers",
    "model.num_heads",
    "model.ffn_dim",
    "model.max_seq_len",
    "model.dropout",
    "model.fusion",
    "model.post_fusion_norm",
    "model.hidden_dim_b",
    "model.projection",
    "training.preset",
    "training.batch_size",
    "training.learning_rate",
    "training.epochs",
    "training.adam_beta1",
    "training.adam_beta2",
    "training.adam_eps",
    "training.weight_decay",
    "training.clip_norm",
    "training.seed",
    "training.objective",
    "training.loss",
    "training.alpha",
    "training.beta",
    "training.selection_metric",
    "training.selection",
    "data.root",
    "data.subsets",
    "data.target_subset",
    "data.min_count",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_optional<V: FromStr>(key: &str, value: &str) -> Result<Option<V>, ConfigError> {
    if value == "none" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn optional_str<V: ToString>(v: &Option<V>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), V::to_string)
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        TrainConfig {
            model: ModelSection::default(),
            training: TrainingSection::for_preset(preset),
            data: DataSection::default(),
        }
    }

    /// Sets one fully qualified key (`section.name`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let m = &mut self.model;
        let t = &mut self.training;
        let d = &mut self.data;
        match key {
            "model.hidden_dim" => m.hidden_dim = parse_value(key, value)?,
            "model.num_layers" => m.num_layers = parse_value(key, value)?,
            "model.num_heads" => m.num_heads = parse_value(key, value)?,
            "model.ffn_dim" => m.ffn_dim = parse_value(key, value)?,
            "model.max_seq_len" => m.max_seq_len = parse_value(key, value)?,
            "model.dropout" => m.dropout = parse_value(key, value)?,
            "model.fusion" => m.fusion = parse_value(key, value)?,
            "model.post_fusion_norm" => m.post_fusion_norm = parse_value(key, value)?,
            "model.hidden_dim_b" => m.hidden_dim_b = parse_optional(key, value)?,
            "model.projection" => m.projection = parse_value(key, value)?,
            "training.preset" => {
                let preset: Preset = parse_value(key, value)?;
                let seed = t.seed;
                *t = TrainingSection { seed, ..TrainingSection::for_preset(preset) };
            }
            "training.batch_size" => t.batch_size = parse_value(key, value)?,
            "training.learning_rate" => t.learning_rate = parse_value(key, value)?,
            "training.epochs" => t.epochs = parse_value(key, value)?,
            "training.adam_beta1" => t.adam_beta1 = parse_value(key, value)?,
            "training.adam_beta2" => t.adam_beta2 = parse_value(key, value)?,
            "training.adam_eps" => t.adam_eps = parse_value(key, value)?,
            "training.weight_decay" => t.weight_decay = parse_value(key, value)?,
            "training.clip_norm" => t.clip_norm = parse_optional(key, value)?,
            "training.seed" => t.seed = parse_value(key, value)?,
            "training.objective" => t.objective = parse_value(key, value)?,
            "training.loss" => t.loss = parse_value(key, value)?,
            "training.alpha" => t.alpha = parse_value(key, value)?,
            "training.beta" => t.beta = parse_value(key, value)?,
            "training.selection_metric" => t.selection_metric = parse_value(key, value)?,
            "training.selection" => t.selection = parse_value(key, value)?,
            "data.root" => d.root = value.to_string(),
            "data.subsets" => d.subsets = parse_value(key, value)?,
            "data.target_subset" => d.target_subset = parse_optional(key, value)?,
            "data.min_count" => d.min_count = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.training;
        let d = &self.data;
        Some(match key {
            "model.hidden_dim" => m.hidden_dim.to_string(),
            "model.num_layers" => m.num_layers.to_string(),
            "model.num_heads" => m.num_heads.to_string(),
            "model.ffn_dim" => m.ffn_dim.to_string(),
            "model.max_seq_len" => m.max_seq_len.to_string(),
            "model.dropout" => m.dropout.to_string(),
            "model.fusion" => m.fusion.to_string(),
            "model.post_fusion_norm" => m.post_fusion_norm.to_string(),
            "model.hidden_dim_b" => optional_str(&m.hidden_dim_b),
            "model.projection" => m.projection.to_string(),
            "training.preset" => t.preset.as_str().to_string(),
            "training.batch_size" => t.batch_size.to_string(),
            "training.learning_rate" => t.learning_rate.to_string(),
            "training.epochs" => t.epochs.to_string(),
            "training.adam_beta1" => t.adam_beta1.to_string(),
            "training.adam_beta2" => t.adam_beta2.to_string(),
            "training.adam_eps" => t.adam_eps.to_string(),
            "training.weight_decay" => t.weight_decay.to_string(),
            "training.clip_norm" => optional_str(&t.clip_norm),
            "training.seed" => t.seed.to_string(),
            "training.objective" => t.objective.as_str().to_string(),
            "training.loss" => t.loss.as_str().to_string(),
            "training.alpha" => t.alpha.to_string(),
            "training.beta" => t.beta.to_string(),
            "training.selection_metric" => t.selection_metric.as_str().to_string(),
            "training.selection" => t.selection.as_str().to_string(),
            "data.root" => d.root.clone(),
            "data.subsets" => d.subsets.to_string(),
            "data.target_subset" => optional_str(&d.target_subset),
            "data.min_count" => d.min_count.to_string(),
            _ => return None,
        })
    }

    /// Parses config text on top of the paper preset.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let mut config = TrainConfig::default();
        // The preset resets the training section, so it goes first.
        for (key, value, _) in entries.iter().filter(|(k, _, _)| k == "training.preset") {
            config.set(key, value)?;
        }
        for (key, value, _) in entries.iter().filter(|(k, _, _)| k != "training.preset") {
            config.set(key, value)?;
        }
        Ok(config)
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for key in KEYS {
            let (sec, name) = key.split_once('.').unwrap();
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                section = sec;
            }
            let _ = writeln!(out, "{name} = {}", self.get(key).unwrap());
        }
        out
    }

    /// First 12 hex digits of the SHA-256 of the canonical text with the
    /// seed and data root blanked, so seeds of one configuration share a prefix.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.training.seed = 0;
        c.data.root = String::new();
        let digest = Sha256::digest(c.to_text().as_bytes());
        hex::encode(digest)[..12].to_string()
    }

    /// Directory name of a run: configuration hash plus seed.
    pub fn run_name(&self) -> String {
        format!("{}-seed{}", self.hash(), self.training.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.training;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if t.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if t.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return bad("learning_rate must be finite and positive");
        }
        if !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(t.adam_eps > 0.0) || !(t.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative");
        }
        if matches!(t.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        self.loss().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if let SubsetSpec::Keys(k) = &self.data.subsets {
            if k.is_empty() {
                return bad("no subsets selected");
            }
        }
        // Shape checks that do not depend on the data.
        self.model_config(2, 1, 1)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn loss(&self) -> LossCombiner {
        LossCombiner {
            strategy: self.training.loss,
            alpha: self.training.alpha,
            beta: self.training.beta,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        let t = &self.training;
        AdamWConfig {
            learning_rate: t.learning_rate,
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            eps: t.adam_eps,
            weight_decay: t.weight_decay,
        }
    }

    pub fn model_config(&self, vocab_size: usize, ner_tags: usize, pos_tags: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size,
                max_seq_len: m.max_seq_len,
                hidden_dim: m.hidden_dim,
                num_layers: m.num_layers,
                num_heads: m.num_heads,
                ffn_dim: m.ffn_dim,
                dropout_rate: m.dropout,
            },
            hidden_dim_b: m.hidden_dim_b,
            projection: m.projection,
            fusion: m.fusion,
            post_fusion_norm: m.post_fusion_norm,
            ner_tags,
            pos_tags,
        }
    }
}

/// `(section.key, value, line)` triples in file order.
fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split(['#', ';']).next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            let name = name.trim();
            if !["model", "training", "data"].contains(&name) {
                return Err(ConfigError::UnknownSection(name.to_string()));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            message: "expected `key = value`".into(),
        })?;
        let k = k.trim();
        let full = match &section {
            Some(s) => format!("{s}.{k}"),
            None if k.contains('.') => k.to_string(),
            None => {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    message: format!("key `{k}` outside of a section"),
                })
            }
        };
        if out.iter().any(|(seen, _, _)| *seen == full) {
            return Err(ConfigError::Syntax {
                line: line_no,
                message: format!("duplicate key `{full}`"),
            });
        }
        out.push((full, v.trim().to_string(), line_no));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let p = TrainConfig::preset(Preset::Paper).training;
        assert_eq!((p.batch_size, p.learning_rate, p.epochs), (4, 3e-5, 50));
        let d = TrainConfig::preset(Preset::Desk).training;
        assert_eq!((d.batch_size, d.learning_rate, d.epochs), (4, 3e-4, 30));
        assert_eq!((p.adam_beta1, p.adam_beta2, p.adam_eps, p.weight_decay), (0.9, 0.999, 1e-8, 0.01));
        assert_eq!((p.alpha, p.beta, p.loss), (0.5, 0.5, LossStrategy::Weighted));
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = TrainConfig::preset(Preset::Desk);
        c.set("model.fusion", "additive").unwrap();
        c.set("data.subsets", "fon,ewe").unwrap();
        c.set("training.clip_norm", "1.5").unwrap();
        c.set("model.hidden_dim_b", "32").unwrap();
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn preset_applies_before_other_keys() {
        let c = TrainConfig::parse("[training]\nepochs = 3\npreset = desk\n").unwrap();
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.learning_rate, 3e-4);
    }

    #[test]
    fn unknown_key_and_section_rejected() {
        assert_eq!(
            TrainConfig::parse("[training]\nlearning_rat = 0.1\n"),
            Err(ConfigError::UnknownKey("training.learning_rat".into()))
        );
        assert!(matches!(TrainConfig::parse("[optim]\n"), Err(ConfigError::UnknownSection(_))));
        assert!(matches!(TrainConfig::parse("[model]\nfusion = concat\n"), Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn comments_and_qualified_keys() {
        let c = TrainConfig::parse("# top\ntraining.seed = 7 ; trailing\n[model]\nfusion = add\n").unwrap();
        assert_eq!(c.training.seed, 7);
        assert_eq!(c.model.fusion, FusionMode::Additive);
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.training.seed = 9;
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.run_name(), b.run_name());
        b.model.fusion = FusionMode::Additive;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.training.alpha = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.model.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.training.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.training.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
