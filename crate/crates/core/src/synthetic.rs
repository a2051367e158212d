//! Small generated corpora with learnable structure, written in the same
//! directory layout as real data.
//!
//! NER sentences carry planted entities whose tokens come from type-specific
//! pools, always separated by at least one `O` token; POS tags are a fixed
//! function of the token. A model that cannot fit these perfectly has a bug.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{merge_tagsets, mix_seed, serialize_conll, CorpusError, LabeledCorpus, Sentence, Split, TagSet, Task, TaskData};

pub const ENTITY_TYPES: [&str; 3] = ["PER", "LOC", "ORG"];
pub const POS_TAGS: [&str; 5] = ["NOUN", "VERB", "ADJ", "DET", "ADP"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    /// Subset keys; sentence counts are per subset.
    pub subsets: Vec<String>,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 200 word types, two subsets of 32 training sentences per task.
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 200,
            subsets: vec!["syn_a".into(), "syn_b".into()],
            train_sentences: 32,
            dev_sentences: 8,
            test_sentences: 8,
            min_len: 5,
            max_len: 12,
            seed: 0,
        }
    }
}

fn word(i: usize) -> String {
    format!("w{i:03}")
}

/// Entity pools take the first 30% of the vocabulary, split evenly by type.
/// The first half of a pool starts entities, the second half continues them.
fn entity_pool(spec: &SyntheticSpec, kind: usize) -> std::ops::Range<usize> {
    let per = (spec.vocab_size * 3 / 10) / ENTITY_TYPES.len();
    kind * per..(kind + 1) * per
}

fn plain_words(spec: &SyntheticSpec) -> std::ops::Range<usize> {
    (spec.vocab_size * 3 / 10)..spec.vocab_size
}

pub fn pos_tag_of(word_index: usize) -> &'static str {
    POS_TAGS[(word_index * 7 + word_index / 5) % POS_TAGS.len()]
}

fn ner_sentence(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, subset: &str) -> Sentence {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut tokens = Vec::with_capacity(len);
    let mut tags = Vec::with_capacity(len);
    let plain = plain_words(spec);
    while tokens.len() < len {
        let room = len - tokens.len();
        let after_entity = tags.last().is_some_and(|t: &String| t != "O");
        if !after_entity && rng.random_bool(0.3) {
            let kind = rng.random_range(0..ENTITY_TYPES.len());
            let span = rng.random_range(1..=2usize).min(room);
            let pool = entity_pool(spec, kind);
            let mid = (pool.start + pool.end) / 2;
            for j in 0..span {
                let words = if j == 0 { pool.start..mid } else { mid..pool.end };
                tokens.push(word(rng.random_range(words)));
                tags.push(format!("{}-{}", if j == 0 { "B" } else { "I" }, ENTITY_TYPES[kind]));
            }
        } else {
            tokens.push(word(rng.random_range(plain.clone())));
            tags.push("O".to_string());
        }
    }
    Sentence {
        tokens,
        tags,
        subset: subset.to_string(),
    }
}

fn pos_sentence(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, subset: &str) -> Sentence {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..spec.vocab_size)).collect();
    Sentence {
        tokens: ids.iter().map(|&i| word(i)).collect(),
        tags: ids.iter().map(|&i| pos_tag_of(i).to_string()).collect(),
        subset: subset.to_string(),
    }
}

/// Generated sentences for both tasks keyed by `(subset, split)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub ner: BTreeMap<(String, Split), Vec<Sentence>>,
    pub pos: BTreeMap<(String, Split), Vec<Sentence>>,
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut ner = BTreeMap::new();
    let mut pos = BTreeMap::new();
    for (si, subset) in spec.subsets.iter().enumerate() {
        for split in Split::ALL {
            let n = match split {
                Split::Train => spec.train_sentences,
                Split::Dev => spec.dev_sentences,
                Split::Test => spec.test_sentences,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, si as u64, split as u64, 0]));
            ner.insert((subset.clone(), split), (0..n).map(|_| ner_sentence(spec, &mut rng, subset)).collect());
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, si as u64, split as u64, 1]));
            pos.insert((subset.clone(), split), (0..n).map(|_| pos_sentence(spec, &mut rng, subset)).collect());
        }
    }
    SyntheticCorpus { ner, pos }
}

impl SyntheticCorpus {
    fn sentences(&self, task: Task) -> &BTreeMap<(String, Split), Vec<Sentence>> {
        match task {
            Task::Ner => &self.ner,
            Task::Pos => &self.pos,
        }
    }

    /// Writes `<root>/<task>/<subset>/<split>.txt` for both tasks.
    pub fn write(&self, root: &Path) -> Result<(), CorpusError> {
        for task in Task::ALL {
            for ((subset, split), sentences) in self.sentences(task) {
                let dir = root.join(task.key()).join(subset);
                let io = |e: std::io::Error| CorpusError::Io {
                    path: dir.display().to_string(),
                    message: e.to_string(),
                };
                fs::create_dir_all(&dir).map_err(io)?;
                fs::write(dir.join(format!("{}.txt", split.key())), serialize_conll(sentences)).map_err(io)?;
            }
        }
        Ok(())
    }

    /// The in-memory equivalent of loading the written files.
    pub fn task_data(&self, task: Task, splits: &[Split]) -> Result<TaskData, CorpusError> {
        let mut parts = BTreeMap::new();
        for ((subset, split), sentences) in self.sentences(task) {
            if !splits.contains(split) {
                continue;
            }
            let tagset = TagSet::from_observed(task, sentences.iter().flat_map(|s| s.tags.iter().map(String::as_str)))?;
            parts.insert(
                (subset.clone(), *split),
                LabeledCorpus {
                    task,
                    split: *split,
                    sentences: sentences.clone(),
                    tagset,
                },
            );
        }
        let tagset = merge_tagsets(task, parts.values().map(|c: &LabeledCorpus| &c.tagset))?;
        for c in parts.values_mut() {
            c.tagset = tagset.clone();
        }
        Ok(TaskData { task, tagset, parts })
    }
}
