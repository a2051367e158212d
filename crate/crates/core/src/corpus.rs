//! CoNLL ingestion, tagsets, shared vocabulary and batch assembly.
//!
//! Files are two-column UTF-8: `token<sep>tag` per line, where `<sep>` is a
//! TAB or a run of spaces, and a blank line ends a sentence. Serialization
//! always writes TAB. No casing or punctuation normalization is applied.
//!
//! On disk, datasets follow `<root>/<task>/<subset>/{train,dev,test}.txt`,
//! with `<task>` one of `ner`, `pos` and `<subset>` a free key such as a
//! language code.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::IGNORE;
use crate::encoder::TokenBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Ner,
    Pos,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Ner, Task::Pos];

    /// Lower-case key used in paths and config files.
    pub fn key(self) -> &'static str {
        match self {
            Task::Ner => "ner",
            Task::Pos => "pos",
        }
    }

    pub fn scheme(self) -> TagScheme {
        match self {
            Task::Ner => TagScheme::Bio,
            Task::Pos => TagScheme::Plain,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Task::Ner => "NER",
            Task::Pos => "POS",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ner" => Ok(Task::Ner),
            "pos" => Ok(Task::Pos),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.key())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagScheme {
    Bio,
    Plain,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("{source_name}:{line}: expected `token tag`, found {fields} field(s)")]
    Malformed {
        source_name: String,
        line: usize,
        fields: usize,
    },
    #[error("{source_name}:{line}: tag `{tag}` is not in the tagset")]
    UnknownTag {
        source_name: String,
        line: usize,
        tag: String,
    },
    #[error("{source_name}:{line}: `{tag}` is not a BIO tag (O, B-X or I-X)")]
    NotBio {
        source_name: String,
        line: usize,
        tag: String,
    },
    #[error("{source_name}: input is not valid UTF-8")]
    Encoding { source_name: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("subset key `{0}` matches no data")]
    UnknownSubset(String),
    #[error("no subset keys given")]
    NoSubsets,
    #[error("cannot combine corpora of different task or split ({0})")]
    Incompatible(String),
    #[error("invalid tagset: {0}")]
    TagSet(String),
}

/// One labeled sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub subset: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ordered unique tags; a tag's id is its index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    pub task: Task,
    pub tags: Vec<String>,
    pub scheme: TagScheme,
}

fn is_bio_tag(tag: &str) -> bool {
    tag == "O" || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.len() > 2)
}

impl TagSet {
    /// Validates uniqueness and, for NER, BIO well-formedness and presence of `O`.
    pub fn new(task: Task, tags: Vec<String>) -> Result<Self, CorpusError> {
        let unique: BTreeSet<&String> = tags.iter().collect();
        if unique.len() != tags.len() {
            return Err(CorpusError::TagSet("duplicate tags".into()));
        }
        if task == Task::Ner {
            if !tags.iter().any(|t| t == "O") {
                return Err(CorpusError::TagSet("NER tagset lacks `O`".into()));
            }
            if let Some(bad) = tags.iter().find(|t| !is_bio_tag(t)) {
                return Err(CorpusError::TagSet(format!("`{bad}` is not a BIO tag")));
            }
        }
        Ok(TagSet {
            task,
            tags,
            scheme: task.scheme(),
        })
    }

    /// Tagset from observed tags: `O` first for NER, the rest sorted.
    pub fn from_observed<'a>(task: Task, observed: impl IntoIterator<Item = &'a str>) -> Result<Self, CorpusError> {
        let mut set: BTreeSet<String> = observed.into_iter().map(str::to_string).collect();
        let mut tags = Vec::with_capacity(set.len() + 1);
        if task == Task::Ner {
            set.remove("O");
            tags.push("O".to_string());
        }
        tags.extend(set);
        TagSet::new(task, tags)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    pub task: Task,
    pub split: Split,
    pub sentences: Vec<Sentence>,
    pub tagset: TagSet,
}

impl LabeledCorpus {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn subsets(&self) -> BTreeSet<String> {
        self.sentences.iter().map(|s| s.subset.clone()).collect()
    }

    /// Same sentences, relabeled against a larger tagset.
    pub fn with_tagset(mut self, tagset: &TagSet) -> Result<Self, CorpusError> {
        for s in &self.sentences {
            if let Some(tag) = s.tags.iter().find(|t| tagset.id(t).is_none()) {
                return Err(CorpusError::UnknownTag {
                    source_name: s.subset.clone(),
                    line: 0,
                    tag: tag.clone(),
                });
            }
        }
        self.tagset = tagset.clone();
        Ok(self)
    }
}

/// Parses two-column CoNLL text. With `fixed_tagset`, tags outside it are
/// errors; otherwise the tagset is collected from the data.
pub fn parse_conll(
    bytes: &[u8],
    source_name: &str,
    task: Task,
    split: Split,
    subset: &str,
    fixed_tagset: Option<&TagSet>,
) -> Result<LabeledCorpus, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|_| CorpusError::Encoding {
        source_name: source_name.to_string(),
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>| {
        if !tokens.is_empty() {
            sentences.push(Sentence {
                tokens: std::mem::take(tokens),
                tags: std::mem::take(tags),
                subset: subset.to_string(),
            });
        }
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(CorpusError::Malformed {
                source_name: source_name.to_string(),
                line: line_no,
                fields: fields.len(),
            });
        }
        let tag = fields[1];
        if let Some(ts) = fixed_tagset {
            if ts.id(tag).is_none() {
                return Err(CorpusError::UnknownTag {
                    source_name: source_name.to_string(),
                    line: line_no,
                    tag: tag.to_string(),
                });
            }
        } else if task == Task::Ner && !is_bio_tag(tag) {
            return Err(CorpusError::NotBio {
                source_name: source_name.to_string(),
                line: line_no,
                tag: tag.to_string(),
            });
        }
        tokens.push(fields[0].to_string());
        tags.push(tag.to_string());
    }
    flush(&mut tokens, &mut tags);
    let tagset = match fixed_tagset {
        Some(ts) => ts.clone(),
        None => TagSet::from_observed(task, sentences.iter().flat_map(|s| s.tags.iter().map(String::as_str)))?,
    };
    Ok(LabeledCorpus {
        task,
        split,
        sentences,
        tagset,
    })
}

/// Writes sentences back as TAB-separated CoNLL with a blank line after each.
pub fn serialize_conll(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(tag);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Indices of `I-X` tags that neither follow `B-X` nor `I-X`.
pub fn validate_bio(tags: &[String]) -> Vec<usize> {
    let mut violations = Vec::new();
    let mut prev: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        if let Some(ty) = tag.strip_prefix("I-") {
            let ok = prev.is_some_and(|p| p.strip_prefix("B-").or_else(|| p.strip_prefix("I-")) == Some(ty));
            if !ok {
                violations.push(i);
            }
        }
        prev = Some(tag);
    }
    violations
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word-level vocabulary shared by both encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list (as stored in a
    /// checkpoint). The first two entries must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self, CorpusError> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(CorpusError::TagSet("vocabulary must start with <pad>, <unk>".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(CorpusError::TagSet("duplicate vocabulary entries".into()));
        }
        Ok(Vocabulary {
            tokens,
            index,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Counts tokens of the train splits only; keeps those seen at least
/// `min_count` times, ordered by descending count then lexicographically.
pub fn build_vocab(corpora: &[&LabeledCorpus], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in corpora.iter().filter(|c| c.split == Split::Train) {
        for s in &c.sentences {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_count.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()).filter(|t| t != PAD_TOKEN && t != UNK_TOKEN));
    Vocabulary::from_tokens(tokens, min_count).expect("reserved tokens present")
}

/// A padded batch of one task. Pad positions carry [`IGNORE`] tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: TokenBatch,
    pub tag_ids: Vec<usize>,
    /// Index of each row's sentence in the source corpus.
    pub sentence_indices: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.tokens.batch
    }
}

/// 64-bit mixing of several seed components (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Assembles one epoch of batches. The sentence order is a permutation
/// determined by `shuffle_seed`; `None` keeps corpus order. Sentences longer
/// than `max_len` are truncated with a warning.
pub fn make_batches(
    corpus: &LabeledCorpus,
    vocab: &Vocabulary,
    batch_size: usize,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..corpus.sentences.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let mut ids = Vec::with_capacity(chunk.len());
            let mut tags = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &corpus.sentences[i];
                let n = if s.len() > max_len {
                    log::warn!(
                        "truncating {} {} sentence {i} from {} to {max_len} tokens",
                        corpus.task,
                        corpus.split,
                        s.len()
                    );
                    max_len
                } else {
                    s.len()
                };
                ids.push(vocab.encode(&s.tokens[..n]));
                tags.push(
                    s.tags[..n]
                        .iter()
                        .map(|t| corpus.tagset.id(t).expect("tag validated at parse time"))
                        .collect::<Vec<_>>(),
                );
            }
            let tokens = TokenBatch::from_sentences(&ids);
            let mut tag_ids = vec![IGNORE; tokens.ids.len()];
            for (b, row) in tags.iter().enumerate() {
                tag_ids[b * tokens.seq..b * tokens.seq + row.len()].copy_from_slice(row);
            }
            Batch {
                tokens,
                tag_ids,
                sentence_indices: chunk.to_vec(),
            }
        })
        .collect()
}

/// Concatenates the sentences whose subset key is in `keys`. All inputs must
/// share task and split; tagsets are merged.
pub fn select_subsets(corpora: &[&LabeledCorpus], keys: &[String]) -> Result<LabeledCorpus, CorpusError> {
    let first = corpora.first().ok_or(CorpusError::NoSubsets)?;
    if keys.is_empty() {
        return Err(CorpusError::NoSubsets);
    }
    if let Some(c) = corpora.iter().find(|c| c.task != first.task || c.split != first.split) {
        return Err(CorpusError::Incompatible(format!(
            "{} {} vs {} {}",
            first.task, first.split, c.task, c.split
        )));
    }
    let available: BTreeSet<String> = corpora.iter().flat_map(|c| c.subsets()).collect();
    if let Some(k) = keys.iter().find(|k| !available.contains(*k)) {
        return Err(CorpusError::UnknownSubset(k.clone()));
    }
    let wanted: BTreeSet<&String> = keys.iter().collect();
    let sentences: Vec<Sentence> = corpora
        .iter()
        .flat_map(|c| c.sentences.iter())
        .filter(|s| wanted.contains(&s.subset))
        .cloned()
        .collect();
    let tagset = merge_tagsets(first.task, corpora.iter().map(|c| &c.tagset))?;
    Ok(LabeledCorpus {
        task: first.task,
        split: first.split,
        sentences,
        tagset,
    })
}

pub fn merge_tagsets<'a>(task: Task, tagsets: impl IntoIterator<Item = &'a TagSet>) -> Result<TagSet, CorpusError> {
    let all: Vec<&'a TagSet> = tagsets.into_iter().collect();
    TagSet::from_observed(task, all.iter().flat_map(|t| t.tags.iter().map(String::as_str)))
}

/// All splits of every subset of one task, labeled with a common tagset.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task: Task,
    pub tagset: TagSet,
    pub parts: BTreeMap<(String, Split), LabeledCorpus>,
}

impl TaskData {
    pub fn subsets(&self) -> BTreeSet<String> {
        self.parts.keys().map(|(s, _)| s.clone()).collect()
    }

    /// Union of the requested subsets for one split. `Ok(None)` when none of
    /// them has that split.
    pub fn select(&self, keys: &[String], split: Split) -> Result<Option<LabeledCorpus>, CorpusError> {
        if keys.is_empty() {
            return Err(CorpusError::NoSubsets);
        }
        let available = self.subsets();
        if let Some(k) = keys.iter().find(|k| !available.contains(*k)) {
            return Err(CorpusError::UnknownSubset(k.clone()));
        }
        let parts: Vec<&LabeledCorpus> = keys
            .iter()
            .filter_map(|k| self.parts.get(&(k.clone(), split)))
            .collect();
        if parts.is_empty() {
            return Ok(None);
        }
        let keys_present: Vec<String> = keys
            .iter()
            .filter(|k| self.parts.contains_key(&((*k).clone(), split)))
            .cloned()
            .collect();
        let mut merged = select_subsets(&parts, &keys_present)?;
        merged.tagset = self.tagset.clone();
        Ok(Some(merged))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Loads `<root>/<task>/<subset>/<split>.txt` for every subset directory and
/// each split in `splits`; other split files are never opened. A missing task
/// directory yields an empty [`TaskData`].
pub fn load_task(root: &Path, task: Task, splits: &[Split]) -> Result<TaskData, CorpusError> {
    let dir = root.join(task.key());
    let mut parts = BTreeMap::new();
    if dir.is_dir() {
        let mut subsets: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subsets.sort();
        for sub in subsets {
            let key = sub.file_name().unwrap().to_string_lossy().to_string();
            for &split in splits {
                let path = sub.join(format!("{}.txt", split.key()));
                if !path.is_file() {
                    continue;
                }
                let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
                let corpus = parse_conll(&bytes, &path.display().to_string(), task, split, &key, None)?;
                parts.insert((key.clone(), split), corpus);
            }
        }
    }
    let tagset = merge_tagsets(task, parts.values().map(|c| &c.tagset))?;
    for c in parts.values_mut() {
        c.tagset = tagset.clone();
    }
    Ok(TaskData { task, tagset, parts })
}

/// Per-split statistics of one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    pub task: Task,
    pub subset: String,
    pub split: Split,
    pub sentences: usize,
    pub tokens: usize,
    pub bio_violations: usize,
}

impl SplitStats {
    pub fn mean_tokens(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.tokens as f64 / self.sentences as f64
        }
    }
}

pub fn split_stats(data: &TaskData) -> Vec<SplitStats> {
    data.parts
        .iter()
        .map(|((subset, split), c)| SplitStats {
            task: data.task,
            subset: subset.clone(),
            split: *split,
            sentences: c.sentences.len(),
            tokens: c.token_count(),
            bio_violations: if data.task == Task::Ner {
                c.sentences.iter().map(|s| validate_bio(&s.tags).len()).sum()
            } else {
                0
            },
        })
        .collect()
}
