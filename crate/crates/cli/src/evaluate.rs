use std::path::{Path, PathBuf};

use seqmtl::checkpoint::Checkpoint;
use seqmtl::config::SubsetSpec;
use seqmtl::corpus::{load_task, LabeledCorpus, Split, Task};
use seqmtl::report::KvReport;
use seqmtl::trainer::{evaluate, Evaluation};

use crate::args::EvaluateArgs;
use crate::error::CliError;
use crate::run::{write_file, BUILD_ID};

/// NER and POS corpora of one split, restricted to `subsets`.
pub fn load_split(root: &Path, subsets: &SubsetSpec, split: Split) -> Result<(LabeledCorpus, LabeledCorpus, Vec<String>), CliError> {
    let mut out = Vec::new();
    let mut used = Vec::new();
    for task in Task::ALL {
        let data = load_task(root, task, &[split])?;
        let keys = subsets.resolve(data.subsets());
        let corpus = data
            .select(&keys, split)?
            .filter(|c| !c.sentences.is_empty())
            .ok_or_else(|| CliError::Data(format!("no {task} {split} data for subsets {} under {}", keys.join(","), root.display())))?;
        used = keys;
        out.push(corpus);
    }
    let pos = out.pop().unwrap();
    let ner = out.pop().unwrap();
    Ok((ner, pos, used))
}

pub struct CheckpointEval {
    pub evaluation: Evaluation,
    pub report: KvReport,
}

/// Reloads `checkpoint` and evaluates it on `split` of `root`.
pub fn evaluate_checkpoint(checkpoint: &Path, root: Option<&str>, subsets: Option<SubsetSpec>, split: Split) -> Result<CheckpointEval, CliError> {
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    let r = ckpt
        .restore::<f64>()
        .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    let root = root.unwrap_or(&r.config.data.root).to_string();
    let subsets = subsets.unwrap_or_else(|| match &r.config.data.target_subset {
        Some(t) => SubsetSpec::Keys(vec![t.clone()]),
        None => r.config.data.subsets.clone(),
    });
    let (ner, pos, keys) = load_split(Path::new(&root), &subsets, split)?;
    let evaluation = evaluate(&r.model, &r.vocab, &r.ner_tagset, &r.pos_tagset, &ner, &pos)?;

    let mut report = KvReport::default();
    report.push("kind", "evaluate");
    report.push("checkpoint", checkpoint.display());
    report.push("config_hash", r.config.hash());
    report.push("seed", r.config.training.seed);
    report.push("build", BUILD_ID);
    report.push("checkpoint_epoch", ckpt.epoch);
    report.push("data_root", &root);
    report.push("split", split.key());
    report.push("eval_subsets", keys.join(","));
    evaluation.ner.write_kv("ner.", &mut report);
    evaluation.pos.write_kv("pos.", &mut report);
    Ok(CheckpointEval { evaluation, report })
}

pub fn cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    let split = if a.test {
        Split::Test
    } else {
        match a.split.as_str() {
            "train" => Split::Train,
            "dev" => Split::Dev,
            "test" => return Err(CliError::Config("the test split is only evaluated with --test".into())),
            other => return Err(CliError::Config(format!("unknown split `{other}` (expected train or dev)"))),
        }
    };
    let subsets = a
        .subsets
        .as_deref()
        .map(|s| s.parse::<SubsetSpec>().map_err(|e| CliError::Config(format!("--subsets: {e}"))))
        .transpose()?;
    let result = evaluate_checkpoint(&a.checkpoint, a.data_root.as_deref(), subsets, split)?;
    let report_path = a.report.clone().unwrap_or_else(|| default_report_path(&a.checkpoint, split));
    write_file(&report_path, &result.report.emit())?;
    println!("checkpoint {} on {} split:", a.checkpoint.display(), split.key());
    print!("{}{}", result.evaluation.ner, result.evaluation.pos);
    println!("report {}", report_path.display());
    Ok(())
}

fn default_report_path(checkpoint: &Path, split: Split) -> PathBuf {
    let stem = checkpoint.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().to_string());
    checkpoint.with_file_name(format!("{stem}.eval-{}.tsv", split.key()))
}
