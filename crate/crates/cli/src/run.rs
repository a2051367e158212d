//! One training run and its run directory.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use seqmtl::checkpoint::Checkpoint;
use seqmtl::config::{Selection, TrainConfig, KEYS};
use seqmtl::report::KvReport;
use seqmtl::trainer::{epoch_log_csv, evaluate, train, Evaluation, TrainingData};

use crate::error::{io_error, CliError};

pub const BUILD_ID: &str = env!("SEQMTL_BUILD_ID");

pub const CONFIG_FILE: &str = "config.ini";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const REPORT_FILE: &str = "report.tsv";

#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub name: String,
    /// File name of the selected checkpoint inside `dir`.
    pub checkpoint: &'static str,
    pub selected_epoch: usize,
    /// Metrics of the selected checkpoint, reloaded from disk.
    pub dev: Evaluation,
}

impl RunArtifacts {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run {}", self.dir.display());
        let _ = writeln!(
            s,
            "selected {} (epoch {}), dev metrics:",
            self.checkpoint, self.selected_epoch
        );
        let _ = write!(s, "{}{}", self.dev.ner, self.dev.pos);
        let _ = writeln!(s, "report {}", self.dir.join(REPORT_FILE).display());
        s
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

pub fn manifest(config: &TrainConfig) -> KvReport {
    let mut kv = KvReport::default();
    kv.push("run_name", config.run_name());
    kv.push("config_hash", config.hash());
    kv.push("seed", config.training.seed);
    kv.push("build", BUILD_ID);
    for key in KEYS {
        kv.push(format!("config.{key}"), config.get(key).unwrap_or_default());
    }
    kv
}

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !overwrite {
            return Err(CliError::Config(format!(
                "run directory {} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Trains `config` into `out/<hash>-seed<seed>` and evaluates the selected
/// checkpoint on dev after reloading it from disk.
pub fn train_run(config: &TrainConfig, out: &Path, overwrite: bool) -> Result<RunArtifacts, CliError> {
    let data = TrainingData::load(config, Path::new(&config.data.root))?;
    let name = config.run_name();
    let dir = out.join(&name);
    prepare_dir(&dir, overwrite)?;
    log::info!("run directory {}", dir.display());
    write_file(&dir.join(CONFIG_FILE), &config.to_text())?;
    write_file(&dir.join(MANIFEST_FILE), &manifest(config).emit())?;

    let log_path = dir.join(EPOCH_LOG_FILE);
    write_file(&log_path, &epoch_log_csv(&[]))?;
    let mut log_file = OpenOptions::new().append(true).open(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut log_err = None;
    let outcome = train::<f64>(config, &data, |record| {
        let csv = epoch_log_csv(std::slice::from_ref(record));
        let row = csv.split_once('\n').map_or("", |(_, r)| r);
        if let Err(e) = log_file.write_all(row.as_bytes()).and_then(|_| log_file.flush()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_error(&log_path, e));
    }

    for (file, ckpt) in [(BEST_CHECKPOINT, &outcome.best), (LAST_CHECKPOINT, &outcome.last)] {
        ckpt.save(&dir.join(file))?;
    }
    let checkpoint = match outcome.selection {
        Selection::Best => BEST_CHECKPOINT,
        Selection::Last => LAST_CHECKPOINT,
    };
    let restored = Checkpoint::load(&dir.join(checkpoint))?.restore::<f64>()?;
    let dev = evaluate(
        &restored.model,
        &restored.vocab,
        &restored.ner_tagset,
        &restored.pos_tagset,
        &data.ner_dev,
        &data.pos_dev,
    )?;

    let mut report = KvReport::default();
    report.push("kind", "train");
    report.push("run_name", &name);
    report.push("config_hash", config.hash());
    report.push("seed", config.training.seed);
    report.push("build", BUILD_ID);
    report.push("epochs", outcome.records.len());
    report.push("selection", config.training.selection.as_str());
    report.push("selection_metric", config.training.selection_metric.as_str());
    report.push("selected_epoch", outcome.selected_epoch());
    report.push("checkpoint", checkpoint);
    report.push("split", "dev");
    report.push("eval_subsets", data.ner_dev.subsets().into_iter().collect::<Vec<_>>().join(","));
    dev.ner.write_kv("ner.", &mut report);
    dev.pos.write_kv("pos.", &mut report);
    write_file(&dir.join(REPORT_FILE), &report.emit())?;

    Ok(RunArtifacts {
        dir,
        name,
        checkpoint,
        selected_epoch: outcome.selected_epoch(),
        dev,
    })
}
