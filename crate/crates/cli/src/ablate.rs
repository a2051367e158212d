//! Fusion × loss × subset-regime grids.

use std::fmt::Write as _;
use std::path::Path;

use seqmtl::config::{SubsetSpec, TrainConfig};
use seqmtl::corpus::{load_task, Split, Task};
use seqmtl::fusion::FusionMode;
use seqmtl::heads::LossStrategy;
use seqmtl::metrics::EvalReport;
use seqmtl::report::KvReport;

use crate::args::AblateArgs;
use crate::error::CliError;
use crate::evaluate::evaluate_checkpoint;
use crate::run::{train_run, write_file, BUILD_ID};

pub const TABLE_FILE: &str = "table.tsv";
pub const TABLE_TEXT_FILE: &str = "table.txt";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Regime {
    /// Train on every configured subset, evaluate on the target subset.
    All,
    /// Train and evaluate on one subset; `None` picks the default target.
    Single(Option<String>),
}

impl Regime {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "all" => Ok(Regime::All),
            "single" => Ok(Regime::Single(None)),
            other => match other.strip_prefix("single:") {
                Some(k) if !k.is_empty() => Ok(Regime::Single(Some(k.to_string()))),
                _ => Err(CliError::Config(format!("unknown regime `{other}` (expected all, single or single:<key>)"))),
            },
        }
    }

    fn label(&self, target: &str) -> String {
        match self {
            Regime::All => "all".into(),
            Regime::Single(k) => format!("single:{}", k.as_deref().unwrap_or(target)),
        }
    }
}

#[derive(Debug, Clone)]
struct Row {
    fusion: FusionMode,
    loss: LossStrategy,
    regime: Regime,
    regime_label: String,
    report: EvalReport,
    run: String,
    checkpoint: String,
}

fn order<T: PartialEq>(all: &[T], x: &T) -> usize {
    all.iter().position(|y| y == x).unwrap_or(usize::MAX)
}

impl Row {
    /// Fusion mode, then loss, then task, then regime.
    fn sort_key(&self) -> (usize, usize, usize, Regime) {
        (
            order(&FusionMode::ALL, &self.fusion),
            order(&[LossStrategy::UnweightedSum, LossStrategy::Weighted], &self.loss),
            order(&Task::ALL, &self.report.task),
            self.regime.clone(),
        )
    }
}

/// Target subset: the configured one, else the first subset (alphabetically)
/// present for both tasks.
fn default_target(base: &TrainConfig) -> Result<String, CliError> {
    if let Some(t) = &base.data.target_subset {
        return Ok(t.clone());
    }
    let root = Path::new(&base.data.root);
    let ner = load_task(root, Task::Ner, &[Split::Train])?.subsets();
    let pos = load_task(root, Task::Pos, &[Split::Train])?.subsets();
    ner.intersection(&pos)
        .next()
        .cloned()
        .ok_or_else(|| CliError::Data(format!("no subset with training data for both tasks under {}", root.display())))
}

fn cell_config(base: &TrainConfig, fusion: FusionMode, loss: LossStrategy, regime: &Regime, target: &str) -> TrainConfig {
    let mut c = base.clone();
    c.model.fusion = fusion;
    c.training.loss = loss;
    match regime {
        Regime::All => c.data.target_subset = Some(target.to_string()),
        Regime::Single(k) => {
            let key = k.clone().unwrap_or_else(|| target.to_string());
            c.data.subsets = SubsetSpec::Keys(vec![key.clone()]);
            c.data.target_subset = Some(key);
        }
    }
    c
}

pub fn cmd(a: &AblateArgs) -> Result<(), CliError> {
    let base = a.run.resolve()?;
    let regimes = a.regimes.iter().map(|r| Regime::parse(r)).collect::<Result<Vec<_>, _>>()?;
    if a.fusion_modes.is_empty() || a.losses.is_empty() || regimes.is_empty() {
        return Err(CliError::Config("ablation grid is empty".into()));
    }
    let target = default_target(&base)?;
    let split = if a.test { Split::Test } else { Split::Dev };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut cells = 0;
    for &fusion in &a.fusion_modes {
        for &loss in &a.losses {
            for regime in &regimes {
                cells += 1;
                let label = format!("{fusion}/{loss}/{}", regime.label(&target));
                let config = cell_config(&base, fusion, loss, regime, &target);
                log::info!("cell {label}: run {}", config.run_name());
                let result = train_run(&config, &a.out, a.overwrite).and_then(|run| {
                    let eval = if a.test {
                        let subsets = SubsetSpec::Keys(vec![config.data.target_subset.clone().unwrap_or(target.clone())]);
                        evaluate_checkpoint(&run.dir.join(run.checkpoint), None, Some(subsets), split)?.evaluation
                    } else {
                        run.dev.clone()
                    };
                    Ok((run, eval))
                });
                match result {
                    Ok((run, eval)) => {
                        for report in [eval.ner, eval.pos] {
                            rows.push(Row {
                                fusion,
                                loss,
                                regime: regime.clone(),
                                regime_label: regime.label(&target),
                                report,
                                run: run.name.clone(),
                                checkpoint: format!("{}/{}", run.name, run.checkpoint),
                            });
                        }
                    }
                    Err(e) => {
                        log::warn!("cell {label} failed: {}", e.message());
                        failures.push((label, e));
                    }
                }
            }
        }
    }
    rows.sort_by_key(Row::sort_key);

    let mut kv = KvReport::default();
    kv.push("kind", "ablate");
    kv.push("seed", base.training.seed);
    kv.push("build", BUILD_ID);
    kv.push("split", split.key());
    kv.push("target_subset", &target);
    kv.push("cells", cells);
    kv.push("rows", rows.len());
    kv.push("failed", failures.len());
    for (i, r) in rows.iter().enumerate() {
        let p = format!("row.{}.", i + 1);
        kv.push(format!("{p}fusion"), r.fusion);
        kv.push(format!("{p}loss"), r.loss);
        kv.push(format!("{p}regime"), &r.regime_label);
        kv.push(format!("{p}task"), r.report.task.key());
        kv.push(format!("{p}metric"), r.report.metric.name());
        kv.push(format!("{p}value"), r.report.value);
        kv.push(format!("{p}run"), &r.run);
        kv.push(format!("{p}checkpoint"), &r.checkpoint);
    }
    for (i, (label, e)) in failures.iter().enumerate() {
        let p = format!("failure.{}.", i + 1);
        kv.push(format!("{p}cell"), label);
        kv.push(format!("{p}class"), e.class());
        kv.push(format!("{p}message"), e.message().replace(['\t', '\n', '\r'], " "));
    }

    std::fs::create_dir_all(&a.out).map_err(|e| crate::error::io_error(&a.out, e))?;
    let text = render(&rows, &failures, split);
    write_file(&a.out.join(TABLE_FILE), &kv.emit())?;
    write_file(&a.out.join(TABLE_TEXT_FILE), &text)?;
    print!("{text}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} of {cells} ablation cells failed", failures.len())))
    }
}

fn render(rows: &[Row], failures: &[(String, CliError)], split: Split) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<15} {:<9} {:<16} {:<5} {:<15} {:>7}  checkpoint",
        "Merging Type", "Loss", "Regime", "Task", "Metric", split.key()
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<15} {:<9} {:<16} {:<5} {:<15} {:>7}  {}",
            r.fusion.as_str(),
            r.loss.as_str(),
            r.regime_label,
            r.report.task.key().to_uppercase(),
            r.report.metric.name(),
            r.report.percent(),
            r.checkpoint
        );
    }
    for (label, e) in failures {
        let _ = writeln!(s, "FAILED {label}: {}", e.message());
    }
    s
}
