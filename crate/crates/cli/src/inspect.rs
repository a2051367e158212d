use std::fmt::Write as _;

use seqmtl::corpus::{load_task, split_stats, Split, SplitStats, Task};
use seqmtl::report::KvReport;

use crate::args::InspectArgs;
use crate::error::CliError;
use crate::run::{write_file, BUILD_ID};

pub fn cmd(a: &InspectArgs) -> Result<(), CliError> {
    if !a.data_root.is_dir() {
        return Err(CliError::Data(format!("{}: not a directory", a.data_root.display())));
    }
    let mut kv = KvReport::default();
    kv.push("kind", "inspect-data");
    kv.push("build", BUILD_ID);
    kv.push("data_root", a.data_root.display());
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<4} {:<12} {:<6} {:>9} {:>9} {:>11} {:>14}",
        "task", "subset", "split", "sentences", "tokens", "mean_tokens", "bio_violations"
    );
    for task in Task::ALL {
        let data = load_task(&a.data_root, task, &Split::ALL)?;
        let stats = split_stats(&data);
        let t = task.key();
        for s in &stats {
            let _ = writeln!(
                text,
                "{:<4} {:<12} {:<6} {:>9} {:>9} {:>11.1} {:>14}",
                t,
                s.subset,
                s.split.key(),
                s.sentences,
                s.tokens,
                s.mean_tokens(),
                s.bio_violations
            );
            push_stats(&mut kv, &format!("{t}.{}.{}.", s.subset, s.split.key()), s);
        }
        for split in Split::ALL {
            let mut total = SplitStats {
                task,
                subset: "total".into(),
                split,
                sentences: 0,
                tokens: 0,
                bio_violations: 0,
            };
            for s in stats.iter().filter(|s| s.split == split) {
                total.sentences += s.sentences;
                total.tokens += s.tokens;
                total.bio_violations += s.bio_violations;
            }
            let _ = writeln!(
                text,
                "{:<4} {:<12} {:<6} {:>9} {:>9} {:>11.1} {:>14}",
                t,
                "(total)",
                split.key(),
                total.sentences,
                total.tokens,
                total.mean_tokens(),
                total.bio_violations
            );
            push_stats(&mut kv, &format!("{t}.total.{}.", split.key()), &total);
        }
        kv.push(format!("{t}.subsets"), data.subsets().into_iter().collect::<Vec<_>>().join(","));
        kv.push(format!("{t}.tagset"), data.tagset.tags.join(","));
        let _ = writeln!(text, "{t} tagset ({}): {}", data.tagset.len(), data.tagset.tags.join(" "));
    }
    print!("{text}");
    if let Some(path) = &a.report {
        write_file(path, &kv.emit())?;
    }
    Ok(())
}

fn push_stats(kv: &mut KvReport, prefix: &str, s: &SplitStats) {
    kv.push(format!("{prefix}sentences"), s.sentences);
    kv.push(format!("{prefix}tokens"), s.tokens);
    kv.push(format!("{prefix}mean_tokens"), format!("{:.1}", s.mean_tokens()));
    kv.push(format!("{prefix}bio_violations"), s.bio_violations);
}
