use std::fmt::Write as _;
use std::time::Instant;

use seqmtl::fusion::FusionMode;
use seqmtl::gradcheck::{injected_fault_check, model_check, op_suite, GradCheck, FD_EPS};
use seqmtl::report::KvReport;

use crate::args::GradcheckArgs;
use crate::error::CliError;
use crate::run::{write_file, BUILD_ID};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Every check with its tolerance, in table order.
pub fn suite(seed: u64, inject_fault: bool) -> Result<Vec<(GradCheck, f64)>, CliError> {
    let mut rows: Vec<(GradCheck, f64)> = op_suite(seed).into_iter().map(|c| (c, OP_TOLERANCE)).collect();
    for mode in FusionMode::ALL {
        rows.push((model_check(mode, seed)?, MODEL_TOLERANCE));
    }
    if inject_fault {
        rows.push((injected_fault_check(), OP_TOLERANCE));
    }
    Ok(rows)
}

pub fn cmd(a: &GradcheckArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let rows = suite(a.seed, a.inject_fault)?;
    log::info!("gradient checks took {:.2?}", start.elapsed());

    let mut text = String::new();
    let _ = writeln!(text, "{:<22} {:>8} {:>12} {:>9}  status", "check", "checked", "max_rel_err", "tolerance");
    let mut kv = KvReport::default();
    kv.push("kind", "gradcheck");
    kv.push("seed", a.seed);
    kv.push("build", BUILD_ID);
    kv.push("epsilon", FD_EPS);
    let mut failed = Vec::new();
    for (c, tol) in &rows {
        let status = if c.passes(*tol) { "PASS" } else { "FAIL" };
        if status == "FAIL" {
            failed.push(c.name.clone());
        }
        let _ = writeln!(text, "{:<22} {:>8} {:>12.3e} {:>9.0e}  {status}", c.name, c.checked, c.max_rel_error, tol);
        kv.push(format!("check.{}.max_rel_error", c.name), c.max_rel_error);
        kv.push(format!("check.{}.tolerance", c.name), tol);
        kv.push(format!("check.{}.status", c.name), status.to_lowercase());
    }
    kv.push("failed", failed.len());
    print!("{text}");
    if let Some(path) = &a.report {
        write_file(path, &kv.emit())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed for {}", failed.join(","))))
    }
}
