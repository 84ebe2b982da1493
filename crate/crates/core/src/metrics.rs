//! Per-epoch metric rows and their CSV encodings.
//!
//! Floats are written with a fixed six decimals so reruns produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One training epoch of a phase (pretrain or a continual step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub phase: String,
    pub loss: f64,
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "epoch,phase,loss,acc_all,acc_old,acc_new,wall_ms";

/// One row of a continual-learning report; epoch 0 is the pre-increment state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub step: usize,
    pub epoch: usize,
    pub acc_full: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub forgetting: f64,
    pub replay_bytes: u64,
    pub wall_ms: u64,
}

pub const REPORT_HEADER: &str =
    "step,epoch,acc_full,acc_old,acc_new,forgetting,replay_bytes,wall_ms";

pub fn metrics_csv(rows: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.epoch, r.phase, r.loss, r.acc_all, r.acc_old, r.acc_new, r.wall_ms
        );
    }
    s
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.step,
            r.epoch,
            r.acc_full,
            r.acc_old,
            r.acc_new,
            r.forgetting,
            r.replay_bytes,
            r.wall_ms
        );
    }
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}
