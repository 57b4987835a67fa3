use std::io::Write;

use serde::{Deserialize, Serialize};

pub const HISTORY_HEADER: &str = "epoch,lr,task_loss,reg_loss,total";

/// One epoch of training losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

pub fn write_history_csv<W: Write>(mut out: W, records: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.lr, r.task_loss, r.reg_loss, r.total
        )?;
    }
    Ok(())
}
