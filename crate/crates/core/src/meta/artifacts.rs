use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::LossRecord;
use crate::fdm::DerivOp;
use crate::graph::io::fmt_f64;
use crate::{Error, Result};

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task_id: String,
    pub shots: usize,
    pub method: String,
    pub test_mse: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// `epoch,task_id,inner_loss,main_loss,aux_<op>…`; aux cells are empty for
/// records without auxiliary losses.
pub fn write_losses_csv(path: &Path, history: &[Vec<LossRecord>], ops: &[DerivOp]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["epoch".to_string(), "task_id".into(), "inner_loss".into(), "main_loss".into()];
    header.extend(ops.iter().map(|o| format!("aux_{}", o.name())));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in history.iter().flatten() {
        let mut row = vec![r.epoch.to_string(), r.task_id.clone(), fmt_f64(r.inner_loss), fmt_f64(r.main_loss)];
        if r.aux.is_empty() {
            row.extend(ops.iter().map(|_| String::new()));
        } else if r.aux.len() == ops.len() {
            row.extend(r.aux.iter().map(|&v| fmt_f64(v)));
        } else {
            return Err(Error::Invalid(format!(
                "loss record has {} auxiliary values for {} operators",
                r.aux.len(),
                ops.len()
            )));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `task_id,shots,method,test_mse`, rows in the given order.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task_id", "shots", "method", "test_mse"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([r.task_id.clone(), r.shots.to_string(), r.method.clone(), fmt_f64(r.test_mse)])
            .map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
