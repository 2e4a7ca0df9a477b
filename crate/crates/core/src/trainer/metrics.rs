use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "step,lr,eta,loss_s,loss_u,loss_tot,mask_rate,lambda_mean,lambda_min,lambda_max,top1,top5";

/// One optimizer step. Values that were not computed are `None` and written
/// as empty cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub lr: f64,
    pub eta: Option<f64>,
    pub loss_s: f64,
    pub loss_u: Option<f64>,
    pub loss_tot: f64,
    pub mask_rate: Option<f64>,
    pub lambda_mean: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.lr,
            cell(self.eta),
            self.loss_s,
            cell(self.loss_u),
            self.loss_tot,
            cell(self.mask_rate),
            cell(self.lambda_mean),
            cell(self.lambda_min),
            cell(self.lambda_max),
            cell(self.top1),
            cell(self.top5)
        )
        .expect("writing to a String");
        s
    }
}

/// Rows of an existing log with `step < before`, header excluded.
pub fn read_rows_before(path: &Path, before: usize) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: "unexpected metrics header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let step: usize = line.split(',').next().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            reason: "missing step".into(),
        })?;
        if step < before {
            rows.push(line.to_owned());
        }
    }
    Ok(rows)
}

pub fn write_log(path: &Path, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(METRICS_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
