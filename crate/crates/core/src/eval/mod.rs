//! Accuracy metrics, confusion matrices and saliency maps.

pub mod gradcam;

pub use gradcam::{grad_cam, write_saliency, SaliencyMap};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ClassifierModel, Tensor};
use crate::scalar::Scalar;

/// Position of `label` when classes are sorted by descending logit, ties
/// going to the lower class index.
fn rank_of(row: &[f64], label: usize) -> usize {
    let z = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > z || (v == z && j < label))
        .count()
}

/// Fraction of rows whose label is among the `k` largest logits.
pub fn topk_accuracy(logits: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty("evaluation batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::shape("topk_accuracy", &[labels.len()], &[logits.len()]));
    }
    let classes = logits[0].len();
    if k == 0 || k > classes {
        return Err(Error::invalid(format!("k = {k} outside 1..={classes}")));
    }
    let mut hits = 0;
    for (row, &l) in logits.iter().zip(labels) {
        if l >= row.len() {
            return Err(Error::invalid(format!("label {l} out of range for {} classes", row.len())));
        }
        if rank_of(row, l) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / logits.len() as f64)
}

/// Fraction of rows with `max(q) >= tau`.
pub fn mask_rate(probs: &[Vec<f64>], tau: f64) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("probability batch"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("confidence threshold {tau} outside (0, 1]")));
    }
    let hits = probs
        .iter()
        .filter(|q| q.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= tau)
        .count();
    Ok(hits as f64 / probs.len() as f64)
}

/// Logits of a list of `[H,W,C]` images, evaluated in chunks.
pub fn batch_logits<T: Scalar>(model: &ClassifierModel<T>, images: &[Tensor<T>], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let classes = model.spec().classes;
    let mut out = Vec::with_capacity(images.len());
    for part in images.chunks(chunk.max(1)) {
        let z = model.logits(&Tensor::stack(part)?)?;
        out.extend(z.to_f64_vec().chunks(classes).map(|r| r.to_vec()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub examples: usize,
    pub top1: f64,
    pub top5: f64,
    pub class_names: Vec<String>,
    /// `None` for classes absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub group_names: Vec<String>,
    pub group_confusion: Vec<Vec<usize>>,
    pub group_accuracy: f64,
}

/// Maps each class to a group. Classes not listed in `groups` form their own
/// singleton group, appended after the listed groups in class order.
pub fn class_to_group(classes: usize, groups: &[Vec<usize>]) -> Result<(Vec<usize>, usize)> {
    let mut map = vec![usize::MAX; classes];
    for (g, members) in groups.iter().enumerate() {
        for &c in members {
            if c >= classes {
                return Err(Error::invalid(format!("group {g} references class {c} of {classes}")));
            }
            if map[c] != usize::MAX {
                return Err(Error::invalid(format!("class {c} appears in more than one group")));
            }
            map[c] = g;
        }
    }
    let mut next = groups.len();
    for slot in map.iter_mut().filter(|s| **s == usize::MAX) {
        *slot = next;
        next += 1;
    }
    Ok((map, next))
}

/// Builds a report from logits. `groups` lists class indices per group.
pub fn report_from_logits(
    split: &str,
    logits: &[Vec<f64>],
    labels: &[usize],
    class_names: &[String],
    groups: &[Vec<usize>],
) -> Result<EvalReport> {
    let classes = class_names.len();
    if logits.first().map(|r| r.len()) != Some(classes) {
        return Err(Error::invalid(format!(
            "logit rows do not match the {classes} class names (or the split is empty)"
        )));
    }
    let top1 = topk_accuracy(logits, labels, 1)?;
    let top5 = topk_accuracy(logits, labels, 5.min(classes))?;
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (row, &l) in logits.iter().zip(labels) {
        let pred = (0..classes).find(|&j| rank_of(row, j) == 0).expect("non-empty row");
        confusion[l][pred] += 1;
    }
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    let (map, group_count) = class_to_group(classes, groups)?;
    let mut group_confusion = vec![vec![0usize; group_count]; group_count];
    for (t, row) in confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            group_confusion[map[t]][map[p]] += n;
        }
    }
    let correct: usize = (0..group_count).map(|g| group_confusion[g][g]).sum();
    let group_names = (0..group_count)
        .map(|g| {
            let members: Vec<&str> = (0..classes).filter(|&c| map[c] == g).map(|c| class_names[c].as_str()).collect();
            members.join("+")
        })
        .collect();
    Ok(EvalReport {
        split: split.to_owned(),
        examples: labels.len(),
        top1,
        top5,
        class_names: class_names.to_vec(),
        per_class_accuracy,
        confusion,
        group_names,
        group_confusion,
        group_accuracy: correct as f64 / labels.len() as f64,
    })
}

pub fn eval_report<T: Scalar>(
    model: &ClassifierModel<T>,
    split: &str,
    images: &[Tensor<T>],
    labels: &[usize],
    class_names: &[String],
    groups: &[Vec<usize>],
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
        return Err(Error::invalid(format!("label {bad} is not one of the {} known classes", class_names.len())));
    }
    report_from_logits(split, &batch_logits(model, images, 64)?, labels, class_names, groups)
}

fn write_matrix(path: &Path, names: &[String], matrix: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut header = vec!["true\\predicted".to_owned()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in names.iter().zip(matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl EvalReport {
    /// Writes `<stem>.json`, `<stem>_confusion.csv` and
    /// `<stem>_group_confusion.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
        write_matrix(&dir.join(format!("{stem}_confusion.csv")), &self.class_names, &self.confusion)?;
        write_matrix(&dir.join(format!("{stem}_group_confusion.csv")), &self.group_names, &self.group_confusion)
    }
}
