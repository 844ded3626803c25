use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{batch, EpochLog};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::signal::SignalFrame;
use crate::tensor::{Real, Tensor};

const EVAL_BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrAccuracy {
    pub snr_db: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub operator: String,
    pub classes: Vec<String>,
    /// Sorted by ascending SNR.
    pub per_snr_accuracy: Vec<SnrAccuracy>,
    /// `confusion[true][predicted]` per SNR, aligned with `per_snr_accuracy`.
    pub per_snr_confusion: Vec<Vec<Vec<u64>>>,
    /// Pooled over every SNR.
    pub confusion: Vec<Vec<u64>>,
    pub overall_pr_cc: f64,
    pub loss_history: Vec<EpochLog>,
    pub param_count: usize,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Probability of correct classification: per-class recall weighted by the
/// empirical class priors (row totals). Empty rows contribute nothing.
pub fn pr_cc(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    confusion
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| (row[c] as f64 / n as f64) * (n as f64 / total as f64))
        })
        .sum()
}

fn trace_ratio(m: &[Vec<u64>]) -> f64 {
    let total: u64 = m.iter().flatten().sum();
    let trace: u64 = (0..m.len()).map(|i| m[i][i]).sum();
    if total == 0 {
        0.0
    } else {
        trace as f64 / total as f64
    }
}

/// Assemble a report from predicted labels, one per frame.
pub fn report_from_predictions(
    frames: &[SignalFrame],
    predictions: &[usize],
    classes: &[String],
) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    if frames.len() != predictions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} frames",
            predictions.len(),
            frames.len()
        )));
    }
    let k = classes.len();
    if let Some(bad) = frames
        .iter()
        .map(|f| f.label)
        .chain(predictions.iter().copied())
        .find(|&l| l >= k)
    {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut snrs: Vec<f64> = frames.iter().map(|f| f.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let mut per_snr = vec![vec![vec![0u64; k]; k]; snrs.len()];
    let mut pooled = vec![vec![0u64; k]; k];
    for (f, &p) in frames.iter().zip(predictions) {
        let s = snrs.partition_point(|&v| v < f.snr_db);
        per_snr[s][f.label][p] += 1;
        pooled[f.label][p] += 1;
    }
    Ok(EvalReport {
        operator: String::new(),
        classes: classes.to_vec(),
        per_snr_accuracy: snrs
            .iter()
            .zip(&per_snr)
            .map(|(&snr_db, m)| SnrAccuracy {
                snr_db,
                accuracy: trace_ratio(m),
            })
            .collect(),
        per_snr_confusion: per_snr,
        overall_pr_cc: pr_cc(&pooled),
        confusion: pooled,
        loss_history: Vec::new(),
        param_count: 0,
    })
}

/// Inference-mode predictions for every frame.
pub fn predict<T: Real>(model: &mut Model<T>, frames: &[SignalFrame]) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..frames.len()).collect();
    let mut out = Vec::with_capacity(frames.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = batch::<T>(frames, chunk)?;
        let logits: Tensor<T> = model.predict(&x)?;
        let m = logits.dims()[1];
        out.extend(logits.data().chunks_exact(m).map(argmax));
    }
    Ok(out)
}

pub fn evaluate<T: Real>(
    model: &mut Model<T>,
    frames: &[SignalFrame],
    classes: &[String],
) -> Result<EvalReport> {
    if classes.len() != model.config().num_classes {
        return Err(Error::InvalidArgument(format!(
            "{} class names for a {}-class model",
            classes.len(),
            model.config().num_classes
        )));
    }
    let preds = predict(model, frames)?;
    let mut report = report_from_predictions(frames, &preds, classes)?;
    report.operator = model.config().operator.name().to_string();
    report.param_count = model.parameter_count();
    Ok(report)
}

fn snr_label(snr: f64) -> String {
    format!("{snr}")
}

fn confusion_csv(classes: &[String], m: &[Vec<u64>]) -> String {
    let mut out = String::from("true\\pred");
    for c in classes {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (c, row) in classes.iter().zip(m) {
        out.push_str(c);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

impl EvalReport {
    /// Write `accuracy_vs_snr.csv`, `confusion_<snr>.csv` per SNR,
    /// `confusion_all.csv` and `report.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: String, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        let mut acc = String::from("snr_db,accuracy\n");
        for a in &self.per_snr_accuracy {
            acc.push_str(&format!("{},{}\n", snr_label(a.snr_db), a.accuracy));
        }
        write("accuracy_vs_snr.csv".into(), acc)?;
        for (a, m) in self.per_snr_accuracy.iter().zip(&self.per_snr_confusion) {
            write(
                format!("confusion_{}.csv", snr_label(a.snr_db)),
                confusion_csv(&self.classes, m),
            )?;
        }
        write(
            "confusion_all.csv".into(),
            confusion_csv(&self.classes, &self.confusion),
        )?;
        write("report.json".into(), serde_json::to_string_pretty(self)?)
    }
}
