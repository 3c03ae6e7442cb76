use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::train::{argmax_rows, DataSplit};
use crate::dataset::PlayClass;
use crate::error::{Error, Result};

/// Precision, recall and F1 from raw counts; a ratio with a zero denominator
/// is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl PrecisionRecall {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { None } else { Some(a as f64 / b as f64) };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        PrecisionRecall { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: PlayClass,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Each row as a percentage of its support; `None` for empty rows.
    pub confusion_pct: Vec<Option<Vec<f64>>>,
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let k = PlayClass::ALL.len();
        if truth.len() != predicted.len() {
            return Err(Error::Invalid(format!("{} labels for {} predictions", truth.len(), predicted.len())));
        }
        if truth.is_empty() {
            return Err(Error::Invalid("evaluation set is empty".into()));
        }
        let mut confusion = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::Invalid(format!("class index out of range ({t}, {p})")));
            }
            confusion[t][p] += 1;
        }
        let n = truth.len() as u64;
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let classes = PlayClass::ALL
            .iter()
            .enumerate()
            .map(|(c, &class)| {
                let tp = confusion[c][c];
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = (0..k).map(|t| confusion[t][c]).sum();
                let pr = PrecisionRecall::from_counts(tp, predicted - tp, support - tp);
                ClassMetrics { class, precision: pr.precision, recall: pr.recall, f1: pr.f1, support }
            })
            .collect();
        let confusion_pct = confusion
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                (s > 0).then(|| row.iter().map(|&v| 100.0 * v as f64 / s as f64).collect())
            })
            .collect();
        Ok(EvalReport { n, accuracy: trace as f64 / n as f64, classes, confusion, confusion_pct })
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "Samples: {}   Accuracy: {:.4}", self.n, self.accuracy);
        let _ = writeln!(s);
        let _ = writeln!(s, "  {:<20} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "  {:<20} {:>9} {:>9} {:>9} {:>8}",
                c.class.as_str(),
                opt(c.precision),
                opt(c.recall),
                opt(c.f1),
                c.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Confusion matrix (rows: true, columns: predicted; counts and row %)");
        let head: Vec<String> = PlayClass::ALL.iter().map(|c| format!("{:>20}", c.as_str())).collect();
        let _ = writeln!(s, "  {:<20}{}", "", head.join(""));
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let pct = self.confusion_pct[i].as_ref().map_or_else(|| "n/a".to_string(), |p| format!("{:.1}%", p[j]));
                    format!("{:>20}", format!("{v} ({pct})"))
                })
                .collect();
            let _ = writeln!(s, "  {:<20}{}", PlayClass::ALL[i].as_str(), cells.join(""));
        }
        s
    }
}

/// Eval-mode predictions on `data` and the resulting report.
pub fn evaluate(mlp: &Mlp, data: &DataSplit) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut predicted = Vec::with_capacity(data.len());
    for chunk in idx.chunks(1024) {
        let (x, _) = data.rows(chunk);
        predicted.extend(argmax_rows(&mlp.predict_logits(&x)?));
    }
    EvalReport::from_predictions(&data.y, &predicted)
}
