//! Confusion matrices, macro-averaged scores and Grad-CAM heatmaps.

mod gradcam;

pub use gradcam::{gradcam, gradcam_from_gradients, gradcam_weighted_sum, Heatmap};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::QualityLabel;
use crate::{Error, Result};

pub const CLASSES: usize = 3;

/// `counts[i][j]`: samples of true class `i` predicted as `j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CLASSES]; CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for v in [truth, predicted] {
            if v >= CLASSES {
                return Err(Error::LabelOutOfRange(v));
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Per-class score vectors, indexed by class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub precision: [f64; CLASSES],
    pub recall: [f64; CLASSES],
    pub f: [f64; CLASSES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: PerClass,
    #[serde(rename = "macro")]
    pub macro_avg: Scores,
    pub confusion: [[u64; CLASSES]; CLASSES],
    /// Macro-F of each independent run, when aggregated over seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<Vec<f64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy plus per-class and macro (unweighted mean) precision, recall and
/// F. Zero denominators score 0.
pub fn metrics_from_cm(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut per_class = PerClass::default();
    for k in 0..CLASSES {
        let p = ratio(cm.counts[k][k], cm.column_sum(k));
        let r = ratio(cm.counts[k][k], cm.row_sum(k));
        per_class.precision[k] = p;
        per_class.recall[k] = r;
        per_class.f[k] = harmonic(p, r);
    }
    let mean = |v: &[f64; CLASSES]| v.iter().sum::<f64>() / CLASSES as f64;
    Ok(MetricsReport {
        accuracy: ratio(cm.trace(), total),
        macro_avg: Scores {
            precision: mean(&per_class.precision),
            recall: mean(&per_class.recall),
            f: mean(&per_class.f),
        },
        per_class,
        confusion: cm.counts,
        runs: None,
    })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn with_runs(mut self, runs: Vec<f64>) -> Self {
        self.runs = Some(runs);
        self
    }

    /// Mean and sample standard deviation of macro-F over `runs`.
    pub fn f_mean_std(&self) -> Option<(f64, f64)> {
        self.runs.as_deref().map(mean_std)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy  {:.4}", self.accuracy);
        let _ = writeln!(s, "{:<8}  precision  recall  f", "class");
        for l in QualityLabel::ALL {
            let k = l.index();
            let pc = &self.per_class;
            let _ = writeln!(
                s,
                "{:<8}  {:>9.4}  {:>6.4}  {:.4}",
                l.name(),
                pc.precision[k],
                pc.recall[k],
                pc.f[k]
            );
        }
        let m = &self.macro_avg;
        let _ = writeln!(s, "{:<8}  {:>9.4}  {:>6.4}  {:.4}", "macro", m.precision, m.recall, m.f);
        let _ = writeln!(s, "confusion (rows: truth, columns: predicted)");
        for row in &self.confusion {
            let _ = writeln!(s, "  {:>6} {:>6} {:>6}", row[0], row[1], row[2]);
        }
        if let Some((mean, std)) = self.f_mean_std() {
            let _ = writeln!(s, "runs      {}  f-mean {mean:.4}  f-std {std:.4}", self.runs.as_ref().map_or(0, Vec::len));
        }
        s
    }
}
