//! Confusion counts and the binary classification metric suite.
//!
//! The positive class is resistant (`1`). Any ratio whose denominator is zero is reported
//! as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same table with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts::new(self.tn, self.fn_, self.tp, self.fp)
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Input(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            _ => return Err(Error::Input(format!("non-binary label pair ({t}, {p})"))),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub f1_resistant: f64,
    pub mcc: f64,
    pub precision_resistant: f64,
    pub recall_resistant: f64,
    pub f1_macro: f64,
    pub kappa: f64,
    pub counts: ConfusionCounts,
}

/// Column headers in report order.
pub const METRIC_COLUMNS: [&str; 7] = [
    "Accuracy",
    "F1 Score",
    "Matthews",
    "Precision",
    "Recall",
    "F1 Score (Macro)",
    "Cohen Kappa",
];

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    ratio(2.0 * tp, 2.0 * tp + fp + fn_)
}

pub fn report(counts: ConfusionCounts) -> Result<MetricReport> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::Input("cannot score an empty evaluation set".into()));
    }
    let n = n as f64;
    let (tp, fp, tn, fn_) = (
        counts.tp as f64,
        counts.fp as f64,
        counts.tn as f64,
        counts.fn_ as f64,
    );
    let accuracy = (tp + tn) / n;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1_pos = f1(tp, fp, fn_);
    let f1_neg = f1(tn, fn_, fp);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, mcc_den);
    let p_expected = ((tp + fp) * (tp + fn_) + (tn + fn_) * (tn + fp)) / (n * n);
    let kappa = ratio(accuracy - p_expected, 1.0 - p_expected);
    Ok(MetricReport {
        accuracy,
        f1_resistant: f1_pos,
        mcc,
        precision_resistant: precision,
        recall_resistant: recall,
        f1_macro: (f1_pos + f1_neg) / 2.0,
        kappa,
        counts,
    })
}

/// Scores predicted labels against the truth.
pub fn evaluate(y_true: &[u8], y_pred: &[u8]) -> Result<MetricReport> {
    report(confusion(y_true, y_pred)?)
}

impl MetricReport {
    /// Metric values in [`METRIC_COLUMNS`] order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.f1_resistant,
            self.mcc,
            self.precision_resistant,
            self.recall_resistant,
            self.f1_macro,
            self.kappa,
        ]
    }
}

/// Four-decimal rendering used in every report table.
pub fn format_metric(v: f64) -> String {
    format!("{v:.4}")
}
