use std::fmt::Write;

use super::FitReport;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `1.96 * sigma / sqrt(k)` with the population standard deviation.
pub fn ci95_halfwidth(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    1.96 * var.sqrt() / (values.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    /// Accuracy on the held-out fold.
    pub accuracy: f64,
    pub report: FitReport,
}

/// Results of a training run or a cross-validation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub folds: Vec<FoldResult>,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95_halfwidth: f64,
}

impl RunMetrics {
    pub fn from_folds(folds: Vec<FoldResult>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        RunMetrics {
            mean: mean(&acc),
            ci95_halfwidth: ci95_halfwidth(&acc),
            fold_accuracies: acc,
            folds,
        }
    }

    /// `key=value` lines: the given header entries, summary statistics, then
    /// per-fold accuracy, selected epoch and per-epoch curves.
    pub fn to_text(&self, header: &[(String, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "folds={}", self.folds.len());
        let _ = writeln!(s, "mean_accuracy={}", self.mean);
        let _ = writeln!(s, "ci95_halfwidth={}", self.ci95_halfwidth);
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(s, "fold_accuracies={}", join(&self.fold_accuracies));
        for (i, f) in self.folds.iter().enumerate() {
            let _ = writeln!(s, "fold{i}.accuracy={}", f.accuracy);
            let _ = writeln!(s, "fold{i}.best_epoch={}", f.report.best_epoch);
            let _ = writeln!(s, "fold{i}.epochs_run={}", f.report.loss_curve.len());
            let _ = writeln!(s, "fold{i}.train_loss={}", join(&f.report.loss_curve));
            let _ = writeln!(s, "fold{i}.val_accuracy={}", join(&f.report.val_accuracy));
        }
        s
    }
}
