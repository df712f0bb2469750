//! Confusion matrices, precision/recall/F1, text reports and CSV exports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::{EpochRecord, TrainHistory};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Predicted `c` but truly another class.
    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&t| t != c).map(|t| self.counts[t][c]).sum()
    }

    /// Truly `c` but predicted another class.
    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    pub fn true_negatives(&self, c: usize) -> u64 {
        self.total() - self.true_positives(c) - self.false_positives(c) - self.false_negatives(c)
    }

    /// `confusion.csv`: a header of predicted class names, then one row
    /// per true class.
    pub fn to_csv(&self) -> String {
        let mut out = format!("true\\pred,{}\n", self.class_names.join(","));
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }
}

pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    class_names: &[impl AsRef<str>],
) -> Result<ConfusionMatrix> {
    let c = class_names.len();
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0u64; c]; c];
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= c || t >= c {
            return Err(Error::InvalidArgument(format!(
                "class index out of range: prediction {p}, label {t}, {c} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: class_names.iter().map(|s| s.as_ref().to_string()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Macro,
    /// Weighted by class support.
    Weighted,
}

impl Averaging {
    pub fn name(self) -> &'static str {
        match self {
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub averaging: Averaging,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub avg_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    metrics_with(cm, Averaging::Macro)
}

/// Per-class precision `TP/(TP+FP)`, recall `TP/(TP+FN)` and their
/// harmonic mean, with 0 for any zero denominator.
pub fn metrics_with(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("metrics of an empty confusion matrix".into()));
    }
    let classes: Vec<ClassMetrics> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.true_positives(c);
            let (precision, dp) = ratio(tp, tp + cm.false_positives(c));
            let (recall, dr) = ratio(tp, tp + cm.false_negatives(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                name: cm.class_names[c].clone(),
                precision,
                recall,
                f1,
                support: cm.counts[c].iter().sum(),
                degenerate: dp || dr,
            }
        })
        .collect();
    let weights: Vec<f64> = match averaging {
        Averaging::Macro => vec![1.0 / classes.len() as f64; classes.len()],
        Averaging::Weighted => classes.iter().map(|c| c.support as f64 / total as f64).collect(),
    };
    let avg = |f: fn(&ClassMetrics) -> f64| classes.iter().zip(&weights).map(|(c, w)| f(c) * w).sum();
    Ok(MetricsReport {
        avg_precision: avg(|c| c.precision),
        avg_recall: avg(|c| c.recall),
        avg_f1: avg(|c| c.f1),
        accuracy: cm.trace() as f64 / total as f64,
        classes,
        averaging,
        total,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Fixed-width table of percentages with two decimals.
pub fn classification_report(report: &MetricsReport) -> String {
    let width = report
        .classes
        .iter()
        .map(|c| c.name.len() + usize::from(c.degenerate))
        .chain([format!("{} avg", report.averaging.name()).len(), "Accuracy".len()])
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
        "Class", "Precision", "Recall", "F1-score", "Support"
    );
    for c in &report.classes {
        let name = if c.degenerate { format!("{}*", c.name) } else { c.name.clone() };
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            name,
            pct(c.precision),
            pct(c.recall),
            pct(c.f1),
            c.support
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
        format!("{} avg", report.averaging.name()),
        pct(report.avg_precision),
        pct(report.avg_recall),
        pct(report.avg_f1),
        report.total
    );
    let _ = writeln!(out, "{:<width$}  {:>9}", "Accuracy", pct(report.accuracy));
    if report.classes.iter().any(|c| c.degenerate) {
        let _ = writeln!(out, "* zero denominator; the affected ratio is reported as 0.00");
    }
    out
}

pub const CURVES_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc,wall_time_s";

pub fn curves_csv(history: &TrainHistory) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in &history.records {
        // `{:?}` prints the shortest representation that parses back exactly.
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:.3}",
            r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.wall_time_s
        );
    }
    out
}

pub fn parse_curves_csv(text: &str) -> Result<TrainHistory> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVES_HEADER) {
        return Err(Error::Format("curves.csv: unexpected header".into()));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::Format(format!("curves.csv line {}: `{line}`", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        records.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            val_loss: num(f[2])?,
            train_acc: num(f[3])?,
            val_acc: num(f[4])?,
            wall_time_s: num(f[5])?,
        });
    }
    Ok(TrainHistory { records })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `curves.csv` into `out_dir`. An empty history produces a
/// header-only file.
pub fn export_curves(history: &TrainHistory, out_dir: impl AsRef<Path>) -> Result<()> {
    write_file(&out_dir.as_ref().join("curves.csv"), &curves_csv(history))
}

/// Writes `confusion.csv` and `report.txt` into `out_dir`.
pub fn export_report(cm: &ConfusionMatrix, report: &MetricsReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    write_file(&dir.join("confusion.csv"), &cm.to_csv())?;
    write_file(&dir.join("report.txt"), &classification_report(report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_binary_case() {
        // TP=9, FN=1 for class 0; FP=1, TN=9.
        let cm = ConfusionMatrix {
            counts: vec![vec![9, 1], vec![1, 9]],
            class_names: vec!["a".into(), "b".into()],
        };
        assert_eq!((cm.true_negatives(0), cm.false_positives(0), cm.false_negatives(0)), (9, 1, 1));
        let m = metrics(&cm).unwrap();
        for v in [m.classes[0].precision, m.classes[0].recall, m.classes[0].f1, m.accuracy] {
            assert!((v - 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let labels = [0, 1, 1, 0, 1, 0, 0, 1, 1, 1];
        let cm = confusion_matrix(&labels, &labels, &["a", "b"]).unwrap();
        assert_eq!(cm.counts, vec![vec![4, 0], vec![0, 6]]);
        let report = classification_report(&metrics(&cm).unwrap());
        assert_eq!(report.matches("100.00").count(), 3 * 3 + 1);

        let cm = confusion_matrix(&[0; 10], &labels, &["a", "b"]).unwrap();
        assert_eq!(cm.counts, vec![vec![4, 0], vec![6, 0]]);
        let m = metrics(&cm).unwrap();
        assert!(m.classes[1].degenerate && m.classes[1].f1 == 0.0);
        assert!(classification_report(&m).contains("b*"));

        assert!(confusion_matrix(&[2], &[0], &["a", "b"]).is_err());
        assert!(metrics(&confusion_matrix(&[] as &[usize], &[], &["a", "b"]).unwrap()).is_err());
    }

    #[test]
    fn curves_round_trip() {
        let history = TrainHistory {
            records: (1..=3)
                .map(|e| EpochRecord {
                    epoch: e,
                    train_loss: 1.0 / e as f64,
                    train_acc: 0.1 * e as f64,
                    val_loss: 0.7 / e as f64,
                    val_acc: 0.3,
                    wall_time_s: 0.5,
                })
                .collect(),
        };
        let csv = curves_csv(&history);
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(parse_curves_csv(&csv).unwrap(), history);
    }
}
