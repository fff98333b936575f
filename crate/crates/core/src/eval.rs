//! Segmentation metrics from confusion matrices, and precision-recall curves for
//! picking a detection threshold.
//!
//! Every ratio with a zero denominator is taken as 0.

use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::ThresholdPreset;

/// Rows are reference classes, columns predicted classes, both in `class_labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_labels: Vec<i64>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: &[i64]) -> Self {
        ConfusionMatrix {
            class_labels: labels.to_vec(),
            counts: vec![vec![0; labels.len()]; labels.len()],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }

    /// `(tp, fp, fn)` for class index `i`.
    pub fn class_counts(&self, i: usize) -> (u64, u64, u64) {
        let tp = self.counts[i][i];
        let col: u64 = self.counts.iter().map(|row| row[i]).sum();
        let row: u64 = self.counts[i].iter().sum();
        (tp, col - tp, row - tp)
    }
}

pub fn confusion(pred: &[i64], reference: &[i64], labels: &[i64]) -> Result<ConfusionMatrix> {
    confusion_with_ignore(pred, reference, labels, None)
}

/// As [`confusion`], skipping pixels where either plane equals `ignore`.
pub fn confusion_with_ignore(
    pred: &[i64],
    reference: &[i64],
    labels: &[i64],
    ignore: Option<i64>,
) -> Result<ConfusionMatrix> {
    if pred.len() != reference.len() {
        return Err(Error::Argument(format!(
            "prediction has {} pixels, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("no class labels given".into()));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != labels.len() {
        return Err(Error::Argument("class labels must be distinct".into()));
    }
    let index: BTreeMap<i64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let lookup = |l: i64| index.get(&l).copied().ok_or(Error::Label(l));

    pred.par_iter()
        .zip(reference.par_iter())
        .with_min_len(4096)
        .try_fold(
            || ConfusionMatrix::zeros(labels),
            |mut cm, (&p, &r)| {
                if ignore.is_some_and(|i| i == p || i == r) {
                    return Ok(cm);
                }
                cm.counts[lookup(r)?][lookup(p)?] += 1;
                Ok(cm)
            },
        )
        .try_reduce(|| ConfusionMatrix::zeros(labels), |a, b| Ok(a.merge(b)))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Reference pixels of this class.
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    /// Mean IoU over classes present in the reference.
    pub miou: f64,
    /// Micro-averaged (pooled counts over all classes).
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Unweighted means over classes present in the reference.
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub per_class: BTreeMap<i64, ClassMetrics>,
    pub overall: OverallMetrics,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricSet> {
    let n = cm.class_labels.len();
    if n == 0 || cm.counts.len() != n || cm.counts.iter().any(|r| r.len() != n) {
        return Err(Error::Argument("confusion matrix is empty or not square".into()));
    }
    if cm.total() == 0 {
        return Err(Error::Argument("confusion matrix has no pixels".into()));
    }
    let mut per_class = BTreeMap::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let mut present = Vec::new();
    for (i, &label) in cm.class_labels.iter().enumerate() {
        let (tp, fp, fn_) = cm.class_counts(i);
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let m = ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            iou: ratio(tp, tp + fp + fn_),
            support: tp + fn_,
        };
        if m.support > 0 {
            present.push(m);
        }
        per_class.insert(label, m);
    }
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(f).sum::<f64>() / present.len() as f64
        }
    };
    let precision = ratio(tp_all, tp_all + fp_all);
    let recall = ratio(tp_all, tp_all + fn_all);
    Ok(MetricSet {
        per_class,
        overall: OverallMetrics {
            miou: mean(|m| m.iou),
            precision,
            recall,
            f1: f1(precision, recall),
            precision_macro: mean(|m| m.precision),
            recall_macro: mean(|m| m.recall),
            f1_macro: mean(|m| m.f1),
        },
    })
}

impl MetricSet {
    /// Plain-text table: one row per class (the debris class labelled `MD&SP`), then the
    /// overall rows.
    pub fn to_table(&self, debris_label: i64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>8} {:>10} {:>8} {:>8}", "Class", "mIoU", "Precision", "Recall", "F1");
        let mut rows: Vec<(String, &ClassMetrics)> = self
            .per_class
            .iter()
            .map(|(l, m)| {
                let name = if *l == debris_label { "MD&SP".to_string() } else { format!("class {l}") };
                (name, m)
            })
            .collect();
        rows.sort_by_key(|(name, _)| name != "MD&SP");
        for (name, m) in rows {
            let _ = writeln!(
                s,
                "{:<16} {:>8.4} {:>10.4} {:>8.4} {:>8.4}",
                name, m.iou, m.precision, m.recall, m.f1
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            s,
            "{:<16} {:>8.4} {:>10.4} {:>8.4} {:>8.4}",
            "Overall (micro)", o.miou, o.precision, o.recall, o.f1
        );
        let _ = writeln!(
            s,
            "{:<16} {:>8.4} {:>10.4} {:>8.4} {:>8.4}",
            "Overall (macro)", o.miou, o.precision_macro, o.recall_macro, o.f1_macro
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Ascending, strictly increasing thresholds.
    pub points: Vec<PrPoint>,
}

/// Evaluate `p >= t` at `steps` evenly spaced thresholds `i / (steps + 1)` and at every
/// distinct probability strictly inside (0, 1). NaN probabilities are skipped.
pub fn pr_curve(probs: &[f32], labels: &[bool], steps: usize) -> Result<PrCurve> {
    if probs.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if steps < 2 {
        return Err(Error::Argument("pr_curve needs at least 2 steps".into()));
    }
    // Descending by probability; cum_pos[k] = positives among the top k.
    let mut scored: Vec<(f64, bool)> = probs
        .iter()
        .zip(labels)
        .filter(|(p, _)| !p.is_nan())
        .map(|(&p, &l)| (p as f64, l))
        .collect();
    let total_pos = scored.iter().filter(|s| s.1).count() as u64;
    if total_pos == 0 {
        return Err(Error::DegenerateCurve("reference has no positive labels".into()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cum_pos = Vec::with_capacity(scored.len() + 1);
    cum_pos.push(0u64);
    for s in &scored {
        cum_pos.push(cum_pos.last().unwrap() + s.1 as u64);
    }

    let mut thresholds: Vec<f64> = (1..=steps).map(|i| i as f64 / (steps + 1) as f64).collect();
    thresholds.extend(scored.iter().map(|s| s.0).filter(|&p| p > 0.0 && p < 1.0));
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let points = thresholds
        .par_iter()
        .map(|&t| {
            let detected = scored.partition_point(|s| s.0 >= t);
            let tp = cum_pos[detected];
            let precision = ratio(tp, detected as u64);
            let recall = ratio(tp, total_pos);
            PrPoint {
                threshold: t,
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect();
    Ok(PrCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaxF1,
    MinPrecision(f64),
}

/// `MaxF1`: highest F1, ties to the higher threshold. `MinPrecision(p0)`: lowest threshold
/// with precision at least `p0`.
pub fn select_threshold(curve: &PrCurve, objective: Objective) -> Result<ThresholdPreset> {
    if curve.points.is_empty() {
        return Err(Error::Argument("empty precision-recall curve".into()));
    }
    let t = match objective {
        Objective::MaxF1 => {
            curve
                .points
                .iter()
                .fold(&curve.points[0], |best, p| {
                    if p.f1 > best.f1 || (p.f1 == best.f1 && p.threshold > best.threshold) {
                        p
                    } else {
                        best
                    }
                })
                .threshold
        }
        Objective::MinPrecision(p0) => curve
            .points
            .iter()
            .filter(|p| p.precision >= p0)
            .map(|p| p.threshold)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
            .ok_or_else(|| {
                let best = curve.points.iter().map(|p| p.precision).fold(0.0, f64::max);
                Error::NoSolution(format!("precision {p0} not reached (maximum {best})"))
            })?,
    };
    ThresholdPreset::custom(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let x: Vec<i64> = (0..16).map(|i| i % 2).collect();
        let cm = confusion(&x, &x, &[0, 1]).unwrap();
        assert_eq!(cm.counts, vec![vec![8, 0], vec![0, 8]]);
        let m = metrics(&cm).unwrap();
        assert!(m.per_class.values().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.iou == 1.0 && c.f1 == 1.0));
        assert_eq!(m.overall.miou, 1.0);
    }

    #[test]
    fn hand_counted_binary_case() {
        let cm = confusion(&[1, 1, 0, 1], &[1, 1, 1, 0], &[0, 1]).unwrap();
        assert_eq!(cm.class_counts(1), (2, 1, 1));
        assert_eq!(cm.counts[0][0], 0);
        let m = metrics(&cm).unwrap().per_class[&1];
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.iou, 0.5);
    }

    #[test]
    fn unknown_label_and_ignore() {
        assert!(matches!(confusion(&[0, 7], &[0, 1], &[0, 1]), Err(Error::Label(7))));
        let cm = confusion_with_ignore(&[0, 255, 1], &[0, 1, 255], &[0, 1], Some(255)).unwrap();
        assert_eq!(cm.total(), 1);
        assert!(matches!(confusion(&[0], &[0, 1], &[0, 1]), Err(Error::Argument(_))));
    }

    #[test]
    fn absent_class_excluded_from_miou() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 0, 1, 1], &[0, 1, 2]).unwrap();
        let m = metrics(&cm).unwrap();
        let c2 = m.per_class[&2];
        assert_eq!((c2.precision, c2.recall, c2.f1, c2.iou), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.overall.miou, 1.0);
        assert!(matches!(metrics(&ConfusionMatrix::zeros(&[0, 1])), Err(Error::Argument(_))));
    }

    #[test]
    fn table_layout() {
        let cm = confusion(&[1, 1, 0, 1], &[1, 1, 1, 0], &[0, 1]).unwrap();
        let t = metrics(&cm).unwrap().to_table(1);
        let lines: Vec<_> = t.lines().collect();
        assert!(lines[1].starts_with("MD&SP"));
        assert!(lines[3].starts_with("Overall (micro)"));
        assert!(lines[4].starts_with("Overall (macro)"));
    }

    #[test]
    fn pr_curve_examples() {
        let c = pr_curve(&[0.2, 0.6, 0.9], &[false, true, true], 9).unwrap();
        let at = |t: f64| *c.points.iter().find(|p| (p.threshold - t).abs() < 1e-12).unwrap();
        assert_eq!(at(0.5).precision, 1.0);
        assert_eq!(at(0.5).recall, 1.0);
        assert_eq!(at(0.5).f1, 1.0);
        let last = c.points.last().unwrap();
        assert_eq!(last.threshold, 0.9);
        let c2 = pr_curve(&[0.2, 0.3], &[true, false], 4).unwrap();
        let top = c2.points.last().unwrap();
        assert_eq!(top.threshold, 0.8);
        assert_eq!((top.precision, top.recall, top.f1), (0.0, 0.0, 0.0));
        assert!(matches!(pr_curve(&[0.5], &[false], 4), Err(Error::DegenerateCurve(_))));
        assert!(matches!(pr_curve(&[0.5], &[true], 1), Err(Error::Argument(_))));
    }

    fn curve(points: &[(f64, f64, f64)]) -> PrCurve {
        PrCurve {
            points: points
                .iter()
                .map(|&(t, p, r)| PrPoint {
                    threshold: t,
                    precision: p,
                    recall: r,
                    f1: f1(p, r),
                })
                .collect(),
        }
    }

    #[test]
    fn threshold_selection() {
        let c = curve(&[(0.3, 0.5, 0.9), (0.5, 0.7, 0.8), (0.7, 0.85, 0.8), (0.9, 0.9, 0.3)]);
        assert_eq!(select_threshold(&c, Objective::MaxF1).unwrap().value, 0.7);
        assert_eq!(select_threshold(&c, Objective::MinPrecision(0.7)).unwrap().value, 0.5);
        assert!(matches!(select_threshold(&c, Objective::MinPrecision(1.0)), Err(Error::NoSolution(_))));
        let flat = curve(&[(0.2, 0.5, 0.5), (0.4, 0.5, 0.5), (0.6, 0.5, 0.5)]);
        assert_eq!(select_threshold(&flat, Objective::MaxF1).unwrap().value, 0.6);
        assert!(matches!(select_threshold(&curve(&[]), Objective::MaxF1), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn recall_non_increasing(data in prop::collection::vec((0.0f32..=1.0, any::<bool>()), 1..200), steps in 2usize..50) {
            prop_assume!(data.iter().any(|d| d.1));
            let (p, l): (Vec<f32>, Vec<bool>) = data.into_iter().unzip();
            let c = pr_curve(&p, &l, steps).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[1].recall <= w[0].recall);
            }
        }

        #[test]
        fn self_confusion_gives_ones(x in prop::collection::vec(0i64..4, 1..256)) {
            let m = metrics(&confusion(&x, &x, &[0, 1, 2, 3]).unwrap()).unwrap();
            prop_assert_eq!(m.overall.miou, 1.0);
            prop_assert_eq!(m.overall.precision, 1.0);
            prop_assert_eq!(m.overall.f1, 1.0);
        }
    }
}
