//! Overlap metrics, the soft Dice loss and aggregate reporting.
//!
//! Any metric whose denominator is zero evaluates to 1.0 (nothing to get wrong).

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::net::DuckNet;
use crate::tensor::{Mode, Scalar, Tensor4};
use std::fmt::Write as _;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SMOOTH: f64 = 1e-6;

/// Column order of every report.
pub const METRIC_NAMES: [&str; 5] = ["DSC", "Jaccard", "Precision", "Recall", "Accuracy"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn jaccard(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// All five metrics in report column order.
    pub fn metrics(&self) -> [f64; 5] {
        [
            self.dice(),
            self.jaccard(),
            self.precision(),
            self.recall(),
            self.accuracy(),
        ]
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Pixel-wise counts; a prediction is positive iff `prob ≥ threshold`.
pub fn confusion_counts<S: Scalar>(pred: &Tensor4<S>, gt: &Tensor4<S>, threshold: f64) -> Result<ConfusionCounts> {
    gt.require_shape("confusion_counts", pred.shape())?;
    let t = S::from_f64_lossy(threshold);
    let half = S::from_f64_lossy(0.5);
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p >= t, g >= half) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    c.dice()
}

pub fn jaccard(c: &ConfusionCounts) -> f64 {
    c.jaccard()
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    c.precision()
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    c.recall()
}

pub fn accuracy(c: &ConfusionCounts) -> f64 {
    c.accuracy()
}

/// `1 − (2Σpg + ε) / (Σp + Σg + ε)` over the whole batch, with its gradient
/// w.r.t. `pred`.
pub fn dice_loss_soft<S: Scalar>(pred: &Tensor4<S>, gt: &Tensor4<S>, smooth: f64) -> Result<(f64, Tensor4<S>)> {
    gt.require_shape("dice_loss_soft", pred.shape())?;
    let (mut inter, mut sum_p, mut sum_g) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        inter += p * g;
        sum_p += p;
        sum_g += g;
    }
    let num = 2.0 * inter + smooth;
    let den = sum_p + sum_g + smooth;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let grad = gt.map(|g| S::from_f64_lossy(-(2.0 * g.as_f64() * den - num) / den2));
    Ok((loss, grad))
}

/// Population standard deviation (divides by n); 0 for an empty list.
pub fn sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub counts: ConfusionCounts,
    /// DSC, Jaccard, Precision, Recall, Accuracy
    pub values: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub mean: [f64; 5],
    pub sd: [f64; 5],
    /// Metrics of the summed confusion counts over all images.
    pub pooled: [f64; 5],
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("cannot report on an empty split".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 5];
        let mut spread = [0.0; 5];
        let mut pooled = ConfusionCounts::default();
        for k in 0..5 {
            let column: Vec<f64> = rows.iter().map(|r| r.values[k]).collect();
            mean[k] = column.iter().sum::<f64>() / n;
            spread[k] = sd(&column);
        }
        for r in &rows {
            pooled += r.counts;
        }
        Ok(MetricsReport {
            rows,
            mean,
            sd: spread,
            pooled: pooled.metrics(),
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Aligned plain-text table: one row per image, then mean and sd.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "image");
        for name in METRIC_NAMES {
            let _ = write!(out, " {name:>9}");
        }
        out.push('\n');
        let mut line = |label: &str, v: &[f64; 5]| {
            let _ = write!(out, "{label:<width$}");
            for x in v {
                let _ = write!(out, " {x:>9.4}");
            }
            out.push('\n');
        };
        for r in &self.rows {
            line(&r.id, &r.values);
        }
        line("mean", &self.mean);
        line("sd", &self.sd);
        line("pooled", &self.pooled);
        out
    }

    /// Comma-separated rows with a header, then mean/sd/pooled rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,dsc,jaccard,precision,recall,accuracy\n");
        let mut line = |label: &str, v: &[f64; 5]| {
            let _ = writeln!(
                out,
                "{label},{:.6},{:.6},{:.6},{:.6},{:.6}",
                v[0], v[1], v[2], v[3], v[4]
            );
        };
        for r in &self.rows {
            line(&r.id, &r.values);
        }
        line("mean", &self.mean);
        line("sd", &self.sd);
        line("pooled", &self.pooled);
        out
    }
}

/// One summary row per method (mean metrics), aligned like the per-image
/// table.
pub fn comparison_table(entries: &[(String, &MetricsReport)]) -> String {
    let width = entries.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "method");
    for name in METRIC_NAMES {
        let _ = write!(out, " {name:>9}");
    }
    out.push('\n');
    for (name, report) in entries {
        let _ = write!(out, "{name:<width$}");
        for x in report.mean {
            let _ = write!(out, " {x:>9.4}");
        }
        out.push('\n');
    }
    out
}

/// Per-image metrics of `net` (inference mode) on `samples`.
pub fn evaluate<S: Scalar>(net: &mut DuckNet<S>, samples: &[Sample], threshold: f64) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = net.forward(&s.image.cast::<S>(), Mode::Infer)?;
        let counts = confusion_counts(&probs, &s.mask.cast::<S>(), threshold)?;
        rows.push(MetricRow {
            id: s.id.clone(),
            counts,
            values: counts.metrics(),
        });
    }
    MetricsReport::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn t(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let c = ConfusionCounts {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 10,
        };
        let m = c.metrics();
        let expected = [2.0 / 3.0, 0.5, 0.75, 0.6, 0.8125];
        for k in 0..5 {
            assert!((m[k] - expected[k]).abs() < 1e-12, "{}", METRIC_NAMES[k]);
        }
    }

    #[test]
    fn hand_counts_and_threshold() {
        let c = confusion_counts(&t(&[0.7, 0.2]), &t(&[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 0,
                fn_: 1,
                tn: 0
            }
        );
        let c = confusion_counts(&t(&[0.5]), &t(&[0.0]), 0.5).unwrap();
        assert_eq!(c.fp, 1);
        assert!(confusion_counts(&t(&[0.5]), &t(&[0.0, 1.0]), 0.5).is_err());
    }

    #[test]
    fn perfect_and_disjoint() {
        let gt = t(&[1.0, 0.0, 1.0, 0.0]);
        let c = confusion_counts(&gt, &gt, 0.5).unwrap();
        assert_eq!(c.metrics(), [1.0; 5]);
        let c = confusion_counts(&t(&[0.0, 1.0, 0.0, 1.0]), &gt, 0.5).unwrap();
        let m = c.metrics();
        assert_eq!(&m[..4], &[0.0; 4]);
    }

    #[test]
    fn degenerate_denominators_are_one() {
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 5,
        };
        assert_eq!(c.metrics(), [1.0; 5]);
    }

    #[test]
    fn soft_dice_values() {
        let gt = t(&[1.0, 0.0, 1.0, 1.0]);
        let (loss, _) = dice_loss_soft(&gt, &gt, DEFAULT_SMOOTH).unwrap();
        assert!(loss.abs() < 1e-6);

        let ones = Tensor4::filled(Shape4::new(1, 1, 64, 64), 1.0);
        let half = Tensor4::filled(ones.shape(), 0.5);
        let (loss, _) = dice_loss_soft(&half, &ones, 0.0).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-9);
        let (loss, _) = dice_loss_soft(&half, &ones, DEFAULT_SMOOTH).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-9);

        let zeros = Tensor4::<f64>::zeros(Shape4::new(1, 1, 4, 4));
        let (loss, _) = dice_loss_soft(&zeros, &zeros, DEFAULT_SMOOTH).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn population_sd() {
        assert_eq!(sd(&[0.3]), 0.0);
        assert_eq!(sd(&[0.0, 1.0]), 0.5);
        assert_eq!(sd(&[0.25; 7]), 0.0);
    }

    #[test]
    fn report_aggregates_and_formats() {
        let rows = vec![
            MetricRow {
                id: "a".into(),
                counts: ConfusionCounts {
                    tp: 3,
                    fp: 1,
                    fn_: 2,
                    tn: 10,
                },
                values: ConfusionCounts {
                    tp: 3,
                    fp: 1,
                    fn_: 2,
                    tn: 10,
                }
                .metrics(),
            },
            MetricRow {
                id: "b".into(),
                counts: ConfusionCounts {
                    tp: 4,
                    fp: 0,
                    fn_: 0,
                    tn: 12,
                },
                values: [1.0; 5],
            },
        ];
        let r = MetricsReport::from_rows(rows).unwrap();
        assert!((r.mean[1] - 0.75).abs() < 1e-12);
        assert!((r.sd[1] - 0.25).abs() < 1e-12);
        let table = r.to_table();
        let header = table.lines().next().unwrap();
        let cols: Vec<_> = header.split_whitespace().collect();
        assert_eq!(cols, ["image", "DSC", "Jaccard", "Precision", "Recall", "Accuracy"]);
        assert!(r.to_csv().starts_with("id,dsc,jaccard,precision,recall,accuracy\na,"));
        assert!(MetricsReport::from_rows(vec![]).is_err());
    }
}
