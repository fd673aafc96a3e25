//! Overlap and classification metrics.

use serde::ser::{Serialize, Serializer};
use serde::{Deserialize, Serialize as DeriveSerialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binarize both maps at `threshold` (strictly greater counts as set) and
/// return `(iou, dice)`. Two empty masks agree perfectly.
pub fn iou_dice(a: &Tensor, b: &Tensor, threshold: f64) -> Result<(f64, f64)> {
    if a.shape() != b.shape() {
        return Err(Error::shape("iou_dice", format!("{} vs {}", a.shape(), b.shape())));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (p, q) = (x > threshold, y > threshold);
        na += p as usize;
        nb += q as usize;
        inter += (p && q) as usize;
    }
    if na + nb == 0 {
        return Ok((1.0, 1.0));
    }
    let union = na + nb - inter;
    Ok((inter as f64 / union as f64, 2.0 * inter as f64 / (na + nb) as f64))
}

/// A ratio whose denominator may be zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Value(_))
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::Undefined => s.serialize_str("undefined"),
        }
    }
}

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, DeriveSerialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    /// Unlabeled matrix from counts; classes are named by index.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let labels = (0..counts.len()).map(|i| i.to_string()).collect();
        Self::new(labels, counts)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }
}

pub fn confusion(pred: &[usize], truth: &[usize], labels: Vec<String>) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::InvalidArgument(format!("label {} out of range for {k} classes", p.max(t))));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::new(labels, counts)
}

#[derive(Clone, Copy, Debug, PartialEq, DeriveSerialize)]
pub struct ClassMetrics {
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub precision: Metric,
    pub npv: Metric,
    pub accuracy: Metric,
}

/// One-vs-rest metrics for `class`.
pub fn class_metrics(m: &ConfusionMatrix, class: usize) -> Result<ClassMetrics> {
    let total = m.total();
    if m.k() == 0 || total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    if class >= m.k() {
        return Err(Error::InvalidArgument(format!("class {class} out of range for {} classes", m.k())));
    }
    let tp = m.counts[class][class];
    let fn_ = m.support(class) - tp;
    let fp = m.counts.iter().map(|r| r[class]).sum::<u64>() - tp;
    let tn = total - tp - fn_ - fp;
    Ok(ClassMetrics {
        sensitivity: Metric::ratio(tp, tp + fn_),
        specificity: Metric::ratio(tn, tn + fp),
        precision: Metric::ratio(tp, tp + fp),
        npv: Metric::ratio(tn, tn + fn_),
        accuracy: Metric::ratio(tp + tn, total),
    })
}

/// Unweighted mean of per-class sensitivity; every class needs support.
pub fn macro_avg_sensitivity(m: &ConfusionMatrix) -> Result<f64> {
    if m.k() == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let mut sum = 0.0;
    for c in 0..m.k() {
        match class_metrics(m, c)?.sensitivity {
            Metric::Value(v) => sum += v,
            Metric::Undefined => {
                return Err(Error::InvalidArgument(format!(
                    "class {} has no ground-truth samples",
                    m.labels[c]
                )))
            }
        }
    }
    Ok(sum / m.k() as f64)
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use approx::assert_abs_diff_eq;

    fn mask(bits: &[usize], len: usize) -> Tensor {
        let mut d = vec![0.0; len];
        for &b in bits {
            d[b] = 1.0;
        }
        Tensor::new(Shape::hwc(1, len, 1), d).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let a = mask(&[1, 2, 3], 10);
        assert_eq!(iou_dice(&a, &a, 0.5).unwrap(), (1.0, 1.0));
        assert_eq!(iou_dice(&a, &mask(&[5, 6], 10), 0.5).unwrap(), (0.0, 0.0));
        let a: Vec<usize> = (0..100).collect();
        let b: Vec<usize> = (50..150).collect();
        let (iou, dice) = iou_dice(&mask(&a, 200), &mask(&b, 200), 0.5).unwrap();
        assert_abs_diff_eq!(iou, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dice, 0.5, epsilon = 1e-15);
        let z = mask(&[], 4);
        assert_eq!(iou_dice(&z, &z, 0.5).unwrap(), (1.0, 1.0));
        assert!(iou_dice(&z, &mask(&[], 5), 0.5).is_err());
    }

    #[test]
    fn binary_closed_forms() {
        let m = ConfusionMatrix::from_counts(vec![vec![5, 1], vec![2, 4]]).unwrap();
        let c = class_metrics(&m, 0).unwrap();
        assert_eq!(c.sensitivity, Metric::Value(5.0 / 6.0));
        assert_eq!(c.specificity, Metric::Value(4.0 / 6.0));
        assert_eq!(c.precision, Metric::Value(5.0 / 7.0));
        assert_eq!(c.npv, Metric::Value(4.0 / 5.0));
        assert_eq!(c.accuracy, Metric::Value(9.0 / 12.0));
        assert_eq!(class_metrics(&m, 1).unwrap().accuracy, c.accuracy);
        assert_abs_diff_eq!(macro_avg_sensitivity(&m).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn confusion_counting() {
        let labels = || vec!["a".to_string(), "b".into(), "c".into()];
        let m = confusion(&[0, 1, 2], &[0, 1, 2], labels()).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let m = confusion(&[2], &[1], labels()).unwrap();
        assert_eq!(m.counts[1][2], 1);
        assert_eq!(m.total(), 1);
        assert!(confusion(&[0], &[0, 1], labels()).is_err());
        assert!(confusion(&[3], &[0], labels()).is_err());
    }

    #[test]
    fn zero_support_is_undefined() {
        let m = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 2, 0], vec![1, 0, 0]]).unwrap();
        assert_eq!(class_metrics(&m, 1).unwrap().sensitivity, Metric::Value(1.0));
        let m = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![0, 0]]).unwrap();
        let c = class_metrics(&m, 1).unwrap();
        assert_eq!(c.sensitivity, Metric::Undefined);
        assert_eq!(serde_json::to_string(&c.sensitivity).unwrap(), "\"undefined\"");
        assert!(macro_avg_sensitivity(&m).is_err());
    }

    #[test]
    fn uniform_three_class_guessing() {
        let m = ConfusionMatrix::from_counts(vec![vec![4; 3]; 3]).unwrap();
        assert_abs_diff_eq!(macro_avg_sensitivity(&m).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn sd_is_population() {
        let (m, s) = mean_sd(&[1.0, 3.0]).unwrap();
        assert_eq!((m, s), (2.0, 1.0));
        assert!(mean_sd(&[]).is_none());
    }
}
