use serde::{Deserialize, Serialize};

use crate::corpus::Label;

/// Binary confusion counts with depressed as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Depressed, Label::Depressed) => self.tp += 1,
            (Label::NonDepressed, Label::Depressed) => self.fp += 1,
            (Label::NonDepressed, Label::NonDepressed) => self.tn += 1,
            (Label::Depressed, Label::NonDepressed) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        metrics(self)
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = ConfusionMatrix>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), |a, b| a + b)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1, recall and precision; every 0/0 is taken as 0.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Metrics { f1, recall, precision }
}

/// Unweighted mean over folds.
pub fn mean_metrics(ms: &[Metrics]) -> Metrics {
    if ms.is_empty() {
        return Metrics::default();
    }
    let n = ms.len() as f64;
    Metrics {
        f1: ms.iter().map(|m| m.f1).sum::<f64>() / n,
        recall: ms.iter().map(|m| m.recall).sum::<f64>() / n,
        precision: ms.iter().map(|m| m.precision).sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eleven_three_one() {
        let m = metrics(&ConfusionMatrix { tp: 11, fp: 3, tn: 20, fn_: 1 });
        assert!((m.recall - 11.0 / 12.0).abs() < 1e-15);
        assert!((m.precision - 11.0 / 14.0).abs() < 1e-15);
        assert_eq!(format!("{:.2} {:.2} {:.2}", m.f1, m.recall, m.precision), "0.85 0.92 0.79");
    }

    #[test]
    fn perfect_and_degenerate() {
        let perfect = metrics(&ConfusionMatrix { tp: 4, fp: 0, tn: 7, fn_: 0 });
        assert_eq!(perfect, Metrics { f1: 1.0, recall: 1.0, precision: 1.0 });
        let negative = metrics(&ConfusionMatrix { tp: 0, fp: 0, tn: 7, fn_: 3 });
        assert_eq!(negative, Metrics::default());
        assert_eq!(metrics(&ConfusionMatrix::default()), Metrics::default());
    }

    #[test]
    fn record_counts() {
        use Label::*;
        let cm = ConfusionMatrix::from_pairs([(Depressed, Depressed), (Depressed, NonDepressed), (NonDepressed, Depressed), (NonDepressed, NonDepressed), (NonDepressed, NonDepressed)]);
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 1, tn: 2, fn_: 1 });
        assert_eq!(cm.total(), 5);
    }

    proptest! {
        #[test]
        fn bounded_and_zero_iff_no_tp(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            let m = metrics(&ConfusionMatrix { tp, fp, tn, fn_ });
            for v in [m.f1, m.recall, m.precision] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.f1 == 0.0, tp == 0);
        }
    }
}
