use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        check_lengths(predictions, labels)?;
        let mut cm = ConfusionMatrix::new(num_classes);
        for (&p, &y) in predictions.iter().zip(labels) {
            cm.record(y, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, label: usize, prediction: usize) -> Result<()> {
        let c = self.num_classes;
        if label >= c || prediction >= c {
            return Err(contract_err!(
                "class index out of range: label {label}, prediction {prediction}, {c} classes"
            ));
        }
        self.counts[label * c + prediction] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, label: usize, prediction: usize) -> u64 {
        self.counts[label * self.num_classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// F1 of each class; zero whenever precision or recall has a zero denominator.
    ///
    /// Computed as `2·tp / (predicted + actual)`, which equals the harmonic
    /// mean of precision and recall with a single rounding.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let c = self.num_classes;
        (0..c)
            .map(|i| {
                let tp = self.get(i, i);
                let predicted: u64 = (0..c).map(|r| self.get(r, i)).sum();
                let actual: u64 = (0..c).map(|p| self.get(i, p)).sum();
                if tp == 0 {
                    return 0.0;
                }
                (2 * tp) as f64 / (predicted + actual) as f64
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        mean(&self.per_class_f1())
    }

    /// Rows as nested vectors, for serialization.
    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes).map(<[u64]>::to_vec).collect()
    }
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(contract_err!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        ));
    }
    if labels.is_empty() {
        return Err(contract_err!("no samples to score"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fraction of positions where the prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class F1 over classes `0..num_classes`.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<(f64, Vec<f64>)> {
    let cm = ConfusionMatrix::from_predictions(predictions, labels, num_classes)?;
    let per_class = cm.per_class_f1();
    Ok((mean(&per_class), per_class))
}

/// Macro-F1 over an explicit set of class labels, which need not be `0..C`.
/// Every prediction and label must belong to `classes`.
pub fn macro_f1_over(predictions: &[usize], labels: &[usize], classes: &[usize]) -> Result<(f64, Vec<f64>)> {
    let index = |v: usize| {
        classes
            .iter()
            .position(|&c| c == v)
            .ok_or_else(|| contract_err!("class {v} not in {classes:?}"))
    };
    let p = predictions.iter().map(|&v| index(v)).collect::<Result<Vec<_>>>()?;
    let y = labels.iter().map(|&v| index(v)).collect::<Result<Vec<_>>>()?;
    macro_f1(&p, &y, classes.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 2]).unwrap(), 2.0 / 3.0);
        assert!(matches!(accuracy(&[1], &[1, 2]), Err(crate::Error::Contract(_))));
        assert!(matches!(accuracy(&[], &[]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn two_class_macro_f1() {
        let (m, per) = macro_f1_over(&[1, 1, 2], &[1, 2, 2], &[1, 2]).unwrap();
        assert!((per[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((per[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_contributes_zero() {
        // class 0 never occurs, classes 1 and 2 score 2/3 each
        let (m, per) = macro_f1(&[1, 1, 2], &[1, 2, 2], 3).unwrap();
        assert_eq!(per[0], 0.0);
        assert!((m - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        assert_eq!(macro_f1(&y, &y, 3).unwrap().0, 1.0);
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        assert!(matches!(macro_f1(&[3], &[0], 3), Err(crate::Error::Contract(_))));
        assert!(macro_f1_over(&[5], &[1], &[1, 2]).is_err());
    }

    #[test]
    fn trace_over_total_is_accuracy() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        assert_eq!(cm.trace(), 3);
        assert_eq!(cm.accuracy(), 0.75);
        assert_eq!(cm.rows(), vec![vec![2, 1], vec![0, 1]]);
    }
}
