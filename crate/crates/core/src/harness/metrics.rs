use serde::Serialize;

use crate::error::{Error, Result};

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(n_classes: usize) -> Self {
        Confusion {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_labels(preds: &[usize], truth: &[usize], n_classes: usize) -> Result<Self> {
        let mut c = Self::new(n_classes);
        c.extend(preds, truth)?;
        Ok(c)
    }

    pub fn add(&mut self, pred: usize, truth: usize) -> Result<()> {
        if pred >= self.n_classes || truth >= self.n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                pred.max(truth),
                self.n_classes
            )));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn extend(&mut self, preds: &[usize], truth: &[usize]) -> Result<()> {
        if preds.len() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions for {} labels",
                preds.len(),
                truth.len()
            )));
        }
        preds.iter().zip(truth).try_for_each(|(&p, &t)| self.add(p, t))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total; zero for an empty matrix.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    /// Recall of each class; `None` for classes without samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let support: u64 = row.iter().sum();
                (support > 0).then(|| row[i] as f64 / support as f64)
            })
            .collect()
    }

    /// Mean recall over classes that have samples.
    pub fn mean_class_accuracy(&self) -> f64 {
        mean_present(&self.recalls())
    }

    /// Per-class IoU `TP / (TP + FP + FN)`; `None` for classes absent from
    /// the ground truth.
    pub fn ious(&self) -> Vec<Option<f64>> {
        (0..self.n_classes)
            .map(|c| {
                let tp = self.counts[c][c];
                let support: u64 = self.counts[c].iter().sum();
                if support == 0 {
                    return None;
                }
                let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
                let fn_ = support - tp;
                let fp = predicted - tp;
                Some(tp as f64 / (tp + fp + fn_) as f64)
            })
            .collect()
    }

    /// Mean IoU over categories present in the ground truth.
    pub fn miou(&self) -> f64 {
        mean_present(&self.ious())
    }
}

fn mean_present(xs: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = xs.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Fraction of equal labels.
pub fn overall_accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn mean_class_accuracy(preds: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    Ok(Confusion::from_labels(preds, truth, n_classes)?.mean_class_accuracy())
}

/// Part-category mIoU with counts aggregated over every point given.
pub fn miou(preds: &[usize], truth: &[usize], n_parts: usize) -> Result<f64> {
    Ok(Confusion::from_labels(preds, truth, n_parts)?.miou())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Per cloud for classification, per point for segmentation.
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub part_category_miou: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub per_part_iou: Option<Vec<Option<f64>>>,
    pub samples: usize,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn classification(confusion: Confusion, samples: usize) -> Self {
        MetricsReport {
            overall_accuracy: confusion.overall_accuracy(),
            mean_class_accuracy: confusion.mean_class_accuracy(),
            part_category_miou: None,
            per_class_accuracy: confusion.recalls(),
            per_part_iou: None,
            samples,
            confusion,
        }
    }

    pub fn segmentation(confusion: Confusion, samples: usize) -> Self {
        MetricsReport {
            part_category_miou: Some(confusion.miou()),
            per_part_iou: Some(confusion.ious()),
            ..Self::classification(confusion, samples)
        }
    }

    /// mIoU for segmentation, OA otherwise.
    pub fn headline(&self) -> f64 {
        self.part_category_miou.unwrap_or(self.overall_accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_of_four() {
        assert_eq!(overall_accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn mean_recall() {
        // class 0: 2/2, class 1: 1/2
        assert_eq!(mean_class_accuracy(&[0, 0, 1, 0], &[0, 0, 1, 1], 2).unwrap(), 0.75);
    }

    #[test]
    fn hand_counted_iou() {
        // part 0: TP 3, FP 1, FN 1; part 1: TP 4, FP 1, FN 1
        let truth = [0, 0, 0, 0, 1, 1, 1, 1, 1];
        let preds = [0, 0, 0, 1, 1, 1, 1, 1, 0];
        let c = Confusion::from_labels(&preds, &truth, 2).unwrap();
        let ious = c.ious();
        assert_eq!(ious[0], Some(0.6));
        assert!((ious[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.miou() - (0.6 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_complement() {
        let t = [0, 1, 0, 1];
        assert_eq!(miou(&t, &t, 2).unwrap(), 1.0);
        assert_eq!(miou(&[1, 0, 1, 0], &t, 2).unwrap(), 0.0);
    }

    #[test]
    fn absent_parts_are_excluded() {
        assert_eq!(miou(&[0, 0], &[0, 0], 3).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_labels_are_errors() {
        assert!(miou(&[2], &[0], 2).is_err());
        assert!(miou(&[0], &[5], 2).is_err());
        assert!(miou(&[0, 1], &[0], 2).is_err());
    }

    proptest! {
        #[test]
        fn stored_matches_streaming(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let c = Confusion::from_labels(&p, &t, 5).unwrap();
            prop_assert_eq!(c.overall_accuracy(), overall_accuracy(&p, &t).unwrap());
            let mut recalls = Vec::new();
            for k in 0..5 {
                let support = t.iter().filter(|&&x| x == k).count();
                if support > 0 {
                    let hit = p.iter().zip(&t).filter(|(a, b)| **a == k && **b == k).count();
                    recalls.push(hit as f64 / support as f64);
                }
            }
            let mca = recalls.iter().sum::<f64>() / recalls.len() as f64;
            prop_assert!((c.mean_class_accuracy() - mca).abs() < 1e-12);
            for iou in c.ious().into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&iou));
            }
        }
    }
}
