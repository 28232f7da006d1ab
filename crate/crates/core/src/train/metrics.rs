use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// Pixel counts indexed by (ground truth, prediction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Scores derived from a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    /// `None` for classes absent from both truth and prediction.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with a defined IoU.
    pub miou: f64,
    pub pixel_accuracy: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("confusion matrix needs at least one class".into()));
        }
        Ok(Self {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Add one pixel per location where `label != ignore_index`. Nothing is
    /// added if any value is out of range.
    pub fn update(&mut self, pred: &LabelMap, label: &LabelMap, ignore_index: u32) -> Result<()> {
        if pred.shape() != label.shape() {
            return Err(Error::mismatch("confusion update", &pred.shape(), &label.shape()));
        }
        let k = self.classes;
        let check = |v: u32| {
            if (v as usize) < k {
                Ok(v as usize)
            } else {
                Err(Error::Label {
                    label: v as usize,
                    classes: k,
                })
            }
        };
        let mut pairs = Vec::with_capacity(label.data().len());
        for (&p, &t) in pred.data().iter().zip(label.data()) {
            if t != ignore_index {
                pairs.push((check(t)?, check(p)?));
            }
        }
        for (t, p) in pairs {
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::mismatch("confusion merge", &[self.classes], &[other.classes]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn scores(&self) -> Result<Scores> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyConfusion);
        }
        let k = self.classes;
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..k).map(|t| self.get(t, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok(Scores {
            miou: defined.iter().sum::<f64>() / defined.len() as f64,
            pixel_accuracy: self.trace() as f64 / total as f64,
            per_class,
        })
    }
}

pub fn update_confusion(cm: &mut ConfusionMatrix, pred: &LabelMap, label: &LabelMap, ignore_index: u32) -> Result<()> {
    cm.update(pred, label, ignore_index)
}

pub fn miou(cm: &ConfusionMatrix) -> Result<Scores> {
    cm.scores()
}
