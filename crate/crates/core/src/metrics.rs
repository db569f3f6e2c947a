//! Confusion counts for the change class and the scores derived from them.

use ldg_tensor::{Element, Tensor};

use crate::error::{ModelError, Result};
use crate::loss::Labels;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rec: f64,
    pub pre: f64,
    pub oa: f64,
    pub f1: f64,
    pub iou: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    /// Builds counts from signed values, rejecting negatives.
    pub fn from_signed(tp: i64, fp: i64, fn_: i64, tn: i64) -> Result<Self> {
        let conv = |name: &str, v: i64| {
            u64::try_from(v).map_err(|_| ModelError::Contract(format!("confusion count {name} is negative: {v}")))
        };
        Ok(ConfusionCounts {
            tp: conv("tp", tp)?,
            fp: conv("fp", fp)?,
            fn_: conv("fn", fn_)?,
            tn: conv("tn", tn)?,
        })
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Counts from predicted and true binary maps (non-zero = change).
    pub fn from_masks(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(ModelError::Contract(format!(
                "confusion: {} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn from_logits<T: Element>(logits: &Tensor<T>, labels: &Labels) -> Result<Self> {
        Self::from_masks(&argmax_classes(logits)?, &labels.data)
    }

    /// Recall, precision, overall accuracy, F1 and IoU of the change class.
    /// Zero denominators give 0, except that an empty truth predicted empty
    /// scores 1 on OA, F1 and IoU.
    pub fn metrics(&self) -> Metrics {
        let nothing = self.tp + self.fp + self.fn_ == 0;
        let total = self.total();
        Metrics {
            rec: ratio(self.tp, self.tp + self.fn_),
            pre: ratio(self.tp, self.tp + self.fp),
            oa: if total == 0 { 1.0 } else { ratio(self.tp + self.tn, total) },
            f1: if nothing { 1.0 } else { ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_) },
            iou: if nothing { 1.0 } else { ratio(self.tp, self.tp + self.fp + self.fn_) },
        }
    }
}

/// F1 from precision and recall (0 when both are 0).
pub fn f1_from(pre: f64, rec: f64) -> f64 {
    if pre + rec == 0.0 {
        0.0
    } else {
        2.0 * pre * rec / (pre + rec)
    }
}

/// IoU from precision and recall: `1 / (1/P + 1/R - 1)`.
pub fn iou_from(pre: f64, rec: f64) -> f64 {
    if pre == 0.0 || rec == 0.0 {
        0.0
    } else {
        1.0 / (1.0 / pre + 1.0 / rec - 1.0)
    }
}

/// Per-pixel argmax over the class axis of `[N,K,H,W]` scores; ties go to
/// the lower class.
pub fn argmax_classes<T: Element>(scores: &Tensor<T>) -> Result<Vec<u8>> {
    let s = scores.shape();
    if s.len() != 4 || s[1] == 0 || s[1] > 256 {
        return Err(ModelError::Contract(format!("argmax: expected [N,K,H,W] scores, got {s:?}")));
    }
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    let d = scores.data();
    let mut out = vec![0u8; n * hw];
    for b in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if d[(b * k + c) * hw + p] > d[(b * k + best) * hw + p] {
                    best = c;
                }
            }
            out[b * hw + p] = best as u8;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = ConfusionCounts { tp: 3, fp: 1, fn_: 1, tn: 5 }.metrics();
        assert_eq!((m.pre, m.rec, m.f1, m.iou, m.oa), (0.75, 0.75, 0.75, 0.6, 0.8));
    }

    #[test]
    fn degenerate_cases() {
        let m = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 9 }.metrics();
        assert_eq!((m.f1, m.iou, m.oa), (1.0, 1.0, 1.0));
        assert_eq!((m.pre, m.rec), (0.0, 0.0));
        let m = ConfusionCounts { tp: 0, fp: 2, fn_: 0, tn: 0 }.metrics();
        assert_eq!((m.f1, m.iou, m.oa, m.pre), (0.0, 0.0, 0.0, 0.0));
        assert!(ConfusionCounts::from_signed(1, -1, 0, 0).is_err());
    }
}
