//! Pixel confusion counts and the change-class metrics derived from them.

use serde::{Deserialize, Serialize};

use super::infer::ChangeMap;
use crate::data::LabelMap;
use crate::error::{Error, Result};

/// Pixel tallies with "change" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Tallies one prediction against its label. `pred` and `label` hold
    /// 0/1 per pixel.
    pub fn from_slices(pred: &[u8], label: &[u8]) -> Result<Self> {
        if pred.len() != label.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, label has {}",
                pred.len(),
                label.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &l) in pred.iter().zip(label) {
            match (p != 0, l != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_counts(self)
    }
}

/// Accumulates a change map against its label.
pub fn accumulate(pred: &ChangeMap, label: &LabelMap) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (label.height(), label.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, label is {}x{}",
            pred.width(),
            pred.height(),
            label.width(),
            label.height()
        )));
    }
    ConfusionCounts::from_slices(pred.pred(), label.data())
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Fractions in `[0, 1]`; multiply by 100 for percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Overall pixel accuracy.
    pub global: f64,
}

impl Metrics {
    /// Any zero denominator gives 0.
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        Metrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            global: ratio(c.tp + c.tn, c.total()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counts() {
        let c = ConfusionCounts {
            tp: 50,
            fp: 50,
            fn_: 50,
            tn: 850,
        };
        let m = c.metrics();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.f1, 0.5);
        assert_eq!(m.global, 0.9);
    }

    #[test]
    fn empty_counts_give_zero() {
        let m = ConfusionCounts::default().metrics();
        assert_eq!((m.precision, m.recall, m.f1, m.global), (0.0, 0.0, 0.0, 0.0));
        let only_tn = ConfusionCounts {
            tn: 10,
            ..Default::default()
        };
        assert_eq!(only_tn.metrics().f1, 0.0);
        assert_eq!(only_tn.metrics().global, 1.0);
    }

    #[test]
    fn tallies_from_slices() {
        let c = ConfusionCounts::from_slices(&[1, 1, 0, 0, 1], &[1, 0, 1, 0, 1]).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 1
            }
        );
        assert!(ConfusionCounts::from_slices(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn serializes_fn_field() {
        let json = serde_json::to_string(&ConfusionCounts {
            tp: 1,
            fp: 2,
            fn_: 3,
            tn: 4,
        })
        .unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
    }

    proptest! {
        #[test]
        fn metrics_are_scale_invariant(tp in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000, tn in 0u64..10_000, k in 1u64..1000) {
            let c = ConfusionCounts { tp, fp, fn_, tn };
            let s = ConfusionCounts { tp: tp * k, fp: fp * k, fn_: fn_ * k, tn: tn * k };
            let (a, b) = (c.metrics(), s.metrics());
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
            prop_assert!((a.global - b.global).abs() < 1e-12);
        }

        #[test]
        fn metrics_in_unit_range_and_f1_identity(tp in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000, tn in 0u64..10_000) {
            let m = ConfusionCounts { tp, fp, fn_, tn }.metrics();
            for v in [m.precision, m.recall, m.f1, m.global] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((m.f1 * (m.precision + m.recall) - 2.0 * m.precision * m.recall).abs() < 1e-12);
        }
    }
}
