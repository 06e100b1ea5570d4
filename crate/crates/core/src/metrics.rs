//! Evaluation metrics shared by every trainer and report: confusion-based
//! scores for masks and image-quality scores for continuous maps.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::Result;
use crate::raster::{check_binary, check_same_dim};

pub use crate::despeckle::loss::{ssim, SsimParams};

/// Pixel tallies with water as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the roles of water and background exchanged.
    pub fn swapped(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: ArrayView2<'_, u8>, target: ArrayView2<'_, u8>) -> Result<ConfusionCounts> {
    check_same_dim(pred, target)?;
    check_binary(pred)?;
    check_binary(target)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(target.iter()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

/// Precision, recall and IoU. An empty denominator scores 1.0 when the
/// prediction and target are both empty and 0.0 otherwise.
pub fn precision_recall_iou(c: &ConfusionCounts) -> Scores {
    let ratio = |num: u64, den: u64, name: &str| {
        if den == 0 {
            let both_empty = c.tp + c.fp == 0 && c.tp + c.fn_ == 0;
            log::debug!("{name}: empty denominator, convention value {}", both_empty as u8);
            if both_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    Scores {
        precision: ratio(c.tp, c.tp + c.fp, "precision"),
        recall: ratio(c.tp, c.tp + c.fn_, "recall"),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, "iou"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub scores: Scores,
    /// Ground-truth pixels of this class.
    pub support: u64,
}

/// Two-class (water, background) report with support-weighted averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedReport {
    pub water: ClassReport,
    pub background: ClassReport,
    pub weighted: Scores,
}

impl WeightedReport {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let water = ClassReport {
            scores: precision_recall_iou(c),
            support: c.tp + c.fn_,
        };
        let background = ClassReport {
            scores: precision_recall_iou(&c.swapped()),
            support: c.tn + c.fp,
        };
        let total = (water.support + background.support) as f64;
        let weigh = |f: fn(&Scores) -> f64| {
            if total == 0.0 {
                return 1.0;
            }
            (water.support as f64 * f(&water.scores) + background.support as f64 * f(&background.scores)) / total
        };
        WeightedReport {
            water,
            background,
            weighted: Scores {
                precision: weigh(|s| s.precision),
                recall: weigh(|s| s.recall),
                iou: weigh(|s| s.iou),
            },
        }
    }
}

pub fn weighted_report(pred: ArrayView2<'_, u8>, target: ArrayView2<'_, u8>) -> Result<WeightedReport> {
    Ok(WeightedReport::from_counts(&confusion(pred, target)?))
}

pub fn mse<A: Copy + Into<f64>>(a: ArrayView2<'_, A>, b: ArrayView2<'_, A>) -> Result<f64> {
    check_same_dim(a, b)?;
    let n = a.len().max(1) as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = Into::<f64>::into(x) - Into::<f64>::into(y);
            d * d
        })
        .sum::<f64>()
        / n)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR in dB; identical inputs give `f64::INFINITY`.
pub fn psnr<A: Copy + Into<f64>>(a: ArrayView2<'_, A>, b: ArrayView2<'_, A>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(crate::Error::InvalidArgument(format!("psnr peak {peak}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// PSNR as written to reports: infinite values become `null` plus a flag.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct PsnrValue {
    pub psnr: Option<f64>,
    pub psnr_infinite: bool,
}

impl From<f64> for PsnrValue {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            PsnrValue {
                psnr: Some(v),
                psnr_infinite: false,
            }
        } else {
            PsnrValue {
                psnr: None,
                psnr_infinite: true,
            }
        }
    }
}

impl Serialize for PsnrValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("PsnrValue", 2)?;
        st.serialize_field("psnr", &self.psnr)?;
        st.serialize_field("psnr_infinite", &self.psnr_infinite)?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn perfect_all_water() {
        let m = Array2::<u8>::ones((4, 4));
        let c = confusion(m.view(), m.view()).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 16, fp: 0, fn_: 0, tn: 0 });
        let s = precision_recall_iou(&c);
        assert_eq!((s.precision, s.recall, s.iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn complement_has_no_true_hits() {
        let t = array![[1u8, 0], [0, 1]];
        let p = t.mapv(|v| 1 - v);
        let c = confusion(p.view(), t.view()).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn non_binary_rejected() {
        let t = array![[1u8, 2]];
        assert!(confusion(t.view(), t.view()).is_err());
    }

    #[test]
    fn hand_counts() {
        let c = ConfusionCounts { tp: 6, fp: 2, fn_: 3, tn: 10 };
        let s = precision_recall_iou(&c);
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 6.0 / 9.0);
        assert_eq!(s.iou, 6.0 / 11.0);
        assert!((s.iou - 0.545454).abs() < 1e-6);
    }

    #[test]
    fn empty_prediction_and_target_is_perfect() {
        let z = Array2::<u8>::zeros((3, 3));
        let s = precision_recall_iou(&confusion(z.view(), z.view()).unwrap());
        assert_eq!((s.precision, s.recall, s.iou), (1.0, 1.0, 1.0));
        let mut t = z.clone();
        t[[0, 0]] = 1;
        let s = precision_recall_iou(&confusion(z.view(), t.view()).unwrap());
        assert_eq!((s.precision, s.recall, s.iou), (0.0, 0.0, 0.0));
    }

    #[test]
    fn balanced_symmetric_errors_weighted_equals_mean() {
        let c = ConfusionCounts { tp: 40, fp: 10, fn_: 10, tn: 40 };
        let r = WeightedReport::from_counts(&c);
        let mean = (r.water.scores.iou + r.background.scores.iou) / 2.0;
        assert!((r.weighted.iou - mean).abs() < 1e-15);
    }

    #[test]
    fn all_background_target_reports_background_class() {
        let t = Array2::<u8>::zeros((4, 4));
        let mut p = t.clone();
        p[[1, 1]] = 1;
        let r = weighted_report(p.view(), t.view()).unwrap();
        assert_eq!(r.water.support, 0);
        assert_eq!(r.weighted, r.background.scores);
    }

    #[test]
    fn mse_psnr_examples() {
        let a = Array2::from_elem((4, 4), 0.3f32);
        assert_eq!(mse(a.view(), a.view()).unwrap(), 0.0);
        assert!(psnr(a.view(), a.view(), 1.0).unwrap().is_infinite());
        let a = Array2::<f32>::zeros((4, 4));
        let b = Array2::from_elem((4, 4), 0.1f32);
        let m = mse(a.view(), b.view()).unwrap();
        assert!((m - 0.01).abs() < 1e-8);
        assert!((psnr(a.view(), b.view(), 1.0).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn infinite_psnr_serializes_as_null_with_flag() {
        let v = PsnrValue::from(f64::INFINITY);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"psnr":null,"psnr_infinite":true}"#);
        let v = PsnrValue::from(31.5);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"psnr":31.5,"psnr_infinite":false}"#);
    }

    fn counts() -> impl Strategy<Value = ConfusionCounts> {
        (0u64..50, 0u64..50, 0u64..50, 0u64..50).prop_map(|(tp, fp, fn_, tn)| ConfusionCounts { tp, fp, fn_, tn })
    }

    proptest! {
        #[test]
        fn scores_bounded_and_iou_below_pr(c in counts()) {
            let s = precision_recall_iou(&c);
            for v in [s.precision, s.recall, s.iou] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if c.tp > 0 {
                prop_assert!(s.iou <= s.precision.min(s.recall));
            }
        }

        #[test]
        fn weighted_between_class_extremes(c in counts()) {
            let r = WeightedReport::from_counts(&c);
            let pairs = [
                (r.weighted.precision, r.water.scores.precision, r.background.scores.precision),
                (r.weighted.recall, r.water.scores.recall, r.background.scores.recall),
                (r.weighted.iou, r.water.scores.iou, r.background.scores.iou),
            ];
            if c.total() > 0 {
                for (w, a, b) in pairs {
                    prop_assert!(w >= a.min(b) - 1e-12 && w <= a.max(b) + 1e-12);
                }
            }
        }

        #[test]
        fn mse_symmetric_psnr_decreasing(v in prop::collection::vec(0f32..1.0, 32), off in 0.001f32..0.5) {
            let a = Array2::from_shape_vec((4, 8), v).unwrap();
            let b = a.mapv(|x| x + off);
            prop_assert_eq!(mse(a.view(), b.view()).unwrap(), mse(b.view(), a.view()).unwrap());
            let m = mse(a.view(), b.view()).unwrap();
            prop_assert!(psnr_from_mse(m, 1.0) > psnr_from_mse(m * 1.5, 1.0));
        }
    }
}
