//! Segmentation objective: binary cross-entropy plus a per-pixel gap ratio
//! `(p - y)^2 / ((p + y)^2 + eps)` that penalises disagreement relative to
//! the local mass of prediction and target.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::check_same_dim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegLossWeights {
    pub alpha2: f64,
    pub beta2: f64,
    /// Clamp margin for the cross-entropy and stabiliser of the gap ratio.
    pub epsilon: f64,
}

impl Default for SegLossWeights {
    fn default() -> Self {
        SegLossWeights {
            alpha2: 1.0,
            beta2: 0.5,
            epsilon: 1e-7,
        }
    }
}

impl SegLossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!("epsilon {}", self.epsilon)));
        }
        if !(self.alpha2 >= 0.0 && self.beta2 >= 0.0) || self.alpha2 + self.beta2 == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "segmentation weights ({}, {})",
                self.alpha2, self.beta2
            )));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy with `pred` clamped to `[eps, 1 - eps]`.
pub fn bce<A: Copy + Into<f64>>(pred: ArrayView2<'_, A>, target: ArrayView2<'_, u8>, eps: f64) -> Result<f64> {
    check_same_dim(pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &y)| {
            let p = Into::<f64>::into(p).clamp(eps, 1.0 - eps);
            let y = y as f64;
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / n)
}

pub fn gap_term<A: Copy + Into<f64>>(pred: ArrayView2<'_, A>, target: ArrayView2<'_, u8>, eps: f64) -> Result<f64> {
    check_same_dim(pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &y)| {
            let (p, y) = (Into::<f64>::into(p), y as f64);
            (p - y).powi(2) / ((p + y).powi(2) + eps)
        })
        .sum();
    Ok(sum / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegLossTerms {
    pub bce: f64,
    pub gap: f64,
    pub total: f64,
}

pub fn seg_loss<A: Copy + Into<f64>>(
    pred: ArrayView2<'_, A>,
    target: ArrayView2<'_, u8>,
    weights: &SegLossWeights,
) -> Result<SegLossTerms> {
    weights.validate()?;
    let b = bce(pred, target, weights.epsilon)?;
    let g = gap_term(pred, target, weights.epsilon)?;
    Ok(SegLossTerms {
        bce: b,
        gap: g,
        total: weights.alpha2 * b + weights.beta2 * g,
    })
}

/// Differentiable counterparts; means run over every element of the batch.
pub mod tensor {
    use candle_core::Tensor;

    use super::SegLossWeights;
    use crate::error::Result;

    pub fn bce(pred: &Tensor, target: &Tensor, eps: f64) -> Result<Tensor> {
        let p = pred.clamp(eps, 1.0 - eps)?;
        let pos = target.mul(&p.log()?)?;
        let neg = target.affine(-1.0, 1.0)?.mul(&p.affine(-1.0, 1.0)?.log()?)?;
        Ok(pos.add(&neg)?.mean_all()?.neg()?)
    }

    pub fn gap_term(pred: &Tensor, target: &Tensor, eps: f64) -> Result<Tensor> {
        let num = pred.sub(target)?.sqr()?;
        let den = (pred.add(target)?.sqr()? + eps)?;
        Ok(num.div(&den)?.mean_all()?)
    }

    pub struct SegLoss {
        pub total: Tensor,
        pub bce: Tensor,
        pub gap: Tensor,
    }

    pub fn seg_loss(pred: &Tensor, target: &Tensor, weights: &SegLossWeights) -> Result<SegLoss> {
        let bce = bce(pred, target, weights.epsilon)?;
        let gap = gap_term(pred, target, weights.epsilon)?;
        let total = (bce.affine(weights.alpha2, 0.0)? + gap.affine(weights.beta2, 0.0)?)?;
        Ok(SegLoss { total, bce, gap })
    }
}
