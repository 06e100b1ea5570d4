//! Next-frame objective: MSE, structural dissimilarity `1 - SSIM`, and a
//! temporal smoothness term over consecutive frames.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::despeckle::loss::{ssim, SsimParams};
use crate::error::{Error, Result};
use crate::raster::check_same_dim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastLossWeights {
    pub alpha3: f64,
    pub beta3: f64,
    pub gamma3: f64,
}

impl Default for ForecastLossWeights {
    fn default() -> Self {
        ForecastLossWeights {
            alpha3: 1.0,
            beta3: 0.5,
            gamma3: 0.1,
        }
    }
}

impl ForecastLossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha3, self.beta3, self.gamma3];
        if w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() == 0.0 {
            return Err(Error::InvalidArgument(format!("forecast loss weights {w:?}")));
        }
        Ok(())
    }
}

/// Mean over consecutive pairs of the per-pixel mean squared step.
pub fn tsl<A: Copy + Into<f64>>(frames: &[ArrayView2<'_, A>]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "temporal smoothness needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let mut total = 0.0;
    for pair in frames.windows(2) {
        check_same_dim(pair[0], pair[1])?;
        total += crate::metrics::mse(pair[1], pair[0])?;
    }
    Ok(total / (frames.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastLossTerms {
    pub mse: f64,
    pub ssim: f64,
    pub tsl: f64,
    pub total: f64,
}

/// Smoothness is evaluated over `[context, pred]`, where `context` is the
/// last observed frame.
pub fn forecast_loss<A: Copy + Into<f64>>(
    pred: ArrayView2<'_, A>,
    target: ArrayView2<'_, A>,
    context: ArrayView2<'_, A>,
    weights: &ForecastLossWeights,
    ssim_params: &SsimParams,
) -> Result<ForecastLossTerms> {
    weights.validate()?;
    let mse = crate::metrics::mse(pred, target)?;
    let s = ssim(pred, target, ssim_params)?;
    let t = tsl(&[context, pred])?;
    Ok(ForecastLossTerms {
        mse,
        ssim: s,
        tsl: t,
        total: weights.alpha3 * mse + weights.beta3 * (1.0 - s) + weights.gamma3 * t,
    })
}

pub mod tensor {
    use candle_core::Tensor;

    use super::ForecastLossWeights;
    use crate::despeckle::loss::tensor::{mse, ssim};
    use crate::despeckle::loss::SsimParams;
    use crate::error::{Error, Result};

    pub fn tsl(frames: &[&Tensor]) -> Result<Tensor> {
        if frames.len() < 2 {
            return Err(Error::InvalidArgument("temporal smoothness needs at least 2 frames".into()));
        }
        let steps = frames
            .windows(2)
            .map(|p| mse(p[1], p[0]))
            .collect::<Result<Vec<_>>>()?;
        let n = steps.len() as f64;
        Ok(Tensor::stack(&steps, 0)?.sum_all()?.affine(1.0 / n, 0.0)?)
    }

    pub struct ForecastLoss {
        pub total: Tensor,
        pub mse: Tensor,
        pub ssim: Tensor,
        pub tsl: Tensor,
    }

    pub fn forecast_loss(
        pred: &Tensor,
        target: &Tensor,
        context: &Tensor,
        weights: &ForecastLossWeights,
        ssim_params: &SsimParams,
    ) -> Result<ForecastLoss> {
        let m = mse(pred, target)?;
        let s = ssim(pred, target, ssim_params)?;
        let t = tsl(&[context, pred])?;
        let total = ((m.affine(weights.alpha3, 0.0)? + s.affine(-weights.beta3, weights.beta3)?)?
            + t.affine(weights.gamma3, 0.0)?)?;
        Ok(ForecastLoss {
            total,
            mse: m,
            ssim: s,
            tsl: t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Tensor};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tsl_cases() {
        let c = Array2::from_elem((3, 3), 0.4);
        assert_eq!(tsl(&[c.view(), c.view(), c.view()]).unwrap(), 0.0);
        let zeros = Array2::<f64>::zeros((2, 2));
        let ones = Array2::<f64>::ones((2, 2));
        assert_eq!(tsl(&[zeros.view(), ones.view()]).unwrap(), 1.0);
        assert!(tsl(&[zeros.view()]).is_err());

        let a = array![[0.1, 0.5], [0.9, 0.3]];
        let b = array![[0.2, 0.2], [0.4, 0.8]];
        let c = array![[0.0, 1.0], [0.5, 0.5]];
        let step1 = (0.01 + 0.09 + 0.25 + 0.25) / 4.0;
        let step2 = (0.04 + 0.64 + 0.01 + 0.09) / 4.0;
        let got = tsl(&[a.view(), b.view(), c.view()]).unwrap();
        assert!((got - (step1 + step2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn forecast_loss_identities() {
        let x = Array2::from_elem((8, 8), 0.3);
        let l = forecast_loss(x.view(), x.view(), x.view(), &ForecastLossWeights::default(), &SsimParams::default()).unwrap();
        assert!(l.total.abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Array2::from_shape_fn((8, 8), |_| rng.random::<f64>());
        let t = Array2::from_shape_fn((8, 8), |_| rng.random::<f64>());
        let w = ForecastLossWeights { alpha3: 1.0, beta3: 0.0, gamma3: 0.0 };
        let l = forecast_loss(p.view(), t.view(), x.view(), &w, &SsimParams::default()).unwrap();
        assert_eq!(l.total, crate::metrics::mse(p.view(), t.view()).unwrap());
    }

    #[test]
    fn tensor_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut ChaCha8Rng| Array2::from_shape_fn((8, 8), |_| rng.random::<f64>());
        let (p, t, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let tt = |a: &Array2<f64>| Tensor::from_vec(a.iter().copied().collect::<Vec<_>>(), (1, 1, 8, 8), &Device::Cpu).unwrap();
        let w = ForecastLossWeights { alpha3: 0.3, beta3: 0.9, gamma3: 2.0 };
        let s = SsimParams::default();
        let got = tensor::forecast_loss(&tt(&p), &tt(&t), &tt(&c), &w, &s).unwrap();
        let want = forecast_loss(p.view(), t.view(), c.view(), &w, &s).unwrap();
        let got = got.total.to_scalar::<f64>().unwrap();
        assert!((got - want.total).abs() <= 1e-12 * want.total.abs());
    }
}
