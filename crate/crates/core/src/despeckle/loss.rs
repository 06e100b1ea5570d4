//! Composite despeckling objective: pixel MSE, structural dissimilarity
//! `1 - SSIM`, and total variation of the prediction.
//!
//! Each term exists twice. The `ArrayView2` functions are the reference
//! implementations used for evaluation; the [`tensor`] functions build the
//! same quantities as differentiable graphs for training.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::check_same_dim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Side of the uniform sliding window (odd, >= 3).
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the data.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "ssim window {} must be odd and >= 3",
                self.window
            )));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ssim dynamic range {}",
                self.dynamic_range
            )));
        }
        Ok(())
    }
}

/// Weights of the despeckling objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleLossWeights {
    pub alpha1: f64,
    pub beta1: f64,
    pub gamma1: f64,
}

impl Default for SpeckleLossWeights {
    fn default() -> Self {
        SpeckleLossWeights {
            alpha1: 1.0,
            beta1: 0.5,
            gamma1: 1e-4,
        }
    }
}

impl SpeckleLossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha1, self.beta1, self.gamma1];
        if w.iter().any(|v| !(*v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(format!("speckle loss weights {w:?}")));
        }
        Ok(())
    }
}

/// Reflection without repeating the edge sample: -1 -> 1, n -> n - 2.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

fn as_f64<A: Copy + Into<f64>>(a: ArrayView2<'_, A>) -> ndarray::Array2<f64> {
    a.mapv(Into::into)
}

/// Mean SSIM over a uniform sliding window with reflect padding.
pub fn ssim<A: Copy + Into<f64>>(a: ArrayView2<'_, A>, b: ArrayView2<'_, A>, params: &SsimParams) -> Result<f64> {
    check_same_dim(a, b)?;
    params.validate()?;
    let (a, b) = (as_f64(a), as_f64(b));
    let (h, w) = a.dim();
    let half = (params.window / 2) as isize;
    let n = (params.window * params.window) as f64;
    let (c1, c2) = (params.c1(), params.c2());
    let rows: Vec<Vec<usize>> = (0..h as isize)
        .map(|r| (r - half..=r + half).map(|i| reflect_index(i, h)).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..w as isize)
        .map(|c| (c - half..=c + half).map(|i| reflect_index(i, w)).collect())
        .collect();

    let mut total = 0.0;
    for rr in &rows {
        for cc in &cols {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &i in rr {
                for &j in cc {
                    let (x, y) = (a[[i, j]], b[[i, j]]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (mu_a, mu_b) = (sa / n, sb / n);
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    Ok(total / (h * w) as f64)
}

/// Isotropic total variation: sum over pixels of the forward-difference
/// gradient magnitude. The last row and column contribute only the one
/// difference that exists there.
pub fn tv_penalty<A: Copy + Into<f64>>(image: ArrayView2<'_, A>) -> Result<f64> {
    let (h, w) = image.dim();
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!("tv needs at least 2x2, got {h}x{w}")));
    }
    let y = as_f64(image);
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let dx = if j + 1 < w { y[[i, j + 1]] - y[[i, j]] } else { 0.0 };
            let dy = if i + 1 < h { y[[i + 1, j]] - y[[i, j]] } else { 0.0 };
            total += (dx * dx + dy * dy).sqrt();
        }
    }
    Ok(total)
}

/// Value of each term and of the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleLossTerms {
    pub mse: f64,
    pub ssim: f64,
    pub tv: f64,
    pub total: f64,
}

pub fn speckle_loss<A: Copy + Into<f64>>(
    pred: ArrayView2<'_, A>,
    target: ArrayView2<'_, A>,
    weights: &SpeckleLossWeights,
    ssim_params: &SsimParams,
) -> Result<SpeckleLossTerms> {
    let mse = crate::metrics::mse(pred, target)?;
    let s = ssim(pred, target, ssim_params)?;
    let tv = tv_penalty(pred)?;
    Ok(SpeckleLossTerms {
        mse,
        ssim: s,
        tv,
        total: weights.alpha1 * mse + weights.beta1 * (1.0 - s) + weights.gamma1 * tv,
    })
}

/// Differentiable counterparts over `(batch, channels, height, width)`
/// tensors. Per-image quantities are averaged over the batch.
pub mod tensor {
    use candle_core::{DType, Device, Tensor, D};

    use super::{reflect_index, SpeckleLossWeights, SsimParams};
    use crate::error::Result;

    pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        Ok(pred.sub(target)?.sqr()?.mean_all()?)
    }

    /// `(n, n)` matrix averaging a `window`-wide neighbourhood along one
    /// axis, with the edge reflection folded into the weights.
    fn box_matrix(n: usize, window: usize, like: &Tensor) -> Result<Tensor> {
        let half = (window / 2) as isize;
        let mut m = vec![0.0f64; n * n];
        for i in 0..n {
            for o in -half..=half {
                m[i * n + reflect_index(i as isize + o, n)] += 1.0 / window as f64;
            }
        }
        Ok(Tensor::from_vec(m, (n, n), &Device::Cpu)?
            .to_dtype(like.dtype())?
            .to_device(like.device())?)
    }

    /// Separable uniform window mean: `B_h * x * B_w^T` per image.
    fn window_mean(x: &Tensor, rows: &Tensor, cols_t: &Tensor) -> Result<Tensor> {
        Ok(rows.broadcast_matmul(&x.broadcast_matmul(cols_t)?)?)
    }

    /// Mean SSIM; channels are treated as independent images.
    pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<Tensor> {
        params.validate()?;
        let (n, c, h, w) = a.dims4()?;
        let a = a.reshape((n * c, 1, h, w))?;
        let b = b.reshape((n * c, 1, h, w))?;
        let rows = box_matrix(h, params.window, &a)?;
        let cols_t = box_matrix(w, params.window, &a)?.t()?.contiguous()?;
        let wm = |x: &Tensor| window_mean(x, &rows, &cols_t);
        let mu_a = wm(&a)?;
        let mu_b = wm(&b)?;
        let var_a = wm(&a.sqr()?)?.sub(&mu_a.sqr()?)?;
        let var_b = wm(&b.sqr()?)?.sub(&mu_b.sqr()?)?;
        let cov = wm(&a.mul(&b)?)?.sub(&mu_a.mul(&mu_b)?)?;
        let (c1, c2) = (params.c1(), params.c2());
        let num = ((mu_a.mul(&mu_b)? * 2.0)? + c1)?.mul(&((cov * 2.0)? + c2)?)?;
        let den = ((mu_a.sqr()? + mu_b.sqr()?)? + c1)?.mul(&((var_a + var_b)? + c2)?)?;
        Ok(num.div(&den)?.mean_all()?)
    }

    /// Total variation per image, averaged over the batch. `smooth` is added
    /// under the square root of interior pixels; pass 0 for the exact value.
    pub fn tv_penalty(img: &Tensor, smooth: f64) -> Result<Tensor> {
        let (n, c, h, w) = img.dims4()?;
        let dx = img.narrow(3, 1, w - 1)?.sub(&img.narrow(3, 0, w - 1)?)?; // (n,c,h,w-1)
        let dy = img.narrow(2, 1, h - 1)?.sub(&img.narrow(2, 0, h - 1)?)?; // (n,c,h-1,w)
        let interior = dx
            .narrow(2, 0, h - 1)?
            .sqr()?
            .add(&dy.narrow(3, 0, w - 1)?.sqr()?)?;
        let interior = if smooth > 0.0 { (interior + smooth)? } else { interior };
        let interior = interior.sqrt()?.sum_all()?;
        let last_col = dy.narrow(3, w - 1, 1)?.abs()?.sum_all()?;
        let last_row = dx.narrow(2, h - 1, 1)?.abs()?.sum_all()?;
        Ok(((interior + last_col)? + last_row)?.affine(1.0 / (n * c) as f64, 0.0)?)
    }

    pub struct SpeckleLoss {
        pub total: Tensor,
        pub mse: Tensor,
        pub ssim: Tensor,
        pub tv: Tensor,
    }

    pub fn speckle_loss(
        pred: &Tensor,
        target: &Tensor,
        weights: &SpeckleLossWeights,
        ssim_params: &SsimParams,
        tv_smooth: f64,
    ) -> Result<SpeckleLoss> {
        let mse = mse(pred, target)?;
        let ssim = ssim(pred, target, ssim_params)?;
        let tv = tv_penalty(pred, tv_smooth)?;
        let total = ((mse.affine(weights.alpha1, 0.0)? + ssim.affine(-weights.beta1, weights.beta1)?)?
            + tv.affine(weights.gamma1, 0.0)?)?;
        Ok(SpeckleLoss { total, mse, ssim, tv })
    }

    /// Scalar tensor to f64.
    pub fn scalar(t: &Tensor) -> Result<f64> {
        Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }

    /// Mean over all but the first axis, one value per batch element.
    pub fn per_sample_mean(t: &Tensor) -> Result<Tensor> {
        let n = t.dim(0)?;
        Ok(t.reshape((n, ()))?.mean(D::Minus1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Tensor, Var};
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    fn to_tensor(a: &Array2<f64>) -> Tensor {
        let (h, w) = a.dim();
        Tensor::from_iter(a.iter().copied(), &Device::Cpu)
            .unwrap()
            .reshape((1, 1, h, w))
            .unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_penalty(Array2::from_elem((5, 4), 2.5f64).view()).unwrap(), 0.0);
        // (0,0): right 1, down 0 -> 1. (0,1): only down, 0. (1,0): only right, 1. (1,1): 0.
        assert_eq!(tv_penalty(array![[0.0f64, 1.0], [0.0, 1.0]].view()).unwrap(), 2.0);
        assert!(tv_penalty(array![[0.0f64, 1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn tv_hand_enumeration_three_by_three() {
        let y = array![[0.0f64, 3.0, 3.0], [4.0, 0.0, 1.0], [4.0, 4.0, 1.0]];
        // interior: (0,0): dx 3 dy 4 -> 5; (0,1): dx 0 dy -3 -> 3; (1,0): dx -4 dy 0 -> 4; (1,1): dx 1 dy 4 -> sqrt 17
        // last col: (0,2) |1-3| = 2, (1,2) |1-1| = 0; last row: (2,0) 0, (2,1) |1-4| = 3
        let expected = 5.0 + 3.0 + 4.0 + 17f64.sqrt() + 2.0 + 0.0 + 0.0 + 3.0;
        assert_eq!(tv_penalty(y.view()).unwrap(), expected);
    }

    #[test]
    fn ssim_constants() {
        let p = SsimParams::default();
        assert!((p.c1() - 1e-4).abs() < 1e-18);
        assert!((p.c2() - 9e-4).abs() < 1e-18);
    }

    #[test]
    fn ssim_of_constant_images_has_closed_form() {
        let p = SsimParams::default();
        let (a, b) = (0.3f64, 0.7f64);
        let x = Array2::from_elem((9, 9), a);
        let y = Array2::from_elem((9, 9), b);
        let expected = (2.0 * a * b + p.c1()) / (a * a + b * b + p.c1());
        assert!((ssim(x.view(), y.view(), &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_bad_arguments() {
        let x = Array2::<f64>::zeros((8, 8));
        let y = Array2::<f64>::zeros((8, 7));
        assert!(ssim(x.view(), y.view(), &SsimParams::default()).is_err());
        let even = SsimParams { window: 6, ..Default::default() };
        assert!(ssim(x.view(), x.view(), &even).is_err());
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn speckle_loss_zero_on_identical_constants() {
        let x = Array2::from_elem((8, 8), 0.42f64);
        let t = speckle_loss(x.view(), x.view(), &SpeckleLossWeights::default(), &SsimParams::default()).unwrap();
        assert_eq!(t.total, 0.0);
    }

    #[test]
    fn weight_one_zero_zero_is_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (random(8, 8, &mut rng), random(8, 8, &mut rng));
        let w = SpeckleLossWeights { alpha1: 1.0, beta1: 0.0, gamma1: 0.0 };
        let t = speckle_loss(a.view(), b.view(), &w, &SsimParams::default()).unwrap();
        let independent: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 64.0;
        assert!((t.total - independent).abs() < 1e-15);
    }

    #[test]
    fn tensor_terms_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = SsimParams::default();
        for _ in 0..5 {
            let (a, b) = (random(9, 12, &mut rng), random(9, 12, &mut rng));
            let (ta, tb) = (to_tensor(&a), to_tensor(&b));
            let s_ref = ssim(a.view(), b.view(), &p).unwrap();
            let s_t = tensor::scalar(&tensor::ssim(&ta, &tb, &p).unwrap()).unwrap();
            assert!((s_ref - s_t).abs() < 1e-12, "{s_ref} vs {s_t}");
            let tv_ref = tv_penalty(a.view()).unwrap();
            let tv_t = tensor::scalar(&tensor::tv_penalty(&ta, 0.0).unwrap()).unwrap();
            assert!((tv_ref - tv_t).abs() < 1e-12 * tv_ref);
        }
    }

    #[test]
    fn tensor_tv_has_finite_gradient_on_constant_image() {
        let v = Var::from_tensor(&Tensor::full(0.5f64, (1, 1, 4, 4), &Device::Cpu).unwrap()).unwrap();
        let tv = tensor::tv_penalty(v.as_tensor(), 1e-12).unwrap();
        let g = tv.backward().unwrap();
        let grad = g.get(v.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(grad.iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn tv_nonnegative_and_homogeneous(v in prop::collection::vec(0.0f64..1.0, 20), c in 0.0f64..5.0) {
            let a = Array2::from_shape_vec((4, 5), v).unwrap();
            let tv = tv_penalty(a.view()).unwrap();
            prop_assert!(tv >= 0.0);
            let scaled = tv_penalty(a.mapv(|x| x * c).view()).unwrap();
            prop_assert!((scaled - c * tv).abs() <= 1e-12 * (1.0 + c * tv));
        }

        #[test]
        fn ssim_symmetric_and_self_identity(
            v in prop::collection::vec(0.0f64..1.0, 64), u in prop::collection::vec(0.0f64..1.0, 64)
        ) {
            let a = Array2::from_shape_vec((8, 8), v).unwrap();
            let b = Array2::from_shape_vec((8, 8), u).unwrap();
            let p = SsimParams::default();
            let ab = ssim(a.view(), b.view(), &p).unwrap();
            let ba = ssim(b.view(), a.view(), &p).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ssim(a.view(), a.view(), &p).unwrap() - 1.0).abs() <= 1e-9);
        }
    }
}
