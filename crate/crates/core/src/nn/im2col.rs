//! Stride-1 "same" convolution as a per-image im2col gather followed by a
//! matrix product. Candle's CPU conv kernels (and the transposed conv used
//! in their backward pass) are an order of magnitude slower, and a
//! batch-wide im2col buffer is bound by memory traffic.

use candle_core::{CpuStorage, CustomOp2, Layout, Module, Shape, Tensor, WithDType};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, LinalgScalar};

type Dims = (usize, usize, usize, usize);

/// Fills `cols` `(c * k * k, h * w)` from one `(c, h, w)` image.
fn gather<T: WithDType>(img: &[T], (c, h, w): (usize, usize, usize), k: usize, cols: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    cols.fill(T::zero());
    for ci in 0..c {
        let plane = &img[ci * hw..][..hw];
        for a in 0..k {
            for b in 0..k {
                let row = &mut cols[((ci * k + a) * k + b) * hw..][..hw];
                let j0 = p.saturating_sub(b);
                let j1 = (w + p).saturating_sub(b).min(w);
                if j0 >= j1 {
                    continue;
                }
                for i in 0..h {
                    let si = i + a;
                    if si < p || si - p >= h {
                        continue;
                    }
                    let src = &plane[(si - p) * w..][..w];
                    row[i * w + j0..i * w + j1].copy_from_slice(&src[j0 + b - p..j1 + b - p]);
                }
            }
        }
    }
}

/// Adjoint of [`gather`]: adds `cols` back into one `(c, h, w)` image.
fn scatter<T: WithDType>(cols: &[T], (c, h, w): (usize, usize, usize), k: usize, img: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..][..hw];
        for a in 0..k {
            for b in 0..k {
                let row = &cols[((ci * k + a) * k + b) * hw..][..hw];
                let j0 = p.saturating_sub(b);
                let j1 = (w + p).saturating_sub(b).min(w);
                if j0 >= j1 {
                    continue;
                }
                for i in 0..h {
                    let si = i + a;
                    if si < p || si - p >= h {
                        continue;
                    }
                    let dst = &mut plane[(si - p) * w + j0 + b - p..(si - p) * w + j1 + b - p];
                    for (d, s) in dst.iter_mut().zip(&row[i * w + j0..i * w + j1]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T: WithDType>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("conv expects contiguous tensors"),
    }
}

fn forward<T: WithDType + LinalgScalar>(x: &[T], (n, c, h, w): Dims, weight: &[T], c_out: usize, k: usize) -> Vec<T> {
    let (ckk, hw) = (c * k * k, h * w);
    let wm = ArrayView2::from_shape((c_out, ckk), weight).expect("weight shape");
    let mut cols = Array2::<T>::zeros((ckk, hw));
    let mut out = vec![T::zero(); n * c_out * hw];
    for ni in 0..n {
        gather(&x[ni * c * hw..][..c * hw], (c, h, w), k, cols.as_slice_mut().expect("standard layout"));
        let mut y = ArrayViewMut2::from_shape((c_out, hw), &mut out[ni * c_out * hw..][..c_out * hw]).expect("out");
        general_mat_mul(T::one(), &wm, &cols, T::zero(), &mut y);
    }
    out
}

fn grad_input<T: WithDType + LinalgScalar>(gy: &[T], (n, c, h, w): Dims, weight: &[T], c_out: usize, k: usize) -> Vec<T> {
    let (ckk, hw) = (c * k * k, h * w);
    let wt = ArrayView2::from_shape((c_out, ckk), weight).expect("weight shape").reversed_axes();
    let mut cols = Array2::<T>::zeros((ckk, hw));
    let mut out = vec![T::zero(); n * c * hw];
    for ni in 0..n {
        let g = ArrayView2::from_shape((c_out, hw), &gy[ni * c_out * hw..][..c_out * hw]).expect("grad");
        general_mat_mul(T::one(), &wt, &g, T::zero(), &mut cols);
        scatter(cols.as_slice().expect("standard layout"), (c, h, w), k, &mut out[ni * c * hw..][..c * hw]);
    }
    out
}

fn grad_weight<T: WithDType + LinalgScalar>(x: &[T], (n, c, h, w): Dims, gy: &[T], c_out: usize, k: usize) -> Vec<T> {
    let (ckk, hw) = (c * k * k, h * w);
    let mut cols = Array2::<T>::zeros((ckk, hw));
    let mut gw = Array2::<T>::zeros((c_out, ckk));
    for ni in 0..n {
        gather(&x[ni * c * hw..][..c * hw], (c, h, w), k, cols.as_slice_mut().expect("standard layout"));
        let g = ArrayView2::from_shape((c_out, hw), &gy[ni * c_out * hw..][..c_out * hw]).expect("grad");
        general_mat_mul(T::one(), &g, &cols.t(), T::one(), &mut gw);
    }
    gw.into_raw_vec_and_offset().0
}

/// `conv(x, weight)` without bias.
struct ConvOp {
    k: usize,
}

/// Gradient with respect to the input: `op(grad_out, weight)`.
struct ConvGradInput {
    dims: Dims,
    k: usize,
}

/// Gradient with respect to the weight: `op(x, grad_out)`.
struct ConvGradWeight {
    k: usize,
    c_out: usize,
}

macro_rules! dispatch {
    ($s1:expr, $l1:expr, $s2:expr, $l2:expr, |$a:ident, $b:ident| $body:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(d1), CpuStorage::F32(d2)) => {
                let ($a, $b) = (contiguous(d1, $l1)?, contiguous(d2, $l2)?);
                CpuStorage::F32($body)
            }
            (CpuStorage::F64(d1), CpuStorage::F64(d2)) => {
                let ($a, $b) = (contiguous(d1, $l1)?, contiguous(d2, $l2)?);
                CpuStorage::F64($body)
            }
            _ => candle_core::bail!("conv supports matching f32 or f64 operands"),
        }
    };
}

impl CustomOp2 for ConvOp {
    fn name(&self) -> &'static str {
        "conv-im2col"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let (c_out, c_in, _, _) = l2.shape().dims4()?;
        if c_in != dims.1 {
            candle_core::bail!("conv expects {c_in} input channels, got {}", dims.1);
        }
        let out = dispatch!(s1, l1, s2, l2, |x, w| forward(x, dims, w, c_out, self.k));
        Ok((out, Shape::from((dims.0, c_out, dims.2, dims.3))))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gx = grad.apply_op2_no_bwd(w, &ConvGradInput { dims: x.dims4()?, k: self.k })?;
        let c_out = w.dim(0)?;
        let gw = x.apply_op2_no_bwd(&grad, &ConvGradWeight { k: self.k, c_out })?;
        Ok((Some(gx), Some(gw)))
    }
}

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "conv-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let c_out = l2.shape().dims4()?.0;
        let out = dispatch!(s1, l1, s2, l2, |g, w| grad_input(g, self.dims, w, c_out, self.k));
        Ok((out, Shape::from(self.dims)))
    }
}

impl CustomOp2 for ConvGradWeight {
    fn name(&self) -> &'static str {
        "conv-grad-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let out = dispatch!(s1, l1, s2, l2, |x, g| grad_weight(x, dims, g, self.c_out, self.k));
        Ok((out, Shape::from((self.c_out, dims.1, self.k, self.k))))
    }
}

/// Square-kernel, stride-1, zero-padded convolution keeping `h x w`.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
}

impl Conv {
    pub fn new(weight: Tensor, bias: Tensor) -> candle_core::Result<Self> {
        let (_, _, kh, kw) = weight.dims4()?;
        if kh != kw || kh % 2 == 0 {
            candle_core::bail!("kernel must be square and odd, got {kh}x{kw}");
        }
        Ok(Conv { weight, bias, kernel: kh })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

impl Module for Conv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let c_out = self.weight.dim(0)?;
        let y = x.contiguous()?.apply_op2(&self.weight.contiguous()?, ConvOp { k: self.kernel })?;
        y.broadcast_add(&self.bias.reshape((1, c_out, 1, 1))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn tensor(seed: u64, shape: Dims) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_abs(t: Tensor) -> f64 {
        t.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn matches_candle_conv_forward_and_backward() {
        for (k, c_in, c_out, h, w) in [(3, 2, 3, 5, 7), (1, 3, 2, 4, 4), (5, 1, 2, 6, 3), (3, 4, 1, 2, 2)] {
            let x = Var::from_tensor(&tensor(1, (2, c_in, h, w))).unwrap();
            let wt = Var::from_tensor(&tensor(2, (c_out, c_in, k, k))).unwrap();
            let b = Var::from_tensor(&tensor(3, (1, c_out, 1, 1)).flatten_all().unwrap()).unwrap();
            let conv = Conv::new(wt.as_tensor().clone(), b.as_tensor().clone()).unwrap();
            let ours = conv.forward(x.as_tensor()).unwrap();
            let reference = x
                .conv2d(&wt, k / 2, 1, 1, 1)
                .unwrap()
                .broadcast_add(&b.reshape((1, c_out, 1, 1)).unwrap())
                .unwrap();
            assert!(max_abs((&ours - &reference).unwrap()) < 1e-12);

            let weights = tensor(4, ours.dims4().unwrap());
            let g1 = (&ours * &weights).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (&reference * &weights).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &wt, &b] {
                assert!(max_abs((g1.get(v).unwrap() - g2.get(v).unwrap()).unwrap()) < 1e-10);
            }
        }
    }
}
