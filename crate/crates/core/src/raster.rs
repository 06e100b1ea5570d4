use ndarray::{Array2, ArrayView2};
use crate::error::{Error, Result};

/// Per-pixel water probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap(pub Array2<f32>);

impl ProbabilityMap {
    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.0.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// Binary water mask, 1 = water.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaterMask(Array2<u8>);

impl WaterMask {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        check_binary(values.view())?;
        Ok(WaterMask(values))
    }

    pub fn from_fn(dim: (usize, usize), f: impl Fn(usize, usize) -> bool) -> Self {
        WaterMask(Array2::from_shape_fn(dim, |(i, j)| f(i, j) as u8))
    }

    pub fn zeros(dim: (usize, usize)) -> Self {
        WaterMask(Array2::zeros(dim))
    }

    pub fn view(&self) -> ArrayView2<'_, u8> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<u8> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn water_pixels(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }
}

pub(crate) fn check_binary(values: ArrayView2<'_, u8>) -> Result<()> {
    match values.iter().find(|&&v| v > 1) {
        Some(&v) => Err(Error::NonBinary(v)),
        None => Ok(()),
    }
}

pub(crate) fn check_same_dim<A, B>(a: ArrayView2<'_, A>, b: ArrayView2<'_, B>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}
