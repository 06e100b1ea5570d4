//! Encoder/decoder with skip connections and a sigmoid head.

use std::path::Path;

use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::datacube::Band;
use crate::error::{Error, Result};
use crate::nn::{self, relu_conv, Conv, Init, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    /// Number of 2x downsamplings.
    pub depth: usize,
    pub base_channels: usize,
    /// Input bands in channel order.
    pub bands: Vec<Band>,
    /// Side of the square training patch; also the inference tile.
    pub patch_size: usize,
}

impl UNetSpec {
    pub fn new(bands: Vec<Band>) -> Self {
        UNetSpec {
            depth: 4,
            base_channels: 32,
            bands,
            patch_size: crate::datacube::DEFAULT_PATCH_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() || self.base_channels == 0 {
            return Err(Error::InvalidArgument("U-Net needs bands and channels".into()));
        }
        self.check_side(self.patch_size)
    }

    pub fn check_side(&self, side: usize) -> Result<()> {
        let unit = 1usize << self.depth;
        if side == 0 || !side.is_multiple_of(unit) {
            return Err(Error::ShapeMismatch(format!(
                "input side {side} not divisible by 2^{} = {unit}",
                self.depth
            )));
        }
        Ok(())
    }
}

pub struct UNet {
    pub spec: UNetSpec,
    pub(crate) store: ParamStore,
    down: Vec<(Conv, Conv)>,
    bottom: (Conv, Conv),
    up: Vec<(Conv, Conv)>,
    head: Conv,
}

impl UNet {
    pub fn new(spec: UNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(seed);
        let width = |level: usize| spec.base_channels << level;
        let mut down = Vec::with_capacity(spec.depth);
        let mut c_in = spec.bands.len();
        for level in 0..spec.depth {
            let a = store.conv2d(&format!("down{level}.0"), c_in, width(level), 3, Init::He)?;
            let b = store.conv2d(&format!("down{level}.1"), width(level), width(level), 3, Init::He)?;
            down.push((a, b));
            c_in = width(level);
        }
        let bottom = (
            store.conv2d("bottom.0", c_in, width(spec.depth), 3, Init::He)?,
            store.conv2d("bottom.1", width(spec.depth), width(spec.depth), 3, Init::He)?,
        );
        let mut up = Vec::with_capacity(spec.depth);
        for level in (0..spec.depth).rev() {
            let a = store.conv2d(&format!("up{level}.0"), width(level + 1) + width(level), width(level), 3, Init::He)?;
            let b = store.conv2d(&format!("up{level}.1"), width(level), width(level), 3, Init::He)?;
            up.push((a, b));
        }
        let head = store.conv2d("head", width(0), 1, 1, Init::He)?;
        Ok(UNet {
            spec,
            store,
            down,
            bottom,
            up,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// `(n, bands, h, w)` -> probabilities `(n, 1, h, w)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.spec.bands.len() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} bands, input has {c}",
                self.spec.bands.len()
            )));
        }
        self.spec.check_side(h)?;
        self.spec.check_side(w)?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut x = x.clone();
        for (a, b) in &self.down {
            let y = relu_conv(b, &relu_conv(a, &x)?)?;
            x = y.max_pool2d(2)?;
            skips.push(y);
        }
        x = relu_conv(&self.bottom.1, &relu_conv(&self.bottom.0, &x)?)?;
        for ((a, b), skip) in self.up.iter().zip(skips.iter().rev()) {
            let (_, _, sh, sw) = skip.dims4()?;
            let up = x.upsample_nearest2d(sh, sw)?;
            let cat = Tensor::cat(&[&up, skip], 1)?;
            x = relu_conv(b, &relu_conv(a, &cat)?)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&x)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        nn::save_checkpoint(dir, &self.spec, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec: UNetSpec = nn::read_spec(dir)?;
        let model = UNet::new(spec, 0)?;
        model.store.load(&dir.join(nn::WEIGHTS_FILE))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn spec() -> UNetSpec {
        UNetSpec {
            depth: 2,
            base_channels: 4,
            bands: vec![Band::Vv, Band::Vh, Band::Green],
            patch_size: 16,
        }
    }

    #[test]
    fn output_shape_and_range() {
        let m = UNet::new(spec(), 1).unwrap();
        let x = Tensor::randn(0f32, 3.0, (2, 3, 16, 8), &Device::Cpu).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.dims4().unwrap(), (2, 1, 16, 8));
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = UNet::new(spec(), 1).unwrap();
        let wrong_bands = Tensor::zeros((1, 2, 16, 16), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(m.forward(&wrong_bands).is_err());
        let odd = Tensor::zeros((1, 3, 18, 16), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(m.forward(&odd).is_err());
        assert!(UNet::new(UNetSpec { patch_size: 10, ..spec() }, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = UNet::new(spec(), 7).unwrap();
        m.save(dir.path()).unwrap();
        let back = UNet::load(dir.path()).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap();
        let a: Vec<f32> = m.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = back.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        assert_eq!(back.spec, m.spec);
    }
}
