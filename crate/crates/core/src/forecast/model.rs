//! The three next-frame model families. Every model maps a history
//! `(n, T, h, w)` to one probability frame `(n, 1, h, w)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, relu_conv, Conv, Init, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForecastFamily {
    #[serde(rename = "ConvLSTM")]
    ConvLstm,
    #[serde(rename = "Bi-ConvLSTM")]
    BiConvLstm,
    #[serde(rename = "TD-CNN")]
    TdCnn,
}

impl ForecastFamily {
    pub const ALL: [ForecastFamily; 3] = [ForecastFamily::ConvLstm, ForecastFamily::BiConvLstm, ForecastFamily::TdCnn];

    pub fn name(self) -> &'static str {
        match self {
            ForecastFamily::ConvLstm => "ConvLSTM",
            ForecastFamily::BiConvLstm => "Bi-ConvLSTM",
            ForecastFamily::TdCnn => "TD-CNN",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ForecastFamily::ConvLstm => "convlstm",
            ForecastFamily::BiConvLstm => "bi-convlstm",
            ForecastFamily::TdCnn => "td-cnn",
        }
    }
}

impl fmt::Display for ForecastFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForecastFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ForecastFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s) || f.slug() == s.to_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown forecast family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModelSpec {
    pub family: ForecastFamily,
    pub hidden: usize,
    pub kernel: usize,
    /// Stacked recurrent layers, or encoder convolutions for TD-CNN.
    pub depth: usize,
    pub history_len: usize,
}

impl ForecastModelSpec {
    pub fn new(family: ForecastFamily) -> Self {
        ForecastModelSpec {
            family,
            hidden: 16,
            kernel: 3,
            depth: 2,
            history_len: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.depth == 0 || self.history_len == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("invalid forecast model spec {self:?}")));
        }
        Ok(())
    }

    /// Trainable parameter count implied by the spec.
    pub fn parameter_count(&self) -> usize {
        let (h, k2) = (self.hidden, self.kernel * self.kernel);
        let lstm_stack = |c_in: usize| -> usize {
            (0..self.depth)
                .map(|l| {
                    let cin = if l == 0 { c_in } else { h };
                    (cin + h) * 4 * h * k2 + 4 * h
                })
                .sum()
        };
        match self.family {
            ForecastFamily::ConvLstm => lstm_stack(1) + h + 1,
            ForecastFamily::BiConvLstm => 2 * lstm_stack(1) + 2 * h + 1,
            ForecastFamily::TdCnn => {
                let encoder: usize = (0..self.depth)
                    .map(|l| (if l == 0 { 1 } else { h }) * h * k2 + h)
                    .sum();
                encoder + self.history_len * h * h * k2 + h + h + 1
            }
        }
    }
}

struct LstmCell {
    gates: Conv,
    hidden: usize,
}

impl LstmCell {
    fn step(&self, x: &Tensor, state: Option<(Tensor, Tensor)>) -> Result<(Tensor, Tensor)> {
        let (n, _, hh, ww) = x.dims4()?;
        let (h, c) = match state {
            Some(s) => s,
            None => {
                let z = Tensor::zeros((n, self.hidden, hh, ww), x.dtype(), x.device())?;
                (z.clone(), z)
            }
        };
        let g = self.gates.forward(&Tensor::cat(&[x, &h], 1)?)?;
        let chunk = |k: usize| g.narrow(1, k * self.hidden, self.hidden);
        let i = candle_nn::ops::sigmoid(&chunk(0)?)?;
        let f = candle_nn::ops::sigmoid(&chunk(1)?)?;
        let o = candle_nn::ops::sigmoid(&chunk(2)?)?;
        let cand = chunk(3)?.tanh()?;
        let c = f.mul(&c)?.add(&i.mul(&cand)?)?;
        let h = o.mul(&c.tanh()?)?;
        Ok((h, c))
    }
}

fn lstm_stack(store: &mut ParamStore, prefix: &str, spec: &ForecastModelSpec) -> Result<Vec<LstmCell>> {
    (0..spec.depth)
        .map(|l| {
            let c_in = if l == 0 { 1 } else { spec.hidden };
            Ok(LstmCell {
                gates: store.conv2d(&format!("{prefix}{l}"), c_in + spec.hidden, 4 * spec.hidden, spec.kernel, Init::He)?,
                hidden: spec.hidden,
            })
        })
        .collect()
}

/// Runs the stack over `frames` in order and returns the top hidden state.
fn run_stack(cells: &[LstmCell], frames: &[Tensor]) -> Result<Tensor> {
    let mut states: Vec<Option<(Tensor, Tensor)>> = vec![None; cells.len()];
    let mut top = None;
    for x in frames {
        let mut input = x.clone();
        for (cell, state) in cells.iter().zip(states.iter_mut()) {
            let (h, c) = cell.step(&input, state.take())?;
            input = h.clone();
            *state = Some((h, c));
        }
        top = Some(input);
    }
    top.ok_or(Error::EmptyDataset)
}

enum Body {
    ConvLstm {
        cells: Vec<LstmCell>,
    },
    BiConvLstm {
        forward: Vec<LstmCell>,
        backward: Vec<LstmCell>,
    },
    TdCnn {
        encoder: Vec<Conv>,
        fuse: Conv,
    },
}

pub struct ForecastModel {
    pub spec: ForecastModelSpec,
    pub(crate) store: ParamStore,
    body: Body,
    head: Conv,
}

impl ForecastModel {
    pub fn new(spec: ForecastModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(seed);
        let h = spec.hidden;
        let (body, head_in) = match spec.family {
            ForecastFamily::ConvLstm => (
                Body::ConvLstm {
                    cells: lstm_stack(&mut store, "lstm", &spec)?,
                },
                h,
            ),
            ForecastFamily::BiConvLstm => (
                Body::BiConvLstm {
                    forward: lstm_stack(&mut store, "fwd", &spec)?,
                    backward: lstm_stack(&mut store, "bwd", &spec)?,
                },
                2 * h,
            ),
            ForecastFamily::TdCnn => {
                let encoder = (0..spec.depth)
                    .map(|l| store.conv2d(&format!("enc{l}"), if l == 0 { 1 } else { h }, h, spec.kernel, Init::He))
                    .collect::<Result<Vec<_>>>()?;
                let fuse = store.conv2d("fuse", spec.history_len * h, h, spec.kernel, Init::He)?;
                (Body::TdCnn { encoder, fuse }, h)
            }
        };
        let head = store.conv2d("head", head_in, 1, 1, Init::He)?;
        Ok(ForecastModel { spec, store, body, head })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// `(n, history_len, h, w)` -> `(n, 1, h, w)` in `[0, 1]`.
    pub fn forward(&self, history: &Tensor) -> Result<Tensor> {
        let (n, t, hh, ww) = history.dims4()?;
        if t != self.spec.history_len {
            return Err(Error::ShapeMismatch(format!(
                "history of {t} frames, model expects {}",
                self.spec.history_len
            )));
        }
        let frames = || -> Result<Vec<Tensor>> { (0..t).map(|k| Ok(history.narrow(1, k, 1)?)).collect() };
        let features = match &self.body {
            Body::ConvLstm { cells } => run_stack(cells, &frames()?)?,
            Body::BiConvLstm { forward, backward } => {
                let f = frames()?;
                let rev: Vec<Tensor> = f.iter().rev().cloned().collect();
                Tensor::cat(&[run_stack(forward, &f)?, run_stack(backward, &rev)?], 1)?
            }
            Body::TdCnn { encoder, fuse } => {
                let mut x = history.reshape((n * t, 1, hh, ww))?;
                for conv in encoder {
                    x = relu_conv(conv, &x)?;
                }
                let x = x.reshape((n, t * self.spec.hidden, hh, ww))?;
                relu_conv(fuse, &x)?
            }
        };
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&features)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        nn::save_checkpoint(dir, &self.spec, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec: ForecastModelSpec = nn::read_spec(dir)?;
        let model = ForecastModel::new(spec, 0)?;
        model.store.load(&dir.join(nn::WEIGHTS_FILE))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, IndexOp};
    use proptest::prelude::*;

    fn small(family: ForecastFamily) -> ForecastModelSpec {
        ForecastModelSpec {
            hidden: 4,
            depth: 1,
            ..ForecastModelSpec::new(family)
        }
    }

    #[test]
    fn shape_contract_every_family() {
        let x = Tensor::rand(0f32, 1.0, (2, 7, 16, 16), &Device::Cpu).unwrap();
        for family in ForecastFamily::ALL {
            let m = ForecastModel::new(small(family), 3).unwrap();
            let y = m.forward(&x).unwrap();
            assert_eq!(y.dims4().unwrap(), (2, 1, 16, 16));
            let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
            assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!(m.forward(&x.narrow(1, 0, 6).unwrap()).is_err());
        }
    }

    #[test]
    fn parameter_count_matches_arithmetic() {
        // ConvLSTM, hidden 4, depth 1, 3x3: gates (1+4)*16*9 + 16 = 736, head 5.
        assert_eq!(small(ForecastFamily::ConvLstm).parameter_count(), 741);
        // Bi: two stacks plus head over 8 channels.
        assert_eq!(small(ForecastFamily::BiConvLstm).parameter_count(), 2 * 736 + 9);
        // TD-CNN: encoder 1*4*9+4 = 40, fuse 28*4*9+4 = 1012, head 5.
        assert_eq!(small(ForecastFamily::TdCnn).parameter_count(), 1057);
        for family in ForecastFamily::ALL {
            for depth in 1..3 {
                let spec = ForecastModelSpec { depth, ..small(family) };
                assert_eq!(ForecastModel::new(spec.clone(), 0).unwrap().num_params(), spec.parameter_count());
            }
        }
    }

    #[test]
    fn td_cnn_batch_order_independent() {
        let m = ForecastModel::new(small(ForecastFamily::TdCnn), 5).unwrap();
        let x = Tensor::rand(0f32, 1.0, (3, 7, 8, 8), &Device::Cpu).unwrap();
        let y = m.forward(&x).unwrap();
        let perm = Tensor::new(&[2u32, 0, 1], &Device::Cpu).unwrap();
        let yp = m.forward(&x.index_select(&perm, 0).unwrap()).unwrap();
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let d = (y.i(a).unwrap() - yp.i(b).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
            assert_eq!(d.to_scalar::<f32>().unwrap(), 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn random_specs_keep_shape(family in 0usize..3, hidden in 1usize..5, depth in 1usize..3, t in 1usize..5, side in 2usize..9) {
            let spec = ForecastModelSpec { family: ForecastFamily::ALL[family], hidden, depth, history_len: t, kernel: 3 };
            let m = ForecastModel::new(spec, 1).unwrap();
            let x = Tensor::rand(0f32, 1.0, (1, t, side, side + 1), &Device::Cpu).unwrap();
            prop_assert_eq!(m.forward(&x).unwrap().dims4().unwrap(), (1, 1, side, side + 1));
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in ForecastFamily::ALL {
            assert_eq!(f.name().parse::<ForecastFamily>().unwrap(), f);
            assert_eq!(f.slug().parse::<ForecastFamily>().unwrap(), f);
        }
        assert!("lstm".parse::<ForecastFamily>().is_err());
    }
}
