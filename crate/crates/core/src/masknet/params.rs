use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MaskNetConfig;
use crate::error::{Error, Result};
use crate::quant::QuantTensor;

/// Dense row-major float tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `out += W x` for a `[rows, cols]` matrix.
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        let cols = x.len();
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(cols)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// A weight matrix in either storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Float(Tensor),
    Quant(QuantTensor),
}

impl Weight {
    pub fn shape(&self) -> &[usize] {
        match self {
            Weight::Float(t) => &t.shape,
            Weight::Quant(q) => &q.shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Weight::Float(t) => t.matvec_add(x, out),
            Weight::Quant(q) => q.matvec_add(x, out),
        }
    }

    pub fn float(&self) -> Result<&Tensor> {
        match self {
            Weight::Float(t) => Ok(t),
            Weight::Quant(_) => Err(Error::NotTrainable),
        }
    }

    pub fn float_mut(&mut self) -> Result<&mut Tensor> {
        match self {
            Weight::Float(t) => Ok(t),
            Weight::Quant(_) => Err(Error::NotTrainable),
        }
    }

    /// Float view of the values; dequantizes int8 storage.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Weight::Float(t) => t.data.clone(),
            Weight::Quant(q) => q.dequantize(),
        }
    }
}

/// Affine layer `W x + b`; also used for the frequency conv (kernel `[channels, width]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Weight,
    pub bias: Tensor,
}

/// Gates are stacked `[input, forget, cell, output]` along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_input: Weight,
    pub w_recurrent: Weight,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Float32,
    Int8Quantized,
}

/// Borrowed view of one named parameter, used for serialization.
pub enum ParamRef<'a> {
    Float(&'a Tensor),
    Quant(&'a QuantTensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskNetParams {
    pub conv: Option<Dense>,
    pub lstm: Vec<LstmLayer>,
    pub mask_head: Dense,
    pub noise_hidden: Vec<Dense>,
    pub noise_out: Dense,
}

fn w(w: &Weight) -> ParamRef<'_> {
    match w {
        Weight::Float(t) => ParamRef::Float(t),
        Weight::Quant(q) => ParamRef::Quant(q),
    }
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Weight {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Weight::Float(Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    })
}

impl MaskNetParams {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, forget-gate bias 1.
    pub fn init(cfg: &MaskNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(cfg, |shape, fan_in| uniform(shape, fan_in, &mut rng), true))
    }

    /// All-zero float parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &MaskNetConfig) -> Self {
        Self::build(cfg, |shape, _| Weight::Float(Tensor::zeros(shape)), false)
    }

    fn build(
        cfg: &MaskNetConfig,
        mut weight: impl FnMut(&[usize], usize) -> Weight,
        forget_bias: bool,
    ) -> Self {
        let h = cfg.lstm_units;
        let conv = cfg.conv.map(|c| Dense {
            weight: weight(&[c.channels, c.kernel_width], c.kernel_width),
            bias: Tensor::zeros(&[c.channels]),
        });
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        for l in 0..cfg.lstm_layers {
            let input = if l == 0 { cfg.lstm_input_dim() } else { h };
            let w_input = weight(&[4 * h, input], input);
            let w_recurrent = weight(&[4 * h, h], h);
            let mut bias = Tensor::zeros(&[4 * h]);
            if forget_bias {
                bias.data[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
            }
            lstm.push(LstmLayer {
                w_input,
                w_recurrent,
                bias,
            });
        }
        let mask_head = Dense {
            weight: weight(&[cfg.input_dim, h], h),
            bias: Tensor::zeros(&[cfg.input_dim]),
        };
        let mut noise_hidden = Vec::new();
        let mut prev = h;
        for &width in &cfg.head_hidden {
            noise_hidden.push(Dense {
                weight: weight(&[width, prev], prev),
                bias: Tensor::zeros(&[width]),
            });
            prev = width;
        }
        let noise_out = Dense {
            weight: weight(&[1, prev], prev),
            bias: Tensor::zeros(&[1]),
        };
        MaskNetParams {
            conv,
            lstm,
            mask_head,
            noise_hidden,
            noise_out,
        }
    }

    pub fn dtype(&self) -> DType {
        if self.is_quantized() {
            DType::Int8Quantized
        } else {
            DType::Float32
        }
    }

    pub fn is_quantized(&self) -> bool {
        self.entries()
            .iter()
            .any(|(_, p)| matches!(p, ParamRef::Quant(_)))
    }

    pub fn num_params(&self) -> usize {
        self.entries()
            .iter()
            .map(|(_, p)| match p {
                ParamRef::Float(t) => t.len(),
                ParamRef::Quant(q) => q.len(),
            })
            .sum()
    }

    /// Every parameter with its stable name, in serialization order.
    pub fn entries(&self) -> Vec<(String, ParamRef<'_>)> {
        let mut out = Vec::new();
        if let Some(c) = &self.conv {
            out.push(("conv.weight".to_string(), w(&c.weight)));
            out.push(("conv.bias".to_string(), ParamRef::Float(&c.bias)));
        }
        for (i, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm.{i}.w_input"), w(&l.w_input)));
            out.push((format!("lstm.{i}.w_recurrent"), w(&l.w_recurrent)));
            out.push((format!("lstm.{i}.bias"), ParamRef::Float(&l.bias)));
        }
        out.push(("mask.weight".to_string(), w(&self.mask_head.weight)));
        out.push(("mask.bias".to_string(), ParamRef::Float(&self.mask_head.bias)));
        for (i, d) in self.noise_hidden.iter().enumerate() {
            out.push((format!("noise.{i}.weight"), w(&d.weight)));
            out.push((format!("noise.{i}.bias"), ParamRef::Float(&d.bias)));
        }
        out.push(("noise.out.weight".to_string(), w(&self.noise_out.weight)));
        out.push(("noise.out.bias".to_string(), ParamRef::Float(&self.noise_out.bias)));
        out
    }

    /// Mutable float tensors in the same order as [`entries`](Self::entries).
    pub fn tensors_mut(&mut self) -> Result<Vec<&mut Tensor>> {
        let mut out = Vec::new();
        if let Some(c) = &mut self.conv {
            out.push(c.weight.float_mut()?);
            out.push(&mut c.bias);
        }
        for l in &mut self.lstm {
            out.push(l.w_input.float_mut()?);
            out.push(l.w_recurrent.float_mut()?);
            out.push(&mut l.bias);
        }
        out.push(self.mask_head.weight.float_mut()?);
        out.push(&mut self.mask_head.bias);
        for d in &mut self.noise_hidden {
            out.push(d.weight.float_mut()?);
            out.push(&mut d.bias);
        }
        out.push(self.noise_out.weight.float_mut()?);
        out.push(&mut self.noise_out.bias);
        Ok(out)
    }

    /// Float tensors in [`entries`](Self::entries) order.
    pub fn tensors(&self) -> Result<Vec<&Tensor>> {
        self.entries()
            .into_iter()
            .map(|(_, p)| match p {
                ParamRef::Float(t) => Ok(t),
                ParamRef::Quant(_) => Err(Error::NotTrainable),
            })
            .collect()
    }

    /// Checks tensor shapes against the config and that every value is finite.
    pub fn check(&self, cfg: &MaskNetConfig) -> Result<()> {
        let expected = MaskNetParams::zeros(cfg);
        let want = expected.entries();
        let have = self.entries();
        if want.len() != have.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                want.len(),
                have.len()
            )));
        }
        for ((wn, wp), (hn, hp)) in want.iter().zip(&have) {
            let ws = match wp {
                ParamRef::Float(t) => &t.shape,
                ParamRef::Quant(q) => &q.shape,
            };
            let (hs, finite) = match hp {
                ParamRef::Float(t) => (&t.shape, t.data.iter().all(|v| v.is_finite())),
                ParamRef::Quant(q) => (&q.shape, q.scale.is_finite() && q.scale > 0.0),
            };
            if wn != hn || ws != hs {
                return Err(Error::Shape(format!("{hn}: expected {wn} {ws:?}, found {hs:?}")));
            }
            if !finite {
                return Err(Error::NonFinite(format!("parameter {hn}")));
            }
        }
        Ok(())
    }

    /// Assembles parameters from named records, as read from a model file.
    pub fn from_named(cfg: &MaskNetConfig, mut named: HashMap<String, Weight>) -> Result<Self> {
        cfg.validate()?;
        let map = &mut named;
        let conv = match cfg.conv {
            Some(_) => Some(Dense {
                weight: take_weight(map, "conv.weight")?,
                bias: take_bias(map, "conv.bias")?,
            }),
            None => None,
        };
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        for i in 0..cfg.lstm_layers {
            lstm.push(LstmLayer {
                w_input: take_weight(map, &format!("lstm.{i}.w_input"))?,
                w_recurrent: take_weight(map, &format!("lstm.{i}.w_recurrent"))?,
                bias: take_bias(map, &format!("lstm.{i}.bias"))?,
            });
        }
        let mask_head = Dense {
            weight: take_weight(map, "mask.weight")?,
            bias: take_bias(map, "mask.bias")?,
        };
        let mut noise_hidden = Vec::new();
        for i in 0..cfg.head_hidden.len() {
            noise_hidden.push(Dense {
                weight: take_weight(map, &format!("noise.{i}.weight"))?,
                bias: take_bias(map, &format!("noise.{i}.bias"))?,
            });
        }
        let noise_out = Dense {
            weight: take_weight(map, "noise.out.weight")?,
            bias: take_bias(map, "noise.out.bias")?,
        };
        if let Some(extra) = named.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        let p = MaskNetParams {
            conv,
            lstm,
            mask_head,
            noise_hidden,
            noise_out,
        };
        p.check(cfg)?;
        Ok(p)
    }
}

fn take_weight(map: &mut HashMap<String, Weight>, name: &str) -> Result<Weight> {
    map.remove(name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
}

fn take_bias(map: &mut HashMap<String, Weight>, name: &str) -> Result<Tensor> {
    match take_weight(map, name)? {
        Weight::Float(t) => Ok(t),
        Weight::Quant(_) => Err(Error::Format(format!("{name} must be float"))),
    }
}
