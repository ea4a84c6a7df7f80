//! 8-bit dynamic-range quantization.
//!
//! Weights are stored as symmetric per-tensor int8 with a float scale
//! (`max|w| / 127`, no zero point). At inference each activation vector is
//! quantized on the fly with its own max-abs scale, products accumulate in
//! i32 and are rescaled to float before biases and nonlinearities. Biases and
//! LSTM cell states stay in float.

use crate::error::{Error, Result};
use crate::masknet::{Dense, LstmLayer, MaskNetConfig, MaskNetParams, StepOutput, StreamState, Tensor, Weight};
use crate::embed::DVector;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub values: Vec<i8>,
    pub scale: f32,
}

impl QuantTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&q| q as f64 * self.scale as f64)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Symmetric per-tensor quantization. The scale is rounded to f32 before the
/// values are computed, so the stored pair reproduces the error bound exactly.
pub fn quantize_tensor(t: &Tensor) -> QuantTensor {
    let max_abs = t.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max_abs == 0.0 {
        1.0f32
    } else {
        (max_abs / 127.0) as f32
    };
    let s = scale as f64;
    let values = t
        .data
        .iter()
        .map(|v| (v / s).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantTensor {
        shape: t.shape.clone(),
        values,
        scale,
    }
}

/// Dynamically quantized activation vector.
pub struct QuantActivation {
    pub values: Vec<i8>,
    pub scale: f64,
}

pub fn quantize_activation(x: &[f64]) -> QuantActivation {
    let max_abs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return QuantActivation {
            values: vec![0; x.len()],
            scale: 0.0,
        };
    }
    let scale = max_abs / 127.0;
    QuantActivation {
        values: x.iter().map(|v| (v / scale).round() as i8).collect(),
        scale,
    }
}

#[inline]
fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
}

impl QuantTensor {
    /// `out += W x` using int8 weights and a dynamically quantized `x`.
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        let cols = x.len();
        let act = quantize_activation(x);
        if act.scale == 0.0 {
            return;
        }
        let rescale = self.scale as f64 * act.scale;
        for (o, row) in out.iter_mut().zip(self.values.chunks_exact(cols)) {
            *o += dot_i8(row, &act.values) as f64 * rescale;
        }
    }
}

fn quantize_weight(w: &Weight) -> Result<Weight> {
    match w {
        Weight::Float(t) => Ok(Weight::Quant(quantize_tensor(t))),
        Weight::Quant(_) => Err(Error::AlreadyQuantized),
    }
}

fn f32_bias(b: &Tensor) -> Tensor {
    Tensor {
        shape: b.shape.clone(),
        data: b.data.iter().map(|&v| v as f32 as f64).collect(),
    }
}

fn quantize_dense(d: &Dense) -> Result<Dense> {
    Ok(Dense {
        weight: quantize_weight(&d.weight)?,
        bias: f32_bias(&d.bias),
    })
}

/// Quantizes every weight matrix; biases are kept in float (rounded to f32).
pub fn quantize_model(params: &MaskNetParams) -> Result<MaskNetParams> {
    if params.is_quantized() {
        return Err(Error::AlreadyQuantized);
    }
    Ok(MaskNetParams {
        conv: params.conv.as_ref().map(quantize_dense).transpose()?,
        lstm: params
            .lstm
            .iter()
            .map(|l| {
                Ok(LstmLayer {
                    w_input: quantize_weight(&l.w_input)?,
                    w_recurrent: quantize_weight(&l.w_recurrent)?,
                    bias: f32_bias(&l.bias),
                })
            })
            .collect::<Result<_>>()?,
        mask_head: quantize_dense(&params.mask_head)?,
        noise_hidden: params
            .noise_hidden
            .iter()
            .map(quantize_dense)
            .collect::<Result<_>>()?,
        noise_out: quantize_dense(&params.noise_out)?,
    })
}

/// Streaming step over int8 parameters. Same contract as
/// [`crate::masknet::forward_step`], which dispatches on weight storage; this
/// entry point additionally insists the parameters are quantized.
pub fn forward_step_quantized(
    qparams: &MaskNetParams,
    cfg: &MaskNetConfig,
    state: &mut StreamState,
    frame: &[f32],
    dvec: &DVector,
) -> Result<StepOutput> {
    if !qparams.is_quantized() {
        return Err(Error::Config("expected quantized parameters".into()));
    }
    crate::masknet::forward_step(qparams, cfg, state, frame, dvec)
}
