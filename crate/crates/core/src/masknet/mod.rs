//! Streaming mask network.
//!
//! Each frame is optionally filtered by a frequency-only 1D convolution,
//! concatenated with the speaker d-vector, and run through a stack of
//! uni-directional LSTMs. The top LSTM output feeds a sigmoid mask head (one
//! gain per feature cell) and a small feedforward head producing a raw
//! overlapped-speech score.
//!
//! [`forward_step`] advances one frame at a time and works for float and
//! int8 parameters alike. [`forward_sequence`] is the layer-major batch path
//! used for training; it also records the activations needed for
//! backpropagation.

mod params;

pub use params::{DType, Dense, LstmLayer, MaskNetParams, ParamRef, Tensor, Weight};

use serde::{Deserialize, Serialize};

use crate::embed::{DVector, DEFAULT_DVEC_DIM};
use crate::error::{Error, Result};
use crate::frontend::{FeatureConfig, FeatureSequence, FeatureVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    /// Kernel extent along the frequency axis.
    pub kernel_width: usize,
    pub channels: usize,
}

/// How masks act on log-compressed features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskDomain {
    /// Undo `ln(1 + x)`, scale the energy, recompress.
    #[default]
    Linear,
    /// Multiply the stored log values directly.
    LogCellwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskNetConfig {
    pub input_dim: usize,
    pub dvec_dim: usize,
    #[serde(default)]
    pub conv: Option<ConvConfig>,
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub head_hidden: Vec<usize>,
    pub features: FeatureConfig,
    #[serde(default)]
    pub masking: MaskDomain,
}

impl MaskNetConfig {
    /// Three 512-unit LSTMs with a 64x64 noise-type head, no conv.
    pub fn standard(features: FeatureConfig) -> Self {
        MaskNetConfig {
            input_dim: features.width(),
            dvec_dim: DEFAULT_DVEC_DIM,
            conv: None,
            lstm_layers: 3,
            lstm_units: 512,
            head_hidden: vec![64, 64],
            features,
            masking: MaskDomain::Linear,
        }
    }

    /// The standard topology with 256-unit LSTMs.
    pub fn small(features: FeatureConfig) -> Self {
        MaskNetConfig {
            lstm_units: 256,
            ..Self::standard(features)
        }
    }

    pub fn variant(&self) -> FeatureVariant {
        self.features.variant
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lstm_layers == 0 || self.lstm_units == 0 {
            return bad("lstm_layers and lstm_units must be at least 1".into());
        }
        if self.input_dim == 0 || self.dvec_dim == 0 {
            return bad("input and d-vector widths must be at least 1".into());
        }
        if self.head_hidden.iter().any(|&w| w == 0) {
            return bad("noise head widths must be at least 1".into());
        }
        if let Some(c) = self.conv {
            if c.kernel_width == 0 || c.channels == 0 {
                return bad("conv kernel width and channels must be at least 1".into());
            }
        }
        self.features.validate()?;
        if self.features.width() != self.input_dim {
            return bad(format!(
                "input_dim {} does not match {} feature width {}",
                self.input_dim,
                self.features.variant,
                self.features.width()
            ));
        }
        Ok(())
    }

    /// Width of the first LSTM input: conv output (or raw frame) plus d-vector.
    pub fn lstm_input_dim(&self) -> usize {
        let front = match self.conv {
            Some(c) => c.channels * self.input_dim,
            None => self.input_dim,
        };
        front + self.dvec_dim
    }
}

/// Per-stream recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub hidden: Vec<Vec<f64>>,
    pub cell: Vec<Vec<f64>>,
    /// Suppression strength from the previous frame.
    pub w_prev: f64,
    pub frames: u64,
}

impl StreamState {
    pub fn new(cfg: &MaskNetConfig, w0: f64) -> Self {
        StreamState {
            hidden: vec![vec![0.0; cfg.lstm_units]; cfg.lstm_layers],
            cell: vec![vec![0.0; cfg.lstm_units]; cfg.lstm_layers],
            w_prev: w0.clamp(0.0, 1.0),
            frames: 0,
        }
    }

    fn check(&self, cfg: &MaskNetConfig) -> Result<()> {
        let ok = self.hidden.len() == cfg.lstm_layers
            && self.cell.len() == cfg.lstm_layers
            && self
                .hidden
                .iter()
                .chain(&self.cell)
                .all(|v| v.len() == cfg.lstm_units);
        if !ok {
            return Err(Error::Shape("stream state does not match config".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub mask: Vec<f64>,
    pub noise_score: f64,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Frequency-axis convolution with zero padding and ReLU, channel-major output.
pub(crate) fn conv_forward(conv: &Dense, x: &[f64], pre: Option<&mut Vec<f64>>) -> Vec<f64> {
    let kernel = conv.weight.to_f64();
    let channels = conv.bias.len();
    let width = kernel.len() / channels;
    let half = width / 2;
    let f = x.len();
    let mut z = vec![0.0; channels * f];
    for c in 0..channels {
        let k = &kernel[c * width..(c + 1) * width];
        for i in 0..f {
            let mut acc = conv.bias.data[c];
            for (j, kj) in k.iter().enumerate() {
                let src = i + j;
                if src >= half && src - half < f {
                    acc += kj * x[src - half];
                }
            }
            z[c * f + i] = acc;
        }
    }
    let out = z.iter().map(|v| v.max(0.0)).collect();
    if let Some(p) = pre {
        *p = z;
    }
    out
}

/// Gate activations of one LSTM step, `[i, f, g, o]` after nonlinearities.
pub(crate) fn lstm_gates(layer: &LstmLayer, input: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let h = h_prev.len();
    let mut z = layer.bias.data.clone();
    layer.w_input.matvec_add(input, &mut z);
    layer.w_recurrent.matvec_add(h_prev, &mut z);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * h..3 * h).contains(&k) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
    z
}

/// Noise head hidden activations (tanh) followed by the raw score.
pub(crate) fn noise_head(params: &MaskNetParams, top: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let mut acts = Vec::with_capacity(params.noise_hidden.len());
    let mut x = top.to_vec();
    for d in &params.noise_hidden {
        let mut z = d.bias.data.clone();
        d.weight.matvec_add(&x, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        acts.push(z.clone());
        x = z;
    }
    let mut s = params.noise_out.bias.data.clone();
    params.noise_out.weight.matvec_add(&x, &mut s);
    (acts, s[0])
}

pub(crate) fn mask_head(params: &MaskNetParams, top: &[f64]) -> Vec<f64> {
    let mut z = params.mask_head.bias.data.clone();
    params.mask_head.weight.matvec_add(top, &mut z);
    z.into_iter().map(sigmoid).collect()
}

fn first_input(params: &MaskNetParams, frame: &[f64], dvec: &DVector) -> Vec<f64> {
    let mut u = match &params.conv {
        Some(conv) => conv_forward(conv, frame, None),
        None => frame.to_vec(),
    };
    u.extend(dvec.as_slice().iter().map(|&v| v as f64));
    u
}

fn check_inputs(cfg: &MaskNetConfig, frame_width: usize, dvec: &DVector) -> Result<()> {
    if frame_width != cfg.input_dim {
        return Err(Error::Shape(format!(
            "frame width {frame_width} != model input {}",
            cfg.input_dim
        )));
    }
    if dvec.dim() != cfg.dvec_dim {
        return Err(Error::Shape(format!(
            "d-vector dimension {} != model {}",
            dvec.dim(),
            cfg.dvec_dim
        )));
    }
    Ok(())
}

/// Advances `state` by one frame.
pub fn forward_step(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    state: &mut StreamState,
    frame: &[f32],
    dvec: &DVector,
) -> Result<StepOutput> {
    check_inputs(cfg, frame.len(), dvec)?;
    state.check(cfg)?;
    let x: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
    let mut input = first_input(params, &x, dvec);
    let h = cfg.lstm_units;
    for (l, layer) in params.lstm.iter().enumerate() {
        let g = lstm_gates(layer, &input, &state.hidden[l]);
        let c = &mut state.cell[l];
        let hid = &mut state.hidden[l];
        for k in 0..h {
            c[k] = g[h + k] * c[k] + g[k] * g[2 * h + k];
            hid[k] = g[3 * h + k] * c[k].tanh();
        }
        input.clone_from(hid);
    }
    state.frames += 1;
    let mask = mask_head(params, &input);
    let (_, noise_score) = noise_head(params, &input);
    Ok(StepOutput { mask, noise_score })
}

/// Batch outputs for a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    /// `T x F`, row-major.
    pub masks: Vec<f64>,
    pub width: usize,
    pub noise_scores: Vec<f64>,
}

impl SequenceOutput {
    pub fn mask(&self, t: usize) -> &[f64] {
        &self.masks[t * self.width..(t + 1) * self.width]
    }

    pub fn n_frames(&self) -> usize {
        self.noise_scores.len()
    }
}

/// Activations of one LSTM layer over a sequence.
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerTrace {
    pub inputs: Vec<Vec<f64>>,
    pub gates: Vec<Vec<f64>>,
    pub cells: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace {
    pub frames: Vec<Vec<f64>>,
    pub conv_pre: Vec<Vec<f64>>,
    pub layers: Vec<LayerTrace>,
    pub head_acts: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn forward_traced(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    frames: &FeatureSequence,
    dvec: &DVector,
) -> Result<(SequenceOutput, Trace)> {
    check_inputs(cfg, frames.width(), dvec)?;
    let t_len = frames.n_frames();
    let h = cfg.lstm_units;
    let mut trace = Trace::default();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    for f in frames.frames() {
        let x: Vec<f64> = f.iter().map(|&v| v as f64).collect();
        let mut u = match &params.conv {
            Some(conv) => {
                let mut pre = Vec::new();
                let out = conv_forward(conv, &x, Some(&mut pre));
                trace.conv_pre.push(pre);
                out
            }
            None => x.clone(),
        };
        u.extend(dvec.as_slice().iter().map(|&v| v as f64));
        inputs.push(u);
        trace.frames.push(x);
    }
    for layer in &params.lstm {
        let mut lt = LayerTrace::default();
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for u in &inputs {
            let g = lstm_gates(layer, u, &h_prev);
            let c: Vec<f64> = (0..h)
                .map(|k| g[h + k] * c_prev[k] + g[k] * g[2 * h + k])
                .collect();
            let hid: Vec<f64> = (0..h).map(|k| g[3 * h + k] * c[k].tanh()).collect();
            lt.gates.push(g);
            lt.cells.push(c.clone());
            lt.hidden.push(hid.clone());
            h_prev = hid;
            c_prev = c;
        }
        lt.inputs = std::mem::replace(&mut inputs, lt.hidden.clone());
        trace.layers.push(lt);
    }
    let mut masks = Vec::with_capacity(t_len * cfg.input_dim);
    let mut scores = Vec::with_capacity(t_len);
    for top in &inputs {
        masks.extend(mask_head(params, top));
        let (acts, s) = noise_head(params, top);
        trace.head_acts.push(acts);
        scores.push(s);
    }
    Ok((
        SequenceOutput {
            masks,
            width: cfg.input_dim,
            noise_scores: scores,
        },
        trace,
    ))
}

/// Runs a whole sequence from a fresh state, layer by layer.
pub fn forward_sequence(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    frames: &FeatureSequence,
    dvec: &DVector,
) -> Result<SequenceOutput> {
    forward_traced(params, cfg, frames, dvec).map(|(out, _)| out)
}

/// Masked value of one cell.
#[inline]
pub fn mask_cell(s: f64, m: f64, variant: FeatureVariant, domain: MaskDomain) -> f64 {
    if !variant.is_log() || domain == MaskDomain::LogCellwise {
        return m * s;
    }
    if m >= 1.0 {
        s
    } else {
        (m * s.exp_m1()).ln_1p()
    }
}

/// Derivative of [`mask_cell`] with respect to the mask value.
#[inline]
pub(crate) fn mask_cell_grad(s: f64, m: f64, variant: FeatureVariant, domain: MaskDomain) -> f64 {
    if !variant.is_log() || domain == MaskDomain::LogCellwise {
        return s;
    }
    let e = s.exp_m1();
    e / (1.0 + m * e)
}

/// Applies a `T x F` mask to features, producing enhanced features.
pub fn apply_mask(
    s_in: &FeatureSequence,
    masks: &[f64],
    domain: MaskDomain,
) -> Result<FeatureSequence> {
    if masks.len() != s_in.as_slice().len() {
        return Err(Error::Shape(format!(
            "{} mask values for {} feature cells",
            masks.len(),
            s_in.as_slice().len()
        )));
    }
    if let Some(m) = masks.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::Range(format!("mask value {m} outside [0, 1]")));
    }
    let data = s_in
        .as_slice()
        .iter()
        .zip(masks)
        .map(|(&s, &m)| mask_cell(s as f64, m, s_in.variant, domain) as f32)
        .collect();
    FeatureSequence::new(
        data,
        s_in.n_frames(),
        s_in.width(),
        s_in.variant,
        s_in.frame_hop_s,
    )
}
