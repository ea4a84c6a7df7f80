//! Losses, exact gradients and the training loop.
//!
//! With `d = S_cln - S_enh` the mask loss is the unnormalized sum
//! `sum g(d)^2` where `g(d) = d` for `d <= 0` and `alpha * d` otherwise, so
//! enhanced features that fall below clean (over-suppression) cost `alpha^2`
//! times more. The noise-type head adds `lambda * sum_t max(0, 1 - y_t s_t)`
//! with `y_t = 2 label_t - 1`.
//!
//! Gradients are computed by full-length backpropagation through time over
//! the layer-major forward pass, in f64.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masknet::{
    forward_traced, mask_cell, mask_cell_grad, MaskNetConfig, MaskNetParams, SequenceOutput,
    Tensor, Trace, Weight,
};
use crate::frontend::FeatureSequence;
use crate::mixer::MixtureExample;
use crate::model_io::{self, Checkpoint, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Plain squared error; `alpha` is ignored.
    L2,
    #[default]
    AsymL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    pub noise_head_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::AsymL2,
            alpha: 10.0,
            noise_head_weight: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if !(self.noise_head_weight >= 0.0 && self.noise_head_weight.is_finite()) {
            return Err(Error::Config(format!(
                "noise head weight must be >= 0, got {}",
                self.noise_head_weight
            )));
        }
        Ok(())
    }

    fn effective_alpha(&self) -> f64 {
        match self.kind {
            LossKind::L2 => 1.0,
            LossKind::AsymL2 => self.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            batch_size: 4,
            steps: 300,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("gradient clip norm must be positive".into()));
        }
        Ok(())
    }
}

pub fn g_asym(x: f64, alpha: f64) -> f64 {
    if x <= 0.0 {
        x
    } else {
        alpha * x
    }
}

/// Derivative of `g_asym(d)^2` with respect to `S_enh`; the kink takes the
/// `d <= 0` branch.
fn asym_grad_enh(d: f64, alpha: f64) -> f64 {
    if d > 0.0 {
        -2.0 * alpha * alpha * d
    } else {
        -2.0 * d
    }
}

fn check_pair(a: &FeatureSequence, b: &FeatureSequence) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "loss operands {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn l2_loss(s_cln: &FeatureSequence, s_enh: &FeatureSequence) -> Result<f64> {
    check_pair(s_cln, s_enh)?;
    Ok(s_cln
        .as_slice()
        .iter()
        .zip(s_enh.as_slice())
        .map(|(&c, &e)| {
            let d = c as f64 - e as f64;
            d * d
        })
        .sum())
}

pub fn asym_l2_loss(s_cln: &FeatureSequence, s_enh: &FeatureSequence, alpha: f64) -> Result<f64> {
    check_pair(s_cln, s_enh)?;
    if !(alpha >= 1.0) {
        return Err(Error::Range(format!("alpha must be >= 1, got {alpha}")));
    }
    Ok(s_cln
        .as_slice()
        .iter()
        .zip(s_enh.as_slice())
        .map(|(&c, &e)| {
            let g = g_asym(c as f64 - e as f64, alpha);
            g * g
        })
        .sum())
}

pub fn hinge_loss(score: f64, label: u8) -> f64 {
    let y = 2.0 * label as f64 - 1.0;
    (1.0 - y * score).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub asym: f64,
    pub hinge: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.asym += o.asym;
        self.hinge += o.hinge;
    }

    fn scale(&mut self, k: f64) {
        self.total *= k;
        self.asym *= k;
        self.hinge *= k;
    }
}

fn check_example(cfg: &MaskNetConfig, ex: &MixtureExample) -> Result<()> {
    check_pair(&ex.noisy, &ex.clean)?;
    if ex.noisy.variant != cfg.variant() {
        return Err(Error::Variant {
            expected: cfg.variant().to_string(),
            found: ex.noisy.variant.to_string(),
        });
    }
    if ex.overlap_labels.len() != ex.noisy.n_frames() {
        return Err(Error::Shape(format!(
            "{} labels for {} frames",
            ex.overlap_labels.len(),
            ex.noisy.n_frames()
        )));
    }
    Ok(())
}

/// Mask and hinge loss of network outputs on one example. Enhanced values are
/// kept in f64 so the loss is exactly differentiable.
pub fn total_loss(
    cfg: &MaskNetConfig,
    ex: &MixtureExample,
    out: &SequenceOutput,
    loss: &LossConfig,
) -> Result<LossParts> {
    check_example(cfg, ex)?;
    if out.masks.len() != ex.noisy.as_slice().len() || out.noise_scores.len() != ex.noisy.n_frames() {
        return Err(Error::Shape("network outputs do not match the example".into()));
    }
    let alpha = loss.effective_alpha();
    let variant = ex.noisy.variant;
    let asym: f64 = ex
        .noisy
        .as_slice()
        .iter()
        .zip(ex.clean.as_slice())
        .zip(&out.masks)
        .map(|((&s, &c), &m)| {
            let g = g_asym(c as f64 - mask_cell(s as f64, m, variant, cfg.masking), alpha);
            g * g
        })
        .sum();
    let hinge: f64 = out
        .noise_scores
        .iter()
        .zip(&ex.overlap_labels)
        .map(|(&s, &l)| hinge_loss(s, l))
        .sum();
    Ok(LossParts {
        total: asym + loss.noise_head_weight * hinge,
        asym,
        hinge,
    })
}

/// Runs the network and returns the loss on one example.
pub fn example_loss(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    ex: &MixtureExample,
    loss: &LossConfig,
) -> Result<LossParts> {
    let (out, _) = forward_traced(params, cfg, &ex.noisy, &ex.dvec)?;
    total_loss(cfg, ex, &out, loss)
}

/// `g += a b^T` for a `[rows, cols]` tensor.
fn outer_add(g: &mut Tensor, a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (row, &ai) in g.data.chunks_exact_mut(cols).zip(a) {
        if ai != 0.0 {
            row.iter_mut().zip(b).for_each(|(r, &bj)| *r += ai * bj);
        }
    }
}

/// `W^T a` for a `[rows, cols]` matrix.
fn matvec_t(w: &Tensor, a: &[f64]) -> Vec<f64> {
    let cols = w.shape[1];
    let mut out = vec![0.0; cols];
    for (row, &ai) in w.data.chunks_exact(cols).zip(a) {
        if ai != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, &r)| *o += ai * r);
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Loss and gradient of one example; the gradient has the layout of
/// [`MaskNetParams::zeros`].
pub fn backward(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    ex: &MixtureExample,
    loss: &LossConfig,
) -> Result<(LossParts, MaskNetParams)> {
    if params.is_quantized() {
        return Err(Error::NotTrainable);
    }
    loss.validate()?;
    check_example(cfg, ex)?;
    let (out, trace) = forward_traced(params, cfg, &ex.noisy, &ex.dvec)?;
    let parts = total_loss(cfg, ex, &out, loss)?;
    let grads = backward_from_trace(params, cfg, ex, loss, &out, &trace)?;
    Ok((parts, grads))
}

fn backward_from_trace(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    ex: &MixtureExample,
    loss: &LossConfig,
    out: &SequenceOutput,
    trace: &Trace,
) -> Result<MaskNetParams> {
    let mut grads = MaskNetParams::zeros(cfg);
    let t_len = ex.noisy.n_frames();
    let f_dim = cfg.input_dim;
    let h = cfg.lstm_units;
    let alpha = loss.effective_alpha();
    let variant = ex.noisy.variant;
    let top = &trace.layers.last().expect("at least one layer").hidden;

    // heads
    let w_mask = params.mask_head.weight.float()?;
    let w_out = params.noise_out.weight.float()?;
    let mut dh_top = vec![vec![0.0; h]; t_len];
    for t in 0..t_len {
        let s_in = ex.noisy.frame(t);
        let s_cln = ex.clean.frame(t);
        let m = out.mask(t);
        let dz: Vec<f64> = (0..f_dim)
            .map(|f| {
                let s = s_in[f] as f64;
                let d = s_cln[f] as f64 - mask_cell(s, m[f], variant, cfg.masking);
                asym_grad_enh(d, alpha)
                    * mask_cell_grad(s, m[f], variant, cfg.masking)
                    * m[f]
                    * (1.0 - m[f])
            })
            .collect();
        outer_add(grads.mask_head.weight.float_mut()?, &dz, &top[t]);
        add_into(&mut grads.mask_head.bias.data, &dz);
        add_into(&mut dh_top[t], &matvec_t(w_mask, &dz));

        let y = 2.0 * ex.overlap_labels[t] as f64 - 1.0;
        let ds = if 1.0 - y * out.noise_scores[t] > 0.0 {
            -loss.noise_head_weight * y
        } else {
            0.0
        };
        if ds == 0.0 {
            continue;
        }
        let acts = &trace.head_acts[t];
        let last = acts.last().unwrap_or(&top[t]);
        outer_add(grads.noise_out.weight.float_mut()?, &[ds], last);
        grads.noise_out.bias.data[0] += ds;
        let mut da: Vec<f64> = w_out.data.iter().map(|w| w * ds).collect();
        for k in (0..acts.len()).rev() {
            let a = &acts[k];
            let dz: Vec<f64> = da.iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect();
            let prev = if k == 0 { &top[t] } else { &acts[k - 1] };
            outer_add(grads.noise_hidden[k].weight.float_mut()?, &dz, prev);
            add_into(&mut grads.noise_hidden[k].bias.data, &dz);
            da = matvec_t(params.noise_hidden[k].weight.float()?, &dz);
        }
        add_into(&mut dh_top[t], &da);
    }

    // LSTM stack, top down
    let mut dh_above = dh_top;
    for (l, layer) in params.lstm.iter().enumerate().rev() {
        let lt = &trace.layers[l];
        let w_in = layer.w_input.float()?;
        let w_rec = layer.w_recurrent.float()?;
        let mut d_inputs = vec![Vec::new(); t_len];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zero = vec![0.0; h];
        for t in (0..t_len).rev() {
            let g = &lt.gates[t];
            let c = &lt.cells[t];
            let c_prev = if t > 0 { &lt.cells[t - 1] } else { &zero };
            let h_prev = if t > 0 { &lt.hidden[t - 1] } else { &zero };
            let mut dz = vec![0.0; 4 * h];
            for k in 0..h {
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = c[k].tanh();
                let dh = dh_above[t][k] + dh_next[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * gg * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let gl = &mut grads.lstm[l];
            outer_add(gl.w_input.float_mut()?, &dz, &lt.inputs[t]);
            outer_add(gl.w_recurrent.float_mut()?, &dz, h_prev);
            add_into(&mut gl.bias.data, &dz);
            dh_next = matvec_t(w_rec, &dz);
            if l > 0 || params.conv.is_some() {
                d_inputs[t] = matvec_t(w_in, &dz);
            }
        }
        dh_above = d_inputs;
    }

    // frequency conv
    if let (Some(conv), Some(gconv)) = (&params.conv, &mut grads.conv) {
        let kernel = conv.weight.float()?;
        let (channels, width) = (kernel.shape[0], kernel.shape[1]);
        let half = width / 2;
        let gk = gconv.weight.float_mut()?;
        for t in 0..t_len {
            let x = &trace.frames[t];
            let pre = &trace.conv_pre[t];
            for c in 0..channels {
                for i in 0..f_dim {
                    let idx = c * f_dim + i;
                    if pre[idx] <= 0.0 {
                        continue;
                    }
                    let dz = dh_above[t][idx];
                    gconv.bias.data[c] += dz;
                    for j in 0..width {
                        let src = i + j;
                        if src >= half && src - half < f_dim {
                            gk.data[c * width + j] += dz * x[src - half];
                        }
                    }
                }
            }
        }
    }
    Ok(grads)
}

/// Sum of squares over all gradient tensors.
fn global_norm(g: &MaskNetParams) -> Result<f64> {
    Ok(g.tensors()?
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt())
}

fn accumulate(acc: &mut MaskNetParams, g: &MaskNetParams) -> Result<()> {
    for (a, b) in acc.tensors_mut()?.into_iter().zip(g.tensors()?) {
        add_into(&mut a.data, &b.data);
    }
    Ok(())
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub asym: f64,
    pub hinge: f64,
    pub grad_norm: f64,
}

/// Example indices used at `step`: consecutive slices of a per-epoch
/// shuffle, so any step can be reproduced from the seed alone.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for k in 0..batch_size as u64 {
        let global = step * batch_size as u64 + k;
        let epoch = global / n as u64;
        let pos = (global % n as u64) as usize;
        if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[pos]);
    }
    out
}

/// Optimizer state plus parameters; one [`Trainer::step`] per batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: MaskNetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub params: MaskNetParams,
    /// Completed steps.
    pub step: u64,
    pub adam_m: MaskNetParams,
    pub adam_v: MaskNetParams,
}

impl Trainer {
    /// Fresh run with parameters initialized from the training seed.
    pub fn new(cfg: &MaskNetConfig, loss: LossConfig, train: TrainConfig) -> Result<Self> {
        let params = MaskNetParams::init(cfg, train.seed)?;
        Self::resume(cfg, loss, train, params, 0, None)
    }

    /// Continues from saved parameters and optimizer moments.
    pub fn resume(
        cfg: &MaskNetConfig,
        loss: LossConfig,
        train: TrainConfig,
        params: MaskNetParams,
        step: u64,
        moments: Option<(MaskNetParams, MaskNetParams)>,
    ) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        train.validate()?;
        if params.is_quantized() {
            return Err(Error::NotTrainable);
        }
        params.check(cfg)?;
        let (adam_m, adam_v) = match moments {
            Some((m, v)) => {
                m.check(cfg)?;
                v.check(cfg)?;
                (m, v)
            }
            None => (MaskNetParams::zeros(cfg), MaskNetParams::zeros(cfg)),
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            loss,
            train,
            params,
            step,
            adam_m,
            adam_v,
        })
    }

    /// Mean loss and gradient over `batch`, reduced in index order.
    pub fn batch_gradient(&self, batch: &[&MixtureExample]) -> Result<(LossParts, MaskNetParams)> {
        let per: Vec<Result<(LossParts, MaskNetParams)>> = batch
            .par_iter()
            .map(|ex| backward(&self.params, &self.cfg, ex, &self.loss))
            .collect();
        let mut parts = LossParts::default();
        let mut grad = MaskNetParams::zeros(&self.cfg);
        for r in per {
            let (p, g) = r?;
            parts.add(&p);
            accumulate(&mut grad, &g)?;
        }
        let k = 1.0 / batch.len() as f64;
        parts.scale(k);
        for t in grad.tensors_mut()? {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
        Ok((parts, grad))
    }

    pub fn step(&mut self, data: &[MixtureExample]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let idx = batch_indices(data.len(), self.train.batch_size, self.train.seed, self.step);
        let batch: Vec<&MixtureExample> = idx.iter().map(|&i| &data[i]).collect();
        let (parts, mut grad) = self.batch_gradient(&batch)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step)));
        }
        let norm = global_norm(&grad)?;
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
        }
        if norm > self.train.clip_norm {
            let k = self.train.clip_norm / norm;
            for t in grad.tensors_mut()? {
                t.data.iter_mut().for_each(|v| *v *= k);
            }
        }
        self.apply(&grad)?;
        let rec = StepRecord {
            step: self.step,
            loss: parts.total,
            asym: parts.asym,
            hinge: parts.hinge,
            grad_norm: norm,
        };
        self.step += 1;
        Ok(rec)
    }

    fn apply(&mut self, grad: &MaskNetParams) -> Result<()> {
        let lr = self.train.learning_rate;
        let grads = grad.tensors()?;
        let params = self.params.tensors_mut()?;
        match self.train.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    p.data.iter_mut().zip(&g.data).for_each(|(p, g)| *p -= lr * g);
                }
            }
            Optimizer::Adam => {
                let t = (self.step + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let ms = self.adam_m.tensors_mut()?;
                let vs = self.adam_v.tensors_mut()?;
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
                    for k in 0..p.data.len() {
                        let gk = g.data[k];
                        m.data[k] = ADAM_BETA1 * m.data[k] + (1.0 - ADAM_BETA1) * gk;
                        v.data[k] = ADAM_BETA2 * v.data[k] + (1.0 - ADAM_BETA2) * gk * gk;
                        p.data[k] -= lr * (m.data[k] / c1) / ((v.data[k] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs until `train.steps` steps have completed in total.
    pub fn run(
        &mut self,
        data: &[MixtureExample],
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<Vec<StepRecord>> {
        let mut history = Vec::new();
        while self.step < self.train.steps {
            let rec = self.step(data)?;
            on_step(&rec);
            history.push(rec);
        }
        Ok(history)
    }
}

impl Trainer {
    /// `VFM1` bytes holding parameters, step and Adam moments.
    pub fn encode_checkpoint(&self) -> Result<Vec<u8>> {
        let mut opt = Vec::new();
        for (prefix, moments) in [("m.", &self.adam_m), ("v.", &self.adam_v)] {
            for ((name, _), t) in moments.entries().into_iter().zip(moments.tensors()?) {
                opt.push((format!("{prefix}{name}"), t));
            }
        }
        model_io::encode(
            &self.cfg,
            &self.params,
            Some(TrainState {
                step: self.step,
                seed: self.train.seed,
            }),
            &opt,
        )
    }

    /// Resumes from a decoded checkpoint. Files without optimizer records
    /// (plain models) restart the moments at zero.
    pub fn from_checkpoint(ck: Checkpoint, loss: LossConfig, train: TrainConfig) -> Result<Self> {
        let cfg = ck.header.config;
        let step = ck.header.train_state.map_or(0, |s| s.step);
        let moments = if ck.optimizer.is_empty() {
            None
        } else {
            let split = |prefix: &str| -> Result<MaskNetParams> {
                let named: HashMap<String, Weight> = ck
                    .optimizer
                    .iter()
                    .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), Weight::Float(t.clone()))))
                    .collect();
                MaskNetParams::from_named(&cfg, named)
            };
            Some((split("m.")?, split("v.")?))
        };
        Self::resume(&cfg, loss, train, ck.params, step, moments)
    }
}

pub struct TrainOutput {
    pub params: MaskNetParams,
    pub history: Vec<StepRecord>,
}

pub fn train(
    data: &[MixtureExample],
    cfg: &MaskNetConfig,
    loss: &LossConfig,
    train: &TrainConfig,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg, *loss, *train)?;
    let history = trainer.run(data, |_| {})?;
    Ok(TrainOutput {
        params: trainer.params,
        history,
    })
}
