//! Waveform to feature conversion.
//!
//! Three feature variants are produced, all time-major with one row per
//! frame: STFT magnitudes (`n_fft/2 + 1` bins), log-mel filterbank energies
//! compressed with `ln(1 + x)`, and stacked log-mel frames consumed at a
//! subsampled rate. The batch functions and [`StreamingExtractor`] share the
//! same per-frame kernels, so streamed features are bit-identical to batch
//! features.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        let w = Waveform {
            samples,
            sample_rate_hz,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::TooShort { len: 0, needed: 1 });
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureVariant {
    FftMagnitude,
    Filterbank,
    StackedFilterbank,
}

impl FeatureVariant {
    pub fn tag(self) -> u32 {
        match self {
            FeatureVariant::FftMagnitude => 0,
            FeatureVariant::Filterbank => 1,
            FeatureVariant::StackedFilterbank => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(FeatureVariant::FftMagnitude),
            1 => Ok(FeatureVariant::Filterbank),
            2 => Ok(FeatureVariant::StackedFilterbank),
            t => Err(Error::Format(format!("unknown feature variant tag {t}"))),
        }
    }

    /// Log-compressed variants store `ln(1 + energy)`.
    pub fn is_log(self) -> bool {
        !matches!(self, FeatureVariant::FftMagnitude)
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureVariant::FftMagnitude => "fft",
            FeatureVariant::Filterbank => "filterbank",
            FeatureVariant::StackedFilterbank => "stacked",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fft" | "fft_magnitude" | "fftmagnitude" => Ok(FeatureVariant::FftMagnitude),
            "filterbank" | "fbank" => Ok(FeatureVariant::Filterbank),
            "stacked" | "stacked_filterbank" | "stackedfilterbank" => {
                Ok(FeatureVariant::StackedFilterbank)
            }
            other => Err(Error::Config(format!("unknown feature variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub variant: FeatureVariant,
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub n_mels: usize,
    pub stack: usize,
    pub stride: usize,
    pub mel_fmin_hz: f64,
    pub mel_fmax_hz: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            variant: FeatureVariant::StackedFilterbank,
            sample_rate_hz: 16000,
            n_fft: 1024,
            window_ms: 25,
            hop_ms: 10,
            n_mels: 128,
            stack: 4,
            stride: 4,
            mel_fmin_hz: 125.0,
            mel_fmax_hz: 7500.0,
        }
    }
}

impl FeatureConfig {
    pub fn with_variant(variant: FeatureVariant) -> Self {
        FeatureConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return bad("n_fft must be a power of two");
        }
        if self.stack == 0 || self.stride == 0 {
            return bad("stack and stride must be at least 1");
        }
        if self.n_mels == 0 || self.n_mels >= self.n_bins() {
            return bad("n_mels must be in [1, n_fft/2 + 1)");
        }
        if self.sample_rate_hz == 0 || self.hop_samples() == 0 || self.window_samples() == 0 {
            return bad("window and hop must cover at least one sample");
        }
        if self.window_samples() > self.n_fft {
            return bad("window longer than n_fft");
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.mel_fmin_hz >= 0.0 && self.mel_fmin_hz < self.mel_fmax_hz && self.mel_fmax_hz <= nyquist)
        {
            return bad("mel range must satisfy 0 <= fmin < fmax <= nyquist");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms as usize * self.sample_rate_hz as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms as usize * self.sample_rate_hz as usize) / 1000
    }

    /// Width of an output frame for the configured variant.
    pub fn width(&self) -> usize {
        match self.variant {
            FeatureVariant::FftMagnitude => self.n_bins(),
            FeatureVariant::Filterbank => self.n_mels,
            FeatureVariant::StackedFilterbank => self.n_mels * self.stack,
        }
    }

    pub fn frame_hop_s(&self) -> f64 {
        let base = self.hop_samples() as f64 / self.sample_rate_hz as f64;
        match self.variant {
            FeatureVariant::StackedFilterbank => base * self.stride as f64,
            _ => base,
        }
    }

    /// Number of STFT frames produced from `len` samples.
    pub fn base_frames(&self, len: usize) -> usize {
        let win = self.window_samples();
        if len < win {
            0
        } else {
            1 + (len - win) / self.hop_samples()
        }
    }

    /// Number of output frames for the configured variant.
    pub fn output_frames(&self, len: usize) -> usize {
        let t = self.base_frames(len);
        match self.variant {
            FeatureVariant::StackedFilterbank => t.div_ceil(self.stride),
            _ => t,
        }
    }

    /// Sample span `[start, end)` covered by output frame `t`, clamped to `len`.
    pub fn frame_span(&self, t: usize, len: usize) -> (usize, usize) {
        let hop = self.hop_samples();
        let win = self.window_samples();
        let (first, last) = match self.variant {
            FeatureVariant::StackedFilterbank => {
                let n = self.base_frames(len).max(1);
                let first = (t * self.stride).min(n - 1);
                let last = (t * self.stride + self.stack - 1).min(n - 1);
                (first, last)
            }
            _ => (t, t),
        };
        let start = (first * hop).min(len);
        let end = (last * hop + win).min(len);
        (start, end)
    }
}

/// Time-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f32>,
    n_frames: usize,
    width: usize,
    pub variant: FeatureVariant,
    pub frame_hop_s: f64,
}

impl FeatureSequence {
    pub fn new(
        data: Vec<f32>,
        n_frames: usize,
        width: usize,
        variant: FeatureVariant,
        frame_hop_s: f64,
    ) -> Result<Self> {
        if data.len() != n_frames * width {
            return Err(Error::Shape(format!(
                "{} values cannot form {n_frames} x {width}",
                data.len()
            )));
        }
        Ok(FeatureSequence {
            data,
            n_frames,
            width,
            variant,
            frame_hop_s,
        })
    }

    pub fn zeros(n_frames: usize, width: usize, variant: FeatureVariant, frame_hop_s: f64) -> Self {
        FeatureSequence {
            data: vec![0.0; n_frames * width],
            n_frames,
            width,
            variant,
            frame_hop_s,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.width)
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.width.max(1)).take(self.n_frames)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &FeatureSequence) -> bool {
        self.shape() == other.shape() && self.variant == other.variant
    }

    fn require_variant(&self, v: FeatureVariant) -> Result<()> {
        if self.variant != v {
            return Err(Error::Variant {
                expected: v.to_string(),
                found: self.variant.to_string(),
            });
        }
        Ok(())
    }
}

fn periodic_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Windowed magnitude spectrum of single frames.
#[derive(Clone)]
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    n_fft: usize,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("window", &self.window.len())
            .finish()
    }
}

impl Stft {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            fft: planner.plan_fft_forward(cfg.n_fft),
            window: periodic_hann(cfg.window_samples()),
            n_fft: cfg.n_fft,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Writes `n_fft/2 + 1` magnitudes of `samples[..window_len]` into `out`.
    pub fn magnitudes(&self, samples: &[f64], out: &mut [f32]) {
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for ((b, s), w) in buf.iter_mut().zip(samples).zip(&self.window) {
            b.re = s * w;
        }
        self.fft.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.norm() as f32;
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
struct SparseFilter {
    start: usize,
    weights: Vec<f64>,
}

/// Triangular mel filters over STFT bins, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    filters: Vec<SparseFilter>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_bins = cfg.n_bins();
        let lo = hz_to_mel(cfg.mel_fmin_hz);
        let hi = hz_to_mel(cfg.mel_fmax_hz);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
        let dense: Vec<Vec<f64>> = edges
            .windows(3)
            .map(|e| {
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - e[0]) / (e[1] - e[0]);
                        let down = (e[2] - f) / (e[2] - e[1]);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self::from_dense(&dense, n_bins)
    }

    /// Builds a filterbank from an explicit `n_filters x n_bins` weight matrix.
    pub fn from_dense(weights: &[Vec<f64>], n_bins: usize) -> Self {
        let filters = weights
            .iter()
            .map(|row| {
                let start = row.iter().position(|&w| w != 0.0).unwrap_or(0);
                let end = row.iter().rposition(|&w| w != 0.0).map_or(start, |e| e + 1);
                SparseFilter {
                    start,
                    weights: row[start..end].to_vec(),
                }
            })
            .collect();
        MelFilterbank { filters, n_bins }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    /// Projects squared magnitudes through the filters and applies `ln(1 + x)`.
    pub fn project(&self, magnitudes: &[f32], out: &mut [f32]) {
        for (o, filt) in out.iter_mut().zip(&self.filters) {
            let e: f64 = filt
                .weights
                .iter()
                .zip(&magnitudes[filt.start..])
                .map(|(w, &m)| {
                    let m = m as f64;
                    w * m * m
                })
                .sum();
            *o = e.ln_1p() as f32;
        }
    }
}

fn check_rate(w: &Waveform, cfg: &FeatureConfig) -> Result<()> {
    w.validate()?;
    if w.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::Config(format!(
            "waveform rate {} Hz does not match feature config {} Hz",
            w.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    Ok(())
}

/// STFT magnitudes with a periodic Hann window zero-padded to `n_fft`.
pub fn stft_magnitude(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    check_rate(w, cfg)?;
    let win = cfg.window_samples();
    let n_frames = cfg.base_frames(w.len());
    if n_frames == 0 {
        return Err(Error::TooShort {
            len: w.len(),
            needed: win,
        });
    }
    let stft = Stft::new(cfg);
    let bins = cfg.n_bins();
    let hop = cfg.hop_samples();
    let mut data = vec![0f32; n_frames * bins];
    for (t, row) in data.chunks_exact_mut(bins).enumerate() {
        stft.magnitudes(&w.samples[t * hop..t * hop + win], row);
    }
    FeatureSequence::new(
        data,
        n_frames,
        bins,
        FeatureVariant::FftMagnitude,
        hop as f64 / cfg.sample_rate_hz as f64,
    )
}

pub fn mel_filterbank(s: &FeatureSequence, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    s.require_variant(FeatureVariant::FftMagnitude)?;
    if s.width() != cfg.n_bins() {
        return Err(Error::Shape(format!(
            "expected {} bins, found {}",
            cfg.n_bins(),
            s.width()
        )));
    }
    apply_filterbank(s, &MelFilterbank::new(cfg))
}

/// Applies an arbitrary filterbank to an STFT magnitude sequence.
pub fn apply_filterbank(s: &FeatureSequence, bank: &MelFilterbank) -> Result<FeatureSequence> {
    s.require_variant(FeatureVariant::FftMagnitude)?;
    if s.width() != bank.n_bins {
        return Err(Error::Shape(format!(
            "filterbank expects {} bins, found {}",
            bank.n_bins,
            s.width()
        )));
    }
    let n = bank.n_filters();
    let mut data = vec![0f32; s.n_frames() * n];
    for (src, dst) in s.frames().zip(data.chunks_exact_mut(n.max(1))) {
        bank.project(src, dst);
    }
    FeatureSequence::new(
        data,
        s.n_frames(),
        n,
        FeatureVariant::Filterbank,
        s.frame_hop_s,
    )
}

/// Concatenates `stack` consecutive frames every `stride` frames. Trailing
/// stacks that run past the end repeat the final frame.
pub fn stack_frames(s: &FeatureSequence, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    if cfg.stack == 0 || cfg.stride == 0 {
        return Err(Error::Config("stack and stride must be at least 1".into()));
    }
    s.require_variant(FeatureVariant::Filterbank)?;
    if s.n_frames() == 0 {
        return Err(Error::Shape("cannot stack an empty sequence".into()));
    }
    let t_in = s.n_frames();
    let t_out = t_in.div_ceil(cfg.stride);
    let width = s.width() * cfg.stack;
    let mut data = Vec::with_capacity(t_out * width);
    for t in 0..t_out {
        for k in 0..cfg.stack {
            data.extend_from_slice(s.frame((t * cfg.stride + k).min(t_in - 1)));
        }
    }
    FeatureSequence::new(
        data,
        t_out,
        width,
        FeatureVariant::StackedFilterbank,
        s.frame_hop_s * cfg.stride as f64,
    )
}

pub fn extract(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let mag = stft_magnitude(w, cfg)?;
    match cfg.variant {
        FeatureVariant::FftMagnitude => Ok(mag),
        FeatureVariant::Filterbank => mel_filterbank(&mag, cfg),
        FeatureVariant::StackedFilterbank => stack_frames(&mel_filterbank(&mag, cfg)?, cfg),
    }
}

/// Incremental feature extraction over a sample stream.
///
/// Memory is bounded by one analysis window plus one stack of frames,
/// independent of stream length. Output is bit-identical to [`extract`]
/// on the concatenated input.
#[derive(Debug)]
pub struct StreamingExtractor {
    cfg: FeatureConfig,
    stft: Stft,
    mel: Option<MelFilterbank>,
    pending: VecDeque<f64>,
    mag: Vec<f32>,
    /// Filterbank frames not yet fully consumed by stacking.
    history: VecDeque<Vec<f32>>,
    /// Index of the first frame in `history`.
    history_start: usize,
    base_emitted: usize,
    next_stack: usize,
    samples_seen: usize,
    /// Samples to drop before the next window when hop exceeds the window.
    skip: usize,
}

impl StreamingExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let mel = cfg.variant.is_log().then(|| MelFilterbank::new(cfg));
        Ok(StreamingExtractor {
            cfg: cfg.clone(),
            stft: Stft::new(cfg),
            mel,
            pending: VecDeque::with_capacity(cfg.window_samples() * 2),
            mag: vec![0.0; cfg.n_bins()],
            history: VecDeque::new(),
            history_start: 0,
            base_emitted: 0,
            next_stack: 0,
            samples_seen: 0,
            skip: 0,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    /// Feeds samples and calls `emit` for every completed output frame.
    pub fn push(&mut self, samples: &[f64], mut emit: impl FnMut(&[f32])) -> Result<()> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "stream sample {}",
                self.samples_seen + i
            )));
        }
        self.samples_seen += samples.len();
        let win = self.cfg.window_samples();
        let hop = self.cfg.hop_samples();
        let mut frame = vec![0f64; win];
        for &s in samples {
            if self.skip > 0 {
                self.skip -= 1;
                continue;
            }
            self.pending.push_back(s);
            if self.pending.len() == win {
                for (f, p) in frame.iter_mut().zip(&self.pending) {
                    *f = *p;
                }
                self.base_frame(&frame, &mut emit);
                for _ in 0..hop.min(win) {
                    self.pending.pop_front();
                }
                self.skip = hop.saturating_sub(win);
            }
        }
        Ok(())
    }

    fn base_frame(&mut self, window: &[f64], emit: &mut impl FnMut(&[f32])) {
        self.stft.magnitudes(window, &mut self.mag);
        self.base_emitted += 1;
        match (self.cfg.variant, &self.mel) {
            (FeatureVariant::FftMagnitude, _) | (_, None) => emit(&self.mag),
            (FeatureVariant::Filterbank, Some(mel)) => {
                let mut out = vec![0f32; self.cfg.n_mels];
                mel.project(&self.mag, &mut out);
                emit(&out);
            }
            (FeatureVariant::StackedFilterbank, Some(mel)) => {
                let mut out = vec![0f32; self.cfg.n_mels];
                mel.project(&self.mag, &mut out);
                self.history.push_back(out);
                self.drain_stacks(false, emit);
            }
        }
    }

    fn drain_stacks(&mut self, finishing: bool, emit: &mut impl FnMut(&[f32])) {
        let (stack, stride) = (self.cfg.stack, self.cfg.stride);
        let total = self.base_emitted;
        let mut out = Vec::with_capacity(self.cfg.n_mels * stack);
        loop {
            let first = self.next_stack * stride;
            let complete = first + stack <= total;
            if !(complete || (finishing && first < total)) {
                break;
            }
            out.clear();
            for k in 0..stack {
                let idx = (first + k).min(total - 1) - self.history_start;
                out.extend_from_slice(&self.history[idx]);
            }
            emit(&out);
            self.next_stack += 1;
            // frames before the next stack start are no longer needed, but the
            // final frame is kept for padding
            let keep_from = (self.next_stack * stride).min(total - 1);
            while self.history_start < keep_from && !self.history.is_empty() {
                self.history.pop_front();
                self.history_start += 1;
            }
        }
    }

    /// Flushes trailing partial stacks. Errors when the stream never filled
    /// a single analysis window.
    pub fn finish(&mut self, mut emit: impl FnMut(&[f32])) -> Result<()> {
        if self.base_emitted == 0 {
            return Err(Error::TooShort {
                len: self.samples_seen,
                needed: self.cfg.window_samples(),
            });
        }
        if self.cfg.variant == FeatureVariant::StackedFilterbank {
            self.drain_stacks(true, &mut emit);
        }
        Ok(())
    }
}
