//! Streaming enhancement and proxy evaluation.
//!
//! [`Enhancer`] is the runtime path: samples in, compensated feature frames
//! out, one network step per frame with memory independent of stream
//! length. [`evaluate`] mixes evaluation items under each room/noise
//! condition, runs the enhancer and compares against clean features.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::DVector;
use crate::error::{Error, Result};
use crate::frontend::{extract, FeatureSequence, StreamingExtractor, Waveform};
use crate::masknet::{forward_sequence, forward_step, mask_cell, MaskNetConfig, MaskNetParams, StreamState};
use crate::mixer::{render_mixture, synth_rir, MixSpec, NoiseKind, Room, SNR_HI_DB, SNR_LO_DB};
use crate::suppression::{compensate, next_strength, SuppressionConfig, SuppressionState};

pub const DEFAULT_EPSILON: f64 = 0.05;

/// One output frame of the enhancer.
#[derive(Debug, Clone, Copy)]
pub struct EnhancedFrame<'a> {
    pub input: &'a [f32],
    pub output: &'a [f32],
    pub w: f64,
    pub noise_score: f64,
}

struct FrameProcessor<'a> {
    params: &'a MaskNetParams,
    cfg: &'a MaskNetConfig,
    dvec: &'a DVector,
    suppression: SuppressionConfig,
    state: StreamState,
    supp: SuppressionState,
    enhanced: Vec<f32>,
    output: Vec<f32>,
}

impl FrameProcessor<'_> {
    fn process(&mut self, frame: &[f32]) -> Result<(f64, f64)> {
        let step = forward_step(self.params, self.cfg, &mut self.state, frame, self.dvec)?;
        if !step.noise_score.is_finite() || step.mask.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("network output at frame {}", self.state.frames - 1)));
        }
        let w = next_strength(&self.suppression, &mut self.supp, step.noise_score)?;
        self.state.w_prev = w;
        let variant = self.cfg.variant();
        for ((e, &s), &m) in self.enhanced.iter_mut().zip(frame).zip(&step.mask) {
            *e = mask_cell(s as f64, m, variant, self.cfg.masking) as f32;
        }
        compensate(&self.enhanced, frame, w, &mut self.output)?;
        Ok((w, step.noise_score))
    }
}

/// Streaming waveform-to-enhanced-features pipeline.
pub struct Enhancer<'a> {
    extractor: StreamingExtractor,
    proc: FrameProcessor<'a>,
}

impl<'a> Enhancer<'a> {
    pub fn new(
        params: &'a MaskNetParams,
        cfg: &'a MaskNetConfig,
        dvec: &'a DVector,
        suppression: SuppressionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        params.check(cfg)?;
        suppression.validate()?;
        if dvec.dim() != cfg.dvec_dim {
            return Err(Error::Shape(format!(
                "d-vector dimension {} != model {}",
                dvec.dim(),
                cfg.dvec_dim
            )));
        }
        let supp = SuppressionState::new(&suppression);
        Ok(Enhancer {
            extractor: StreamingExtractor::new(&cfg.features)?,
            proc: FrameProcessor {
                params,
                cfg,
                dvec,
                suppression,
                state: StreamState::new(cfg, supp.w_prev),
                supp,
                enhanced: vec![0.0; cfg.input_dim],
                output: vec![0.0; cfg.input_dim],
            },
        })
    }

    pub fn frames(&self) -> u64 {
        self.proc.state.frames
    }

    pub fn state(&self) -> &StreamState {
        &self.proc.state
    }

    /// Feeds samples; `emit` sees every completed frame.
    pub fn push(&mut self, samples: &[f64], mut emit: impl FnMut(EnhancedFrame<'_>) -> Result<()>) -> Result<()> {
        let proc = &mut self.proc;
        let mut err = None;
        self.extractor.push(samples, |frame| {
            if err.is_none() {
                err = Self::run(proc, frame, &mut emit).err();
            }
        })?;
        err.map_or(Ok(()), Err)
    }

    /// Flushes the feature extractor's trailing frames.
    pub fn finish(&mut self, mut emit: impl FnMut(EnhancedFrame<'_>) -> Result<()>) -> Result<()> {
        let proc = &mut self.proc;
        let mut err = None;
        self.extractor.finish(|frame| {
            if err.is_none() {
                err = Self::run(proc, frame, &mut emit).err();
            }
        })?;
        err.map_or(Ok(()), Err)
    }

    /// Runs already extracted frames through the same per-frame path.
    pub fn push_frame(&mut self, frame: &[f32], mut emit: impl FnMut(EnhancedFrame<'_>) -> Result<()>) -> Result<()> {
        Self::run(&mut self.proc, frame, &mut emit)
    }

    fn run(
        proc: &mut FrameProcessor<'_>,
        frame: &[f32],
        emit: &mut impl FnMut(EnhancedFrame<'_>) -> Result<()>,
    ) -> Result<()> {
        let (w, noise_score) = proc.process(frame)?;
        emit(EnhancedFrame {
            input: frame,
            output: &proc.output,
            w,
            noise_score,
        })
    }
}

/// Output of a whole-sequence enhancement.
#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub features: FeatureSequence,
    pub w: Vec<f64>,
    pub noise_scores: Vec<f64>,
}

/// Batch reference path: extract everything, run the layer-major forward
/// pass, then apply suppression frame by frame.
pub fn enhance_batch(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    dvec: &DVector,
    suppression: SuppressionConfig,
    input: &FeatureSequence,
) -> Result<Enhanced> {
    suppression.validate()?;
    if input.variant != cfg.variant() {
        return Err(Error::Variant {
            expected: cfg.variant().to_string(),
            found: input.variant.to_string(),
        });
    }
    let out = forward_sequence(params, cfg, input, dvec)?;
    let mut supp = SuppressionState::new(&suppression);
    let mut data = Vec::with_capacity(input.as_slice().len());
    let mut ws = Vec::with_capacity(input.n_frames());
    let mut enh = vec![0f32; input.width()];
    let mut res = vec![0f32; input.width()];
    for t in 0..input.n_frames() {
        let score = out.noise_scores[t];
        if !score.is_finite() || out.mask(t).iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("network output at frame {t}")));
        }
        let w = next_strength(&suppression, &mut supp, score)?;
        for ((e, &s), &m) in enh.iter_mut().zip(input.frame(t)).zip(out.mask(t)) {
            *e = mask_cell(s as f64, m, input.variant, cfg.masking) as f32;
        }
        compensate(&enh, input.frame(t), w, &mut res)?;
        data.extend_from_slice(&res);
        ws.push(w);
    }
    Ok(Enhanced {
        features: FeatureSequence::new(data, input.n_frames(), input.width(), input.variant, input.frame_hop_s)?,
        w: ws,
        noise_scores: out.noise_scores,
    })
}

/// Per-frame streaming over precomputed features.
pub fn enhance_streaming(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    dvec: &DVector,
    suppression: SuppressionConfig,
    input: &FeatureSequence,
) -> Result<Enhanced> {
    let mut e = Enhancer::new(params, cfg, dvec, suppression)?;
    let mut data = Vec::with_capacity(input.as_slice().len());
    let mut ws = Vec::new();
    let mut scores = Vec::new();
    for f in input.frames() {
        e.push_frame(f, |fr| {
            data.extend_from_slice(fr.output);
            ws.push(fr.w);
            scores.push(fr.noise_score);
            Ok(())
        })?;
    }
    Ok(Enhanced {
        features: FeatureSequence::new(data, input.n_frames(), input.width(), input.variant, input.frame_hop_s)?,
        w: ws,
        noise_scores: scores,
    })
}

/// Streams a waveform through the enhancer in fixed-size chunks.
pub fn enhance_waveform(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    dvec: &DVector,
    suppression: SuppressionConfig,
    wave: &Waveform,
) -> Result<(Enhanced, FeatureSequence)> {
    let mut e = Enhancer::new(params, cfg, dvec, suppression)?;
    let (mut out, mut inp, mut ws, mut scores) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut sink = |fr: EnhancedFrame<'_>| {
        out.extend_from_slice(fr.output);
        inp.extend_from_slice(fr.input);
        ws.push(fr.w);
        scores.push(fr.noise_score);
        Ok(())
    };
    for chunk in wave.samples.chunks(1600) {
        e.push(chunk, &mut sink)?;
    }
    e.finish(&mut sink)?;
    let n = ws.len();
    let (width, variant, hop) = (cfg.input_dim, cfg.variant(), cfg.features.frame_hop_s());
    Ok((
        Enhanced {
            features: FeatureSequence::new(out, n, width, variant, hop)?,
            w: ws,
            noise_scores: scores,
        },
        FeatureSequence::new(inp, n, width, variant, hop)?,
    ))
}

/// Fractions of cells more than `eps` below / above the clean reference.
pub fn suppression_rates(out: &[f32], clean: &[f32], eps: f64) -> Result<(f64, f64)> {
    if out.len() != clean.len() {
        return Err(Error::Shape("rate operands differ in length".into()));
    }
    if out.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut over, mut under) = (0usize, 0usize);
    for (&o, &c) in out.iter().zip(clean) {
        let (o, c) = (o as f64, c as f64);
        if o < c - eps {
            over += 1;
        } else if o > c + eps {
            under += 1;
        }
    }
    let n = out.len() as f64;
    Ok((over as f64 / n, under as f64 / n))
}

pub fn feature_mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape("MSE operands differ in length".into()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoomCondition {
    Clean,
    Additive,
    Reverb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition {
    pub room: RoomCondition,
    /// Interferer kind; `None` for the clean condition.
    pub noise: Option<NoiseKind>,
}

impl Condition {
    pub fn name(&self) -> String {
        match (self.room, self.noise) {
            (RoomCondition::Clean, _) => "clean".into(),
            (r, Some(n)) => format!(
                "{}/{}",
                if r == RoomCondition::Additive { "additive" } else { "reverb" },
                if n == NoiseKind::Speech { "speech" } else { "nonspeech" }
            ),
            (r, None) => format!("{r:?}").to_lowercase(),
        }
    }
}

/// Expands a list such as `clean,additive,reverb,speech,nonspeech` into the
/// room x noise matrix. Missing room or noise tokens default to all.
pub fn parse_conditions(list: &str) -> Result<Vec<Condition>> {
    let mut rooms = Vec::new();
    let mut noises = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok.to_ascii_lowercase().as_str() {
            "clean" => rooms.push(RoomCondition::Clean),
            "additive" => rooms.push(RoomCondition::Additive),
            "reverb" => rooms.push(RoomCondition::Reverb),
            "speech" => noises.push(NoiseKind::Speech),
            "nonspeech" | "non-speech" => noises.push(NoiseKind::NonSpeech),
            other => return Err(Error::Config(format!("unknown condition '{other}'"))),
        }
    }
    if rooms.is_empty() {
        rooms = vec![RoomCondition::Clean, RoomCondition::Additive, RoomCondition::Reverb];
    }
    if noises.is_empty() {
        noises = vec![NoiseKind::Speech, NoiseKind::NonSpeech];
    }
    let mut out = Vec::new();
    for r in rooms {
        if r == RoomCondition::Clean {
            if !out.iter().any(|c: &Condition| c.room == r) {
                out.push(Condition { room: r, noise: None });
            }
            continue;
        }
        for &n in &noises {
            let c = Condition { room: r, noise: Some(n) };
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Audio for one evaluation item.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub clean: Waveform,
    pub noise: Waveform,
    pub dvec: DVector,
    pub kind: NoiseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub epsilon: f64,
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
    pub rt60_lo_s: f64,
    pub rt60_hi_s: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            epsilon: DEFAULT_EPSILON,
            snr_lo_db: SNR_LO_DB,
            snr_hi_db: SNR_HI_DB,
            rt60_lo_s: 0.1,
            rt60_hi_s: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub items: usize,
    pub frames: usize,
    pub mse_enhanced: f64,
    pub mse_unenhanced: f64,
    pub over_suppression_rate: f64,
    pub under_suppression_rate: f64,
    pub mean_w: f64,
    /// Processing time over audio duration for feature extraction plus
    /// enhancement.
    pub realtime_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epsilon: f64,
    pub suppression: SuppressionConfig,
    pub quantized: bool,
    pub rows: Vec<ConditionRow>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let rates = [r.over_suppression_rate, r.under_suppression_rate, r.mean_w];
            if rates.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Range(format!("{}: rate outside [0, 1]", r.condition)));
            }
            if !(r.mse_enhanced >= 0.0 && r.mse_unenhanced >= 0.0 && r.realtime_factor >= 0.0) {
                return Err(Error::Range(format!("{}: negative or NaN metric", r.condition)));
            }
        }
        Ok(())
    }

    pub fn row(&self, condition: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }
}

#[derive(Debug, Default)]
struct Accum {
    items: usize,
    frames: usize,
    cells: usize,
    se_enh: f64,
    se_raw: f64,
    over: f64,
    under: f64,
    w_sum: f64,
    seconds: f64,
    audio_s: f64,
}

/// Mixture for `item` under `cond`; randomness depends on the seed, the
/// condition index and the item index.
fn condition_spec(opts: &EvalOptions, cond: &Condition, ci: usize, ii: usize, kind: NoiseKind) -> Result<MixSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(((ci as u64) << 32) | ii as u64);
    let snr_db = if opts.snr_lo_db == opts.snr_hi_db {
        opts.snr_lo_db
    } else {
        rng.random_range(opts.snr_lo_db..=opts.snr_hi_db)
    };
    let room = match cond.room {
        RoomCondition::Reverb => Room::Reverb {
            rir: synth_rir(rng.random_range(opts.rt60_lo_s..=opts.rt60_hi_s), crate::synth::RATE, &mut rng)?,
            include_target: true,
        },
        _ => Room::Additive,
    };
    Ok(MixSpec {
        snr_db,
        noise_kind: kind,
        room,
        seed: rng.random(),
    })
}

pub fn evaluate(
    params: &MaskNetParams,
    cfg: &MaskNetConfig,
    items: &[EvalItem],
    conditions: &[Condition],
    suppression: SuppressionConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (ci, cond) in conditions.iter().enumerate() {
        let mut acc = Accum::default();
        for (ii, item) in items.iter().enumerate() {
            let mixture;
            let target = match cond.noise {
                None => {
                    mixture = item.clean.clone();
                    item.clean.clone()
                }
                Some(kind) if kind == item.kind => {
                    let spec = condition_spec(opts, cond, ci, ii, kind)?;
                    let r = render_mixture(&item.clean, &item.noise, &spec)?;
                    mixture = r.mix.mixture;
                    r.target
                }
                Some(_) => continue,
            };
            let clean = extract(&target, &cfg.features)?;
            let start = Instant::now();
            let (enh, noisy) = enhance_waveform(params, cfg, &item.dvec, suppression, &mixture)?;
            acc.seconds += start.elapsed().as_secs_f64();
            acc.audio_s += mixture.duration_s();
            let (o, c, n) = (enh.features.as_slice(), clean.as_slice(), noisy.as_slice());
            let cells = o.len();
            let (over, under) = suppression_rates(o, c, opts.epsilon)?;
            acc.items += 1;
            acc.frames += enh.w.len();
            acc.cells += cells;
            acc.se_enh += feature_mse(o, c)? * cells as f64;
            acc.se_raw += feature_mse(n, c)? * cells as f64;
            acc.over += over * cells as f64;
            acc.under += under * cells as f64;
            acc.w_sum += enh.w.iter().sum::<f64>();
        }
        let cells = acc.cells.max(1) as f64;
        rows.push(ConditionRow {
            condition: cond.name(),
            items: acc.items,
            frames: acc.frames,
            mse_enhanced: acc.se_enh / cells,
            mse_unenhanced: acc.se_raw / cells,
            over_suppression_rate: acc.over / cells,
            under_suppression_rate: acc.under / cells,
            mean_w: if acc.frames > 0 { acc.w_sum / acc.frames as f64 } else { 0.0 },
            realtime_factor: if acc.audio_s > 0.0 { acc.seconds / acc.audio_s } else { 0.0 },
        });
    }
    let report = EvalReport {
        epsilon: opts.epsilon,
        suppression,
        quantized: params.is_quantized(),
        rows,
    };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{FeatureConfig, FeatureVariant};
    use crate::masknet::MaskDomain;
    use crate::synth::ToyCorpus;

    fn cfg() -> MaskNetConfig {
        let features = FeatureConfig {
            variant: FeatureVariant::Filterbank,
            n_mels: 16,
            ..Default::default()
        };
        MaskNetConfig {
            input_dim: 16,
            dvec_dim: 8,
            conv: None,
            lstm_layers: 2,
            lstm_units: 8,
            head_hidden: vec![4],
            features,
            masking: MaskDomain::Linear,
        }
    }

    /// Mask head saturated at 1.
    fn identity(cfg: &MaskNetConfig) -> MaskNetParams {
        let mut p = MaskNetParams::zeros(cfg);
        p.mask_head.bias.data.iter_mut().for_each(|b| *b = 60.0);
        p
    }

    fn items(n: usize) -> Vec<EvalItem> {
        let c = cfg();
        ToyCorpus {
            items: n,
            secs: 1.0,
            seed: 3,
            ..Default::default()
        }
        .items()
        .unwrap()
        .into_iter()
        .map(|it| EvalItem {
            dvec: crate::embed::embed_reference(&it.reference, &c.features, 8).unwrap(),
            clean: it.clean,
            noise: it.noise,
            kind: it.spec.noise_kind,
        })
        .collect()
    }

    #[test]
    fn rates_and_mse() {
        let clean = [1.0f32, 1.0, 1.0, 1.0];
        assert_eq!(suppression_rates(&clean, &clean, 0.05).unwrap(), (0.0, 0.0));
        let out = [0.9f32, 1.2, 1.04, 0.96];
        assert_eq!(suppression_rates(&out, &clean, 0.05).unwrap(), (0.25, 0.25));
        assert!((feature_mse(&out, &clean).unwrap() - (0.01 + 0.04 + 0.0016 + 0.0016) / 4.0).abs() < 1e-6);
    }

    #[test]
    fn streaming_matches_batch_and_w0_is_identity() {
        let c = cfg();
        let p = MaskNetParams::init(&c, 4).unwrap();
        let it = &items(1)[0];
        let feats = extract(&it.clean, &c.features).unwrap();
        for supp in [SuppressionConfig::default(), SuppressionConfig::Fixed { w: 0.7 }] {
            let b = enhance_batch(&p, &c, &it.dvec, supp, &feats).unwrap();
            let s = enhance_streaming(&p, &c, &it.dvec, supp, &feats).unwrap();
            let diff = b
                .features
                .as_slice()
                .iter()
                .zip(s.features.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(diff < 1e-5);
            let (w, inp) = enhance_waveform(&p, &c, &it.dvec, supp, &it.clean).unwrap();
            assert_eq!(inp, feats);
            assert_eq!(w, s);
        }
        let off = enhance_streaming(&p, &c, &it.dvec, SuppressionConfig::Fixed { w: 0.0 }, &feats).unwrap();
        assert_eq!(off.features, feats);
        let id = enhance_streaming(&identity(&c), &c, &it.dvec, SuppressionConfig::Fixed { w: 1.0 }, &feats).unwrap();
        assert_eq!(id.features, feats);
    }

    #[test]
    fn condition_parsing() {
        let all = parse_conditions("clean,additive,reverb,speech,nonspeech").unwrap();
        let names: Vec<String> = all.iter().map(Condition::name).collect();
        assert_eq!(
            names,
            ["clean", "additive/speech", "additive/nonspeech", "reverb/speech", "reverb/nonspeech"]
        );
        assert_eq!(parse_conditions("").unwrap().len(), 5);
        assert_eq!(parse_conditions("additive,nonspeech").unwrap().len(), 1);
        assert!(parse_conditions("outdoor").is_err());
    }

    #[test]
    fn identity_model_leaves_noise_in() {
        let c = cfg();
        let its = items(6);
        let conds = parse_conditions("clean,additive").unwrap();
        let opts = EvalOptions::default();
        let r = evaluate(&identity(&c), &c, &its, &conds, SuppressionConfig::Fixed { w: 1.0 }, &opts).unwrap();
        let clean = r.row("clean").unwrap();
        assert_eq!(clean.over_suppression_rate, 0.0);
        assert_eq!(clean.under_suppression_rate, 0.0);
        assert_eq!(clean.mse_enhanced, 0.0);
        for name in ["additive/speech", "additive/nonspeech"] {
            let row = r.row(name).unwrap();
            assert!(row.items > 0);
            // a band-limited talker only covers part of the spectrum, so
            // about a fifth of the cells carry residual interference
            assert!(row.under_suppression_rate > 0.1, "{row:?}");
            assert!(row.over_suppression_rate < 0.05, "{row:?}");
            assert_eq!(row.mse_enhanced, row.mse_unenhanced);
            assert!(row.realtime_factor > 0.0);
        }
        let again = evaluate(&identity(&c), &c, &its, &conds, SuppressionConfig::Fixed { w: 1.0 }, &opts).unwrap();
        for (a, b) in r.rows.iter().zip(&again.rows) {
            assert_eq!(a.mse_unenhanced, b.mse_unenhanced);
        }
    }
}
