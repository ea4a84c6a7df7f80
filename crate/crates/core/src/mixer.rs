//! Training and evaluation mixtures: target speech plus an interferer at a
//! controlled SNR, optionally through a room impulse response, with
//! per-frame overlapped-speech labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_reference, DVector};
use crate::error::{Error, Result};
use crate::frontend::{extract, rms, FeatureConfig, FeatureSequence, Waveform};

pub const SNR_LO_DB: f64 = 1.0;
pub const SNR_HI_DB: f64 = 10.0;
/// Frames whose interferer RMS exceeds this (full scale 1.0) are labelled overlapped.
pub const SILENCE_RMS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Speech,
    NonSpeech,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "speech" => Ok(NoiseKind::Speech),
            "nonspeech" | "non-speech" => Ok(NoiseKind::NonSpeech),
            other => Err(Error::Format(format!("unknown noise kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Room {
    Additive,
    Reverb {
        rir: Vec<f64>,
        /// Also convolve the target speech, not just the interferer.
        include_target: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub room: Room,
    pub seed: u64,
}

/// Bookkeeping recorded alongside every mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixMeta {
    pub gain: f64,
    pub measured_snr_db: f64,
    pub clipped: bool,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub noisy: FeatureSequence,
    pub clean: FeatureSequence,
    pub dvec: DVector,
    pub overlap_labels: Vec<u8>,
    pub spec: MixSpec,
    pub meta: MixMeta,
}

impl MixtureExample {
    pub fn validate(&self) -> Result<()> {
        if !self.noisy.same_shape(&self.clean) {
            return Err(Error::Shape("noisy and clean features differ in shape".into()));
        }
        if self.overlap_labels.len() != self.noisy.n_frames() {
            return Err(Error::Shape(format!(
                "{} labels for {} frames",
                self.overlap_labels.len(),
                self.noisy.n_frames()
            )));
        }
        Ok(())
    }
}

pub fn sample_snr(lo_db: f64, hi_db: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(lo_db.is_finite() && hi_db.is_finite()) || lo_db > hi_db {
        return Err(Error::Range(format!("invalid SNR interval [{lo_db}, {hi_db}]")));
    }
    if lo_db == hi_db {
        return Ok(lo_db);
    }
    Ok(rng.random_range(lo_db..=hi_db))
}

/// Loops or truncates `noise` to `len` samples, starting at `offset`.
pub fn fit_length(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    noise
        .iter()
        .cycle()
        .skip(offset % noise.len().max(1))
        .take(len)
        .copied()
        .collect()
}

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mix {
    pub mixture: Waveform,
    /// The interferer exactly as added, after gain.
    pub noise: Vec<f64>,
    pub gain: f64,
    pub clipped: bool,
    pub peak: f64,
}

impl Mix {
    pub fn measured_snr_db(&self, clean: &Waveform) -> f64 {
        20.0 * (clean.rms() / rms(&self.noise)).log10()
    }
}

/// `clean + g * noise` with `g` chosen so the addends sit at `snr_db`. The
/// noise is looped or truncated to the clean length. No renormalization:
/// samples beyond full scale are flagged in `clipped`.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mix> {
    clean.validate()?;
    noise.validate()?;
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::Config("clean and noise sample rates differ".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Range(format!("SNR must be finite, got {snr_db}")));
    }
    let fitted = fit_length(&noise.samples, clean.len(), 0);
    let clean_rms = clean.rms();
    let noise_rms = rms(&fitted);
    if clean_rms == 0.0 {
        return Err(Error::Silent("clean"));
    }
    if noise_rms == 0.0 {
        return Err(Error::Silent("noise"));
    }
    let gain = (clean_rms / noise_rms) * 10f64.powf(-snr_db / 20.0);
    let noise: Vec<f64> = fitted.iter().map(|n| gain * n).collect();
    let samples: Vec<f64> = clean.samples.iter().zip(&noise).map(|(c, n)| c + n).collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    Ok(Mix {
        mixture: Waveform {
            samples,
            sample_rate_hz: clean.sample_rate_hz,
        },
        noise,
        gain,
        clipped: peak > 1.0,
        peak,
    })
}

const DIRECT_CONV_MAX_TAPS: usize = 64;

/// Direct-form convolution truncated to `x.len()`.
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            h.iter()
                .take(n + 1)
                .enumerate()
                .map(|(k, hk)| hk * x[n - k])
                .sum()
        })
        .collect()
}

fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b = vec![Complex::new(0.0, 0.0); n];
        b.iter_mut().zip(v).for_each(|(c, &s)| c.re = s);
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / n as f64).collect()
}

/// Convolves with `rir` after scaling it so its largest tap has magnitude 1.
pub fn apply_rir(w: &Waveform, rir: &[f64]) -> Result<Waveform> {
    w.validate()?;
    if rir.is_empty() {
        return Err(Error::Shape("empty impulse response".into()));
    }
    if rir.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("impulse response".into()));
    }
    let peak = rir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::Range("impulse response is all zero".into()));
    }
    let h: Vec<f64> = rir.iter().map(|v| v / peak).collect();
    let samples = if h.len() <= DIRECT_CONV_MAX_TAPS {
        convolve_direct(&w.samples, &h)
    } else {
        convolve_fft(&w.samples, &h)
    };
    Ok(Waveform {
        samples,
        sample_rate_hz: w.sample_rate_hz,
    })
}

/// Amplitude envelope of a synthetic RIR at time `t_s`.
pub fn rir_envelope(t_s: f64, rt60_s: f64) -> f64 {
    (-6.908 * t_s / rt60_s).exp()
}

/// Exponentially decaying Gaussian noise standing in for a simulated room.
pub fn synth_rir(rt60_s: f64, sample_rate_hz: u32, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(0.05..=1.5).contains(&rt60_s) {
        return Err(Error::Range(format!("rt60 {rt60_s} s outside [0.05, 1.5]")));
    }
    let len = (rt60_s * sample_rate_hz as f64).round() as usize;
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let g: f64 = StandardNormal.sample(rng);
            g * rir_envelope(n as f64 / sample_rate_hz as f64, rt60_s)
        })
        .collect();
    taps[0] = 1.0;
    Ok(taps)
}

/// Per-output-frame labels: 1 where speech interference is audible.
pub fn overlap_labels(
    noise: &[f64],
    kind: NoiseKind,
    fcfg: &FeatureConfig,
    n_frames: usize,
) -> Vec<u8> {
    (0..n_frames)
        .map(|t| {
            if kind == NoiseKind::NonSpeech {
                return 0;
            }
            let (a, b) = fcfg.frame_span(t, noise.len());
            u8::from(rms(&noise[a..b]) > SILENCE_RMS)
        })
        .collect()
}

/// Waveforms of one mixture before feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    /// Target as it should come out of enhancement (reverberant when the
    /// room includes the target).
    pub target: Waveform,
    pub mix: Mix,
}

/// Fits the interferer to the target length (the `MixSpec` seed picks the start
/// offset), applies the room and mixes at the requested SNR.
pub fn render_mixture(clean: &Waveform, noise: &Waveform, spec: &MixSpec) -> Result<Rendered> {
    clean.validate()?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset = if noise.len() > clean.len() {
        rng.random_range(0..=noise.len() - clean.len())
    } else {
        0
    };
    let fitted = Waveform {
        samples: fit_length(&noise.samples, clean.len(), offset),
        sample_rate_hz: noise.sample_rate_hz,
    };
    let (target, interferer) = match &spec.room {
        Room::Additive => (clean.clone(), fitted),
        Room::Reverb {
            rir,
            include_target,
        } => {
            let target = if *include_target {
                apply_rir(clean, rir)?
            } else {
                clean.clone()
            };
            (target, apply_rir(&fitted, rir)?)
        }
    };
    let mix = mix_at_snr(&target, &interferer, spec.snr_db)?;
    Ok(Rendered { target, mix })
}

/// Builds one training/eval record. For speech interference the caller must
/// supply audio from a different speaker than `clean`.
pub fn make_example(
    clean: &Waveform,
    noise: &Waveform,
    reference: &Waveform,
    spec: &MixSpec,
    fcfg: &FeatureConfig,
    dvec_dim: usize,
) -> Result<MixtureExample> {
    let Rendered { target, mix } = render_mixture(clean, noise, spec)?;
    let noisy = extract(&mix.mixture, fcfg)?;
    let clean_feats = extract(&target, fcfg)?;
    let labels = overlap_labels(&mix.noise, spec.noise_kind, fcfg, noisy.n_frames());
    let example = MixtureExample {
        noisy,
        clean: clean_feats,
        dvec: embed_reference(reference, fcfg, dvec_dim)?,
        overlap_labels: labels,
        spec: spec.clone(),
        meta: MixMeta {
            gain: mix.gain,
            measured_snr_db: mix.measured_snr_db(&target),
            clipped: mix.clipped,
            peak: mix.peak,
        },
    };
    example.validate()?;
    Ok(example)
}
