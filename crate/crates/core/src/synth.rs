//! Synthetic audio fixtures: band-limited "speakers" with syllabic on/off
//! envelopes and stationary non-speech noises. Used by tests, benchmarks and
//! the `synth` command to produce a toy corpus without external data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::frontend::{FeatureConfig, Waveform};
use crate::mixer::{make_example, synth_rir, MixSpec, MixtureExample, NoiseKind, Room, SNR_HI_DB, SNR_LO_DB};

pub const RATE: u32 = 16000;

fn gaussian(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Zeroes all spectral content outside `[lo_hz, hi_hz]`.
fn band_limit(x: &mut [f64], lo_hz: f64, hi_hz: f64) {
    let n = x.len();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * RATE as f64 / n as f64;
        if f < lo_hz || f > hi_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    ifft.process(&mut buf);
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re / n as f64;
    }
}

fn set_rms(x: &mut [f64], target: f64) {
    let r = crate::frontend::rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / r);
    }
}

/// Stationary Gaussian noise restricted to a frequency band, scaled to `rms`.
pub fn band_noise(secs: f64, lo_hz: f64, hi_hz: f64, rms: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * RATE as f64).round() as usize;
    let mut x = gaussian(n, &mut rng);
    band_limit(&mut x, lo_hz, hi_hz);
    set_rms(&mut x, rms);
    Waveform {
        samples: x,
        sample_rate_hz: RATE,
    }
}

/// A toy talker: voiced harmonics of `f0_hz` plus band noise inside its band,
/// gated by random syllable bursts.
#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub f0_hz: f64,
}

/// Four speakers with non-overlapping bands.
pub fn speakers() -> Vec<Speaker> {
    vec![
        Speaker { lo_hz: 150.0, hi_hz: 900.0, f0_hz: 110.0 },
        Speaker { lo_hz: 900.0, hi_hz: 2000.0, f0_hz: 190.0 },
        Speaker { lo_hz: 2000.0, hi_hz: 3800.0, f0_hz: 250.0 },
        Speaker { lo_hz: 3800.0, hi_hz: 7000.0, f0_hz: 330.0 },
    ]
}

impl Speaker {
    /// One utterance of `secs` seconds at roughly `rms` level while active.
    pub fn utterance(&self, secs: f64, rms: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (secs * RATE as f64).round() as usize;
        let mut x = gaussian(n, &mut rng);
        band_limit(&mut x, self.lo_hz, self.hi_hz);
        set_rms(&mut x, 1.0);
        let phase: f64 = rng.random::<f64>() * 2.0 * PI;
        let mut h = 1;
        while h as f64 * self.f0_hz <= self.hi_hz {
            let f = h as f64 * self.f0_hz;
            if f >= self.lo_hz {
                for (i, v) in x.iter_mut().enumerate() {
                    *v += 0.5 * (2.0 * PI * f * i as f64 / RATE as f64 + phase * h as f64).sin();
                }
            }
            h += 1;
        }
        let env = syllable_envelope(n, &mut rng);
        x.iter_mut().zip(&env).for_each(|(v, e)| *v *= e);
        set_rms(&mut x, rms);
        Waveform {
            samples: x,
            sample_rate_hz: RATE,
        }
    }
}

/// Alternating bursts (100-350 ms) and pauses (60-250 ms) with 10 ms ramps.
fn syllable_envelope(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let ms = |v: f64| (v * RATE as f64 / 1000.0) as usize;
    let ramp = ms(10.0);
    let mut env = vec![0.0; n];
    let mut pos = ms(rng.random_range(0.0..150.0));
    while pos < n {
        let len = ms(rng.random_range(100.0..350.0));
        for i in 0..len {
            let idx = pos + i;
            if idx >= n {
                break;
            }
            let edge = i.min(len - 1 - i);
            env[idx] = if edge < ramp {
                edge as f64 / ramp as f64
            } else {
                1.0
            };
        }
        pos += len + ms(rng.random_range(60.0..250.0));
    }
    env
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseType {
    /// Broadband noise with a gently falling spectrum.
    Ambient,
    /// Mains-like hum with harmonics plus a little hiss.
    Hum,
}

pub fn nonspeech_noise(kind: NoiseType, secs: f64, rms: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * RATE as f64).round() as usize;
    let mut x = gaussian(n, &mut rng);
    match kind {
        NoiseType::Ambient => {
            // one-pole lowpass mixed with the white input
            let mut y = 0.0;
            for v in x.iter_mut() {
                y = 0.9 * y + 0.1 * *v;
                *v = 0.3 * *v + 3.0 * y;
            }
        }
        NoiseType::Hum => {
            let base: f64 = rng.random_range(80.0..140.0);
            x.iter_mut().for_each(|v| *v *= 0.1);
            for h in 1..=12 {
                let amp = 1.0 / h as f64;
                let f = base * h as f64;
                for (i, v) in x.iter_mut().enumerate() {
                    *v += amp * (2.0 * PI * f * i as f64 / RATE as f64).sin();
                }
            }
        }
    }
    set_rms(&mut x, rms);
    Waveform {
        samples: x,
        sample_rate_hz: RATE,
    }
}

/// Raw audio for one toy mixture.
#[derive(Debug, Clone)]
pub struct ToyItem {
    pub clean: Waveform,
    pub noise: Waveform,
    /// Different utterance of the target speaker, long enough to embed.
    pub reference: Waveform,
    pub spec: MixSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCorpus {
    pub items: usize,
    pub secs: f64,
    /// Fraction of items whose interferer is another speaker.
    pub speech_fraction: f64,
    /// Fraction of items mixed through a synthetic room.
    pub reverb_fraction: f64,
    pub seed: u64,
}

impl Default for ToyCorpus {
    fn default() -> Self {
        ToyCorpus {
            items: 20,
            secs: 1.5,
            speech_fraction: 0.5,
            reverb_fraction: 0.0,
            seed: 0,
        }
    }
}

impl ToyCorpus {
    /// Deterministic items; item `i` only depends on the seed and `i`.
    pub fn items(&self) -> Result<Vec<ToyItem>> {
        let voices = speakers();
        (0..self.items)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003) ^ i as u64);
                let s = rng.random_range(0..voices.len());
                let seed: u64 = rng.random();
                let clean = voices[s].utterance(self.secs, rng.random_range(0.05..0.3), seed);
                let reference = voices[s].utterance(self.secs.max(1.5), 0.1, seed ^ 0xa5a5);
                let speech = rng.random::<f64>() < self.speech_fraction;
                let (noise, noise_kind) = if speech {
                    let other = (s + rng.random_range(1..voices.len())) % voices.len();
                    (voices[other].utterance(self.secs * 1.5, 0.1, seed ^ 0x5a5a), NoiseKind::Speech)
                } else {
                    let kind = if rng.random::<bool>() { NoiseType::Ambient } else { NoiseType::Hum };
                    (nonspeech_noise(kind, self.secs * 1.5, 0.1, seed ^ 0x5a5a), NoiseKind::NonSpeech)
                };
                let room = if rng.random::<f64>() < self.reverb_fraction {
                    let rt60 = rng.random_range(0.1..0.6);
                    Room::Reverb {
                        rir: synth_rir(rt60, RATE, &mut rng)?,
                        include_target: true,
                    }
                } else {
                    Room::Additive
                };
                let spec = MixSpec {
                    snr_db: rng.random_range(SNR_LO_DB..=SNR_HI_DB),
                    noise_kind,
                    room,
                    seed,
                };
                Ok(ToyItem {
                    clean,
                    noise,
                    reference,
                    spec,
                })
            })
            .collect()
    }

    pub fn examples(&self, fcfg: &FeatureConfig, dvec_dim: usize) -> Result<Vec<MixtureExample>> {
        self.items()?
            .iter()
            .map(|it| make_example(&it.clean, &it.noise, &it.reference, &it.spec, fcfg, dvec_dim))
            .collect()
    }
}
