//! Fixtures shared by the benchmarks.

use vflite::masknet::{MaskNetConfig, MaskNetParams, StreamState};
use vflite::quant::quantize_model;
use vflite::synth::{nonspeech_noise, NoiseType};
use vflite::{DVector, FeatureConfig, Waveform};

pub struct Model {
    pub cfg: MaskNetConfig,
    pub float: MaskNetParams,
    pub quant: MaskNetParams,
    pub dvec: DVector,
}

impl Model {
    /// Three 256-unit LSTM layers on stacked filterbanks.
    pub fn small() -> Self {
        let cfg = MaskNetConfig::small(FeatureConfig::default());
        let float = MaskNetParams::init(&cfg, 1).expect("init");
        let quant = quantize_model(&float).expect("quantize");
        let dvec = DVector::normalized(&vec![1.0; cfg.dvec_dim]).expect("dvec");
        Model { cfg, float, quant, dvec }
    }

    pub fn state(&self) -> StreamState {
        StreamState::new(&self.cfg, 0.0)
    }

    /// A plausible input frame: log features of modest magnitude.
    pub fn frame(&self) -> Vec<f32> {
        (0..self.cfg.input_dim).map(|i| 1.0 + 0.5 * ((i as f32) * 0.37).sin()).collect()
    }
}

pub fn noise(secs: f64) -> Waveform {
    nonspeech_noise(NoiseType::Ambient, secs, 0.1, 3)
}
