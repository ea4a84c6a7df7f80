//! Streaming speaker-conditioned enhancement of speech recognition features.
//!
//! The crate covers the whole pipeline: waveform to feature conversion
//! ([`frontend`]), mixture synthesis ([`mixer`]), the d-vector conditioning
//! signal ([`embed`]), the LSTM mask network ([`masknet`]), training with an
//! asymmetric loss ([`training`]), runtime suppression-strength control
//! ([`suppression`]) and int8 inference ([`quant`]).

pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod io;
pub mod masknet;
pub mod mixer;
pub mod model_io;
pub mod quant;
pub mod suppression;
pub mod synth;
pub mod training;

pub use embed::DVector;
pub use error::{Error, ErrorKind, Result};
pub use frontend::{FeatureConfig, FeatureSequence, FeatureVariant, Waveform};
pub use masknet::{MaskNetConfig, MaskNetParams, StreamState};
pub use mixer::{MixSpec, MixtureExample, NoiseKind, Room};
pub use suppression::SuppressionConfig;

