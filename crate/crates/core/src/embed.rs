//! Speaker conditioning vectors.
//!
//! The embedder here is a fixed statistics model: per-band mean and standard
//! deviation of 128 log-mel bands over the reference utterance, optionally
//! projected to another dimension, then L2-normalized. Externally computed
//! embeddings can be loaded from `VFD1` files (magic, u32 dimension, f32
//! values, little-endian).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frontend::{extract, FeatureConfig, FeatureVariant, Waveform};

pub const DEFAULT_DVEC_DIM: usize = 256;
const STAT_BANDS: usize = 128;
const PROJECTION_SEED: u64 = 0x5eed_d7ec;
const VFD_MAGIC: &[u8; 4] = b"VFD1";

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DVector {
    values: Vec<f32>,
}

impl DVector {
    /// Accepts values whose L2 norm is already 1 within 1e-6.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        let norm = check_finite_norm(&values)?;
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Range(format!("d-vector norm {norm} is not 1")));
        }
        Ok(DVector { values })
    }

    /// L2-normalizes arbitrary non-zero values.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty d-vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("d-vector".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Range("zero d-vector cannot be normalized".into()));
        }
        Ok(DVector {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    pub fn cosine(&self, other: &DVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum::<f64>()
            / (self.norm() * other.norm())
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn check_finite_norm(values: &[f32]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Shape("empty d-vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("d-vector".into()));
    }
    Ok(l2(values))
}

/// Row-orthonormal projection from the statistics space to `dim`.
fn projection(dim: usize) -> Vec<Vec<f64>> {
    let stats = 2 * STAT_BANDS;
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut r: Vec<f64> = (0..stats).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Gram-Schmidt while the rows can still be independent
        if i < stats {
            for prev in &rows {
                let d: f64 = r.iter().zip(prev).map(|(a, b)| a * b).sum();
                r.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
        rows.push(r);
    }
    rows
}

/// Per-band log-mel statistics of a reference recording.
pub fn embed_reference(reference: &Waveform, fcfg: &FeatureConfig, dim: usize) -> Result<DVector> {
    if dim == 0 {
        return Err(Error::Config("d-vector dimension must be positive".into()));
    }
    let min_len = reference.sample_rate_hz as usize;
    if reference.len() < min_len {
        return Err(Error::TooShort {
            len: reference.len(),
            needed: min_len,
        });
    }
    let cfg = FeatureConfig {
        variant: FeatureVariant::Filterbank,
        n_mels: STAT_BANDS,
        ..fcfg.clone()
    };
    let fb = extract(reference, &cfg)?;
    let t = fb.n_frames() as f64;
    let mut mean = vec![0f64; STAT_BANDS];
    for f in fb.frames() {
        mean.iter_mut().zip(f).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0f64; STAT_BANDS];
    for f in fb.frames() {
        var.iter_mut()
            .zip(f)
            .zip(&mean)
            .for_each(|((s, &v), m)| *s += (v as f64 - m).powi(2));
    }
    let mut stats = mean;
    stats.extend(var.iter().map(|s| (s / t).sqrt()));
    if dim == stats.len() {
        return DVector::normalized(&stats);
    }
    let projected: Vec<f64> = projection(dim)
        .iter()
        .map(|row| row.iter().zip(&stats).map(|(a, b)| a * b).sum())
        .collect();
    DVector::normalized(&projected)
}

pub fn save_dvector(v: &DVector, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * v.dim());
    buf.extend_from_slice(VFD_MAGIC);
    buf.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    for x in &v.values {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads a `VFD1` file. Norms within 1e-3 of one are renormalized; anything
/// further off is rejected.
pub fn load_dvector(path: impl AsRef<Path>) -> Result<DVector> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != VFD_MAGIC {
        return Err(Error::Format("missing VFD1 magic".into()));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if dim == 0 || bytes.len() != 8 + 4 * dim {
        return Err(Error::Format(format!(
            "VFD1 declares dimension {dim} but holds {} value bytes",
            bytes.len() - 8
        )));
    }
    let values: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let norm = check_finite_norm(&values)?;
    let off = (norm - 1.0).abs();
    if off <= 1e-6 {
        Ok(DVector { values })
    } else if off <= 1e-3 {
        DVector::normalized(&values.iter().map(|&v| v as f64).collect::<Vec<_>>())
    } else {
        Err(Error::Range(format!("stored d-vector norm {norm} is not 1")))
    }
}
