//! WAV input/output and the `VFF1` feature file format.
//!
//! `VFF1` layout (little-endian): magic `VFF1`, u32 variant tag, u32 frame
//! count, u32 width, f64 frame hop in seconds, then `frames * width` f32
//! values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::{FeatureSequence, FeatureVariant, Waveform};

pub const WAV_RATE: u32 = 16000;
const VFF_MAGIC: &[u8; 4] = b"VFF1";

fn check_spec(spec: &hound::WavSpec) -> Result<()> {
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "expected 16-bit signed PCM, found {:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::Wav(format!(
            "expected mono, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_rate != WAV_RATE {
        return Err(Error::Wav(format!(
            "expected {WAV_RATE} Hz, found {} Hz",
            spec.sample_rate
        )));
    }
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = WavStream::open(path)?;
    let mut samples = Vec::new();
    let mut buf = vec![0.0; 4096];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        samples.extend_from_slice(&buf[..n]);
    }
    Waveform::new(samples, WAV_RATE)
}

/// Chunked reader over a 16-bit mono 16 kHz WAV file.
pub struct WavStream {
    reader: hound::WavReader<BufReader<File>>,
    remaining: u32,
}

impl WavStream {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = hound::WavReader::open(path)
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
        check_spec(&reader.spec())?;
        let remaining = reader.len();
        Ok(WavStream { reader, remaining })
    }

    pub fn total_samples(&self) -> usize {
        self.reader.len() as usize
    }

    /// Fills `buf` with up to `buf.len()` samples scaled to [-1, 1).
    pub fn read(&mut self, buf: &mut [f64]) -> Result<usize> {
        let n = (self.remaining as usize).min(buf.len());
        let mut it = self.reader.samples::<i16>();
        for slot in buf.iter_mut().take(n) {
            let s = it
                .next()
                .ok_or_else(|| Error::Wav("truncated data chunk".into()))??;
            *slot = s as f64 / 32768.0;
        }
        self.remaining -= n as u32;
        Ok(n)
    }
}

/// Writes a 16-bit mono WAV. Samples outside [-1, 1] are clipped.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_vff(path: impl AsRef<Path>, s: &FeatureSequence) -> Result<()> {
    let mut w = VffWriter::create(path, s.variant, s.width(), s.frame_hop_s)?;
    for f in s.frames() {
        w.write_frame(f)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_vff(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != VFF_MAGIC {
        return Err(Error::Format("missing VFF1 magic".into()));
    }
    let variant = FeatureVariant::from_tag(read_u32(&mut r)?)?;
    let n_frames = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hop = f64::from_le_bytes(b8);
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != n_frames * width * 4 {
        return Err(Error::Format(format!(
            "VFF1 payload has {} bytes, header implies {}",
            raw.len(),
            n_frames * width * 4
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureSequence::new(data, n_frames, width, variant, hop)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Incremental `VFF1` writer; the frame count is patched on [`finish`](Self::finish).
pub struct VffWriter {
    out: BufWriter<File>,
    width: usize,
    frames: u32,
}

impl VffWriter {
    pub fn create(
        path: impl AsRef<Path>,
        variant: FeatureVariant,
        width: usize,
        frame_hop_s: f64,
    ) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(VFF_MAGIC)?;
        out.write_all(&variant.tag().to_le_bytes())?;
        out.write_all(&0u32.to_le_bytes())?;
        out.write_all(&(width as u32).to_le_bytes())?;
        out.write_all(&frame_hop_s.to_le_bytes())?;
        Ok(VffWriter {
            out,
            width,
            frames: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &[f32]) -> Result<()> {
        if frame.len() != self.width {
            return Err(Error::Shape(format!(
                "frame width {} != {}",
                frame.len(),
                self.width
            )));
        }
        for v in frame {
            self.out.write_all(&v.to_le_bytes())?;
        }
        self.frames += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.frames as usize
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        let mut f = self.out.into_inner().map_err(|e| e.into_error())?;
        f.seek(SeekFrom::Start(8))?;
        f.write_all(&self.frames.to_le_bytes())?;
        f.sync_data().ok();
        Ok(())
    }
}
