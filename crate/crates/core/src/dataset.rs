//! Mixture archives on disk and the tab-separated corpus manifest.
//!
//! A manifest line is `<clean.wav>\t<noise.wav>\t<ref.wav>\t<speech|nonspeech>`;
//! relative paths resolve against the manifest's directory, blank lines and
//! lines starting with `#` are ignored.
//!
//! An archive directory holds `archive.json` (feature config, d-vector
//! dimension, example ids) and per example `<id>.noisy.vff`,
//! `<id>.clean.vff`, `<id>.vfd` and a `<id>.json` sidecar with the mixing
//! parameters and overlap labels.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{load_dvector, save_dvector};
use crate::error::{Error, Result};
use crate::frontend::FeatureConfig;
use crate::io::{read_vff, read_wav, write_vff, write_wav};
use crate::mixer::{
    make_example, sample_snr, synth_rir, MixMeta, MixSpec, MixtureExample, NoiseKind, Room,
    SNR_HI_DB, SNR_LO_DB,
};
use crate::synth::{ToyCorpus, RATE};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub reference: PathBuf,
    pub kind: NoiseKind,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!(
                "manifest line {}: expected 4 tab-separated columns, found {}",
                n + 1,
                cols.len()
            )));
        }
        let path = |c: &str| {
            let p = PathBuf::from(c.trim());
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        rows.push(ManifestRow {
            clean: path(cols[0]),
            noise: path(cols[1]),
            reference: path(cols[2]),
            kind: cols[3]
                .parse()
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?,
        });
    }
    Ok(rows)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&fs::read_to_string(path)?, base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixOptions {
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
    pub reverb: bool,
    pub rt60_lo_s: f64,
    pub rt60_hi_s: f64,
    /// Reverberate the target too; the clean features are then reverberant.
    pub reverb_target: bool,
    pub seed: u64,
}

impl Default for MixOptions {
    fn default() -> Self {
        MixOptions {
            snr_lo_db: SNR_LO_DB,
            snr_hi_db: SNR_HI_DB,
            reverb: false,
            rt60_lo_s: 0.1,
            rt60_hi_s: 0.8,
            reverb_target: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RoomMeta {
    Additive,
    Reverb {
        rt60_s: f64,
        rir_seed: u64,
        include_target: bool,
    },
}

impl RoomMeta {
    pub fn room(&self) -> Result<Room> {
        match *self {
            RoomMeta::Additive => Ok(Room::Additive),
            RoomMeta::Reverb {
                rt60_s,
                rir_seed,
                include_target,
            } => Ok(Room::Reverb {
                rir: synth_rir(rt60_s, RATE, &mut ChaCha8Rng::seed_from_u64(rir_seed))?,
                include_target,
            }),
        }
    }
}

/// Mixing parameters for one manifest row, derived from the seed and the
/// row index only.
pub fn draw_spec(opts: &MixOptions, index: usize, kind: NoiseKind) -> Result<(MixSpec, RoomMeta)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let snr_db = sample_snr(opts.snr_lo_db, opts.snr_hi_db, &mut rng)?;
    let seed: u64 = rng.random();
    let meta = if opts.reverb {
        if !(opts.rt60_lo_s <= opts.rt60_hi_s) {
            return Err(Error::Range("rt60 interval is empty".into()));
        }
        RoomMeta::Reverb {
            rt60_s: rng.random_range(opts.rt60_lo_s..=opts.rt60_hi_s),
            rir_seed: rng.random(),
            include_target: opts.reverb_target,
        }
    } else {
        RoomMeta::Additive
    };
    Ok((
        MixSpec {
            snr_db,
            noise_kind: kind,
            room: meta.room()?,
            seed,
        },
        meta,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub clean_wav: PathBuf,
    pub noise_wav: PathBuf,
    pub reference_wav: PathBuf,
    pub noise_kind: NoiseKind,
    pub snr_db: f64,
    pub measured_snr_db: f64,
    pub gain: f64,
    pub clipped: bool,
    pub peak: f64,
    pub seed: u64,
    pub room: RoomMeta,
    pub overlap_labels: Vec<u8>,
    pub noisy: String,
    pub clean: String,
    pub dvec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveInfo {
    pub features: FeatureConfig,
    pub dvec_dim: usize,
    pub mix: MixOptions,
    pub examples: Vec<String>,
}

pub const ARCHIVE_INDEX: &str = "archive.json";

/// Mixes every manifest row and writes the archive. Rows are processed in
/// parallel; each row's randomness depends only on the seed and its index.
pub fn write_archive(
    rows: &[ManifestRow],
    out_dir: impl AsRef<Path>,
    fcfg: &FeatureConfig,
    dvec_dim: usize,
    opts: &MixOptions,
) -> Result<Vec<Sidecar>> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let sidecars: Vec<Sidecar> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let id = format!("{i:06}");
            let (spec, room) = draw_spec(opts, i, row.kind)?;
            let ex = make_example(
                &read_wav(&row.clean)?,
                &read_wav(&row.noise)?,
                &read_wav(&row.reference)?,
                &spec,
                fcfg,
                dvec_dim,
            )?;
            let sc = Sidecar {
                id: id.clone(),
                clean_wav: row.clean.clone(),
                noise_wav: row.noise.clone(),
                reference_wav: row.reference.clone(),
                noise_kind: row.kind,
                snr_db: spec.snr_db,
                measured_snr_db: ex.meta.measured_snr_db,
                gain: ex.meta.gain,
                clipped: ex.meta.clipped,
                peak: ex.meta.peak,
                seed: spec.seed,
                room,
                overlap_labels: ex.overlap_labels.clone(),
                noisy: format!("{id}.noisy.vff"),
                clean: format!("{id}.clean.vff"),
                dvec: format!("{id}.vfd"),
            };
            write_vff(out.join(&sc.noisy), &ex.noisy)?;
            write_vff(out.join(&sc.clean), &ex.clean)?;
            save_dvector(&ex.dvec, out.join(&sc.dvec))?;
            fs::write(out.join(format!("{id}.json")), serde_json::to_vec_pretty(&sc)?)?;
            Ok(sc)
        })
        .collect::<Result<_>>()?;
    let info = ArchiveInfo {
        features: fcfg.clone(),
        dvec_dim,
        mix: *opts,
        examples: sidecars.iter().map(|s| s.id.clone()).collect(),
    };
    fs::write(out.join(ARCHIVE_INDEX), serde_json::to_vec_pretty(&info)?)?;
    Ok(sidecars)
}

pub fn read_archive_info(dir: impl AsRef<Path>) -> Result<ArchiveInfo> {
    Ok(serde_json::from_slice(&fs::read(dir.as_ref().join(ARCHIVE_INDEX))?)?)
}

/// Loads every example listed in the archive index, in index order.
pub fn load_archive(dir: impl AsRef<Path>) -> Result<(ArchiveInfo, Vec<MixtureExample>)> {
    let dir = dir.as_ref();
    let info = read_archive_info(dir)?;
    let examples = info
        .examples
        .iter()
        .map(|id| {
            let sc: Sidecar = serde_json::from_slice(&fs::read(dir.join(format!("{id}.json")))?)?;
            let ex = MixtureExample {
                noisy: read_vff(dir.join(&sc.noisy))?,
                clean: read_vff(dir.join(&sc.clean))?,
                dvec: load_dvector(dir.join(&sc.dvec))?,
                overlap_labels: sc.overlap_labels.clone(),
                spec: MixSpec {
                    snr_db: sc.snr_db,
                    noise_kind: sc.noise_kind,
                    room: sc.room.room()?,
                    seed: sc.seed,
                },
                meta: MixMeta {
                    gain: sc.gain,
                    measured_snr_db: sc.measured_snr_db,
                    clipped: sc.clipped,
                    peak: sc.peak,
                },
            };
            if ex.noisy.variant != info.features.variant || ex.dvec.dim() != info.dvec_dim {
                return Err(Error::Format(format!("example {id} disagrees with the archive index")));
            }
            ex.validate()?;
            Ok(ex)
        })
        .collect::<Result<_>>()?;
    Ok((info, examples))
}

/// Writes a synthetic corpus as WAV files plus a manifest; returns the
/// manifest path.
pub fn write_toy_corpus(corpus: &ToyCorpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# clean\tnoise\treference\tkind\n");
    for (i, item) in corpus.items()?.iter().enumerate() {
        let names = [
            format!("{i:04}_clean.wav"),
            format!("{i:04}_noise.wav"),
            format!("{i:04}_ref.wav"),
        ];
        write_wav(dir.join(&names[0]), &item.clean)?;
        write_wav(dir.join(&names[1]), &item.noise)?;
        write_wav(dir.join(&names[2]), &item.reference)?;
        let kind = match item.spec.noise_kind {
            NoiseKind::Speech => "speech",
            NoiseKind::NonSpeech => "nonspeech",
        };
        manifest.push_str(&format!("{}\t{}\t{}\t{kind}\n", names[0], names[1], names[2]));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest)?;
    Ok(path)
}
