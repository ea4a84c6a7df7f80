use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use vflite::dataset::{load_archive, read_manifest, write_archive, write_toy_corpus};
use vflite::embed::{embed_reference, load_dvector, save_dvector};
use vflite::eval::{enhance_batch, evaluate, parse_conditions, EnhancedFrame, Enhancer, EvalItem, EvalOptions};
use vflite::frontend::extract;
use vflite::io::{read_wav, write_vff, VffWriter, WavStream};
use vflite::model_io::{load_checkpoint, load_model, save_model};
use vflite::quant::quantize_model;
use vflite::synth::ToyCorpus;
use vflite::training::{LossConfig, LossKind, Optimizer, StepRecord, TrainConfig, Trainer};
use vflite::{Error, FeatureConfig, MaskNetConfig, Result};

use crate::config::FileConfig;
use crate::{
    Cli, Command, EnhanceArgs, EvalArgs, LossArg, MixArgs, OptimizerArg, Preset, SynthArgs, TrainArgs,
};

const CHUNK: usize = 1600;

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    init_threads(file.threads)?;
    match cli.command {
        Command::Features { input, output, variant } => {
            let mut fcfg = file.features.clone().unwrap_or_default();
            if let Some(v) = variant {
                fcfg.variant = v;
            }
            fcfg.validate()?;
            let feats = extract(&read_wav(&input)?, &fcfg)?;
            write_vff(&output, &feats)?;
            eprintln!("{}: {} frames x {}", output.display(), feats.n_frames(), feats.width());
            Ok(())
        }
        Command::Embed { reference, output, dim } => {
            let fcfg = file.features.clone().unwrap_or_default();
            let v = embed_reference(&read_wav(&reference)?, &fcfg, dim)?;
            save_dvector(&v, &output)
        }
        Command::Synth(a) => synth(a),
        Command::Mix(a) => mix(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Enhance(a) => enhance(a, &file),
        Command::Quantize { input, output } => quantize(&input, &output),
        Command::Eval(a) => eval(a, &file),
    }
}

/// `VFLITE_THREADS` wins over the config file.
fn init_threads(from_file: Option<usize>) -> Result<()> {
    let n = match std::env::var("VFLITE_THREADS") {
        Ok(s) => Some(
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("VFLITE_THREADS: not a count: {s:?}")))?,
        ),
        Err(_) => from_file,
    };
    if let Some(n) = n.filter(|&n| n > 0) {
        // A second initialisation in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let corpus = ToyCorpus {
        items: a.items,
        secs: a.secs,
        speech_fraction: a.speech_fraction,
        seed: a.seed,
        ..ToyCorpus::default()
    };
    let manifest = write_toy_corpus(&corpus, &a.outdir)?;
    println!("{}", manifest.display());
    Ok(())
}

fn mix(a: MixArgs, file: &FileConfig) -> Result<()> {
    let mut opts = file.mix.unwrap_or_default();
    if let Some(v) = a.snr_lo {
        opts.snr_lo_db = v;
    }
    if let Some(v) = a.snr_hi {
        opts.snr_hi_db = v;
    }
    if let Some(v) = a.seed {
        opts.seed = v;
    }
    opts.reverb |= a.reverb;
    let mut fcfg = file.features.clone().unwrap_or_default();
    if let Some(v) = a.variant {
        fcfg.variant = v;
    }
    fcfg.validate()?;
    let rows = read_manifest(&a.manifest)?;
    let sidecars = write_archive(&rows, &a.outdir, &fcfg, a.dvec_dim, &opts)?;
    eprintln!("{}: {} examples", a.outdir.display(), sidecars.len());
    Ok(())
}

fn preset(p: Preset, features: FeatureConfig, dvec_dim: usize) -> MaskNetConfig {
    let base = match p {
        Preset::Toy => MaskNetConfig {
            lstm_layers: 2,
            lstm_units: 32,
            head_hidden: vec![16],
            ..MaskNetConfig::small(features)
        },
        Preset::Small => MaskNetConfig::small(features),
        Preset::Standard => MaskNetConfig::standard(features),
    };
    MaskNetConfig { dvec_dim, ..base }
}

fn loss_config(a: &TrainArgs, file: &FileConfig) -> LossConfig {
    let mut loss = file.loss.unwrap_or_default();
    if let Some(k) = a.loss {
        loss.kind = match k {
            LossArg::L2 => LossKind::L2,
            LossArg::Asym => LossKind::AsymL2,
        };
    }
    if let Some(v) = a.alpha {
        loss.alpha = v;
    }
    if let Some(v) = a.lambda {
        loss.noise_head_weight = v;
    }
    loss
}

fn train_config(a: &TrainArgs, file: &FileConfig) -> TrainConfig {
    let mut t = file.train.unwrap_or_default();
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(o) = a.optimizer {
        t.optimizer = match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        };
    }
    if let Some(v) = a.batch {
        t.batch_size = v;
    }
    if let Some(v) = a.steps {
        t.steps = v;
    }
    if let Some(v) = a.clip {
        t.clip_norm = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    t
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let loss = loss_config(&a, file);
    let tcfg = train_config(&a, file);
    let (info, data) = load_archive(&a.data)?;
    let mut trainer = match &a.resume {
        Some(ck) => {
            let t = Trainer::from_checkpoint(load_checkpoint(ck)?, loss, tcfg)?;
            if t.cfg.features != info.features || t.cfg.dvec_dim != info.dvec_dim {
                return Err(Error::Format("checkpoint does not match the archive features".into()));
            }
            t
        }
        None => {
            let cfg = match &a.model_config {
                Some(p) => serde_json::from_slice(&fs::read(p)?)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                None => preset(a.preset, info.features.clone(), info.dvec_dim),
            };
            Trainer::new(&cfg, loss, tcfg)?
        }
    };

    let metrics_path = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.output.as_os_str().to_owned();
        p.push(".metrics.jsonl");
        PathBuf::from(p)
    });
    let mut log = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .append(a.resume.is_some())
            .truncate(a.resume.is_none())
            .open(&metrics_path)?,
    );

    while trainer.step < trainer.train.steps {
        let rec: StepRecord = trainer.step(&data)?;
        serde_json::to_writer(&mut log, &rec)?;
        writeln!(log)?;
        if a.checkpoint_every > 0 && trainer.step % a.checkpoint_every == 0 {
            log.flush()?;
            write_atomic(&a.output, &trainer.encode_checkpoint()?)?;
        }
    }
    log.flush()?;
    write_atomic(&a.output, &trainer.encode_checkpoint()?)?;
    eprintln!(
        "{}: step {}, {} parameters",
        a.output.display(),
        trainer.step,
        trainer.params.num_params()
    );
    Ok(())
}

fn enhance(a: EnhanceArgs, file: &FileConfig) -> Result<()> {
    let suppression = match a.suppression {
        Some(s) => s,
        None => file.suppression()?,
    };
    let (cfg, params) = load_model(&a.model)?;
    let dvec = load_dvector(&a.dvec)?;
    let mut trace = a
        .w_trace
        .as_ref()
        .map(|p| -> Result<_> {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "frame\tw\tscore")?;
            Ok(w)
        })
        .transpose()?;
    let hop = cfg.features.frame_hop_s();

    if a.batch {
        let input = extract(&read_wav(&a.input)?, &cfg.features)?;
        let out = enhance_batch(&params, &cfg, &dvec, suppression, &input)?;
        write_vff(&a.output, &out.features)?;
        if let Some(t) = trace.as_mut() {
            for (i, (w, s)) in out.w.iter().zip(&out.noise_scores).enumerate() {
                writeln!(t, "{i}\t{w}\t{s}")?;
            }
        }
    } else {
        let mut stream = WavStream::open(&a.input)?;
        let mut writer = VffWriter::create(&a.output, cfg.variant(), cfg.input_dim, hop)?;
        let mut enhancer = Enhancer::new(&params, &cfg, &dvec, suppression)?;
        let mut frame = 0usize;
        let mut sink = |fr: EnhancedFrame<'_>| -> Result<()> {
            writer.write_frame(fr.output)?;
            if let Some(t) = trace.as_mut() {
                writeln!(t, "{frame}\t{}\t{}", fr.w, fr.noise_score)?;
            }
            frame += 1;
            Ok(())
        };
        let mut buf = vec![0f64; CHUNK];
        loop {
            let n = stream.read(&mut buf)?;
            if n == 0 {
                break;
            }
            enhancer.push(&buf[..n], &mut sink)?;
        }
        enhancer.finish(&mut sink)?;
        writer.finish()?;
    }
    if let Some(mut t) = trace {
        t.flush()?;
    }
    Ok(())
}

fn quantize(input: &Path, output: &Path) -> Result<()> {
    let (cfg, params) = load_model(input)?;
    let q = quantize_model(&params)?;
    save_model(output, &cfg, &q)?;
    let before = fs::metadata(input)?.len();
    let after = fs::metadata(output)?.len();
    eprintln!(
        "{}: {} -> {} bytes ({:.2}x)",
        output.display(),
        before,
        after,
        before as f64 / after as f64
    );
    Ok(())
}

fn eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let suppression = match a.suppression {
        Some(s) => s,
        None => file.suppression()?,
    };
    let mut opts: EvalOptions = file.eval.unwrap_or_default();
    if let Some(v) = a.epsilon {
        opts.epsilon = v;
    }
    if let Some(v) = a.snr_lo {
        opts.snr_lo_db = v;
    }
    if let Some(v) = a.snr_hi {
        opts.snr_hi_db = v;
    }
    if let Some(v) = a.seed {
        opts.seed = v;
    }
    let conditions = parse_conditions(&a.conditions)?;
    let (cfg, params) = load_model(&a.model)?;
    let items = read_manifest(&a.manifest)?
        .iter()
        .map(|row| {
            Ok(EvalItem {
                clean: read_wav(&row.clean)?,
                noise: read_wav(&row.noise)?,
                dvec: embed_reference(&read_wav(&row.reference)?, &cfg.features, cfg.dvec_dim)?,
                kind: row.kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&params, &cfg, &items, &conditions, suppression, &opts)?;
    report.validate()?;
    write_atomic(&a.report, serde_json::to_string_pretty(&report)?.as_bytes())?;
    for r in &report.rows {
        eprintln!(
            "{:<24} mse {:.4} (raw {:.4})  over {:.4}  under {:.4}  w {:.3}  rtf {:.3}",
            r.condition,
            r.mse_enhanced,
            r.mse_unenhanced,
            r.over_suppression_rate,
            r.under_suppression_rate,
            r.mean_w,
            r.realtime_factor
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_preset_follows_archive() {
        let f = FeatureConfig::with_variant(vflite::FeatureVariant::Filterbank);
        let c = preset(Preset::Toy, f.clone(), 16);
        assert_eq!(c.input_dim, f.width());
        assert_eq!(c.dvec_dim, 16);
        c.validate().unwrap();
    }
}
