//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vflite::embed::embed_reference;
use vflite::eval::{enhance_batch, enhance_streaming, evaluate, parse_conditions, EvalItem, EvalOptions};
use vflite::masknet::{
    forward_sequence, forward_step, mask_cell, MaskDomain, MaskNetConfig, MaskNetParams, StreamState, Tensor,
};
use vflite::mixer::{render_mixture, synth_rir, MixMeta};
use vflite::model_io::{decode, encode};
use vflite::quant::{forward_step_quantized, quantize_model, quantize_tensor};
use vflite::suppression::{compensate, update_strength, SuppressionState};
use vflite::synth::{self, nonspeech_noise, NoiseType, ToyCorpus};
use vflite::training::{asym_l2_loss, backward, example_loss, l2_loss, train, LossConfig, TrainConfig};
use vflite::{
    DVector, FeatureConfig, FeatureSequence, FeatureVariant, MixSpec, MixtureExample, NoiseKind, Room,
    SuppressionConfig, Waveform,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fb(n_mels: usize) -> FeatureConfig {
    FeatureConfig {
        variant: FeatureVariant::Filterbank,
        n_mels,
        ..Default::default()
    }
}

fn net(f: usize, d: usize, layers: usize, units: usize) -> MaskNetConfig {
    MaskNetConfig {
        input_dim: f,
        dvec_dim: d,
        conv: None,
        lstm_layers: layers,
        lstm_units: units,
        head_hidden: vec![8],
        features: fb(f),
        masking: MaskDomain::Linear,
    }
}

fn random_seq(t: usize, f: usize, lo: f32, hi: f32, rng: &mut impl Rng) -> FeatureSequence {
    let data = (0..t * f).map(|_| rng.random_range(lo..hi)).collect();
    FeatureSequence::new(data, t, f, FeatureVariant::Filterbank, 0.01).unwrap()
}

fn random_dvec(d: usize, rng: &mut impl Rng) -> DVector {
    DVector::normalized(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// 1 -------------------------------------------------------------------------

fn loss_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..1000 {
        let t = rng.random_range(1..20);
        let f = rng.random_range(1..40);
        let a = random_seq(t, f, -5.0, 5.0, &mut rng);
        let b = random_seq(t, f, -5.0, 5.0, &mut rng);
        let asym = asym_l2_loss(&a, &b, 1.0).map_err(|e| e.to_string())?;
        let l2 = l2_loss(&a, &b).map_err(|e| e.to_string())?;
        ensure(asym.to_bits() == l2.to_bits(), || format!("pair {i}: {asym} != {l2}"))?;
        let oracle: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&c, &e)| (c as f64 - e as f64).powi(2))
            .sum();
        ensure((l2 - oracle).abs() <= 1e-12 * oracle.max(1.0), || format!("pair {i}: {l2} vs sum {oracle}"))?;
    }
    let cell = |v: f32| FeatureSequence::new(vec![v], 1, 1, FeatureVariant::Filterbank, 0.01).unwrap();
    // d = S_cln - S_enh
    let under = asym_l2_loss(&cell(1.0), &cell(0.0), 10.0).unwrap();
    let over = asym_l2_loss(&cell(0.0), &cell(1.0), 10.0).unwrap();
    ensure(under == 100.0 && over == 1.0, || format!("d=+1 -> {under}, d=-1 -> {over}"))?;
    Ok("1000 pairs bit-exact; d=+1 -> 100, d=-1 -> 1".into())
}

// 2 -------------------------------------------------------------------------

fn toy_example(cfg: &MaskNetConfig, t: usize, seed: u64) -> MixtureExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MixtureExample {
        noisy: random_seq(t, cfg.input_dim, 0.0, 3.0, &mut rng),
        clean: random_seq(t, cfg.input_dim, 0.0, 3.0, &mut rng),
        dvec: random_dvec(cfg.dvec_dim, &mut rng),
        overlap_labels: (0..t).map(|_| rng.random_range(0..2u8)).collect(),
        spec: MixSpec {
            snr_db: 5.0,
            noise_kind: NoiseKind::Speech,
            room: Room::Additive,
            seed,
        },
        meta: MixMeta {
            gain: 1.0,
            measured_snr_db: 5.0,
            clipped: false,
            peak: 1.0,
        },
    }
}

/// Residuals `d` of the asymmetric term and hinge margins `1 - y s`; the loss
/// is non-smooth where either is zero.
fn kink_residuals(p: &MaskNetParams, cfg: &MaskNetConfig, ex: &MixtureExample) -> Vec<f64> {
    let out = forward_sequence(p, cfg, &ex.noisy, &ex.dvec).unwrap();
    let mut r: Vec<f64> = ex
        .noisy
        .as_slice()
        .iter()
        .zip(ex.clean.as_slice())
        .zip(&out.masks)
        .map(|((&s, &c), &m)| c as f64 - mask_cell(s as f64, m, ex.noisy.variant, cfg.masking))
        .collect();
    r.extend(
        out.noise_scores
            .iter()
            .zip(&ex.overlap_labels)
            .map(|(&s, &l)| 1.0 - (2.0 * l as f64 - 1.0) * s),
    );
    r
}

fn gradient_correctness() -> Outcome {
    let cfg = net(6, 4, 2, 8);
    let params = MaskNetParams::init(&cfg, 7).unwrap();
    let ex = toy_example(&cfg, 10, 8);
    let loss = LossConfig::default();
    let (_, grad) = backward(&params, &cfg, &ex, &loss).map_err(|e| e.to_string())?;
    let grads = grad.tensors().unwrap();
    let sizes: Vec<usize> = grads.iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let base = kink_residuals(&params, &cfg, &ex);
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut checked, mut skipped, mut worst) = (0, 0, 0f64);
    for _ in 0..300 {
        let mut k = rng.random_range(0..total);
        let mut ti = 0;
        while k >= sizes[ti] {
            k -= sizes[ti];
            ti += 1;
        }
        let at = |delta: f64| {
            let mut q = params.clone();
            q.tensors_mut().unwrap()[ti].data[k] += delta;
            let l = example_loss(&q, &cfg, &ex, &loss).unwrap().total;
            (l, kink_residuals(&q, &cfg, &ex))
        };
        let (lp, rp) = at(h);
        let (lm, rm) = at(-h);
        // A residual near zero, or one whose sign flips inside the stencil,
        // means the difference straddles a kink.
        let near_kink = base.iter().zip(&rp).zip(&rm).any(|((&b, &p), &m)| {
            b.abs() < 1e-6 || p.abs() < 1e-6 || m.abs() < 1e-6 || (b > 0.0) != (p > 0.0) || (b > 0.0) != (m > 0.0)
        });
        if near_kink {
            skipped += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * h);
        let an = grads[ti].data[k];
        let scale = fd.abs().max(an.abs());
        let rel = if scale == 0.0 { 0.0 } else { (fd - an).abs() / scale };
        ensure(rel < 1e-3, || format!("tensor {ti}[{k}]: analytic {an:e}, numeric {fd:e}, rel {rel:e}"))?;
        worst = worst.max(rel);
        checked += 1;
    }
    ensure(checked >= 200, || format!("only {checked} coordinates checked ({skipped} near kinks)"))?;
    Ok(format!("{checked} coords, {skipped} near kinks skipped, worst rel {worst:.2e}"))
}

// 3 -------------------------------------------------------------------------

fn stream(params: &MaskNetParams, cfg: &MaskNetConfig, x: &FeatureSequence, dvec: &DVector, quant: bool) -> (Vec<f64>, Vec<f64>) {
    let mut st = StreamState::new(cfg, 0.0);
    let (mut masks, mut scores) = (Vec::new(), Vec::new());
    for f in x.frames() {
        let o = if quant {
            forward_step_quantized(params, cfg, &mut st, f, dvec)
        } else {
            forward_step(params, cfg, &mut st, f, dvec)
        }
        .unwrap();
        masks.extend(o.mask);
        scores.push(o.noise_score);
    }
    (masks, scores)
}

fn streaming_equals_batch() -> Outcome {
    let cfg = MaskNetConfig {
        head_hidden: vec![16, 8],
        ..net(40, 16, 2, 32)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_float = 0f64;
    let mut worst_enh = 0f64;
    for seed in 0..2 {
        let params = MaskNetParams::init(&cfg, seed).unwrap();
        let q = quantize_model(&params).unwrap();
        let x = random_seq(1000, cfg.input_dim, 0.0, 6.0, &mut rng);
        let dvec = random_dvec(cfg.dvec_dim, &mut rng);

        let batch = forward_sequence(&params, &cfg, &x, &dvec).unwrap();
        let (m, s) = stream(&params, &cfg, &x, &dvec, false);
        worst_float = worst_float
            .max(max_abs_diff(&m, &batch.masks))
            .max(max_abs_diff(&s, &batch.noise_scores));

        let supp = SuppressionConfig::default();
        let eb = enhance_batch(&params, &cfg, &dvec, supp, &x).unwrap();
        let es = enhance_streaming(&params, &cfg, &dvec, supp, &x).unwrap();
        let to64 = |s: &FeatureSequence| s.as_slice().iter().map(|&v| v as f64).collect::<Vec<_>>();
        worst_enh = worst_enh
            .max(max_abs_diff(&to64(&eb.features), &to64(&es.features)))
            .max(max_abs_diff(&eb.w, &es.w));

        let qbatch = forward_sequence(&q, &cfg, &x, &dvec).unwrap();
        let (qm, qs) = stream(&q, &cfg, &x, &dvec, true);
        let (qm2, qs2) = stream(&q, &cfg, &x, &dvec, true);
        ensure(qm == qbatch.masks && qs == qbatch.noise_scores, || {
            format!("quantized stream vs batch differ by {:e}", max_abs_diff(&qm, &qbatch.masks))
        })?;
        ensure(qm == qm2 && qs == qs2, || "quantized streaming is not repeatable".into())?;
    }
    ensure(worst_float < 1e-5 && worst_enh < 1e-5, || {
        format!("float max-abs {worst_float:e}, enhanced {worst_enh:e}")
    })?;
    Ok(format!("float max-abs {worst_float:.1e}, enhanced {worst_enh:.1e}, int8 identical"))
}

// 4 -------------------------------------------------------------------------

fn snr_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let talkers = synth::speakers();
    let mut worst = 0f64;
    for i in 0..100u64 {
        let secs = rng.random_range(0.5..2.0);
        let clean = talkers[i as usize % talkers.len()].utterance(secs, rng.random_range(0.02..0.3), i);
        let noise = if i % 2 == 0 {
            talkers[(i as usize + 1) % talkers.len()].utterance(secs * 1.5, 0.1, i + 1000)
        } else {
            nonspeech_noise(NoiseType::Ambient, secs * 1.5, rng.random_range(0.001..0.5), i)
        };
        let room = if i % 3 == 0 {
            Room::Reverb {
                rir: synth_rir(rng.random_range(0.1..0.8), synth::RATE, &mut rng).unwrap(),
                include_target: i % 2 == 0,
            }
        } else {
            Room::Additive
        };
        let spec = MixSpec {
            snr_db: rng.random_range(1.0..=10.0),
            noise_kind: if i % 2 == 0 { NoiseKind::Speech } else { NoiseKind::NonSpeech },
            room,
            seed: rng.random(),
        };
        let r = render_mixture(&clean, &noise, &spec).map_err(|e| e.to_string())?;
        // Independent recomputation from the waveforms: the noise addend is
        // whatever the mixture holds beyond the target.
        let sig: f64 = r.target.samples.iter().map(|v| v * v).sum();
        let res: f64 = r
            .mix
            .mixture
            .samples
            .iter()
            .zip(&r.target.samples)
            .map(|(m, t)| (m - t).powi(2))
            .sum();
        let measured = 10.0 * (sig / res).log10();
        let err = (measured - spec.snr_db).abs().max((r.mix.measured_snr_db(&r.target) - spec.snr_db).abs());
        ensure(err < 1e-6, || format!("mixture {i}: requested {} dB, measured {measured} dB", spec.snr_db))?;
        worst = worst.max(err);
    }
    Ok(format!("100 mixtures, worst error {worst:.1e} dB"))
}

// 5 -------------------------------------------------------------------------

fn suppression_recursion() -> Outcome {
    let beta = 0.8;
    let mut worst = 0f64;
    for (a, b, c, w0) in [(1.0, 0.0, 0.3, 1.0), (0.5, 0.2, 0.9, 0.0), (0.8, 0.1, 0.0, 0.75), (1.0, 0.0, 1.0, 0.1)] {
        let target = a * c + b;
        let mut st = SuppressionState { w_prev: w0 };
        for t in 1..=100 {
            let w = update_strength(&mut st, c, a, b, beta).unwrap();
            let expected = beta.powi(t) * (w0 - target).abs();
            let err = ((w - target).abs() - expected).abs();
            ensure(err <= 1e-12, || format!("a={a} b={b} c={c} t={t}: off by {err:e}"))?;
            worst = worst.max(err);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let input: Vec<f32> = (0..4096).map(|_| rng.random_range(-20.0..20.0)).collect();
    let enhanced: Vec<f32> = (0..4096).map(|_| rng.random_range(-20.0..20.0)).collect();
    let mut out = vec![0f32; 4096];
    compensate(&enhanced, &input, 0.0, &mut out).unwrap();
    ensure(out.iter().zip(&input).all(|(o, i)| o.to_bits() == i.to_bits()), || "w=0 changed the input".into())?;
    compensate(&enhanced, &input, 1.0, &mut out).unwrap();
    ensure(out.iter().zip(&enhanced).all(|(o, e)| o.to_bits() == e.to_bits()), || "w=1 is not the enhanced frame".into())?;
    Ok(format!("beta=0.8 worst deviation {worst:.1e}; endpoints bit-exact"))
}

// 6 -------------------------------------------------------------------------

fn quantization_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut sampled = 0;
    let mut worst_ratio = 0f64;
    while sampled < 100_000 {
        let mag: f64 = 10f64.powf(rng.random_range(-3.0..1.0));
        let n = rng.random_range(100..5000);
        let t = Tensor {
            shape: vec![n],
            data: (0..n).map(|_| rng.random_range(-mag..mag)).collect(),
        };
        let q = quantize_tensor(&t);
        let half = q.scale as f64 / 2.0;
        for (x, y) in t.data.iter().zip(q.dequantize()) {
            // Allow the rounding of the comparison itself, a few ulps of x.
            let err = (x - y).abs();
            ensure(err <= half + 4.0 * f64::EPSILON * x.abs(), || format!("|{x} - {y}| > {half}"))?;
            worst_ratio = worst_ratio.max(err / half);
        }
        sampled += n;
    }

    let fcfg = fb(16);
    let cfg = MaskNetConfig {
        head_hidden: vec![8],
        ..net(16, 8, 2, 16)
    };
    let data = ToyCorpus {
        items: 16,
        secs: 1.0,
        seed: 62,
        ..Default::default()
    }
    .examples(&fcfg, 8)
    .map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        steps: 60,
        batch_size: 4,
        learning_rate: 3e-3,
        seed: 63,
        ..Default::default()
    };
    let trained = train(&data, &cfg, &LossConfig::default(), &tc).map_err(|e| e.to_string())?.params;
    let q = quantize_model(&trained).unwrap();
    let ex = &data[0];
    let mut frames: Vec<f32> = Vec::new();
    for e in &data {
        frames.extend_from_slice(e.noisy.as_slice());
        if frames.len() >= 100 * cfg.input_dim {
            break;
        }
    }
    frames.truncate(100 * cfg.input_dim);
    let x = FeatureSequence::new(frames, 100, cfg.input_dim, FeatureVariant::Filterbank, 0.01).unwrap();
    let mf = forward_sequence(&trained, &cfg, &x, &ex.dvec).unwrap().masks;
    let mq = forward_sequence(&q, &cfg, &x, &ex.dvec).unwrap().masks;
    let mae = mf.iter().zip(&mq).map(|(a, b)| (a - b).abs()).sum::<f64>() / mf.len() as f64;
    ensure(mae < 0.05, || format!("mask MAE {mae}"))?;

    let bytes = encode(&cfg, &q, None, &[]).unwrap();
    let back = decode(&bytes).map_err(|e| e.to_string())?;
    ensure(back.params == q && back.header.config == cfg, || "decoded model differs".into())?;
    ensure(encode(&cfg, &back.params, None, &[]).unwrap() == bytes, || "re-encoding changed the bytes".into())?;
    Ok(format!(
        "{sampled} weights, worst err/(scale/2) {worst_ratio:.4}; mask MAE {mae:.4}; VFM1 roundtrip exact"
    ))
}

// 7 -------------------------------------------------------------------------

const C7_TRAIN_SEED: u64 = 21;
const C7_INIT_SEED: u64 = 3;
const C7_EVAL_SEED: u64 = 77;

fn over_suppression_effect() -> Outcome {
    let fcfg = fb(32);
    let cfg = MaskNetConfig {
        head_hidden: vec![16],
        ..net(32, 16, 2, 32)
    };
    let data = ToyCorpus {
        items: 200,
        secs: 1.0,
        seed: C7_TRAIN_SEED,
        ..Default::default()
    }
    .examples(&fcfg, 16)
    .map_err(|e| e.to_string())?;
    let items: Vec<EvalItem> = ToyCorpus {
        items: 40,
        secs: 1.5,
        seed: C7_EVAL_SEED,
        ..Default::default()
    }
    .items()
    .map_err(|e| e.to_string())?
    .into_iter()
    .map(|it| EvalItem {
        dvec: embed_reference(&it.reference, &fcfg, 16).unwrap(),
        clean: it.clean,
        noise: it.noise,
        kind: it.spec.noise_kind,
    })
    .collect();
    let conditions = parse_conditions("additive").unwrap();
    let tc = TrainConfig {
        steps: 300,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: C7_INIT_SEED,
        ..Default::default()
    };
    // Full-strength masking, so the rates reflect the trained masks alone.
    let supp = SuppressionConfig::Fixed { w: 1.0 };
    let mut rows = Vec::new();
    for alpha in [1.0, 10.0] {
        let loss = LossConfig {
            alpha,
            ..Default::default()
        };
        let model = train(&data, &cfg, &loss, &tc).map_err(|e| e.to_string())?.params;
        let report = evaluate(&model, &cfg, &items, &conditions, supp, &EvalOptions::default())
            .map_err(|e| e.to_string())?;
        let speech = report.row("additive/speech").unwrap().clone();
        let nonspeech = report.row("additive/nonspeech").unwrap().clone();
        ensure(speech.items > 0 && nonspeech.items > 0, || "eval fixtures lack a noise kind".into())?;
        rows.push((alpha, speech, nonspeech));
    }
    let (_, s1, n1) = &rows[0];
    let (_, s10, n10) = &rows[1];
    let summary = format!(
        "nonspeech over-rate a=1 {:.4} vs a=10 {:.4}; speech MSE {:.3}/{:.3} vs raw {:.3} (seeds {C7_TRAIN_SEED}/{C7_INIT_SEED}/{C7_EVAL_SEED})",
        n1.over_suppression_rate, n10.over_suppression_rate, s1.mse_enhanced, s10.mse_enhanced, s1.mse_unenhanced
    );
    ensure(n10.over_suppression_rate < n1.over_suppression_rate, || summary.clone())?;
    ensure(
        s1.mse_enhanced < s1.mse_unenhanced && s10.mse_enhanced < s10.mse_unenhanced,
        || summary.clone(),
    )?;
    Ok(summary)
}

// 8 -------------------------------------------------------------------------

/// Parameter count from the layer shapes alone.
fn param_formula(f: usize, d: usize, layers: usize, h: usize, head: &[usize]) -> usize {
    let mut n = 0;
    for l in 0..layers {
        let input = if l == 0 { f + d } else { h };
        n += 4 * h * (input + h) + 4 * h;
    }
    n += h * f + f;
    let mut prev = h;
    for &w in head.iter().chain(std::iter::once(&1)) {
        n += prev * w + w;
        prev = w;
    }
    n
}

fn size_sanity() -> Outcome {
    let features = FeatureConfig::default();
    let mut notes = Vec::new();
    for (cfg, target_mb) in [
        (MaskNetConfig::standard(features.clone()), 6.8),
        (MaskNetConfig::small(features.clone()), 2.2),
    ] {
        ensure(cfg.input_dim == 512 && cfg.dvec_dim == 256, || "unexpected widths".into())?;
        let p = MaskNetParams::init(&cfg, 0).unwrap();
        let formula = param_formula(512, 256, cfg.lstm_layers, cfg.lstm_units, &cfg.head_hidden);
        ensure(p.num_params() == formula, || format!("{} params vs formula {formula}", p.num_params()))?;
        let bytes = encode(&cfg, &quantize_model(&p).unwrap(), None, &[]).unwrap().len();
        let mb = bytes as f64 / 1e6;
        ensure((mb - target_mb).abs() <= 0.25 * target_mb, || {
            format!("{}x{}: {mb:.2} MB vs {target_mb} MB", cfg.lstm_layers, cfg.lstm_units)
        })?;
        notes.push(format!("{}x{} {formula} params {mb:.2} MB", cfg.lstm_layers, cfg.lstm_units));
    }
    Ok(notes.join("; "))
}

// 9 -------------------------------------------------------------------------

fn throughput() -> Outcome {
    let cfg = MaskNetConfig::small(FeatureConfig::default());
    let q = quantize_model(&MaskNetParams::init(&cfg, 0).unwrap()).unwrap();
    let talkers = synth::speakers();
    let clean: Waveform = talkers[0].utterance(60.0, 0.1, 91);
    let reference = talkers[0].utterance(3.0, 0.1, 92);
    let item = EvalItem {
        dvec: embed_reference(&reference, &cfg.features, cfg.dvec_dim).unwrap(),
        noise: nonspeech_noise(NoiseType::Hum, 10.0, 0.1, 93),
        clean,
        kind: NoiseKind::NonSpeech,
    };
    let report = evaluate(
        &q,
        &cfg,
        &[item],
        &parse_conditions("clean").unwrap(),
        SuppressionConfig::default(),
        &EvalOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let row = report.row("clean").unwrap();
    ensure(report.quantized, || "model not reported as quantized".into())?;
    ensure(row.realtime_factor < 1.0, || format!("realtime factor {}", row.realtime_factor))?;
    Ok(format!("3x256 int8, 60 s audio, realtime factor {:.3}", row.realtime_factor))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("loss fidelity", loss_fidelity, Duration::from_secs(1)),
        ("gradient correctness", gradient_correctness, Duration::from_secs(30)),
        ("streaming equals batch", streaming_equals_batch, Duration::from_secs(10)),
        ("SNR accuracy", snr_accuracy, Duration::from_secs(10)),
        ("suppression recursion", suppression_recursion, Duration::from_secs(1)),
        ("quantization bounds", quantization_bounds, Duration::from_secs(30)),
        ("over-suppression effect", over_suppression_effect, Duration::from_secs(300)),
        ("model size", size_sanity, Duration::from_secs(60)),
        ("throughput", throughput, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > *budget => Err(format!("{msg}; took {took:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS {} {name}: {msg} [{took:.2?}]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

