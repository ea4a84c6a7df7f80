use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vflite::dataset::Sidecar;
use vflite::eval::EvalReport;
use vflite::frontend::extract;
use vflite::io::{read_vff, read_wav, write_wav};
use vflite::model_io::{load_checkpoint, load_model, save_model};
use vflite::synth::band_noise;
use vflite::training::{LossConfig, TrainConfig, Trainer};
use vflite::{FeatureConfig, FeatureVariant, NoiseKind, Waveform};

fn vflite(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vflite"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("spawn vflite")
}

fn ok(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let out = vflite(args);
    assert!(
        out.status.success(),
        "vflite {:?} failed: {}",
        args.iter().map(|a| a.as_ref().to_string_lossy().into_owned()).collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Synthetic corpus plus a filterbank archive with 16-dim d-vectors.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(items: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let f = Fixture { dir };
        ok(&[&"synth", &f.path("corp"), &"--items", &items.to_string(), &"--seed", &"4"]);
        ok(&[
            &"mix",
            &f.manifest(),
            &f.path("arch"),
            &"--variant",
            &"filterbank",
            &"--dvec-dim",
            &"16",
            &"--seed",
            &"9",
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn manifest(&self) -> PathBuf {
        self.path("corp/manifest.tsv")
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let p = self.path(out);
        let data = self.path("arch");
        let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"train", &data, &p];
        for s in extra {
            args.push(s);
        }
        ok(&args);
        p
    }
}

fn write_tone(path: &Path, secs: f64) -> Waveform {
    let w = band_noise(secs, 300.0, 3000.0, 0.1, 7);
    write_wav(path, &w).unwrap();
    // Re-read so the in-process oracle sees the same 16-bit samples.
    read_wav(path).unwrap()
}

#[test]
fn features_one_second_filterbank_shape_and_roundtrip() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("a.wav");
    let w = write_tone(&wav, 1.0);
    let out = dir.path().join("a.vff");
    ok(&[&"features", &wav, &out, &"--variant", &"filterbank"]);
    let s = read_vff(&out).unwrap();
    // 16000 samples, 400-sample window, 160 hop: 1 + (16000 - 400) / 160
    assert_eq!(s.shape(), (1 + (16000 - 400) / 160, 128));
    let expected = extract(&w, &FeatureConfig::with_variant(FeatureVariant::Filterbank)).unwrap();
    assert_eq!(s, expected);
}

#[test]
fn features_of_silence_are_zero() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("z.wav");
    write_wav(&wav, &Waveform::new(vec![0.0; 8000], 16000).unwrap()).unwrap();
    let out = dir.path().join("z.vff");
    ok(&[&"features", &wav, &out]);
    let s = read_vff(&out).unwrap();
    assert_eq!(s.variant, FeatureVariant::StackedFilterbank);
    assert!(s.n_frames() > 0);
    assert!(s.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("a.wav");
    write_tone(&wav, 1.0);
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"features": {"variant": "Filterbank", "n_mels": 40}}"#).unwrap();
    let out = dir.path().join("a.vff");
    ok(&[&"--config", &cfg, &"features", &wav, &out]);
    assert_eq!(read_vff(&out).unwrap().width(), 40);
    ok(&[&"--config", &cfg, &"features", &wav, &out, &"--variant", &"stacked"]);
    assert_eq!(read_vff(&out).unwrap().width(), 160);
}

fn dir_contents(p: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(p)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn mix_is_deterministic_and_hits_requested_snr() {
    let f = Fixture::new(8);
    let again = f.path("arch2");
    ok(&[
        &"mix",
        &f.manifest(),
        &again,
        &"--variant",
        &"filterbank",
        &"--dvec-dim",
        &"16",
        &"--seed",
        &"9",
    ]);
    assert_eq!(dir_contents(&f.path("arch")), dir_contents(&again));

    let mut kinds = [0; 2];
    for id in 0..8 {
        let sc: Sidecar =
            serde_json::from_slice(&fs::read(f.path(&format!("arch/{id:06}.json"))).unwrap()).unwrap();
        assert!((1.0..=10.0).contains(&sc.snr_db));
        assert!((sc.measured_snr_db - sc.snr_db).abs() < 1e-6, "{sc:?}");
        match sc.noise_kind {
            NoiseKind::NonSpeech => {
                kinds[0] += 1;
                assert!(sc.overlap_labels.iter().all(|&l| l == 0));
            }
            NoiseKind::Speech => kinds[1] += 1,
        }
    }
    assert!(kinds[0] > 0 && kinds[1] > 0, "{kinds:?}");
}

#[test]
fn train_zero_steps_writes_the_initial_checkpoint() {
    let f = Fixture::new(4);
    let p = f.train("init.vfm", &["--steps", "0", "--seed", "11"]);
    let ck = load_checkpoint(&p).unwrap();
    assert_eq!(ck.header.train_state.as_ref().unwrap().step, 0);
    let train = TrainConfig {
        seed: 11,
        steps: 0,
        ..TrainConfig::default()
    };
    let fresh = Trainer::new(&ck.header.config, LossConfig::default(), train).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fresh.encode_checkpoint().unwrap());
}

#[test]
fn alpha_one_reproduces_the_l2_run() {
    let f = Fixture::new(4);
    let common = ["--steps", "4", "--batch", "2", "--seed", "3"];
    let a = f.train("a.vfm", &[&common[..], &["--loss", "asym", "--alpha", "1"]].concat());
    let b = f.train("b.vfm", &[&common[..], &["--loss", "l2"]].concat());
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    assert_eq!(
        fs::read(f.path("a.vfm.metrics.jsonl")).unwrap(),
        fs::read(f.path("b.vfm.metrics.jsonl")).unwrap()
    );
}

#[test]
fn training_lowers_the_loss_and_resumes() {
    let f = Fixture::new(6);
    let full = f.train("full.vfm", &["--steps", "40", "--batch", "3", "--lr", "0.003"]);
    let log = fs::read_to_string(f.path("full.vfm.metrics.jsonl")).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["loss"].as_f64().unwrap())
        .collect();
    assert_eq!(losses.len(), 40);
    let head: f64 = losses[..5].iter().sum();
    let tail: f64 = losses[35..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");

    let half = f.train("half.vfm", &["--steps", "20", "--batch", "3", "--lr", "0.003"]);
    let half_s = half.to_string_lossy().into_owned();
    let resumed = f.train(
        "half.vfm",
        &["--steps", "40", "--batch", "3", "--lr", "0.003", "--resume", &half_s],
    );
    let log = fs::read_to_string(f.path("half.vfm.metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 40);
    let (_, a) = load_model(&full).unwrap();
    let (_, b) = load_model(&resumed).unwrap();
    // The checkpoint stores f32, so the resumed run drifts by rounding only.
    for (x, y) in a.tensors().unwrap().iter().zip(b.tensors().unwrap()) {
        for (p, q) in x.data.iter().zip(&y.data) {
            assert!((p - q).abs() < 1e-4, "{p} vs {q}");
        }
    }
}

#[test]
fn enhance_paths() {
    let f = Fixture::new(4);
    let model = f.train("m.vfm", &["--steps", "3"]);
    let wav = f.path("corp/0000_clean.wav");
    let dvec = f.path("r.vfd");
    ok(&[&"embed", &f.path("corp/0000_ref.wav"), &dvec, &"--dim", &"16"]);

    // Disabled suppression passes the input features through untouched.
    let off = f.path("off.vff");
    ok(&[&"enhance", &wav, &dvec, &model, &off, &"--suppression", &"fixed:0"]);
    let fcfg = load_model(&model).unwrap().0.features;
    assert_eq!(read_vff(&off).unwrap(), extract(&read_wav(&wav).unwrap(), &fcfg).unwrap());

    let (s, b) = (f.path("s.vff"), f.path("b.vff"));
    let (ts, tb) = (f.path("s.tsv"), f.path("b.tsv"));
    ok(&[&"enhance", &wav, &dvec, &model, &s, &"--w-trace", &ts]);
    ok(&[&"enhance", &wav, &dvec, &model, &b, &"--w-trace", &tb, &"--batch"]);
    let (s, b) = (read_vff(s).unwrap(), read_vff(b).unwrap());
    assert_eq!(s.shape(), b.shape());
    let worst = s
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0f32, f32::max);
    assert!(worst < 1e-5, "{worst}");

    let trace = fs::read_to_string(ts).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("frame\tw\tscore"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split('\t').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), s.n_frames());
    assert!(rows.iter().enumerate().all(|(i, r)| r[0] == i as f64 && (0.0..=1.0).contains(&r[1])));
}

#[test]
fn quantize_shrinks_weights_and_refuses_twice() {
    let f = Fixture::new(4);
    let ck = f.train("m.vfm", &["--steps", "0"]);
    // Weights only, so the size ratio is not diluted by optimizer moments.
    let (cfg, params) = load_model(&ck).unwrap();
    let float = f.path("float.vfm");
    save_model(&float, &cfg, &params).unwrap();
    let q = f.path("q.vfm");
    ok(&[&"quantize", &float, &q]);
    let (fs_, qs) = (fs::metadata(&float).unwrap().len(), fs::metadata(&q).unwrap().len());
    let ratio = fs_ as f64 / qs as f64;
    assert!((3.0..4.0).contains(&ratio), "{fs_} / {qs} = {ratio}");
    let (qcfg, qp) = load_model(&q).unwrap();
    assert_eq!(qcfg, cfg);
    assert!(qp.is_quantized());

    let out = vflite(&[&"quantize", &q, &f.path("qq.vfm")]);
    assert_eq!(code(&out), 2);
    assert!(!f.path("qq.vfm").exists());
}

#[test]
fn eval_writes_a_valid_report() {
    let f = Fixture::new(4);
    let model = f.train("m.vfm", &["--steps", "2"]);
    let report = f.path("r.json");
    ok(&[
        &"eval",
        &f.manifest(),
        &model,
        &report,
        &"--conditions",
        &"clean,additive",
        &"--seed",
        &"2",
    ]);
    let r: EvalReport = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    r.validate().unwrap();
    assert_eq!(r.epsilon, 0.05);
    let names: Vec<&str> = r.rows.iter().map(|x| x.condition.as_str()).collect();
    assert_eq!(names, ["clean", "additive/speech", "additive/nonspeech"]);
    assert_eq!(r.row("clean").unwrap().items, 4);
    assert!(r.rows.iter().all(|x| x.frames > 0 && x.realtime_factor > 0.0));

    // Apart from wall-clock timing the report is a function of the seed.
    let again = f.path("r2.json");
    ok(&[
        &"eval",
        &f.manifest(),
        &model,
        &again,
        &"--conditions",
        &"clean,additive",
        &"--seed",
        &"2",
    ]);
    let mut r2: EvalReport = serde_json::from_slice(&fs::read(&again).unwrap()).unwrap();
    for (a, b) in r2.rows.iter_mut().zip(&r.rows) {
        a.realtime_factor = b.realtime_factor;
    }
    assert_eq!(r2, r);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&vflite(&[&"--help"])), 0);
    assert_eq!(code(&vflite(&[&"nope"])), 1);
    assert_eq!(code(&vflite(&[&"features", &"a.wav"])), 1);

    let wav = d.join("a.wav");
    write_tone(&wav, 1.0);
    let out = d.join("a.vff");
    assert_eq!(code(&vflite(&[&"features", &wav, &out, &"--variant", &"mfcc"])), 1);
    let bad_cfg = d.join("bad.json");
    fs::write(&bad_cfg, r#"{"unknown_key": true}"#).unwrap();
    assert_eq!(code(&vflite(&[&"--config", &bad_cfg, &"features", &wav, &out])), 1);
    assert_eq!(code(&vflite(&[&"features", &d.join("missing.wav"), &out])), 2);
    fs::write(d.join("junk.wav"), b"not a wav file").unwrap();
    assert_eq!(code(&vflite(&[&"features", &d.join("junk.wav"), &out])), 2);

    // A float model whose last stored weight is NaN.
    let f = Fixture::new(2);
    let ck = f.train("m.vfm", &["--steps", "0"]);
    let (cfg, params) = load_model(&ck).unwrap();
    let model = d.join("nan.vfm");
    save_model(&model, &cfg, &params).unwrap();
    let mut bytes = fs::read(&model).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&model, bytes).unwrap();
    let dvec = d.join("r.vfd");
    ok(&[&"embed", &f.path("corp/0000_ref.wav"), &dvec, &"--dim", &"16"]);
    let out = vflite(&[&"enhance", &wav, &dvec, &model, &d.join("o.vff")]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
