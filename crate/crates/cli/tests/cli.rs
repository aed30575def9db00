use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "sample_rate = 8000
pool = 400
encoder_blocks = 1
encoder_layers = 2
encoder_channels = 8
latent_dim = 8
decoder_blocks = 1
decoder_layers = 3
residual_channels = 8
skip_channels = 8
conditioning_dim = 16
embedding_dim = 8
confusion_channels = 8
crop_len = 800
batch_size = 2
steps_per_epoch = 2
phase1_epochs = 1
phase2_epochs = 1
backtranslation_items = 2
";

fn svc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svc")).args(args).env("RUST_LOG", "warn").output().expect("spawn svc")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = svc(&["synth", "--out", p(&data), "--songs", "2", "--duration", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data.join("manifest.json")
}

/// Synthesizes data and trains the tiny model; returns the manifest and the
/// final checkpoint.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let manifest = synth(dir);
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.join("run");
    let o = svc(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (manifest, run.join("checkpoints/epoch_0002.svc"))
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in [vec!["--help"], vec!["synth", "--help"], vec!["train", "--help"], vec!["convert", "--help"], vec![
        "evaluate", "--help",
    ]] {
        let o = svc(&cmd);
        assert_eq!(code(&o), 0, "{cmd:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--"), "{cmd:?}");
    }
}

#[test]
fn missing_flag_is_a_usage_error() {
    let o = svc(&["convert", "--input", "x.wav"]);
    assert_eq!(code(&o), 1);
    assert!(!stderr(&o).is_empty());
}

#[test]
fn synth_rejects_a_single_profile() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("one.json");
    let one = r#"[{"name":"solo","harmonics":[0.5,0.2,0.1,0.1,0.05,0.05,0.0,0.0,0.0,0.0],
        "vibrato_rate_hz":5.0,"vibrato_depth_cents":20.0,"f0_min":110.0,"f0_max":220.0}]"#;
    std::fs::write(&profiles, one).unwrap();
    let o = svc(&["synth", "--out", p(&dir.path().join("d")), "--profiles", p(&profiles)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn synth_into_unwritable_location_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let o = svc(&["synth", "--out", p(&blocker.join("sub")), "--songs", "2", "--duration", "1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn negative_lambda_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, format!("{TINY}lambda = -0.5\n")).unwrap();
    let o = svc(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));
}

#[test]
fn resume_without_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let o = svc(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&dir.path().join("empty")), "--resume"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn train_convert_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, checkpoint) = trained(dir.path());
    assert!(checkpoint.exists());
    assert!(dir.path().join("run/metrics.csv").exists());

    let input = dir.path().join("in.wav");
    let samples: Vec<f32> = (0..10_400).map(|n| 0.5 * (n as f32 * 0.05).sin()).collect();
    svc_core::audio::write_wav(&svc_core::audio::AudioClip::new(samples, 8000).unwrap(), &input).unwrap();

    let unknown = svc(&[
        "convert", "--input", p(&input), "--checkpoint", p(&checkpoint), "--singer", "nobody", "--output",
        p(&dir.path().join("x.wav")),
    ]);
    assert_eq!(code(&unknown), 2);
    let msg = stderr(&unknown);
    assert!(msg.contains("dark") && msg.contains("bright"), "{msg}");

    let mut outputs = Vec::new();
    for name in ["a.wav", "b.wav"] {
        let out = dir.path().join(name);
        let o = svc(&[
            "convert", "--input", p(&input), "--checkpoint", p(&checkpoint), "--singer", "bright", "--output", p(&out),
            "--seed", "7",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let converted = svc_core::audio::read_wav(&dir.path().join("a.wav")).unwrap();
    assert_eq!(converted.len(), 10_400);
    assert!((converted.duration_secs() - 1.3).abs() < 1e-9);

    let report = dir.path().join("report.csv");
    let o = svc(&[
        "evaluate", "--manifest", p(&manifest), "--checkpoint", p(&checkpoint), "--mode", "conversion", "--report",
        p(&report), "--segment-seconds", "0", "--id-steps", "5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    // header, one row per validation file (one per singer), summary
    assert_eq!(text.lines().count(), 1 + 2 + 1, "{text}");
    assert!(text.lines().last().unwrap().starts_with("summary,top1="));

    let missing = svc(&[
        "evaluate", "--manifest", p(&manifest), "--checkpoint", p(&dir.path().join("none.svc")), "--mode",
        "reconstruction", "--report", p(&report),
    ]);
    assert_eq!(code(&missing), 2, "{}", stderr(&missing));
}
