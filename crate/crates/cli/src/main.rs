use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svc_core::audio::{read_wav, write_wav, AudioError};
use svc_core::dataset::{load_manifest, Corpus, DatasetError};
use svc_core::eval::{
    corpus_identifier, evaluate_model, write_report, EvalError, EvalMode, EvalOptions, IdModelSpec, IdTrainConfig,
};
use svc_core::inference::{convert, InferenceError};
use svc_core::model::{load_checkpoint, ModelError};
use svc_core::synthdata::{default_profiles, load_profiles, make_synthetic_manifest, SingerProfile, SynthError};
use svc_core::training::{train, TrainConfig, TrainError};

/// Unsupervised singing voice conversion.
#[derive(Parser)]
#[command(name = "svc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic singers and write a dataset manifest.
    Synth(SynthArgs),
    /// Train a model on a manifest (two phases).
    Train(TrainArgs),
    /// Convert a WAV file to another singer.
    Convert(ConvertArgs),
    /// Reconstruct or convert validation clips and score them.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for WAV files, manifest.json and profiles.json.
    #[arg(long)]
    out: PathBuf,
    /// JSON list of singer profiles; the built-in dark/bright pair if omitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Songs per singer; the last one is the validation split.
    #[arg(long, default_value_t = 4)]
    songs: usize,
    /// Song length in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
    /// Melody seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// `key = value` training config; defaults for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for checkpoints and metrics.csv.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the newest checkpoint under --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ConvertArgs {
    /// Source WAV file.
    #[arg(long)]
    input: PathBuf,
    /// Model checkpoint (.svc).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target singer id.
    #[arg(long)]
    singer: String,
    /// Destination WAV file.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling temperature; 0 picks the most likely sample.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset manifest; its validation files are evaluated.
    #[arg(long)]
    manifest: PathBuf,
    /// Model checkpoint (.svc).
    #[arg(long)]
    checkpoint: PathBuf,
    /// reconstruction or conversion.
    #[arg(long)]
    mode: EvalMode,
    /// CSV report destination.
    #[arg(long)]
    report: PathBuf,
    /// Singer profiles for the centroid oracle; profiles.json beside the
    /// manifest is used when present.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Validation files are cut into segments of this length (0 = whole files).
    #[arg(long, default_value_t = 2.0)]
    segment_seconds: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Identifier training steps.
    #[arg(long, default_value_t = 300)]
    id_steps: usize,
}

struct Failure {
    code: u8,
    message: String,
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

fn audio_failure(e: AudioError) -> Failure {
    match e {
        AudioError::Io { .. } => runtime(e),
        _ => data(e),
    }
}

fn dataset_failure(e: DatasetError) -> Failure {
    match e {
        DatasetError::Audio(a) => audio_failure(a),
        other => data(other),
    }
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::Nn(_) => runtime(e),
        other => data(other),
    }
}

fn inference_failure(e: InferenceError) -> Failure {
    match e {
        InferenceError::Model(m) => model_failure(m),
        InferenceError::Audio(a) => audio_failure(a),
        other => data(other),
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Io { .. } => runtime(e),
        TrainError::Dataset(d) => dataset_failure(d),
        TrainError::Model(m) => model_failure(m),
        TrainError::Inference(i) => inference_failure(i),
        other => data(other),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Report { .. } | EvalError::Nn(_) => runtime(e),
        EvalError::Inference(i) => inference_failure(i),
        other => data(other),
    }
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let profiles = match &a.profiles {
        Some(p) => load_profiles(p).map_err(data)?,
        None => default_profiles(),
    };
    let manifest = make_synthetic_manifest(&profiles, a.songs, a.duration, a.sample_rate, a.seed, &a.out).map_err(|e| {
        match e {
            SynthError::Io { .. } | SynthError::Audio(_) => runtime(e),
            other => data(other),
        }
    })?;
    println!("{}", manifest.display());
    Ok(())
}

fn load_corpus(manifest: &Path, sample_rate: u32) -> Result<(Corpus, svc_core::dataset::SingerRegistry), Failure> {
    let (m, registry) = load_manifest(manifest).map_err(dataset_failure)?;
    let corpus = Corpus::load(&m, &registry, sample_rate).map_err(dataset_failure)?;
    Ok((corpus, registry))
}

fn train_cmd(a: &TrainArgs) -> Result<(), Failure> {
    let config = match &a.config {
        Some(p) => TrainConfig::load(p).map_err(train_failure)?,
        None => TrainConfig::default(),
    };
    config.validate().map_err(train_failure)?;
    let (corpus, registry) = load_corpus(&a.manifest, config.model.sample_rate)?;
    let outcome = train(&config, &corpus, &registry, &a.out, a.resume).map_err(train_failure)?;
    for c in &outcome.checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

fn convert_cmd(a: &ConvertArgs) -> Result<(), Failure> {
    let checkpoint = load_checkpoint(&a.checkpoint).map_err(model_failure)?;
    checkpoint.singer_index(&a.singer).map_err(model_failure)?;
    let clip = read_wav(&a.input).map_err(data)?;
    let out = convert(&clip, &a.singer, &checkpoint, a.temperature, a.seed).map_err(inference_failure)?;
    write_wav(&out, &a.output).map_err(runtime)?;
    println!("{}", a.output.display());
    Ok(())
}

fn profiles_for(a: &EvaluateArgs) -> Result<Option<Vec<SingerProfile>>, Failure> {
    if let Some(p) = &a.profiles {
        return load_profiles(p).map(Some).map_err(data);
    }
    let beside = a.manifest.parent().unwrap_or(Path::new(".")).join("profiles.json");
    Ok(if beside.exists() { load_profiles(&beside).ok() } else { None })
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), Failure> {
    let checkpoint = load_checkpoint(&a.checkpoint).map_err(model_failure)?;
    let (corpus, registry) = load_corpus(&a.manifest, checkpoint.model.spec.sample_rate)?;
    if registry.ids() != checkpoint.meta.singer_ids.as_slice() {
        return Err(data(format!(
            "manifest singers {:?} differ from checkpoint singers {:?}",
            registry.ids(),
            checkpoint.meta.singer_ids
        )));
    }
    let profiles = profiles_for(a)?;
    let id_config = IdTrainConfig { steps: a.id_steps, seed: a.seed, ..IdTrainConfig::default() };
    let identifier = corpus_identifier(&corpus, true, &IdModelSpec::default(), &id_config).map_err(eval_failure)?;
    let options =
        EvalOptions { mode: a.mode, temperature: a.temperature, seed: a.seed, segment_seconds: a.segment_seconds };
    let outcome = evaluate_model(&checkpoint.model, registry.ids(), &corpus, &identifier, profiles.as_deref(), &options)
        .map_err(eval_failure)?;
    write_report(&a.report, &outcome.rows, outcome.oracle).map_err(eval_failure)?;
    print!("top1 {:.4} over {} clips", outcome.top1, outcome.rows.len());
    if let Some(o) = outcome.oracle {
        print!(", oracle {o:.4}");
    }
    println!(", correlation {:.4}", outcome.mean_correlation);
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SVC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure { code: 1, message: format!("SVC_THREADS must be a positive integer, got {value:?}") })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Convert(a) => convert_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
