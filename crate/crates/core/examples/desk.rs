//! Desk-scale run: synthesize two singers, train, then report conversion
//! quality with the centroid oracle.
//!
//! `cargo run --release -p svc-core --example desk -- <out_dir> [config]`

use std::path::PathBuf;

use svc_core::dataset::{load_manifest, Corpus};
use svc_core::synthdata::{default_profiles, make_synthetic_manifest};
use svc_core::training::{train, TrainConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("desk_out"));
    let config = match args.get(2) {
        Some(p) => TrainConfig::load(&PathBuf::from(p)).expect("config"),
        None => TrainConfig::default(),
    };
    let data = out.join("data");
    let manifest = make_synthetic_manifest(&default_profiles(), 4, 30.0, config.model.sample_rate, 0, &data).expect("synth");
    let (m, reg) = load_manifest(&manifest).expect("manifest");
    let corpus = Corpus::load(&m, &reg, config.model.sample_rate).expect("corpus");
    let t = std::time::Instant::now();
    let outcome = train(&config, &corpus, &reg, &out.join("run"), false).expect("train");
    println!("trained {} epochs in {:.1}s", outcome.metrics.len(), t.elapsed().as_secs_f64());
}
