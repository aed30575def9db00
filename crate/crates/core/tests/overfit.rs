use svc_core::audio::{correlation, AudioClip};
use svc_core::augment::Variant;
use svc_core::dataset::{CropSource, TrainingItem};
use svc_core::inference::convert_with_model;
use svc_core::model::SvcModel;
use svc_core::nn::Adam;
use svc_core::training::{autoencoder_step, TrainConfig};

fn tone(freq: f64, len: usize) -> Vec<f32> {
    (0..len).map(|n| (0.5 * (std::f64::consts::TAU * freq * n as f64 / 8000.0).sin()) as f32).collect()
}

#[test]
fn overfit_model_reproduces_its_input_as_the_same_singer() {
    let config = TrainConfig::parse(
        "sample_rate = 8000\npool = 400\nencoder_blocks = 1\nencoder_layers = 3\nencoder_channels = 16\n\
         latent_dim = 8\ndecoder_blocks = 1\ndecoder_layers = 6\nresidual_channels = 16\nskip_channels = 16\n\
         conditioning_dim = 16\nembedding_dim = 8\nconfusion_channels = 8\nlearning_rate = 0.01\n",
    )
    .unwrap();
    let clips = [tone(200.0, 1600), tone(330.0, 1600)];
    let batch: Vec<TrainingItem> = clips
        .iter()
        .enumerate()
        .map(|(j, c)| {
            TrainingItem::from_audio(c, 8000, j, CropSource { path: format!("tone{j}"), start: 0, variant: Variant::Identity })
        })
        .collect();
    let mut model = SvcModel::<f32>::new(&config.model, 2, 3).unwrap();
    let mut opt = Adam::new(config.adam());
    let mut last = f64::INFINITY;
    for _ in 0..400 {
        last = autoencoder_step(&mut model, &mut opt, &batch, 0.0).unwrap().reconstruction;
    }
    for (j, c) in clips.iter().enumerate() {
        let clip = AudioClip::new(c.clone(), 8000).unwrap();
        let out = convert_with_model(&model, &clip, j, 0.0, 0).unwrap();
        let r = correlation(&clip.samples, &out.samples);
        assert!(r >= 0.8, "singer {j}: correlation {r:.3}, final loss {last:.3}");
    }
}
