//! The full training run: 200 synthetic rooms, 3000 steps, then instance
//! AP@0.5 and semantic accuracy on 20 held-out rooms.
//!
//! cargo run --release --example learning_benchmark -- [steps] [warmup_epochs] [checkpoint]

use std::path::Path;
use std::time::Instant;

use simgroup::datagen::{generate_dataset, SceneSpec};
use simgroup::diffmath::checkpoint;
use simgroup::evaluate::{mean_instance_ap, semantic_miou};
use simgroup::grouping::GroupingConfig;
use simgroup::model::{Model, ModelConfig};
use simgroup::pipeline::infer;
use simgroup::trainer::{fit, TrainSetup};

fn main() -> simgroup::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let warmup: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let spec = SceneSpec::default();
    let train: Vec<_> = generate_dataset(&spec, 0, 0, 200)?
        .into_iter()
        .map(|s| (s.cloud, s.labels))
        .collect();
    let test = generate_dataset(&spec, 0, 1_000_000, 20)?;

    let mut model = Model::init(ModelConfig::default())?;
    let mut setup = TrainSetup::default();
    setup.train.max_steps = steps;
    setup.train.max_epochs = usize::MAX;
    setup.train.warmup_epochs = warmup;
    let started = Instant::now();
    fit(&mut model, &train, &setup, None, |e| {
        println!(
            "epoch {:3}  step {:5}  sim {:.4}  cf {:.4}  sem {:.4}  [{:.0}s]",
            e.epoch,
            e.step,
            e.losses.l_sim,
            e.losses.l_cf,
            e.losses.l_sem,
            started.elapsed().as_secs_f64()
        );
    })?;

    let grouping = GroupingConfig::default();
    let mut preds = Vec::new();
    let mut semantic = Vec::new();
    for (i, scene) in test.iter().enumerate() {
        let inference = infer(&model, &scene.cloud, &grouping, i as u64)?;
        semantic.push(inference.semantic);
        preds.push(inference.result);
    }
    let gts: Vec<_> = test.iter().map(|s| s.labels.clone()).collect();
    let ap = mean_instance_ap(&preds, &gts, spec.n_classes, 0.5)?;
    let accuracy = semantic_miou(&semantic, &gts)?.accuracy;
    println!("AP@0.5 {:.4}", ap.unwrap_or(0.0));
    println!("semantic accuracy {accuracy:.4}");
    println!("{:.1}s", started.elapsed().as_secs_f64());
    if let Some(path) = args.get(3) {
        checkpoint::save(Path::new(path), &model.named_params())?;
    }
    Ok(())
}
