//! Trains a small network on synthetic rooms, saves a checkpoint, then
//! groups a held-out cloud into instances.
//!
//! cargo run --release --example train_and_infer -- [steps] [checkpoint]

use std::path::Path;

use simgroup::datagen::{generate_dataset, SceneSpec};
use simgroup::diffmath::checkpoint;
use simgroup::grouping::GroupingConfig;
use simgroup::model::{Model, ModelConfig};
use simgroup::pipeline::infer;
use simgroup::trainer::{fit, TrainSetup};

fn main() -> simgroup::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let spec = SceneSpec::default();
    let data: Vec<_> = generate_dataset(&spec, 0, 0, 200)?
        .into_iter()
        .map(|s| (s.cloud, s.labels))
        .collect();

    let mut model = Model::init(ModelConfig::default())?;
    let mut setup = TrainSetup::default();
    setup.train.max_steps = steps;
    setup.train.max_epochs = usize::MAX;
    setup.train.warmup_epochs = 3;
    fit(&mut model, &data, &setup, None, |e| {
        println!(
            "epoch {:3}  sim {:.4}  cf {:.4}  sem {:.4}  lr {:.1e}",
            e.epoch, e.losses.l_sim, e.losses.l_cf, e.losses.l_sem, e.lr
        );
    })?;
    if let Some(path) = args.get(2) {
        checkpoint::save(Path::new(path), &model.named_params())?;
        println!("saved {path}");
    }

    let held_out = generate_dataset(&spec, 0, 1_000_000, 1)?.remove(0);
    let inference = infer(&model, &held_out.cloud, &GroupingConfig::default(), 0)?;
    println!(
        "{} proposals, th_s per class {:?}",
        inference.n_proposals, inference.th_s
    );
    println!(
        "{} instances found, {} in the ground truth",
        inference.result.instances.len(),
        held_out.labels.instance_ids().len()
    );
    for (id, (info, bbox)) in inference.result.instances.iter().zip(&inference.boxes).enumerate() {
        println!(
            "  #{id}: class {} with {} points, confidence {:.3}, box {:.2?}..{:.2?}",
            info.class, info.count, info.confidence, bbox.min, bbox.max
        );
    }
    Ok(())
}
