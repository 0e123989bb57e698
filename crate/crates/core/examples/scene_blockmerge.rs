//! Splits a large room into overlapping blocks and stitches per-block
//! instance labels back into scene-wide ids.
//!
//! Without arguments the per-block labels are the ground truth restricted
//! to each block, which isolates the merge step. With a checkpoint path the
//! labels come from the network instead.
//!
//! cargo run --release --example scene_blockmerge -- [checkpoint]

use std::path::Path;

use simgroup::blockmerge::{block_merging, infer_scene, local_labels, partition_scene, rand_index, BlockConfig};
use simgroup::datagen::{generate_scene, SceneSpec};
use simgroup::diffmath::checkpoint;
use simgroup::grouping::GroupingConfig;
use simgroup::model::Model;

fn main() -> simgroup::Result<()> {
    let spec = SceneSpec {
        n_points: 4096,
        min_instances: 10,
        max_instances: 16,
        room: [4.0, 4.0, 1.0],
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec, 11)?;
    let cfg = BlockConfig::default();
    let truth = &scene.labels.instance;

    let merged = match std::env::args().nth(1) {
        Some(path) => {
            let model = Model::from_named(checkpoint::load(Path::new(&path))?, 0)?;
            let inference = infer_scene(&model, &scene.cloud, &GroupingConfig::default(), &cfg)?;
            print!("{}", inference.meta(&cfg));
            inference.result.point_instance
        }
        None => {
            let partition = partition_scene(&scene.cloud, cfg.block_size, cfg.stride);
            println!(
                "{} blocks on a {}x{} grid",
                partition.blocks.len(),
                partition.grid.0,
                partition.grid.1
            );
            let blocks: Vec<Vec<i64>> = partition.blocks.iter().map(|b| local_labels(truth, b)).collect();
            block_merging(&scene.cloud, &partition, &blocks, cfg.mode_min, cfg.resolution)?
        }
    };
    let found = merged.iter().filter(|&&v| v >= 0).collect::<std::collections::BTreeSet<_>>().len();
    println!(
        "{} scene instances recovered, {} in the ground truth, Rand index {:.5}",
        found,
        scene.labels.instance_ids().len(),
        rand_index(&merged, truth)
    );
    Ok(())
}
