//! Clusters each class with DBSCAN and scores the result with the same
//! metrics used for the network: instance AP, box AP and semantic mIoU.
//!
//! cargo run --release --example dbscan_baseline -- [eps] [min_pts]

use simgroup::datagen::{dbscan_instances, generate_dataset, DbscanParams, SceneSpec};
use simgroup::evaluate::{evaluate, MatchConfig};
use simgroup::grouping::InstanceResult;

fn main() -> simgroup::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let eps: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let min_pts: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let params = DbscanParams::new(eps, min_pts)?;

    let scenes = generate_dataset(&SceneSpec::default(), 4, 0, 10)?;
    let mut preds = Vec::new();
    let mut semantic = Vec::new();
    let mut xyz = Vec::new();
    for scene in &scenes {
        // ground-truth classes stand in for a semantic predictor
        let classes = scene.labels.semantic.clone();
        let ids = dbscan_instances(&scene.cloud, &classes, params)?;
        preds.push(InstanceResult::from_labels(&ids, &classes, 1.0));
        xyz.push((0..scene.cloud.n_points()).map(|i| scene.cloud.xyz(i)).collect());
        semantic.push(classes);
    }
    let gts: Vec<_> = scenes.iter().map(|s| s.labels.clone()).collect();
    let report = evaluate(&preds, &semantic, &gts, &xyz, &MatchConfig::default())?;
    print!("{}", report.to_csv());
    Ok(())
}
