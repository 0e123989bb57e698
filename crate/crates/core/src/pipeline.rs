//! Single-cloud inference: network forward pass, similarity matrix,
//! threshold estimation, proposals and merging.

use crate::error::Result;
use crate::grouping::{boxes_from_instances, estimate_th_s, extract_proposals, group_merge, Aabb, GroupingConfig, InstanceResult};
use crate::model::{similarity, FeatureBundle, Model, SimilarityMatrix};
use crate::pointset::PointCloud;
use crate::util::derive_seed;

#[derive(Clone, Debug)]
pub struct Inference {
    pub bundle: FeatureBundle,
    pub similarity: SimilarityMatrix,
    pub semantic: Vec<i64>,
    /// Grouping threshold per predicted class.
    pub th_s: Vec<f64>,
    pub n_proposals: usize,
    pub result: InstanceResult,
    pub boxes: Vec<Aabb>,
}

/// Seed for the multi-claim draw of one sample within a run.
pub fn sample_seed(run_seed: u64, sample_id: u64) -> u64 {
    derive_seed(run_seed, sample_id)
}

pub fn infer(model: &Model, cloud: &PointCloud, cfg: &GroupingConfig, sample_id: u64) -> Result<Inference> {
    let bundle = model.forward(cloud)?;
    let s = similarity(&bundle);
    let semantic = bundle.predicted_classes();
    let th_s = estimate_th_s(&s, &semantic, model.config().n_classes, cfg);
    let confidence = bundle.clamped_confidence();
    let proposals = extract_proposals(&s, &confidence, &th_s, &semantic, cfg)?;
    let seeded = GroupingConfig {
        seed: sample_seed(cfg.seed, sample_id),
        ..cfg.clone()
    };
    let result = group_merge(&proposals, &seeded);
    let boxes = boxes_from_instances(cloud, &result)?;
    Ok(Inference {
        n_proposals: proposals.proposals.len(),
        bundle,
        similarity: s,
        semantic,
        th_s,
        result,
        boxes,
    })
}
