//! Scene-scale inference: overlapping XY blocks, per-block grouping, and
//! stitching of block-local instance ids through a voxel grid.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grouping::{GroupingConfig, InstanceResult};
use crate::model::Model;
use crate::pipeline::infer;
use crate::pointset::PointCloud;
use crate::util;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub block_size: f64,
    pub stride: f64,
    /// Minimum number of agreeing cells for an instance to inherit an id.
    pub mode_min: usize,
    /// Voxel bins per axis.
    pub resolution: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            block_size: 1.0,
            stride: 0.5,
            mode_min: 5,
            resolution: 400,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.block_size > 0.0 && self.stride > 0.0 && self.stride <= self.block_size) {
            return Err(Error::Config("need 0 < stride <= block_size".into()));
        }
        if self.mode_min == 0 || self.resolution == 0 {
            return Err(Error::Config("mode_min and resolution must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    /// Scene point indices, ascending.
    pub points: Vec<usize>,
    /// Lower XY corner of the window.
    pub origin: [f64; 2],
    /// Window position as (column along X, row along Y).
    pub cell: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition {
    /// Non-empty windows in snake order.
    pub blocks: Vec<Block>,
    pub block_size: f64,
    pub stride: f64,
    /// Windows along X and Y before empty ones were dropped.
    pub grid: (usize, usize),
}

fn window_count(extent: f64, size: f64, stride: f64) -> usize {
    if extent <= size {
        1
    } else {
        ((extent - size) / stride).ceil() as usize + 1
    }
}

/// Splits the XY bounding rectangle into `block_size` windows every
/// `stride`. Windows are half-open except on the far side of the last
/// window, so every point lands in at least one. Rows along Y alternate
/// direction.
pub fn partition_scene(cloud: &PointCloud, block_size: f64, stride: f64) -> BlockPartition {
    let (lo, hi) = cloud.bounds();
    let nx = window_count(hi[0] - lo[0], block_size, stride);
    let ny = window_count(hi[1] - lo[1], block_size, stride);
    let inside = |v: f64, start: f64, last: bool| v >= start && (v < start + block_size || (last && v <= start + block_size));
    let mut blocks = Vec::new();
    for row in 0..ny {
        let y0 = lo[1] + row as f64 * stride;
        let cols: Vec<usize> = if row % 2 == 0 { (0..nx).collect() } else { (0..nx).rev().collect() };
        for col in cols {
            let x0 = lo[0] + col as f64 * stride;
            let points: Vec<usize> = (0..cloud.n_points())
                .filter(|&i| {
                    let p = cloud.xyz(i);
                    inside(p[0], x0, col + 1 == nx) && inside(p[1], y0, row + 1 == ny)
                })
                .collect();
            if !points.is_empty() {
                blocks.push(Block {
                    points,
                    origin: [x0, y0],
                    cell: (col, row),
                });
            }
        }
    }
    BlockPartition {
        blocks,
        block_size,
        stride,
        grid: (nx, ny),
    }
}

/// Sparse cubic grid over the scene bounds; unwritten cells read `-1`.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    resolution: usize,
    min: [f64; 3],
    max: [f64; 3],
    cells: HashMap<usize, i64>,
}

impl VoxelGrid {
    pub fn new(resolution: usize, min: [f64; 3], max: [f64; 3]) -> Self {
        VoxelGrid {
            resolution,
            min,
            max,
            cells: HashMap::new(),
        }
    }

    pub fn bins(&self, p: [f64; 3]) -> [usize; 3] {
        std::array::from_fn(|a| {
            let span = self.max[a] - self.min[a];
            if span <= 0.0 {
                return 0;
            }
            let b = (self.resolution as f64 * (p[a] - self.min[a]) / span).floor();
            b.clamp(0.0, (self.resolution - 1) as f64) as usize
        })
    }

    pub fn index(&self, p: [f64; 3]) -> usize {
        let [x, y, z] = self.bins(p);
        (x * self.resolution + y) * self.resolution + z
    }

    pub fn get(&self, k: usize) -> i64 {
        self.cells.get(&k).copied().unwrap_or(-1)
    }

    pub fn set(&mut self, k: usize, v: i64) {
        self.cells.insert(k, v);
    }
}

/// Cell index of `p` in a grid of `resolution` bins per axis over `[min, max]`.
pub fn voxel_index(p: [f64; 3], min: [f64; 3], max: [f64; 3], resolution: usize) -> usize {
    VoxelGrid::new(resolution, min, max).index(p)
}

/// Stitches block-local instance ids into scene ids.
///
/// The first block writes its ids into the cells of its points. For every
/// later block and each local instance, the already-written values of its
/// cells vote: a mode reached by at least `mode_min` cells is inherited,
/// otherwise a fresh id is allocated. Either way the id is written to all of
/// the instance's cells. Points finally read their cell. Fresh ids start
/// above every id the first block wrote. Local id `-1` is never written.
pub fn block_merging(
    cloud: &PointCloud,
    partition: &BlockPartition,
    block_labels: &[Vec<i64>],
    mode_min: usize,
    resolution: usize,
) -> Result<Vec<i64>> {
    if block_labels.len() != partition.blocks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} label sets for {} blocks",
            block_labels.len(),
            partition.blocks.len()
        )));
    }
    for (b, (block, labels)) in partition.blocks.iter().zip(block_labels).enumerate() {
        if block.points.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "block {b}: {} labels for {} points",
                labels.len(),
                block.points.len()
            )));
        }
    }
    let (min, max) = cloud.bounds();
    let mut grid = VoxelGrid::new(resolution, min, max);
    let cell_of: Vec<usize> = (0..cloud.n_points()).map(|i| grid.index(cloud.xyz(i))).collect();

    let mut next_id = 0i64;
    for (b, (block, labels)) in partition.blocks.iter().zip(block_labels).enumerate() {
        if b == 0 {
            for (&p, &l) in block.points.iter().zip(labels) {
                if l >= 0 {
                    grid.set(cell_of[p], l);
                }
            }
            next_id = labels.iter().copied().max().unwrap_or(-1).max(-1) + 1;
            continue;
        }
        let mut local: Vec<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
        local.sort_unstable();
        local.dedup();
        for id in local {
            let mut cells: Vec<usize> = block
                .points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == id)
                .map(|(&p, _)| cell_of[p])
                .collect();
            cells.sort_unstable();
            cells.dedup();
            let written = cells.iter().map(|&k| grid.get(k)).filter(|&v| v != -1);
            let value = match util::mode_with_count(written) {
                Some((v, count)) if count >= mode_min => v,
                _ => {
                    next_id += 1;
                    next_id - 1
                }
            };
            for k in cells {
                grid.set(k, value);
            }
        }
    }
    Ok(cell_of.iter().map(|&k| grid.get(k)).collect())
}

/// Rand index between two labelings; each distinct value, `-1` included, is
/// one cluster. Two labelings of fewer than two points agree trivially.
pub fn rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u128;
    if n < 2 {
        return 1.0;
    }
    let pairs = |c: u128| c * c.saturating_sub(1) / 2;
    let mut joint: HashMap<(i64, i64), u128> = HashMap::new();
    let mut ca: HashMap<i64, u128> = HashMap::new();
    let mut cb: HashMap<i64, u128> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let both: u128 = joint.values().map(|&c| pairs(c)).sum();
    let sa: u128 = ca.values().map(|&c| pairs(c)).sum();
    let sb: u128 = cb.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    // agreements = pairs together in both + pairs apart in both
    let agree = total + 2 * both - sa - sb;
    agree as f64 / total as f64
}

/// Relabels a block's scene ids densely in order of first appearance.
pub fn local_labels(scene_labels: &[i64], block: &Block) -> Vec<i64> {
    let mut map: HashMap<i64, i64> = HashMap::new();
    block
        .points
        .iter()
        .map(|&p| {
            let v = scene_labels[p];
            if v < 0 {
                return -1;
            }
            let next = map.len() as i64;
            *map.entry(v).or_insert(next)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SceneInference {
    pub partition: BlockPartition,
    pub block_labels: Vec<Vec<i64>>,
    pub result: InstanceResult,
    /// Predicted class per point from the last block that saw it.
    pub semantic: Vec<i64>,
    pub bounds: ([f64; 3], [f64; 3]),
}

impl SceneInference {
    /// Sidecar describing how the scene was processed.
    pub fn meta(&self, cfg: &BlockConfig) -> String {
        let (lo, hi) = self.bounds;
        let mut s = String::new();
        let _ = writeln!(s, "bounds_min={},{},{}", lo[0], lo[1], lo[2]);
        let _ = writeln!(s, "bounds_max={},{},{}", hi[0], hi[1], hi[2]);
        let _ = writeln!(s, "block_size={}", cfg.block_size);
        let _ = writeln!(s, "stride={}", cfg.stride);
        let _ = writeln!(s, "grid={}x{}", self.partition.grid.0, self.partition.grid.1);
        let _ = writeln!(s, "mode_min={}", cfg.mode_min);
        let _ = writeln!(s, "resolution={}", cfg.resolution);
        s
    }
}

/// Runs single-cloud inference on every block, with block XY shifted to
/// the block origin, then stitches the results. Instance confidence is the
/// mean clamped confidence of its points.
pub fn infer_scene(model: &Model, cloud: &PointCloud, grouping: &GroupingConfig, cfg: &BlockConfig) -> Result<SceneInference> {
    cfg.validate()?;
    let partition = partition_scene(cloud, cfg.block_size, cfg.stride);
    let n = cloud.n_points();
    let mut semantic = vec![-1i64; n];
    let mut confidence = vec![0.0f64; n];
    let mut block_labels = Vec::with_capacity(partition.blocks.len());
    for (b, block) in partition.blocks.iter().enumerate() {
        let local = cloud.select(&block.points)?.translated([block.origin[0], block.origin[1], 0.0]);
        let inf = infer(model, &local, grouping, b as u64)?;
        let conf = inf.bundle.clamped_confidence();
        for (k, &p) in block.points.iter().enumerate() {
            semantic[p] = inf.semantic[k];
            confidence[p] = conf[k];
        }
        block_labels.push(inf.result.point_instance);
    }
    let labels = block_merging(cloud, &partition, &block_labels, cfg.mode_min, cfg.resolution)?;
    let mut result = InstanceResult::from_labels(&labels, &semantic, 0.0);
    let mut sums = vec![0.0; result.instances.len()];
    for (p, &id) in result.point_instance.iter().enumerate() {
        if id >= 0 {
            sums[id as usize] += confidence[p];
        }
    }
    for (inst, s) in result.instances.iter_mut().zip(sums) {
        inst.confidence = s / inst.count as f64;
    }
    Ok(SceneInference {
        bounds: cloud.bounds(),
        partition,
        block_labels,
        result,
        semantic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(Matrix::from_rows(pts)).unwrap()
    }

    fn random_cloud(n: usize, extent: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random_range(0.0..extent), rng.random_range(0.0..extent), rng.random_range(0.0..1.0)])
            .collect();
        cloud(&pts)
    }

    #[test]
    fn small_scene_is_one_block() {
        let c = random_cloud(50, 0.9, 1);
        let p = partition_scene(&c, 1.0, 0.5);
        assert_eq!(p.blocks.len(), 1);
        assert_eq!(p.blocks[0].points, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn tiling_without_overlap_is_a_partition() {
        let c = random_cloud(400, 3.3, 2);
        let p = partition_scene(&c, 1.0, 1.0);
        let mut seen = vec![0; 400];
        for b in &p.blocks {
            for &i in &b.points {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&k| k == 1));
    }

    #[test]
    fn overlapping_membership_matches_enumeration() {
        let c = random_cloud(300, 2.7, 3);
        let p = partition_scene(&c, 1.0, 0.5);
        let (lo, hi) = c.bounds();
        // windows along each axis: starts lo + 0.5k for k while start + 1 < hi, plus one
        let starts = |a: usize| {
            let mut s = vec![lo[a]];
            while s.last().unwrap() + 1.0 < hi[a] {
                s.push(s.last().unwrap() + 0.5);
            }
            s
        };
        let (xs, ys) = (starts(0), starts(1));
        for i in 0..300 {
            let q = c.xyz(i);
            let within = |v: f64, s: &[f64]| {
                s.iter()
                    .enumerate()
                    .filter(|&(k, &st)| v >= st && (v < st + 1.0 || (k + 1 == s.len() && v <= st + 1.0)))
                    .count()
            };
            let expected = within(q[0], &xs) * within(q[1], &ys);
            let got = p.blocks.iter().filter(|b| b.points.contains(&i)).count();
            assert_eq!(got, expected);
            assert!((1..=4).contains(&got));
        }
    }

    #[test]
    fn snake_order() {
        let c = random_cloud(2000, 2.0, 4);
        let p = partition_scene(&c, 1.0, 0.5);
        let cells: Vec<(usize, usize)> = p.blocks.iter().map(|b| b.cell).collect();
        assert_eq!(
            cells,
            vec![(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (0, 1), (0, 2), (1, 2), (2, 2)]
        );
    }

    #[test]
    fn voxel_index_examples() {
        let (lo, hi) = ([0.0; 3], [1.0; 3]);
        assert_eq!(voxel_index([0.0; 3], lo, hi, 400), 0);
        let g = VoxelGrid::new(400, lo, hi);
        assert_eq!(g.bins([1.0; 3]), [399; 3]);
        assert_eq!(g.bins([0.5; 3]), [200; 3]);
        assert_eq!(VoxelGrid::new(400, lo, [1.0, 1.0, 0.0]).bins([0.5, 0.5, 0.0]), [200, 200, 0]);
    }

    #[test]
    fn single_block_passes_labels_through() {
        let c = random_cloud(40, 0.8, 5);
        let p = partition_scene(&c, 1.0, 0.5);
        let labels: Vec<i64> = (0..40).map(|i| (i % 3) as i64).collect();
        let out = block_merging(&c, &p, &[labels.clone()], 5, 400).unwrap();
        assert_eq!(out, labels);
    }

    #[test]
    fn disjoint_blocks_get_disjoint_ids() {
        let c = random_cloud(200, 1.9, 6);
        let p = partition_scene(&c, 1.0, 1.0);
        let pl: Vec<Vec<i64>> = p.blocks.iter().map(|b| vec![0; b.points.len()]).collect();
        let out = block_merging(&c, &p, &pl, 5, 400).unwrap();
        let mut ids = out.clone();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), p.blocks.len());
    }

    #[test]
    fn straddling_object_keeps_one_id() {
        // a dense slab across the x = 1 boundary of a 2 m scene
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = vec![[0.0, 0.0, 0.0], [2.0, 1.0, 1.0]];
        for _ in 0..300 {
            pts.push([rng.random_range(0.7..1.3), rng.random_range(0.2..0.4), rng.random_range(0.0..1.0)]);
        }
        let c = cloud(&pts);
        let gt: Vec<i64> = (0..pts.len()).map(|i| if i < 2 { i as i64 + 1 } else { 0 }).collect();
        let p = partition_scene(&c, 1.0, 0.5);
        let pl: Vec<Vec<i64>> = p.blocks.iter().map(|b| local_labels(&gt, b)).collect();
        let out = block_merging(&c, &p, &pl, 5, 400).unwrap();
        assert_eq!(rand_index(&out, &gt), 1.0);
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &[5, 5, 3, 3]), 1.0);
        // pairs: (0,1) together vs apart, others agree -> 5/6
        assert!((rand_index(&[0, 0, 1, 1], &[0, 1, 2, 2]) - 5.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn local_relabeling_is_invisible(seed in 0u64..500, shift in 1i64..7) {
            let c = random_cloud(150, 2.2, seed);
            let gt: Vec<i64> = (0..150).map(|i| {
                let q = c.xyz(i);
                (q[0] * 2.0).floor() as i64 * 10 + (q[1] * 2.0).floor() as i64
            }).collect();
            let p = partition_scene(&c, 1.0, 0.5);
            let pl: Vec<Vec<i64>> = p.blocks.iter().map(|b| local_labels(&gt, b)).collect();
            let permuted: Vec<Vec<i64>> = pl.iter().map(|l| {
                let k = l.iter().max().copied().unwrap_or(0) + 1;
                l.iter().map(|&v| (v + shift) % k).collect()
            }).collect();
            let a = block_merging(&c, &p, &pl, 5, 400).unwrap();
            let b = block_merging(&c, &p, &permuted, 5, 400).unwrap();
            prop_assert_eq!(rand_index(&a, &b), 1.0);
        }
    }
}
