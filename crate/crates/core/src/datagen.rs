//! Synthetic desk-scale scenes and per-class DBSCAN for manufacturing
//! instance labels.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};
use crate::pointset::{LabelSet, PointCloud, BACKGROUND, UNLABELED};

/// Placement attempts per instance before a scene is declared infeasible.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Points per instance never fall below this.
pub const MIN_POINTS_PER_INSTANCE: usize = 16;

/// Attribute columns: XYZ followed by RGB.
pub const SCENE_DIMS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Box,
    Ellipsoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    /// Total points, background included.
    pub n_points: usize,
    pub n_classes: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub room: [f64; 3],
    /// Minimum distance between instance centers.
    pub min_separation: f64,
    /// Half-extent range per class; a single entry applies to every class.
    pub half_extent: Vec<(f64, f64)>,
    /// Positional noise; samples are truncated at three sigma.
    pub noise_sigma: f64,
    pub color_sigma: f64,
    /// Points scattered uniformly through the room with no labels.
    pub background_points: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_points: 512,
            n_classes: 3,
            min_instances: 4,
            max_instances: 8,
            room: [2.0, 2.0, 1.0],
            min_separation: 0.6,
            half_extent: vec![(0.04, 0.08)],
            noise_sigma: 0.005,
            color_sigma: 0.05,
            background_points: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1");
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return bad("need 1 <= min_instances <= max_instances");
        }
        if !(self.min_separation > 0.0) {
            return bad("min_separation must be positive");
        }
        if self.room.iter().any(|&r| !(r > 0.0)) {
            return bad("room extents must be positive");
        }
        if self.half_extent.is_empty() || (self.half_extent.len() != 1 && self.half_extent.len() != self.n_classes) {
            return bad("half_extent needs one range or one per class");
        }
        for &(lo, hi) in &self.half_extent {
            if !(lo > 0.0 && hi >= lo) || self.room.iter().any(|&r| 2.0 * hi >= r) {
                return bad("half_extent ranges must be positive and fit the room");
            }
        }
        if self.noise_sigma < 0.0 || self.color_sigma < 0.0 {
            return bad("noise must be non-negative");
        }
        let labeled = self.n_points.saturating_sub(self.background_points);
        if labeled < self.max_instances * MIN_POINTS_PER_INSTANCE {
            return Err(Error::Config(format!(
                "{labeled} labeled points cannot give {} instances {MIN_POINTS_PER_INSTANCE} points each",
                self.max_instances
            )));
        }
        Ok(())
    }

    fn extent_range(&self, class: usize) -> (f64, f64) {
        if self.half_extent.len() == 1 {
            self.half_extent[0]
        } else {
            self.half_extent[class]
        }
    }
}

/// Base color of a class: hues spread evenly around the color wheel.
pub fn class_color(class: usize, n_classes: usize) -> [f64; 3] {
    let h = class as f64 / n_classes as f64 * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    // keep away from the saturated corners
    [0.2 + 0.6 * r, 0.2 + 0.6 * g, 0.2 + 0.6 * b]
}

/// A placed object.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedInstance {
    pub class: usize,
    pub shape: Primitive,
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
}

impl PlacedInstance {
    fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            if self.shape == Primitive::Box || u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                return std::array::from_fn(|a| self.center[a] + u[a] * self.half_extent[a]);
            }
        }
    }
}

fn truncated(normal: &Normal<f64>, sigma: f64, rng: &mut impl Rng) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 3.0 * sigma {
            return v;
        }
    }
}

/// Places instances with rejection sampling; each one gets
/// [`MAX_PLACEMENT_ATTEMPTS`] tries.
pub fn place_instances(spec: &SceneSpec, rng: &mut impl Rng) -> Result<Vec<PlacedInstance>> {
    let count = rng.random_range(spec.min_instances..=spec.max_instances);
    let mut placed: Vec<PlacedInstance> = Vec::with_capacity(count);
    for instance in 0..count {
        let class = rng.random_range(0..spec.n_classes);
        let shape = if rng.random_bool(0.5) { Primitive::Box } else { Primitive::Ellipsoid };
        let (lo, hi) = spec.extent_range(class);
        let half_extent: [f64; 3] = std::array::from_fn(|_| rng.random_range(lo..=hi));
        let mut center = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let c: [f64; 3] = std::array::from_fn(|a| rng.random_range(half_extent[a]..=spec.room[a] - half_extent[a]));
            let clear = placed.iter().all(|p| {
                let d2: f64 = (0..3).map(|a| (p.center[a] - c[a]).powi(2)).sum();
                d2 >= spec.min_separation * spec.min_separation
            });
            if clear {
                center = Some(c);
                break;
            }
        }
        let center = center.ok_or(Error::Infeasible {
            instance,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        placed.push(PlacedInstance {
            class,
            shape,
            center,
            half_extent,
        });
    }
    Ok(placed)
}

/// A generated scene with the objects it was drawn from.
#[derive(Clone, Debug)]
pub struct Scene {
    pub cloud: PointCloud,
    pub labels: LabelSet,
    pub instances: Vec<PlacedInstance>,
}

/// Samples a labeled scene. Points are shuffled so that labels carry no
/// ordering information.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = place_instances(spec, &mut rng)?;
    let labeled = spec.n_points - spec.background_points;
    let mut counts = vec![MIN_POINTS_PER_INSTANCE; instances.len()];
    for _ in 0..labeled - MIN_POINTS_PER_INSTANCE * instances.len() {
        counts[rng.random_range(0..instances.len())] += 1;
    }

    let pos_noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma");
    let col_noise = Normal::new(0.0, spec.color_sigma.max(f64::MIN_POSITIVE)).expect("sigma");
    let mut rows: Vec<([f64; SCENE_DIMS], i64, i64)> = Vec::with_capacity(spec.n_points);
    for (id, (inst, &k)) in instances.iter().zip(&counts).enumerate() {
        let base = class_color(inst.class, spec.n_classes);
        for _ in 0..k {
            let p = inst.sample(&mut rng);
            let mut row = [0.0; SCENE_DIMS];
            for a in 0..3 {
                let noise = if spec.noise_sigma > 0.0 { truncated(&pos_noise, spec.noise_sigma, &mut rng) } else { 0.0 };
                row[a] = p[a] + noise;
                let noise = if spec.color_sigma > 0.0 { col_noise.sample(&mut rng) } else { 0.0 };
                row[3 + a] = (base[a] + noise).clamp(0.0, 1.0);
            }
            rows.push((row, inst.class as i64, id as i64));
        }
    }
    for _ in 0..spec.background_points {
        let mut row = [0.0; SCENE_DIMS];
        for a in 0..3 {
            row[a] = rng.random_range(0.0..=spec.room[a]);
            row[3 + a] = rng.random_range(0.0..=1.0);
        }
        rows.push((row, UNLABELED, BACKGROUND));
    }
    rows.shuffle(&mut rng);

    let attrs = Matrix::from_fn(rows.len(), SCENE_DIMS, |i, j| rows[i].0[j]);
    let cloud = PointCloud::new(attrs)?;
    let labels = LabelSet::new(
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
        spec.n_classes,
    )?;
    Ok(Scene {
        cloud,
        labels,
        instances,
    })
}

/// Scene seed for position `index` of a dataset drawn from `base_seed`.
pub fn scene_seed(base_seed: u64, index: u64) -> u64 {
    crate::util::derive_seed(base_seed, index)
}

/// Scenes `first..first + count` of the dataset drawn from `base_seed`.
pub fn generate_dataset(spec: &SceneSpec, base_seed: u64, first: u64, count: u64) -> Result<Vec<Scene>> {
    (first..first + count)
        .map(|i| generate_scene(spec, scene_seed(base_seed, i)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    /// Neighbors within `eps`, the point itself included, for a core point.
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self> {
        if !(eps > 0.0) || min_pts == 0 {
            return Err(Error::Config("DBSCAN needs eps > 0 and min_pts >= 1".into()));
        }
        Ok(DbscanParams { eps, min_pts })
    }
}

/// Point counts above which neighborhoods come from a uniform grid.
const GRID_THRESHOLD: usize = 10_000;

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// For each point, the ascending indices (into `pts`) within `eps`.
fn neighborhoods(pts: &[[f64; 3]], eps: f64) -> Vec<Vec<usize>> {
    let e2 = eps * eps;
    if pts.len() < GRID_THRESHOLD {
        return pts
            .iter()
            .map(|&p| (0..pts.len()).filter(|&j| dist2(p, pts[j]) <= e2).collect())
            .collect();
    }
    let cell = |p: [f64; 3]| -> [i64; 3] { std::array::from_fn(|a| (p[a] / eps).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, &p) in pts.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    pts.iter()
        .map(|&p| {
            let c = cell(p);
            let mut out = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(v) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            out.extend(v.iter().copied().filter(|&j| dist2(p, pts[j]) <= e2));
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// DBSCAN on XYZ within each semantic class. Clusters are numbered densely,
/// class by class, in order of their lowest-index core point; a border point
/// joins the first cluster that reaches it. Noise and unlabeled points get
/// [`BACKGROUND`].
pub fn dbscan_instances(cloud: &PointCloud, semantic: &[i64], params: DbscanParams) -> Result<Vec<i64>> {
    if semantic.len() != cloud.n_points() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} points",
            semantic.len(),
            cloud.n_points()
        )));
    }
    let mut classes: Vec<i64> = semantic.iter().copied().filter(|&c| c >= 0).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = vec![BACKGROUND; semantic.len()];
    let mut next_id = 0i64;
    for class in classes {
        let members: Vec<usize> = (0..semantic.len()).filter(|&i| semantic[i] == class).collect();
        let pts: Vec<[f64; 3]> = members.iter().map(|&i| cloud.xyz(i)).collect();
        let nbrs = neighborhoods(&pts, params.eps);
        let core: Vec<bool> = nbrs.iter().map(|n| n.len() >= params.min_pts).collect();
        let mut label = vec![-1i64; pts.len()];
        for start in 0..pts.len() {
            if !core[start] || label[start] >= 0 {
                continue;
            }
            let id = next_id;
            next_id += 1;
            label[start] = id;
            let mut stack = vec![start];
            while let Some(p) = stack.pop() {
                for &q in &nbrs[p] {
                    if label[q] < 0 {
                        label[q] = id;
                        if core[q] {
                            stack.push(q);
                        }
                    }
                }
            }
        }
        for (k, &i) in members.iter().enumerate() {
            out[i] = label[k];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointset::build_groups;

    #[test]
    fn fixed_seed_repeats() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, 11).unwrap();
        let b = generate_scene(&spec, 11).unwrap();
        assert_eq!(a.cloud.attrs(), b.cloud.attrs());
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn default_spec_is_feasible() {
        let spec = SceneSpec::default();
        for seed in 0..300 {
            let s = generate_scene(&spec, seed).unwrap();
            let ids = s.labels.instance_ids();
            assert!((4..=8).contains(&ids.len()));
            assert_eq!(ids, (0..ids.len() as i64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_instance_scene() {
        let spec = SceneSpec {
            min_instances: 1,
            max_instances: 1,
            ..SceneSpec::default()
        };
        let s = generate_scene(&spec, 3).unwrap();
        assert!(s.labels.instance.iter().all(|&i| i == 0));
    }

    #[test]
    fn points_stay_inside_their_primitive() {
        let spec = SceneSpec::default();
        for seed in 0..20 {
            let s = generate_scene(&spec, seed).unwrap();
            let margin = 3.0 * spec.noise_sigma + 1e-12;
            for i in 0..s.cloud.n_points() {
                let inst = &s.instances[s.labels.instance[i] as usize];
                let p = s.cloud.xyz(i);
                for a in 0..3 {
                    assert!((p[a] - inst.center[a]).abs() <= inst.half_extent[a] + margin);
                }
            }
            // separated objects cannot share points
            for (i, a) in s.instances.iter().enumerate() {
                for b in &s.instances[i + 1..] {
                    assert!(dist2(a.center, b.center).sqrt() >= spec.min_separation);
                }
            }
        }
    }

    #[test]
    fn labels_are_self_consistent() {
        let s = generate_scene(&SceneSpec { background_points: 40, ..SceneSpec::default() }, 5).unwrap();
        let g = build_groups(&s.labels);
        for i in 0..s.labels.len() {
            let bg = s.labels.instance[i] < 0;
            assert_eq!(g.get(i, i), !bg);
            for j in 0..s.labels.len() {
                assert_eq!(g.get(i, j), !bg && s.labels.instance[i] == s.labels.instance[j]);
            }
        }
    }

    #[test]
    fn crowded_room_is_infeasible() {
        let spec = SceneSpec {
            min_instances: 8,
            max_instances: 8,
            min_separation: 5.0,
            ..SceneSpec::default()
        };
        assert!(matches!(
            generate_scene(&spec, 0),
            Err(Error::Infeasible { instance: 1, attempts: MAX_PLACEMENT_ATTEMPTS })
        ));
    }

    fn cloud_of(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(Matrix::from_rows(pts)).unwrap()
    }

    #[test]
    fn separated_clusters_split() {
        let pts = [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [1.0, 0.0, 0.0], [1.05, 0.0, 0.0]];
        let p = DbscanParams::new(0.1, 2).unwrap();
        assert_eq!(dbscan_instances(&cloud_of(&pts), &[0; 4], p).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn chain_is_one_cluster() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [0.09 * i as f64, 0.0, 0.0]).collect();
        let p = DbscanParams::new(0.1, 2).unwrap();
        assert_eq!(dbscan_instances(&cloud_of(&pts), &[0; 10], p).unwrap(), vec![0; 10]);
    }

    #[test]
    fn classes_never_merge() {
        let pts = [[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [0.02, 0.0, 0.0], [0.03, 0.0, 0.0]];
        let p = DbscanParams::new(0.5, 2).unwrap();
        let out = dbscan_instances(&cloud_of(&pts), &[0, 1, 0, 1], p).unwrap();
        assert_eq!(out, vec![0, 1, 0, 1]);
    }

    #[test]
    fn grid_neighborhoods_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 3]> = (0..GRID_THRESHOLD + 50)
            .map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
            .collect();
        let grid = neighborhoods(&pts, 0.2);
        for i in (0..pts.len()).step_by(97) {
            let brute: Vec<usize> = (0..pts.len()).filter(|&j| dist2(pts[i], pts[j]) <= 0.04).collect();
            assert_eq!(grid[i], brute);
        }
    }
}
