//! Turning a similarity matrix into disjoint instances.
//!
//! Every row of the similarity matrix is a group proposal: the points closer
//! to its seed than the seed class's threshold. Proposals with low
//! confidence or too few members are discarded, the rest go through a
//! cardinality-ordered non-maximum suppression, and each point is handed to
//! a surviving proposal that contains it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::SimilarityMatrix;
use crate::pointset::PointCloud;
use crate::util;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    Fixed,
    Histogram,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ThresholdMode::Fixed),
            "histogram" => Ok(ThresholdMode::Histogram),
            _ => Err(Error::Config(format!("unknown th_s_mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdMode::Fixed => "fixed",
            ThresholdMode::Histogram => "histogram",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupingConfig {
    /// Minimum proposal confidence.
    pub th_c: f64,
    /// IoU above which proposals are merged.
    pub th_m1: f64,
    /// Minimum proposal cardinality.
    pub th_m2: usize,
    pub th_s_mode: ThresholdMode,
    pub th_s_fixed: f64,
    pub th_s_min: f64,
    /// Exclusive upper bound for estimated thresholds.
    pub th_s_max: f64,
    /// Upper end of the distance histogram.
    pub hist_max: f64,
    pub hist_bins: usize,
    /// Seed for assigning points claimed by several instances.
    pub seed: u64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            th_c: 0.1,
            th_m1: 0.6,
            th_m2: 20,
            th_s_mode: ThresholdMode::Histogram,
            th_s_fixed: 1.0,
            th_s_min: 0.5,
            th_s_max: 1.0,
            hist_max: 2.0,
            hist_bins: 64,
            seed: 0,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.th_m1 > 0.0 && self.th_m1 < 1.0) {
            return Err(Error::Config(format!("th_m1 must be in (0, 1), got {}", self.th_m1)));
        }
        if self.th_m2 == 0 {
            return Err(Error::Config("th_m2 must be >= 1".into()));
        }
        if !(self.th_s_min > 0.0 && self.th_s_min < self.th_s_max) {
            return Err(Error::Config("need 0 < th_s_min < th_s_max".into()));
        }
        if self.hist_bins < 2 || !(self.hist_max > 0.0) {
            return Err(Error::Config("histogram needs >= 2 bins over a positive range".into()));
        }
        Ok(())
    }
}

/// Largest float strictly below `x` (for positive finite `x`).
fn below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Otsu threshold over a fixed-range histogram of `values`.
///
/// Candidate cuts sit on bin edges. When several consecutive edges reach the
/// same maximal between-class variance (empty bins between two modes), the
/// middle of that run is returned. `None` when no cut separates anything.
pub fn otsu_threshold(values: &[f64], bins: usize, max: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let width = max / bins as f64;
    let mut hist = vec![0usize; bins];
    for &v in values {
        let b = ((v / width).floor().max(0.0) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let center = |b: usize| (b as f64 + 0.5) * width;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &c)| c as f64 * center(b)).sum();

    let mut variances = Vec::with_capacity(bins - 1);
    let (mut w0, mut s0) = (0.0, 0.0);
    for k in 1..bins {
        w0 += hist[k - 1] as f64;
        s0 += hist[k - 1] as f64 * center(k - 1);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            variances.push(0.0);
            continue;
        }
        let (m0, m1) = (s0 / w0, (sum_all - s0) / w1);
        variances.push((w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1));
    }
    let best = variances.iter().cloned().fold(0.0, f64::max);
    if best <= 0.0 {
        return None;
    }
    let tol = best * 1e-12;
    let first = variances.iter().position(|&v| v >= best - tol)?;
    let mut last = first;
    while last + 1 < variances.len() && variances[last + 1] >= best - tol {
        last += 1;
    }
    // variances[k - 1] belongs to the edge k * width
    Some((first + last + 2) as f64 * 0.5 * width)
}

/// Per-class grouping threshold from the distances between points predicted
/// to share that class. Classes with fewer than two points fall back to
/// `th_s_fixed`; estimates are clamped to `[th_s_min, th_s_max)`.
pub fn estimate_th_s(
    s: &SimilarityMatrix,
    classes: &[i64],
    n_classes: usize,
    cfg: &GroupingConfig,
) -> Vec<f64> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in classes.iter().enumerate() {
        if c >= 0 && (c as usize) < n_classes {
            members[c as usize].push(i);
        }
    }
    members
        .iter()
        .map(|pts| {
            if cfg.th_s_mode == ThresholdMode::Fixed || pts.len() < 2 {
                return cfg.th_s_fixed;
            }
            let mut d = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
            for (a, &i) in pts.iter().enumerate() {
                let row = s.row(i);
                d.extend(pts[a + 1..].iter().map(|&j| row[j]));
            }
            match otsu_threshold(&d, cfg.hist_bins, cfg.hist_max) {
                Some(t) => t.max(cfg.th_s_min).min(below(cfg.th_s_max)),
                None => cfg.th_s_min,
            }
        })
        .collect()
}

/// One candidate instance seeded at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    /// Member point indices, ascending.
    pub members: Vec<usize>,
    pub confidence: f64,
    pub seed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupProposalSet {
    pub proposals: Vec<Proposal>,
    /// Predicted semantic class per point.
    pub point_classes: Vec<i64>,
}

/// Proposal `i` is `{j : S_ij < th_s[class(i)]}`; it is kept when its
/// confidence reaches `th_c` and it has at least `th_m2` members.
pub fn extract_proposals(
    s: &SimilarityMatrix,
    confidence: &[f64],
    th_s: &[f64],
    classes: &[i64],
    cfg: &GroupingConfig,
) -> Result<GroupProposalSet> {
    let n = s.n();
    if confidence.len() != n || classes.len() != n {
        return Err(Error::InvalidArgument(format!(
            "similarity is {n}x{n} but got {} confidences and {} classes",
            confidence.len(),
            classes.len()
        )));
    }
    let mut proposals = Vec::new();
    for i in 0..n {
        let conf = confidence[i].clamp(0.0, 1.0);
        if conf < cfg.th_c {
            continue;
        }
        let th = usize::try_from(classes[i])
            .ok()
            .and_then(|c| th_s.get(c).copied())
            .unwrap_or(cfg.th_s_fixed);
        let members: Vec<usize> = s
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < th)
            .map(|(j, _)| j)
            .collect();
        if members.len() >= cfg.th_m2 && !members.is_empty() {
            proposals.push(Proposal {
                members,
                confidence: conf,
                seed: i,
            });
        }
    }
    Ok(GroupProposalSet {
        proposals,
        point_classes: classes.to_vec(),
    })
}

/// `|a ∩ b| / |a ∪ b|` for ascending index lists.
pub fn set_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Indices of the proposals that survive suppression, in visiting order.
///
/// Proposals are visited by cardinality (largest first, lower seed on ties);
/// each unconsumed proposal becomes a representative and absorbs every later
/// unconsumed proposal whose IoU with it exceeds `th_m1`.
pub fn suppress(proposals: &[Proposal], th_m1: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&proposals[a], &proposals[b]);
        pb.members
            .len()
            .cmp(&pa.members.len())
            .then(pa.seed.cmp(&pb.seed))
    });
    let mut consumed = vec![false; proposals.len()];
    let mut survivors = Vec::new();
    for (pos, &rep) in order.iter().enumerate() {
        if consumed[rep] {
            continue;
        }
        consumed[rep] = true;
        survivors.push(rep);
        for &other in &order[pos + 1..] {
            if !consumed[other] && set_iou(&proposals[rep].members, &proposals[other].members) > th_m1 {
                consumed[other] = true;
            }
        }
    }
    survivors
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceInfo {
    pub class: i64,
    pub count: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceResult {
    /// Instance id per point, `-1` when unassigned.
    pub point_instance: Vec<i64>,
    pub instances: Vec<InstanceInfo>,
    /// Points that were contained in more than one surviving proposal.
    pub multi_claimed: usize,
}

impl InstanceResult {
    pub fn n_points(&self) -> usize {
        self.point_instance.len()
    }

    /// Member indices of every instance.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.instances.len()];
        for (p, &id) in self.point_instance.iter().enumerate() {
            if id >= 0 {
                out[id as usize].push(p);
            }
        }
        out
    }

    /// Builds a result from per-point ids (any non-negative labels), giving
    /// every instance the mode of its members' classes.
    pub fn from_labels(labels: &[i64], point_classes: &[i64], confidence: f64) -> InstanceResult {
        let mut ids: Vec<i64> = labels.iter().copied().filter(|&v| v >= 0).collect();
        ids.sort_unstable();
        ids.dedup();
        let dense = |v: i64| ids.binary_search(&v).map(|k| k as i64).unwrap_or(-1);
        let point_instance: Vec<i64> = labels.iter().map(|&v| if v >= 0 { dense(v) } else { -1 }).collect();
        let mut instances: Vec<InstanceInfo> = (0..ids.len())
            .map(|_| InstanceInfo {
                class: -1,
                count: 0,
                confidence,
            })
            .collect();
        let mut classes: Vec<Vec<i64>> = vec![Vec::new(); ids.len()];
        for (p, &id) in point_instance.iter().enumerate() {
            if id >= 0 {
                instances[id as usize].count += 1;
                classes[id as usize].push(point_classes[p]);
            }
        }
        for (inst, cls) in instances.iter_mut().zip(classes) {
            inst.class = util::mode(cls).unwrap_or(-1);
        }
        InstanceResult {
            point_instance,
            instances,
            multi_claimed: 0,
        }
    }
}

/// Suppression followed by point assignment and class voting.
///
/// A point inside several survivors goes to one of them uniformly at random
/// (seeded by `cfg.seed`). Instances that lose every point are dropped and
/// the remaining ids stay dense in survivor order.
pub fn group_merge(set: &GroupProposalSet, cfg: &GroupingConfig) -> InstanceResult {
    let n = set.point_classes.len();
    let survivors = suppress(&set.proposals, cfg.th_m1);
    let mut claims: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &p) in survivors.iter().enumerate() {
        for &m in &set.proposals[p].members {
            claims[m].push(k);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut multi_claimed = 0;
    let assigned: Vec<Option<usize>> = claims
        .iter()
        .map(|c| match c.len() {
            0 => None,
            1 => Some(c[0]),
            len => {
                multi_claimed += 1;
                Some(c[rng.random_range(0..len)])
            }
        })
        .collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); survivors.len()];
    for (p, a) in assigned.iter().enumerate() {
        if let Some(k) = a {
            members[*k].push(p);
        }
    }
    let mut remap = vec![-1i64; survivors.len()];
    let mut instances = Vec::new();
    for (k, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        remap[k] = instances.len() as i64;
        instances.push(InstanceInfo {
            class: util::mode(m.iter().map(|&p| set.point_classes[p])).unwrap_or(-1),
            count: m.len(),
            confidence: set.proposals[survivors[k]].confidence,
        });
    }
    InstanceResult {
        point_instance: assigned
            .iter()
            .map(|a| a.map_or(-1, |k| remap[k]))
            .collect(),
        instances,
        multi_claimed,
    }
}

/// Axis-aligned 3D box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn volume(&self) -> f64 {
        (0..3).map(|a| (self.max[a] - self.min[a]).max(0.0)).product()
    }

    pub fn iou(&self, other: &Aabb) -> f64 {
        let inter: f64 = (0..3)
            .map(|a| (self.max[a].min(other.max[a]) - self.min[a].max(other.min[a])).max(0.0))
            .product();
        let union = self.volume() + other.volume() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Tight box over the XYZ of every instance's members.
pub fn boxes_from_instances(cloud: &PointCloud, result: &InstanceResult) -> Result<Vec<Aabb>> {
    if cloud.n_points() != result.n_points() {
        return Err(Error::InvalidArgument(format!(
            "result covers {} points, cloud has {}",
            result.n_points(),
            cloud.n_points()
        )));
    }
    let mut boxes = vec![
        Aabb {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        };
        result.instances.len()
    ];
    let mut seen = vec![false; boxes.len()];
    for (p, &id) in result.point_instance.iter().enumerate() {
        if id < 0 {
            continue;
        }
        let b = &mut boxes[id as usize];
        seen[id as usize] = true;
        let xyz = cloud.xyz(p);
        for a in 0..3 {
            b.min[a] = b.min[a].min(xyz[a]);
            b.max[a] = b.max[a].max(xyz[a]);
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!("instance {k} has no members")));
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Matrix;

    fn prop(members: std::ops::Range<usize>, seed: usize) -> Proposal {
        Proposal {
            members: members.collect(),
            confidence: 0.9,
            seed,
        }
    }

    #[test]
    fn subset_merges_into_larger() {
        let set = GroupProposalSet {
            proposals: vec![prop(1..251, 7), prop(1..301, 3)],
            point_classes: vec![0; 301],
        };
        assert!((set_iou(&set.proposals[0].members, &set.proposals[1].members) - 250.0 / 300.0).abs() < 1e-15);
        assert_eq!(suppress(&set.proposals, 0.6), vec![1]);
        let r = group_merge(&set, &GroupingConfig::default());
        assert_eq!(r.instances.len(), 1);
        assert_eq!(r.instances[0].count, 300);
        assert_eq!(r.point_instance[0], -1);
    }

    #[test]
    fn disjoint_proposals_stay_separate() {
        let set = GroupProposalSet {
            proposals: vec![prop(0..3, 0), prop(3..7, 3)],
            point_classes: vec![1, 1, 1, 2, 2, 0, 2],
        };
        let r = group_merge(&set, &GroupingConfig::default());
        assert_eq!(r.multi_claimed, 0);
        assert_eq!(r.point_instance, vec![1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(r.instances[0].class, 2);
        assert_eq!(r.instances[1].class, 1);
    }

    #[test]
    fn overlapping_survivors_split_contested_points() {
        // IoU 2/6 keeps both; points 2 and 3 are contested
        let set = GroupProposalSet {
            proposals: vec![prop(0..4, 0), prop(2..6, 5)],
            point_classes: vec![0; 6],
        };
        let cfg = GroupingConfig::default();
        let r = group_merge(&set, &cfg);
        assert_eq!(r.multi_claimed, 2);
        assert!(r.point_instance.iter().all(|&v| v >= 0));
        assert_eq!(r, group_merge(&set, &cfg));
    }

    #[test]
    fn class_vote_ties_to_lowest() {
        let set = GroupProposalSet {
            proposals: vec![prop(0..4, 0)],
            point_classes: vec![2, 1, 2, 1],
        };
        let r = group_merge(&set, &GroupingConfig::default());
        assert_eq!(r.instances[0].class, 1);
    }

    fn sim(rows: Vec<Vec<f64>>) -> SimilarityMatrix {
        SimilarityMatrix::from_matrix(Matrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn isolated_row_is_singleton_and_dropped() {
        let s = sim(vec![vec![0.0, 2.0, 2.0], vec![2.0, 0.0, 0.1], vec![2.0, 0.1, 0.0]]);
        let cfg = GroupingConfig {
            th_m2: 1,
            ..Default::default()
        };
        let p = extract_proposals(&s, &[1.0; 3], &[1.0], &[0, 0, 0], &cfg).unwrap();
        assert_eq!(p.proposals[0].members, vec![0]);
        let cfg = GroupingConfig {
            th_m2: 2,
            ..Default::default()
        };
        let p = extract_proposals(&s, &[1.0; 3], &[1.0], &[0, 0, 0], &cfg).unwrap();
        assert_eq!(p.proposals.len(), 2);
        assert!(p.proposals.iter().all(|q| q.seed != 0));
    }

    #[test]
    fn low_confidence_dropped() {
        let s = sim(vec![vec![0.0, 0.1], vec![0.1, 0.0]]);
        let cfg = GroupingConfig {
            th_m2: 1,
            ..Default::default()
        };
        let p = extract_proposals(&s, &[0.05, 0.5], &[1.0], &[0, 0], &cfg).unwrap();
        assert_eq!(p.proposals.len(), 1);
        assert_eq!(p.proposals[0].seed, 1);
    }

    #[test]
    fn block_diagonal_gives_two_groups() {
        let n = 6;
        let s = sim(
            (0..n)
                .map(|i| (0..n).map(|j| if (i < 3) == (j < 3) { 0.0 } else { 2.0 }).collect())
                .collect(),
        );
        let cfg = GroupingConfig {
            th_m2: 1,
            ..Default::default()
        };
        let p = extract_proposals(&s, &[1.0; 6], &[1.0], &[0; 6], &cfg).unwrap();
        let mut sets: Vec<Vec<usize>> = p.proposals.iter().map(|q| q.members.clone()).collect();
        sets.sort();
        sets.dedup();
        assert_eq!(sets, vec![vec![0, 1, 2], vec![3, 4, 5]]);
        let r = group_merge(&p, &cfg);
        assert_eq!(r.point_instance, vec![0, 0, 0, 1, 1, 1]);
    }

    /// Brute-force Otsu: every bin edge, explicit class means.
    fn otsu_oracle(values: &[f64], bins: usize, max: f64) -> Vec<(f64, f64)> {
        let w = max / bins as f64;
        let bin = |v: f64| ((v / w).floor() as usize).min(bins - 1);
        (1..bins)
            .map(|k| {
                let lo: Vec<f64> = values.iter().filter(|&&v| bin(v) < k).map(|&v| (bin(v) as f64 + 0.5) * w).collect();
                let hi: Vec<f64> = values.iter().filter(|&&v| bin(v) >= k).map(|&v| (bin(v) as f64 + 0.5) * w).collect();
                let var = if lo.is_empty() || hi.is_empty() {
                    0.0
                } else {
                    let n = values.len() as f64;
                    let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
                    let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
                    (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2)
                };
                (k as f64 * w, var)
            })
            .collect()
    }

    #[test]
    fn otsu_bimodal_lands_between_modes() {
        let mut vals = Vec::new();
        for k in 0..40 {
            vals.push(0.08 + 0.001 * (k % 5) as f64);
            vals.push(1.78 + 0.002 * (k % 7) as f64);
        }
        let t = otsu_threshold(&vals, 64, 2.0).unwrap();
        assert!(t > 0.2 && t < 1.8, "{t}");
        // the oracle's maximizing edges bracket the returned threshold
        let oracle = otsu_oracle(&vals, 64, 2.0);
        let best = oracle.iter().map(|o| o.1).fold(0.0, f64::max);
        let maxima: Vec<f64> = oracle.iter().filter(|o| (o.1 - best).abs() <= best * 1e-12).map(|o| o.0).collect();
        let (lo, hi) = (maxima[0], *maxima.last().unwrap());
        assert!((t - (lo + hi) / 2.0).abs() < 1e-12);

        // as a per-class estimate the value is clamped under K1
        let n = 12;
        let s = sim(
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| match (i == j, (i < 6) == (j < 6)) {
                            (true, _) => 0.0,
                            (false, true) => 0.1,
                            (false, false) => 1.8,
                        })
                        .collect()
                })
                .collect(),
        );
        let th = estimate_th_s(&s, &[0; 12], 1, &GroupingConfig::default());
        assert!(th[0] > 0.2 && th[0] < 1.0, "{th:?}");
    }

    #[test]
    fn otsu_matches_oracle_on_random_histograms() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..60);
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.5)).collect();
            let oracle = otsu_oracle(&vals, 16, 2.0);
            let best = oracle.iter().map(|o| o.1).fold(0.0, f64::max);
            match otsu_threshold(&vals, 16, 2.0) {
                None => assert_eq!(best, 0.0),
                Some(t) => {
                    let first = oracle.iter().find(|o| o.1 >= best * (1.0 - 1e-9)).unwrap();
                    assert!(t >= first.0 - 1e-12);
                    let at = oracle.iter().min_by(|a, b| (a.0 - t).abs().partial_cmp(&(b.0 - t).abs()).unwrap()).unwrap();
                    // either an edge with maximal variance or the middle of a plateau
                    if (at.0 - t).abs() < 1e-12 {
                        assert!(at.1 >= best * (1.0 - 1e-9));
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_histogram_returns_lower_clamp() {
        let n = 5;
        let s = sim((0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { 0.7 }).collect()).collect());
        let cfg = GroupingConfig::default();
        assert_eq!(estimate_th_s(&s, &[0; 5], 1, &cfg), vec![cfg.th_s_min]);
    }

    #[test]
    fn single_point_class_uses_fixed() {
        let s = sim(vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        let cfg = GroupingConfig {
            th_s_fixed: 0.42,
            ..Default::default()
        };
        assert_eq!(estimate_th_s(&s, &[0, 1], 2, &cfg), vec![0.42, 0.42]);
    }

    #[test]
    fn boxes() {
        let cloud = PointCloud::new(Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])).unwrap();
        let r = InstanceResult::from_labels(&[0, 0, 1], &[0, 0, 0], 1.0);
        let b = boxes_from_instances(&cloud, &r).unwrap();
        assert_eq!(b[0], Aabb { min: [0.0; 3], max: [1.0, 2.0, 3.0] });
        assert_eq!(b[1], Aabb { min: [5.0; 3], max: [5.0; 3] });
        assert_eq!(b[1].volume(), 0.0);

        let shifted = cloud.translated([-1.0, 2.0, 0.5]);
        let bs = boxes_from_instances(&shifted, &r).unwrap();
        for (a, s) in b.iter().zip(&bs) {
            assert_eq!(s.min, [a.min[0] + 1.0, a.min[1] - 2.0, a.min[2] - 0.5]);
            assert_eq!(s.max, [a.max[0] + 1.0, a.max[1] - 2.0, a.max[2] - 0.5]);
        }
    }

    #[test]
    fn box_iou_offset_cube() {
        let a = Aabb { min: [0.0; 3], max: [1.0; 3] };
        let b = Aabb { min: [0.5, 0.0, 0.0], max: [1.5, 1.0, 1.0] };
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
        let c = Aabb { min: [3.0; 3], max: [4.0; 3] };
        assert_eq!(a.iou(&c), 0.0);
    }
}
